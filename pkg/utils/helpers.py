"""
Helper functions for the planner CLI
"""

import os
import re
import time
import logging
from typing import Any, Dict, Mapping, Optional, Union
from urllib.parse import urlparse

import requests

import config

logger = logging.getLogger(__name__)

_TOKEN_SUFFIXES = {"K": 1024, "M": 1024 * 1024}


def get_headers() -> dict:
    """Request headers for trace downloads"""
    return config.DEFAULT_HEADERS.copy()


def make_request(url: str, session: requests.Session = None,
                 retries: int = config.MAX_RETRIES, stream: bool = False) -> Optional[requests.Response]:
    """Make an HTTP GET with retry/backoff; None when every attempt fails"""
    if session is None:
        session = requests.Session()

    for attempt in range(retries):
        try:
            response = session.get(
                url,
                headers=get_headers(),
                timeout=config.REQUEST_TIMEOUT,
                stream=stream,
            )
            response.raise_for_status()
            return response
        except requests.exceptions.RequestException as e:
            logger.warning(f"Request failed (attempt {attempt + 1}/{retries}): {url} - {e}")
            if attempt < retries - 1:
                time.sleep(config.REQUEST_DELAY * (attempt + 1))

    logger.error(f"All retries failed for URL: {url}")
    return None


def is_url(path: str) -> bool:
    return urlparse(str(path)).scheme in ("http", "https")


def sanitize_filename(filename: str) -> str:
    """Sanitize filename by removing invalid characters"""
    filename = re.sub(r'[<>:"/\\|?*]', '_', filename)
    return filename[:200]


def parse_tokens(value: Union[int, float, str]) -> int:
    """
    Parse a token count such as 8192, '8192', '8K' or '1M'

    K and M are binary multiples (8K = 8192).
    """
    if isinstance(value, bool):
        raise ValueError(f"not a token count: {value!r}")
    if isinstance(value, (int, float)):
        if float(value) != int(value):
            raise ValueError(f"token count must be an integer: {value}")
        return int(value)
    text = str(value).strip().upper()
    match = re.fullmatch(r"(\d+(?:\.\d+)?)\s*([KM]?)", text)
    if not match:
        raise ValueError(f"not a token count: {value!r}")
    number = float(match.group(1)) * _TOKEN_SUFFIXES.get(match.group(2), 1)
    if number != int(number):
        raise ValueError(f"token count must be an integer: {value!r}")
    return int(number)


def format_tokens(n: Optional[float]) -> str:
    """8192 -> '8K'; values that are not whole K print as-is"""
    if n is None:
        return "-"
    n = int(n)
    if n >= 1024 and n % 1024 == 0:
        return f"{n // 1024}K"
    return str(n)


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base; override wins"""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged
