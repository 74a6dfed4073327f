"""
Module for fetching remote request traces into a local cache
"""

import os
import hashlib
import logging
from urllib.parse import urlparse

import requests

import config
from planner.errors import TraceIngestionError
from utils.helpers import is_url, make_request, sanitize_filename

logger = logging.getLogger(__name__)


class TraceDownloader:
    """Streams trace files over HTTP and reuses cached copies"""

    def __init__(self, session: requests.Session = None, cache_dir: str = None):
        self.session = session or requests.Session()
        self.cache_dir = cache_dir or config.TRACE_CACHE_DIR

    def cache_path(self, url: str) -> str:
        """Cache file for a URL: its basename prefixed by a short URL hash"""
        name = os.path.basename(urlparse(url).path) or "trace.jsonl"
        digest = hashlib.sha1(url.encode("utf-8")).hexdigest()[:10]
        return os.path.join(self.cache_dir, f"{digest}-{sanitize_filename(name)}")

    def fetch(self, url: str, refresh: bool = False) -> str:
        """
        Download a trace unless it is already cached

        Args:
            url: http(s) URL of a JSONL or CSV trace
            refresh: Download even when a cached copy exists

        Returns:
            Local file path
        """
        filepath = self.cache_path(url)
        if os.path.exists(filepath) and not refresh:
            logger.info(f"Using cached trace: {filepath}")
            return filepath

        os.makedirs(self.cache_dir, exist_ok=True)
        response = make_request(url, self.session, stream=True)
        if response is None:
            raise TraceIngestionError(f"could not download trace {url}")

        partial = filepath + ".part"
        try:
            with open(partial, "wb") as f:
                for chunk in response.iter_content(chunk_size=config.DOWNLOAD_CHUNK_SIZE):
                    if chunk:
                        f.write(chunk)
            os.replace(partial, filepath)
        except (OSError, requests.exceptions.RequestException) as e:
            logger.error(f"Failed to download trace {url}: {e}")
            if os.path.exists(partial):
                os.remove(partial)
            raise TraceIngestionError(f"download of {url} failed: {e}") from e
        finally:
            response.close()

        logger.info(f"Downloaded trace: {filepath}")
        return filepath

    def resolve(self, source: str) -> str:
        """Local path for a trace source (URL or path)"""
        if is_url(source):
            return self.fetch(source)
        return source
