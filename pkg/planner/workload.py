"""
Context-length distributions: empirical CDFs, trace ingestion,
synthetic archetypes, routing splits and archetype classification
"""

import csv
import json
import math
import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property, lru_cache
from typing import Any, Dict, Iterable, Iterator, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr
from tqdm import tqdm

import config
from planner.errors import DomainError, InfeasibleArchetype, TraceIngestionError

logger = logging.getLogger(__name__)

CDF_TOLERANCE = 1e-9

# Column aliases accepted by read_trace
PROMPT_FIELDS = ("prompt_tokens", "ContextTokens", "input_tokens")
OUTPUT_FIELDS = ("output_tokens", "GeneratedTokens", "completion_tokens")


@dataclass(frozen=True)
class ContextCdf:
    """
    Step CDF over request context lengths (prompt + output tokens)

    output_means, when present, holds the mean output length of the requests
    at each point. Splits use it to recompute per-side output means and to
    recover the prompt length that routing keys on; without it every point
    is assumed to carry mean_output_len output tokens.
    """
    points: Tuple[Tuple[int, float], ...]
    mean_output_len: float
    label: str = ""
    output_means: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        points = tuple((int(length), float(prob)) for length, prob in self.points)
        object.__setattr__(self, "points", points)
        if self.output_means is not None:
            object.__setattr__(self, "output_means", tuple(float(x) for x in self.output_means))

        if not points:
            raise DomainError("CDF needs at least one point")
        lengths = [p[0] for p in points]
        probs = [p[1] for p in points]
        if lengths[0] < 1:
            raise DomainError(f"lengths must be >= 1, got {lengths[0]}")
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise DomainError("lengths must be strictly increasing")
        if probs[0] < 0 or any(b < a - CDF_TOLERANCE for a, b in zip(probs, probs[1:])):
            raise DomainError("cumulative probabilities must be nondecreasing")
        if abs(probs[-1] - 1.0) > CDF_TOLERANCE:
            raise DomainError(f"final cumulative probability must be 1.0, got {probs[-1]}")
        if self.mean_output_len < 0:
            raise DomainError("mean output length must be nonnegative")
        if self.output_means is not None and len(self.output_means) != len(points):
            raise DomainError("output_means must have one entry per point")

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.int64)

    @cached_property
    def cum(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=float)

    @cached_property
    def masses(self) -> np.ndarray:
        return np.diff(self.cum, prepend=0.0)

    @property
    def min_length(self) -> int:
        return int(self.lengths[0])

    @property
    def max_length(self) -> int:
        return int(self.lengths[-1])

    @property
    def mean_length(self) -> float:
        return float(np.dot(self.masses, self.lengths))

    @cached_property
    def prompt_lengths(self) -> np.ndarray:
        """Mean prompt length at each point (context minus its output share)"""
        outputs = np.array(self.output_means) if self.output_means is not None else self.mean_output_len
        return np.maximum(self.lengths - outputs, 0.0)

    def prob_at_most(self, length: float) -> float:
        """P[context <= length]"""
        idx = int(np.searchsorted(self.lengths, length, side="right"))
        return 0.0 if idx == 0 else float(self.cum[idx - 1])

    def prompt_prob_at_most(self, length: float) -> float:
        """P[prompt <= length]"""
        return float(self.masses[self.prompt_lengths <= length].sum())

    def quantile(self, q: float) -> int:
        """Smallest length whose cumulative probability reaches q"""
        if not 0 <= q <= 1:
            raise DomainError(f"quantile must be in [0, 1], got {q}")
        idx = int(np.searchsorted(self.cum, q - CDF_TOLERANCE, side="left"))
        return int(self.lengths[min(idx, len(self.points) - 1)])

    def sample(self, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Draw n context lengths by inverse-CDF sampling"""
        rng = rng or np.random.default_rng()
        idx = np.searchsorted(self.cum, rng.random(n), side="right")
        return self.lengths[np.minimum(idx, len(self.points) - 1)]

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "label": self.label,
            "mean_output_len": self.mean_output_len,
            "points": [[length, prob] for length, prob in self.points],
        }
        if self.output_means is not None:
            data["output_means"] = list(self.output_means)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ContextCdf":
        try:
            means = data.get("output_means")
            return cls(
                points=tuple((int(p[0]), float(p[1])) for p in data["points"]),
                mean_output_len=float(data["mean_output_len"]),
                label=str(data.get("label", "")),
                output_means=tuple(means) if means is not None else None,
            )
        except (KeyError, TypeError, IndexError) as e:
            raise DomainError(f"malformed CDF document: {e}") from e


def _cdf_from_masses(lengths: np.ndarray, masses: np.ndarray, outputs: Optional[np.ndarray],
                     label: str, default_output: float) -> ContextCdf:
    total = float(masses.sum())
    cum = np.cumsum(masses) / total
    cum[-1] = 1.0
    if outputs is not None:
        mean_output = float(np.dot(masses, outputs) / total)
        output_means = tuple(float(x) for x in outputs)
    else:
        mean_output = default_output
        output_means = None
    return ContextCdf(
        points=tuple(zip((int(x) for x in lengths), (float(c) for c in cum))),
        mean_output_len=mean_output,
        label=label,
        output_means=output_means,
    )


# Trace ingestion

def _token_count(record: Mapping[str, Any], names: Tuple[str, ...], line: int) -> Optional[int]:
    for name in names:
        if name in record and record[name] not in (None, ""):
            value = record[name]
            try:
                if isinstance(value, bool):
                    raise ValueError
                number = float(value)
                if not number.is_integer():
                    raise ValueError
            except (TypeError, ValueError):
                raise TraceIngestionError(f"{name}={value!r} is not an integer token count", line)
            if number < 0:
                raise TraceIngestionError(f"{name}={value!r} is negative", line)
            return int(number)
    return None


def ingest_trace(records: Iterable[Mapping[str, Any]], label: str = "trace",
                 default_output_len: float = config.DEFAULT_OUTPUT_LEN,
                 show_progress: bool = False) -> ContextCdf:
    """
    Build an empirical CDF from request records in one pass

    Args:
        records: Mappings with prompt_tokens and optional output_tokens; a
            '_line' entry overrides the record position in error messages
        label: CDF label
        default_output_len: Output length assumed for prompt-only records
        show_progress: Show a tqdm counter

    Returns:
        ContextCdf over prompt + output lengths with per-point output means
    """
    counts: Dict[int, int] = defaultdict(int)
    output_sums: Dict[int, float] = defaultdict(float)
    total = 0

    for position, record in enumerate(tqdm(records, desc="Ingesting trace", unit="req",
                                           disable=not show_progress), start=1):
        if not isinstance(record, Mapping):
            raise TraceIngestionError(f"expected a record object, got {type(record).__name__}", position)
        line = record.get("_line", position)
        prompt = _token_count(record, PROMPT_FIELDS, line)
        if prompt is None:
            raise TraceIngestionError("missing prompt_tokens", line)
        output = _token_count(record, OUTPUT_FIELDS, line)
        if output is None:
            output = default_output_len
        length = max(1, int(round(prompt + output)))
        counts[length] += 1
        output_sums[length] += output
        total += 1

    if total == 0:
        raise TraceIngestionError("trace contains no records")

    lengths = np.array(sorted(counts), dtype=np.int64)
    hits = np.array([counts[x] for x in lengths], dtype=float)
    outputs = np.array([output_sums[x] for x in lengths]) / hits
    cdf = _cdf_from_masses(lengths, hits, outputs, label, default_output_len)
    logger.info(f"Ingested {total} records into {len(lengths)} distinct lengths "
                f"(mean context {cdf.mean_length:.0f}, mean output {cdf.mean_output_len:.0f})")
    return cdf


def read_trace(path: str) -> Iterator[Dict[str, Any]]:
    """
    Yield records from a JSONL or CSV trace file, tagged with '_line'

    Blank lines are skipped; unknown fields pass through and are ignored
    downstream.
    """
    try:
        handle = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise TraceIngestionError(f"cannot open trace {path}: {e}") from e

    with handle:
        if path.lower().endswith(".csv"):
            reader = csv.DictReader(handle)
            for line, row in enumerate(reader, start=2):
                row = dict(row)
                row["_line"] = line
                yield row
            return

        for line, text in enumerate(handle, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise TraceIngestionError(f"invalid JSON: {e.msg}", line) from e
            if not isinstance(record, dict):
                raise TraceIngestionError("record is not an object", line)
            record["_line"] = line
            yield record


# Synthetic archetypes

class Archetype(str, Enum):
    SHORT_DOMINANT = "short-dominant"
    MIXED = "mixed"
    LONG_DOMINANT = "long-dominant"


@dataclass(frozen=True)
class ArchetypeParams:
    """
    Two-lognormal mixture (bulk + heavy tail) pinned by quantile constraints

    The bulk weight is solved so that P[<= anchor_len] = anchor_prob. When
    p99_len is set, the tail median is solved as well so the mixture's p99
    lands on p99_len. Mass outside [min_len, max_len] folds into the end
    points. point_mass short-circuits everything to a one-point CDF.
    """
    bulk_median: float = 1024.0
    bulk_sigma: float = 0.9
    tail_median: float = 16384.0
    tail_sigma: float = 0.7
    bulk_output_len: float = 256.0
    tail_output_len: float = 2048.0
    anchor_len: int = 4096
    anchor_prob: float = 0.89
    p99_len: Optional[int] = None
    min_len: int = 16
    max_len: int = 65536
    grid_points: int = 256
    point_mass: Optional[int] = None

    @classmethod
    def defaults(cls, kind: Union[Archetype, str]) -> "ArchetypeParams":
        kind = Archetype(kind)
        if kind == Archetype.SHORT_DOMINANT:
            return cls()
        if kind == Archetype.MIXED:
            return cls(anchor_len=8192, anchor_prob=0.65)
        return cls(bulk_median=2048.0, bulk_sigma=0.8, tail_sigma=0.6,
                   anchor_len=8192, anchor_prob=0.74, p99_len=32768)


def _lognorm_cdf(x, median: float, sigma: float):
    return ndtr((np.log(x) - math.log(median)) / sigma)


def _bulk_weight(p: ArchetypeParams, tail_median: float) -> float:
    fb = float(_lognorm_cdf(p.anchor_len, p.bulk_median, p.bulk_sigma))
    ft = float(_lognorm_cdf(p.anchor_len, tail_median, p.tail_sigma))
    if abs(fb - ft) < 1e-12:
        raise InfeasibleArchetype("bulk and tail are indistinguishable at the anchor length")
    w = (p.anchor_prob - ft) / (fb - ft)
    if not 0 <= w <= 1:
        raise InfeasibleArchetype(
            f"P[<= {p.anchor_len}] = {p.anchor_prob} is unreachable with these components (weight {w:.3f})"
        )
    return w


def _mixture_quantile(p: ArchetypeParams, w: float, tail_median: float, q: float) -> float:
    def excess(log_x):
        x = math.exp(log_x)
        return (w * _lognorm_cdf(x, p.bulk_median, p.bulk_sigma)
                + (1 - w) * _lognorm_cdf(x, tail_median, p.tail_sigma) - q)
    return math.exp(brentq(excess, math.log(1e-3), math.log(1e12)))


def _solve_tail_median(p: ArchetypeParams) -> float:
    def p99_gap(tail_median):
        w = _bulk_weight(p, tail_median)
        return _mixture_quantile(p, w, tail_median, 0.99) - p.p99_len

    lo, hi = float(p.anchor_len), float(p.p99_len)
    try:
        g_lo, g_hi = p99_gap(lo), p99_gap(hi)
    except InfeasibleArchetype as e:
        raise InfeasibleArchetype(f"p99 target {p.p99_len} cannot be bracketed: {e}") from e
    if g_lo * g_hi > 0:
        raise InfeasibleArchetype(
            f"p99 target {p.p99_len} is not reachable with tail medians in [{lo:.0f}, {hi:.0f}]"
        )
    return brentq(p99_gap, lo, hi, xtol=1e-6)


@lru_cache(maxsize=32)
def _synthesize(kind: Archetype, p: ArchetypeParams) -> ContextCdf:
    label = kind.value
    if p.point_mass is not None:
        if p.point_mass < 1:
            raise DomainError(f"point mass length must be >= 1, got {p.point_mass}")
        return ContextCdf(((int(p.point_mass), 1.0),), p.bulk_output_len, label, (p.bulk_output_len,))

    if not 1 <= p.min_len < p.anchor_len < p.max_len:
        raise InfeasibleArchetype("need min_len < anchor_len < max_len")
    if not 0 < p.anchor_prob < 1:
        raise InfeasibleArchetype(f"anchor probability must be in (0, 1), got {p.anchor_prob}")
    if p.bulk_sigma <= 0 or p.tail_sigma <= 0 or p.bulk_median <= 0 or p.tail_median <= 0:
        raise InfeasibleArchetype("lognormal medians and sigmas must be positive")

    tail_median = p.tail_median
    if p.p99_len is not None:
        if not p.anchor_len < p.p99_len <= p.max_len:
            raise InfeasibleArchetype("p99 target must lie in (anchor_len, max_len]")
        tail_median = _solve_tail_median(p)
    w = _bulk_weight(p, tail_median)

    anchors = [p.anchor_len] + ([p.p99_len] if p.p99_len is not None else [])
    powers = 2 ** np.arange(math.ceil(math.log2(p.min_len)), math.floor(math.log2(p.max_len)) + 1)
    grid = np.concatenate([np.rint(np.geomspace(p.min_len, p.max_len, p.grid_points)), powers, anchors])
    lengths = np.unique(grid.astype(np.int64))
    lengths = lengths[(lengths >= p.min_len) & (lengths <= p.max_len)]

    cum_bulk = w * _lognorm_cdf(lengths, p.bulk_median, p.bulk_sigma)
    cum_tail = (1 - w) * _lognorm_cdf(lengths, tail_median, p.tail_sigma)
    cum_bulk[-1], cum_tail[-1] = w, 1 - w
    m_bulk = np.diff(cum_bulk, prepend=0.0)
    m_tail = np.diff(cum_tail, prepend=0.0)
    mass = m_bulk + m_tail
    outputs = np.divide(m_bulk * p.bulk_output_len + m_tail * p.tail_output_len, mass,
                        out=np.full(mass.shape, p.bulk_output_len), where=mass > 0)

    cum = cum_bulk + cum_tail
    cum[-1] = 1.0
    cdf = ContextCdf(
        points=tuple(zip((int(x) for x in lengths), (float(c) for c in cum))),
        mean_output_len=float(w * p.bulk_output_len + (1 - w) * p.tail_output_len),
        label=label,
        output_means=tuple(float(x) for x in outputs),
    )
    logger.debug(f"Synthesized {label}: bulk weight {w:.4f}, tail median {tail_median:.0f}, "
                 f"{len(lengths)} points")
    return cdf


def synth_archetype(kind: Union[Archetype, str], params: Optional[ArchetypeParams] = None,
                    **overrides: Any) -> ContextCdf:
    """
    Synthetic workload CDF for an archetype

    Args:
        kind: Archetype name
        params: Full parameter set (defaults for kind when omitted)
        **overrides: Individual ArchetypeParams fields to replace

    Returns:
        ContextCdf with per-point output means
    """
    kind = Archetype(kind)
    params = params or ArchetypeParams.defaults(kind)
    if overrides:
        try:
            params = replace(params, **overrides)
        except TypeError as e:
            raise DomainError(f"unknown archetype parameter: {e}") from e
    return _synthesize(kind, params)


# Routing split

@dataclass(frozen=True)
class SplitWorkload:
    """
    Traffic split at a prompt-length boundary; empty sides are None

    window caps the context length of short-routed requests, so short_cdf
    is supported on (0, window] while its prompts stay <= boundary.
    """
    short_cdf: Optional[ContextCdf]
    long_cdf: Optional[ContextCdf]
    alpha: float
    boundary: float
    window: float


def _side(cdf: ContextCdf, mask: np.ndarray, suffix: str) -> Optional[ContextCdf]:
    masses = cdf.masses[mask]
    if masses.size == 0 or masses.sum() <= 0:
        return None
    outputs = np.array(cdf.output_means)[mask] if cdf.output_means is not None else None
    return _cdf_from_masses(cdf.lengths[mask], masses, outputs, f"{cdf.label}{suffix}", cdf.mean_output_len)


def split_at(cdf: ContextCdf, boundary: float, window: Optional[float] = None) -> SplitWorkload:
    """
    Route requests by prompt length

    A request goes short when its prompt is <= boundary and its full context
    fits the short pool's window; everything else goes long. The window
    defaults to the boundary, which routes by context length alone.

    Args:
        cdf: Parent workload
        boundary: Prompt-length boundary
        window: Context window of the short pool (>= boundary)
    """
    if not boundary >= 1:
        raise DomainError(f"boundary must be >= 1, got {boundary}")
    window = boundary if window is None else window
    if window < boundary:
        raise DomainError(f"short window {window} is below the {boundary} boundary")
    short_mask = (cdf.prompt_lengths <= boundary) & (cdf.lengths <= window)
    alpha = float(cdf.masses[short_mask].sum())
    short = _side(cdf, short_mask, "/short")
    long = _side(cdf, ~short_mask, "/long")
    if short is None:
        alpha = 0.0
    if long is None:
        alpha = 1.0
    return SplitWorkload(short_cdf=short, long_cdf=long, alpha=alpha, boundary=boundary, window=window)


# Classification

class ArchetypeClass(str, Enum):
    I_SHORT_DOMINANT = "I"
    II_MIXED = "II"
    III_LONG_DOMINANT = "III"


def classify_archetype(cdf: ContextCdf) -> ArchetypeClass:
    """Archetype by the share of traffic within the classification window"""
    share = cdf.prob_at_most(config.CLASSIFY_WINDOW)
    if share >= config.SHORT_DOMINANT_THRESHOLD - CDF_TOLERANCE:
        return ArchetypeClass.I_SHORT_DOMINANT
    if share >= config.MIXED_THRESHOLD - CDF_TOLERANCE:
        return ArchetypeClass.II_MIXED
    return ArchetypeClass.III_LONG_DOMINANT


def archetype_guidance(archetype: ArchetypeClass) -> Dict[str, str]:
    """Topology and GPU recommendation for an archetype class"""
    return dict(config.ARCHETYPE_GUIDANCE[ArchetypeClass(archetype).value])
