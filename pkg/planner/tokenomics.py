"""
Single-GPU token economics: tok/W, context sweeps and comparisons
"""

import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from planner.errors import DomainError, CapacityExceeded
from planner.perf_model import GpuProfile, decode_throughput

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OperatingPoint:
    """One GPU replica running n_active sequences at mean KV length l_mean"""
    profile: GpuProfile
    ctx_window: int
    n_active: float
    l_mean: float
    throughput: float    # output tokens/second
    power: float         # watts
    tok_per_watt: float  # tokens/joule

    @property
    def n_max(self) -> int:
        return self.profile.n_max(self.ctx_window)


def gpu_tok_per_watt(profile: GpuProfile, ctx_window: int, n_active: float,
                     l_mean: Optional[float] = None) -> OperatingPoint:
    """
    Tokens per joule for one replica

    Args:
        profile: Serving profile
        ctx_window: Configured context window
        n_active: In-flight sequences, at most n_max(ctx_window)
        l_mean: Mean KV length of in-flight sequences (defaults to ctx_window)

    Returns:
        OperatingPoint
    """
    if n_active < 0:
        raise DomainError(f"n_active must be nonnegative, got {n_active}")
    l_mean = float(ctx_window if l_mean is None else l_mean)
    if not 0 < l_mean <= ctx_window:
        raise DomainError(f"l_mean must be in (0, {ctx_window}], got {l_mean}")
    limit = profile.n_max(ctx_window)
    if n_active > limit:
        raise CapacityExceeded(
            f"{profile.name}: {n_active} sequences exceed n_max={limit} at {ctx_window} tokens"
        )
    throughput = decode_throughput(profile, n_active, l_mean)
    power = profile.power_at(n_active)
    return OperatingPoint(
        profile=profile,
        ctx_window=int(ctx_window),
        n_active=n_active,
        l_mean=l_mean,
        throughput=throughput,
        power=power,
        tok_per_watt=throughput / power,
    )


def context_sweep(profile: GpuProfile, ctx_windows: Sequence[int]) -> List[OperatingPoint]:
    """Full-concurrency operating point at each window"""
    if not ctx_windows:
        raise DomainError("context sweep needs at least one window")
    return [gpu_tok_per_watt(profile, w, profile.n_max(w)) for w in ctx_windows]


def halving_ratios(sweep: Sequence[OperatingPoint]) -> List[float]:
    """tok/W ratio between consecutive doublings of the context window"""
    ratios = []
    for prev, cur in zip(sweep, sweep[1:]):
        if cur.ctx_window != 2 * prev.ctx_window:
            raise DomainError(
                f"windows {prev.ctx_window} -> {cur.ctx_window} are not a doubling"
            )
        ratios.append(cur.tok_per_watt / prev.tok_per_watt if prev.tok_per_watt > 0 else math.nan)
    return ratios


def utilization_point(profile: GpuProfile, ctx_window: int, rho: float,
                      l_mean: Optional[float] = None) -> OperatingPoint:
    """Operating point at floor(rho * n_max) sequences"""
    if not 0 <= rho <= 1:
        raise DomainError(f"rho must be in [0, 1], got {rho}")
    n_active = math.floor(rho * profile.n_max(ctx_window))
    return gpu_tok_per_watt(profile, ctx_window, n_active, l_mean)


def tok_per_dollar(point: OperatingPoint, cost_rate: float) -> float:
    """Output tokens bought per dollar at cost_rate $/hour"""
    if cost_rate <= 0:
        raise DomainError(f"cost rate must be positive, got {cost_rate}")
    return point.throughput * 3600.0 / cost_rate


@dataclass(frozen=True)
class GenerationRow:
    label: str
    point: OperatingPoint
    tok_per_dollar: float

    @property
    def profile(self) -> GpuProfile:
        return self.point.profile


@dataclass(frozen=True)
class GenerationMultiplier:
    base: str
    other: str
    tok_per_watt: float
    tok_per_dollar: float


@dataclass(frozen=True)
class GenerationComparison:
    ctx_window: int
    rows: Tuple[GenerationRow, ...]
    multipliers: Tuple[GenerationMultiplier, ...]

    def multiplier(self, base: str, other: str) -> GenerationMultiplier:
        for m in self.multipliers:
            if m.base == base and m.other == other:
                return m
        raise KeyError(f"no multiplier {base} -> {other}")


def compare_generations(profiles: Sequence[GpuProfile], ctx_window: int,
                        l_mean: Optional[float] = None) -> GenerationComparison:
    """
    Full-concurrency comparison of GPU generations serving one model

    Multipliers cover every ordered pair (earlier row as base).
    """
    if len(profiles) < 2:
        raise DomainError("generation comparison needs at least two profiles")
    rows = []
    for profile in profiles:
        point = gpu_tok_per_watt(profile, ctx_window, profile.n_max(ctx_window), l_mean)
        rows.append(GenerationRow(profile.name, point, tok_per_dollar(point, profile.gpu.cost_rate)))

    multipliers = []
    for i, base in enumerate(rows):
        for other in rows[i + 1:]:
            multipliers.append(GenerationMultiplier(
                base=base.label,
                other=other.label,
                tok_per_watt=_ratio(other.point.tok_per_watt, base.point.tok_per_watt),
                tok_per_dollar=_ratio(other.tok_per_dollar, base.tok_per_dollar),
            ))
    return GenerationComparison(int(ctx_window), tuple(rows), tuple(multipliers))


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 1.0 if num == 0 else math.inf
    return num / den


@dataclass(frozen=True)
class ModelRow:
    model: str
    gpu: str
    tp: int
    point: Optional[OperatingPoint]   # None when the model does not fit
    note: str = ""


def compare_models(profiles: Sequence[GpuProfile], ctx_window: int) -> List[ModelRow]:
    """Full-concurrency row per (model, GPU) profile"""
    rows = []
    for profile in profiles:
        point = gpu_tok_per_watt(profile, ctx_window, profile.n_max(ctx_window))
        note = "clamped" if profile.clamped else ""
        rows.append(ModelRow(profile.model.name, profile.gpu.name, profile.model.tp, point, note))
    return rows


@dataclass(frozen=True)
class RoutingPool:
    label: str
    profile: GpuProfile
    ctx_window: int


def compare_routing(pools: Sequence[RoutingPool], rho: float) -> List[Tuple[RoutingPool, OperatingPoint]]:
    """Operating point of each routed pool at utilization rho"""
    if not pools:
        raise DomainError("routing comparison needs at least one pool")
    return [(pool, utilization_point(pool.profile, pool.ctx_window, rho)) for pool in pools]
