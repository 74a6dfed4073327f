"""
Roofline decode-latency model and GPU serving profiles

A decode iteration streams the weights once (W) and scans every in-flight
sequence's KV cache (H per sequence):

    tau(n, L) = W + H0 * (L / L_calib) * n
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Any, NamedTuple, Optional, Sequence, Tuple

import numpy as np

import config
from planner.errors import DomainError, ConfigError, InfeasibleModel
from planner.gpu_power import GpuSpec, PowerCurve, derive_x0, power_at
from planner.kv_capacity import (
    KvSharding, KvGeometry, kappa_per_gpu, usable_kv_vram, n_max as _n_max
)

logger = logging.getLogger(__name__)


class WQuality(str, Enum):
    MEASURED = "MEASURED"
    LOWER_BOUND = "LOWER_BOUND"   # MoE active-parameter streaming, dispatch excluded


class ProfileKind(str, Enum):
    MANUAL = "manual"
    COMPUTED = "computed"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture fields needed for weight streaming and KV sizing"""
    name: str
    total_params: float
    layers: int
    kv_heads: int
    head_dim: int
    bytes_per_param: float = 2.0
    tp: int = 1
    active_params: Optional[float] = None

    def __post_init__(self):
        if self.total_params <= 0:
            raise DomainError(f"{self.name}: total_params must be positive")
        if self.layers < 1 or self.kv_heads < 1 or self.head_dim < 1 or self.tp < 1:
            raise DomainError(f"{self.name}: layers, kv_heads, head_dim and tp must be >= 1")
        if self.bytes_per_param <= 0:
            raise DomainError(f"{self.name}: bytes_per_param must be positive")
        if self.active_params is not None and not 0 < self.active_params <= self.total_params:
            raise DomainError(f"{self.name}: active_params must be in (0, total_params]")

    @property
    def is_moe(self) -> bool:
        return self.active_params is not None

    @property
    def streamed_params(self) -> float:
        return self.active_params if self.active_params is not None else self.total_params

    @property
    def weights_per_gpu_bytes(self) -> float:
        return self.total_params * self.bytes_per_param / self.tp

    @classmethod
    def from_dict(cls, name: str, entry: Dict[str, Any]) -> "ModelSpec":
        try:
            if "dtype" in entry and "bytes_per_param" not in entry:
                bytes_per_param = config.DTYPE_BYTES[entry["dtype"]]
            else:
                bytes_per_param = float(entry.get("bytes_per_param", 2.0))
            active = entry.get("active_params")
            return cls(
                name=name,
                total_params=float(entry["total_params"]),
                layers=int(entry["layers"]),
                kv_heads=int(entry["kv_heads"]),
                head_dim=int(entry["head_dim"]),
                bytes_per_param=bytes_per_param,
                tp=int(entry.get("tp", 1)),
                active_params=float(active) if active is not None else None,
            )
        except KeyError as e:
            raise ConfigError(f"model '{name}' is missing field or has unknown dtype {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model '{name}' is invalid: {e}") from e


def with_dtype(model: ModelSpec, dtype: str) -> ModelSpec:
    """Same architecture with weights stored as dtype ('fp16', 'fp8', 'int4', ...)"""
    if dtype not in config.DTYPE_BYTES:
        raise DomainError(f"unknown dtype '{dtype}', expected one of {sorted(config.DTYPE_BYTES)}")
    return replace(model, bytes_per_param=config.DTYPE_BYTES[dtype])


class WeightStream(NamedTuple):
    w_ms: float
    quality: WQuality


def weight_stream_time(model: ModelSpec, gpu: GpuSpec, bw_efficiency: float) -> WeightStream:
    """
    Time to stream one TP shard of the weights through HBM

    Args:
        model: Model architecture (active_params used when present)
        gpu: GPU spec supplying memory bandwidth
        bw_efficiency: Achieved fraction of nominal bandwidth

    Returns:
        WeightStream with milliseconds and a LOWER_BOUND tag for MoE
    """
    if not 0 < bw_efficiency <= 1:
        raise DomainError(f"bandwidth efficiency must be in (0, 1], got {bw_efficiency}")
    if gpu.mem_bw <= 0:
        raise DomainError(f"{gpu.name}: memory bandwidth must be positive")
    seconds = model.streamed_params * model.bytes_per_param / (model.tp * gpu.mem_bw * bw_efficiency)
    quality = WQuality.LOWER_BOUND if model.is_moe else WQuality.MEASURED
    return WeightStream(seconds * 1000.0, quality)


def kv_scan_overhead(h0_ms: float, l_calib: float, l_mean: float) -> float:
    """Per-sequence KV scan time at mean KV length l_mean"""
    if h0_ms <= 0 or l_calib <= 0 or l_mean <= 0:
        raise DomainError("h0, l_calib and l_mean must be positive")
    return h0_ms * l_mean / l_calib


@dataclass(frozen=True)
class GpuProfile:
    """
    Serving operating surface of one model replica (one TP group)

    power_curve is the GPU's curve with any per-profile x0 applied.
    """
    gpu: GpuSpec
    model: ModelSpec
    w_ms: float
    h0_ms: float
    l_calib: int
    kv_token_budget: int
    kind: ProfileKind
    w_quality: WQuality
    power_curve: PowerCurve
    label: str = ""
    clamped: bool = False

    def __post_init__(self):
        if self.w_ms <= 0 or self.h0_ms <= 0:
            raise DomainError(f"{self.label or self.gpu.name}: W and H0 must be positive")
        if self.l_calib < 1:
            raise DomainError("calibration context must be >= 1")
        if self.kv_token_budget < 0:
            raise DomainError("KV token budget must be nonnegative")

    @property
    def name(self) -> str:
        return self.label or f"{self.gpu.name}:{self.model.name}"

    def n_max(self, ctx_window: int) -> int:
        return _n_max(self.kv_token_budget, ctx_window)

    def power_at(self, b: float) -> float:
        return power_at(self.power_curve, b)

    def with_budget(self, kv_token_budget: int) -> "GpuProfile":
        return replace(self, kv_token_budget=int(kv_token_budget))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.name,
            "gpu": self.gpu.name,
            "model": self.model.name,
            "kind": self.kind.value,
            "w_ms": self.w_ms,
            "h0_ms": self.h0_ms,
            "l_calib": self.l_calib,
            "kv_token_budget": self.kv_token_budget,
            "x0": self.power_curve.x0,
            "quality": self.gpu.quality.value,
            "w_quality": self.w_quality.value,
            "clamped": self.clamped,
        }


def decode_iteration_latency(profile: GpuProfile, n: float, l_mean: float) -> float:
    """tau in milliseconds for n in-flight sequences at mean KV length l_mean"""
    if n < 0:
        raise DomainError(f"concurrency must be nonnegative, got {n}")
    if n == 0:
        return profile.w_ms
    return profile.w_ms + kv_scan_overhead(profile.h0_ms, profile.l_calib, l_mean) * n


def decode_throughput(profile: GpuProfile, n: float, l_mean: float) -> float:
    """Output tokens/second: one token per sequence per iteration"""
    if n == 0:
        return 0.0
    return n / decode_iteration_latency(profile, n, l_mean) * 1000.0


def build_manual_profile(gpu: GpuSpec, model: ModelSpec, w_ms: float, h0_ms: float,
                         l_calib: int = config.DEFAULT_L_CALIB, kv_token_budget: int = 0,
                         x0: Optional[float] = None, label: str = "",
                         w_quality: WQuality = WQuality.MEASURED) -> GpuProfile:
    """Profile from calibrated constants, stored verbatim"""
    curve = gpu.power_curve if x0 is None else gpu.power_curve.with_x0(x0)
    profile = GpuProfile(
        gpu=gpu,
        model=model,
        w_ms=float(w_ms),
        h0_ms=float(h0_ms),
        l_calib=int(l_calib),
        kv_token_budget=int(kv_token_budget),
        kind=ProfileKind.MANUAL,
        w_quality=w_quality,
        power_curve=curve,
        label=label,
    )
    logger.debug(f"Manual profile {profile.name}: W={w_ms} ms, H0={h0_ms} ms, budget={kv_token_budget}")
    return profile


def build_computed_profile(gpu: GpuSpec, model: ModelSpec,
                           bw_efficiency: Optional[float] = None,
                           vram_reserve_gb: float = config.DEFAULT_VRAM_RESERVE_GB,
                           kv_sharding: KvSharding = KvSharding.REPLICATED,
                           l_calib: int = config.DEFAULT_L_CALIB,
                           kv_dtype_bytes: float = config.DEFAULT_KV_DTYPE_BYTES,
                           dispatch_ms: float = config.DEFAULT_DISPATCH_MS,
                           clamp_infeasible: bool = False,
                           label: str = "") -> GpuProfile:
    """
    Profile from first principles

    W comes from weight streaming (plus optional MoE dispatch), the KV budget
    from usable VRAM over the sharding's bytes/token, and H0 from scanning one
    GPU's KV bytes/token at l_calib tokens. H0 scans the same bytes/token the
    budget is allocated with, so a replicated cache scans every KV head on
    each GPU.

    Raises:
        InfeasibleModel: weights exceed VRAM and clamp_infeasible is not set
    """
    eff = gpu.bw_efficiency if bw_efficiency is None else bw_efficiency
    if dispatch_ms < 0:
        raise DomainError(f"dispatch overhead must be nonnegative, got {dispatch_ms}")
    sharding = KvSharding(kv_sharding)

    stream = weight_stream_time(model, gpu, eff)
    w_ms = stream.w_ms + dispatch_ms

    kappa = kappa_per_gpu(model, sharding, kv_dtype_bytes)
    clamped = False
    try:
        kv_vram = usable_kv_vram(gpu, model, vram_reserve_gb)
        budget = KvGeometry(kappa=kappa, kv_vram=kv_vram, sharding=sharding).token_budget
    except InfeasibleModel as e:
        if not clamp_infeasible:
            raise
        logger.warning(f"{e}; clamping KV budget to one {l_calib}-token sequence")
        budget = int(l_calib)
        clamped = True

    h0_ms = kappa * l_calib / (gpu.mem_bw * eff) * 1000.0
    curve = gpu.power_curve.with_x0(derive_x0(w_ms, h0_ms))

    profile = GpuProfile(
        gpu=gpu,
        model=model,
        w_ms=w_ms,
        h0_ms=h0_ms,
        l_calib=int(l_calib),
        kv_token_budget=budget,
        kind=ProfileKind.COMPUTED,
        w_quality=stream.quality,
        power_curve=curve,
        label=label,
        clamped=clamped,
    )
    logger.debug(
        f"Computed profile {profile.name}: W={w_ms:.3f} ms, H0={h0_ms:.4f} ms, "
        f"kappa={kappa:.0f} B/token ({sharding.value}), budget={budget}"
    )
    return profile


def fit_kv_scan(w_ms: float, l_calib: int, samples: Sequence[Tuple[float, float, float]]) -> float:
    """
    Least-squares H0 from observed decode throughput

    Args:
        w_ms: Known weight-stream time
        l_calib: Calibration context H0 refers to
        samples: (n, l_mean, tokens_per_second) observations with n > 0

    Returns:
        H0 in milliseconds
    """
    rows = np.asarray(samples, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] != 3:
        raise DomainError("samples must be a nonempty sequence of (n, l_mean, throughput)")
    n, l_mean, thr = rows[:, 0], rows[:, 1], rows[:, 2]
    if np.any(n <= 0) or np.any(thr <= 0):
        raise DomainError("samples need positive concurrency and throughput")
    # tau - W = H0 * (n * l_mean / l_calib)
    excess = n / thr * 1000.0 - w_ms
    design = (n * l_mean / l_calib).reshape(-1, 1)
    solution, *_ = np.linalg.lstsq(design, excess, rcond=None)
    return float(solution[0])
