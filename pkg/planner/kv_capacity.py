"""
KV-cache bytes per token, usable KV memory and the concurrency ceiling
"""

import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import config
from planner.errors import DomainError, InfeasibleModel

if TYPE_CHECKING:
    from planner.gpu_power import GpuSpec
    from planner.perf_model import ModelSpec

logger = logging.getLogger(__name__)


class KvSharding(str, Enum):
    """How KV heads are laid out across a tensor-parallel group"""
    TP_SHARDED = "tp_sharded"   # each GPU holds ceil(kv_heads / tp) heads
    REPLICATED = "replicated"   # each GPU holds every KV head


def heads_per_gpu(model: "ModelSpec", sharding: KvSharding) -> int:
    if sharding == KvSharding.REPLICATED:
        return model.kv_heads
    return max(1, math.ceil(model.kv_heads / model.tp))


def kappa_per_gpu(model: "ModelSpec", sharding: KvSharding,
                  kv_bytes_per_elem: float = config.DEFAULT_KV_DTYPE_BYTES) -> float:
    """
    KV bytes stored per token on one GPU

    Args:
        model: Model architecture
        sharding: KV head layout
        kv_bytes_per_elem: KV element width, independent of weight dtype

    Returns:
        Bytes per token (K and V)
    """
    if kv_bytes_per_elem <= 0:
        raise DomainError(f"KV element width must be positive, got {kv_bytes_per_elem}")
    return 2 * model.layers * heads_per_gpu(model, KvSharding(sharding)) * model.head_dim * kv_bytes_per_elem


def usable_kv_vram(gpu: "GpuSpec", model: "ModelSpec", reserve_gb: float) -> float:
    """
    Bytes left for KV cache on one GPU after weights and reserve

    Raises InfeasibleModel when the weight shard alone exceeds VRAM. A reserve
    that eats the remainder leaves zero KV memory, which is valid.
    """
    if reserve_gb < 0:
        raise DomainError(f"VRAM reserve must be nonnegative, got {reserve_gb}")
    weights = model.weights_per_gpu_bytes
    if weights > gpu.vram_bytes:
        deficit = weights - gpu.vram_bytes
        raise InfeasibleModel(
            f"{model.name} needs {weights / 1e9:.1f} GB of weights per GPU at TP={model.tp}, "
            f"{gpu.name} has {gpu.vram_gb:.0f} GB",
            deficit_bytes=deficit,
        )
    return max(0.0, gpu.vram_bytes - weights - reserve_gb * 1e9)


def kv_token_budget(kv_vram: float, kappa: float) -> int:
    """Tokens of KV cache that fit in kv_vram bytes"""
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    if kv_vram < 0:
        raise DomainError(f"KV memory must be nonnegative, got {kv_vram}")
    return int(kv_vram // kappa)


@dataclass(frozen=True)
class KvGeometry:
    kappa: float
    kv_vram: float
    sharding: KvSharding

    def __post_init__(self):
        if self.kappa <= 0 or self.kv_vram < 0:
            raise DomainError("kappa must be positive and kv_vram nonnegative")

    @property
    def token_budget(self) -> int:
        return kv_token_budget(self.kv_vram, self.kappa)


def n_max(kv_token_budget: int, ctx_window: int) -> int:
    """Concurrent sequences at full context that fit the KV budget"""
    if ctx_window < 1:
        raise DomainError(f"context window must be >= 1, got {ctx_window}")
    return int(kv_token_budget // ctx_window)


def scale_budget(base_budget: int, vram_ratio: float) -> int:
    """Carry a calibrated budget to a GPU with vram_ratio times the KV memory"""
    if vram_ratio <= 0:
        raise DomainError(f"VRAM ratio must be positive, got {vram_ratio}")
    return int(round(base_budget * vram_ratio))
