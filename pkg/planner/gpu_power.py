"""
Logistic power-vs-concurrency model and GPU hardware specs
"""

import math
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Any, Sequence

import numpy as np
from scipy.optimize import curve_fit

import config
from planner.errors import DomainError, ConfigError

logger = logging.getLogger(__name__)


class Quality(str, Enum):
    """Provenance of power parameters"""
    HIGH = "HIGH"   # measured
    FAIR = "FAIR"   # projected from TDP


@dataclass(frozen=True)
class PowerCurve:
    """
    GPU board power as a logistic function of log2 concurrency

    P(b) = p_range / (1 + exp(-k * (log2(b) - x0))) + p_idle
    """
    p_idle: float
    p_range: float
    k: float = 1.0
    x0: float = 4.0
    quality: Quality = Quality.FAIR

    def __post_init__(self):
        if self.p_idle <= 0:
            raise DomainError(f"p_idle must be positive, got {self.p_idle}")
        if self.p_range < 0:
            raise DomainError(f"p_range must be nonnegative, got {self.p_range}")
        if self.k <= 0:
            raise DomainError(f"k must be positive, got {self.k}")

    @property
    def p_nom(self) -> float:
        return self.p_idle + self.p_range

    def power_at(self, b: float) -> float:
        return power_at(self, b)

    def with_x0(self, x0: float) -> "PowerCurve":
        return replace(self, x0=float(x0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p_idle": self.p_idle,
            "p_nom": self.p_nom,
            "k": self.k,
            "x0": self.x0,
            "quality": self.quality.value,
        }


def power_at(curve: PowerCurve, b: float) -> float:
    """
    Board power in watts at mean concurrency b

    Args:
        curve: Power curve parameters
        b: Mean in-flight sequences (real valued, 0 means idle)

    Returns:
        Watts
    """
    if b < 0:
        raise DomainError(f"concurrency must be nonnegative, got {b}")
    if b == 0:
        return curve.p_idle
    z = -curve.k * (math.log2(b) - curve.x0)
    # exp overflows past ~709; the logistic term is zero there anyway
    if z > 700:
        return curve.p_idle
    return curve.p_range / (1.0 + math.exp(z)) + curve.p_idle


def project_power_curve(tdp: float, x0: float, k: float = config.DEFAULT_POWER_STEEPNESS) -> PowerCurve:
    """Project idle/nominal power from TDP for GPUs without measurements"""
    if tdp <= 0:
        raise DomainError(f"tdp must be positive, got {tdp}")
    p_idle = config.IDLE_TDP_FRACTION * tdp
    p_nom = config.NOMINAL_TDP_FRACTION * tdp
    return PowerCurve(p_idle=p_idle, p_range=p_nom - p_idle, k=k, x0=x0, quality=Quality.FAIR)


def derive_x0(w_ms: float, h0_ms: float) -> float:
    """Half-saturation point from the roofline W/H0 ratio"""
    if w_ms <= 0 or h0_ms <= 0:
        raise DomainError(f"W and H0 must be positive, got W={w_ms}, H0={h0_ms}")
    return math.log2(w_ms / h0_ms)


def solve_x0(curve: PowerCurve, b: float, watts: float) -> float:
    """x0 that makes the curve pass through (b, watts), other parameters fixed"""
    if b <= 0:
        raise DomainError(f"b must be positive, got {b}")
    if not curve.p_idle < watts < curve.p_nom:
        raise DomainError(f"{watts} W is outside the open range ({curve.p_idle}, {curve.p_nom})")
    return math.log2(b) + math.log(curve.p_range / (watts - curve.p_idle) - 1.0) / curve.k


def _logistic(log2_b, p_idle, p_range, k, x0):
    return p_range / (1.0 + np.exp(-k * (log2_b - x0))) + p_idle


def fit_power_curve(batches: Sequence[float], watts: Sequence[float],
                    p_idle: float, p_range: float, k: float = 1.0,
                    x0_guess: float = 4.0, fit_k: bool = False,
                    quality: Quality = Quality.FAIR) -> PowerCurve:
    """
    Least-squares fit of x0 (and optionally k) to observed (batch, watts) pairs

    Args:
        batches: Concurrency values, all >= 1
        watts: Measured board power at each concurrency
        p_idle: Fixed idle power
        p_range: Fixed dynamic range
        k: Steepness (initial guess when fit_k is set)
        x0_guess: Initial x0
        fit_k: Fit k as well as x0

    Returns:
        Fitted PowerCurve
    """
    b = np.asarray(batches, dtype=float)
    y = np.asarray(watts, dtype=float)
    if b.size == 0 or b.size != y.size:
        raise DomainError("batches and watts must be nonempty and of equal length")
    if np.any(b < 1):
        raise DomainError("batches must be >= 1")
    x = np.log2(b)

    if fit_k:
        popt, _ = curve_fit(lambda xs, kk, xx: _logistic(xs, p_idle, p_range, kk, xx),
                            x, y, p0=[k, x0_guess])
        k_fit, x0_fit = float(popt[0]), float(popt[1])
    else:
        popt, _ = curve_fit(lambda xs, xx: _logistic(xs, p_idle, p_range, k, xx),
                            x, y, p0=[x0_guess])
        k_fit, x0_fit = k, float(popt[0])

    logger.debug(f"Fitted power curve: k={k_fit:.4f}, x0={x0_fit:.4f} over {b.size} points")
    return PowerCurve(p_idle=p_idle, p_range=p_range, k=k_fit, x0=x0_fit, quality=quality)


@dataclass(frozen=True)
class GpuSpec:
    """Hardware identity of one GPU model"""
    name: str
    tdp: float                  # watts
    vram_gb: float              # decimal GB
    mem_bw: float               # bytes/second
    power_curve: PowerCurve
    cost_rate: float            # dollars/hour
    quality: Quality = Quality.FAIR
    bw_efficiency: float = config.DEFAULT_BW_EFFICIENCY

    def __post_init__(self):
        if self.tdp <= 0 or self.vram_gb <= 0:
            raise DomainError(f"{self.name}: tdp and vram must be positive")
        if self.mem_bw <= 0:
            raise DomainError(f"{self.name}: memory bandwidth must be positive")
        if self.cost_rate <= 0:
            raise DomainError(f"{self.name}: cost rate must be positive")
        if not 0 < self.bw_efficiency <= 1:
            raise DomainError(f"{self.name}: bandwidth efficiency must be in (0, 1]")
        if self.power_curve.p_nom > self.tdp + 1e-9:
            raise DomainError(
                f"{self.name}: p_idle + p_range ({self.power_curve.p_nom} W) exceeds TDP ({self.tdp} W)"
            )
        if self.quality == Quality.HIGH and self.power_curve.quality != Quality.HIGH:
            raise DomainError(f"{self.name}: HIGH quality requires a measured power curve")

    @property
    def vram_bytes(self) -> float:
        return self.vram_gb * 1e9

    @classmethod
    def from_dict(cls, name: str, entry: Dict[str, Any]) -> "GpuSpec":
        """
        Build a spec from a catalog entry

        Entries without a 'power' block get a TDP projection; x0 falls back
        to the catalog default when the block omits it.
        """
        try:
            tdp = float(entry["tdp"])
            power = entry.get("power")
            if power:
                quality = Quality(power.get("quality", entry.get("quality", "FAIR")))
                p_idle = float(power["p_idle"])
                curve = PowerCurve(
                    p_idle=p_idle,
                    p_range=float(power["p_nom"]) - p_idle,
                    k=float(power.get("k", config.DEFAULT_POWER_STEEPNESS)),
                    x0=float(power.get("x0", 4.0)),
                    quality=quality,
                )
            else:
                curve = project_power_curve(tdp, x0=float(entry.get("x0", 4.0)))
            return cls(
                name=name,
                tdp=tdp,
                vram_gb=float(entry["vram_gb"]),
                mem_bw=float(entry["mem_bw"]),
                power_curve=curve,
                cost_rate=float(entry["cost_rate"]),
                quality=Quality(entry.get("quality", curve.quality.value)),
                bw_efficiency=float(entry.get("bw_efficiency", config.DEFAULT_BW_EFFICIENCY)),
            )
        except KeyError as e:
            raise ConfigError(f"GPU '{name}' is missing field {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"GPU '{name}' is invalid: {e}") from e
