"""
Run configuration: defaults <- config file <- command-line flags
"""

import os
import logging
from dataclasses import dataclass, field, asdict, fields
from typing import Any, Dict, List, Mapping, Optional

import config
from planner.errors import ConfigError
from planner.kv_capacity import KvSharding
from planner.topology_opt import TopologyKind
from planner.workload import Archetype
from utils.catalog import load_yaml
from utils.helpers import deep_merge, parse_tokens

logger = logging.getLogger(__name__)

WORKLOAD_SOURCES = ("archetype", "trace", "cdf")


def _default_routing() -> List[Dict[str, Any]]:
    return [
        {"label": "70B short pool", "profile": "h100-llama70b", "ctx_window": 8192},
        {"label": "70B long pool", "profile": "h100-llama70b", "ctx_window": 65536},
        {"label": "8B small model", "profile": "H100-SXM5:Llama-3.1-8B", "ctx_window": 8192},
    ]


@dataclass
class RunConfig:
    """Everything a command needs; serializes back to the same config file shape"""
    profile: str = config.DEFAULT_PROFILE
    compare: List[str] = field(default_factory=lambda: list(config.DEFAULT_COMPARE))
    gpu_overrides: Dict[str, Any] = field(default_factory=dict)
    model_overrides: Dict[str, Any] = field(default_factory=dict)
    profile_overrides: Dict[str, Any] = field(default_factory=dict)
    bw_efficiency: Optional[float] = None
    vram_reserve_gb: float = config.DEFAULT_VRAM_RESERVE_GB
    kv_sharding: str = config.DEFAULT_KV_SHARDING
    kv_dtype_bytes: float = config.DEFAULT_KV_DTYPE_BYTES
    dispatch_ms: float = config.DEFAULT_DISPATCH_MS
    clamp_infeasible: bool = False
    l_calib: int = config.DEFAULT_L_CALIB
    windows: List[int] = field(default_factory=lambda: list(config.DEFAULT_WINDOWS))
    ctx_window: int = config.DEFAULT_CTX_WINDOW
    rho: float = config.DEFAULT_RHO
    compare_models: List[str] = field(default_factory=lambda: list(config.DEFAULT_COMPARE_MODELS))
    compare_gpus: List[str] = field(default_factory=lambda: list(config.DEFAULT_COMPARE_GPUS))
    routing: List[Dict[str, Any]] = field(default_factory=_default_routing)
    workload: Dict[str, Any] = field(default_factory=lambda: {"archetype": config.DEFAULT_ARCHETYPE})
    default_output_len: float = config.DEFAULT_OUTPUT_LEN
    slo: Dict[str, float] = field(default_factory=lambda: {
        "percentile": config.DEFAULT_SLO_PERCENTILE, "bound_ms": config.DEFAULT_SLO_BOUND_MS})
    lam: float = config.DEFAULT_ARRIVAL_RATE
    topology: Dict[str, Any] = field(default_factory=lambda: {
        "kind": "fleetopt", "boundary": 4096, "gamma": 2.0, "long_window": config.DEFAULT_LONG_WINDOW})
    boundary_grid: List[int] = field(default_factory=lambda: list(config.DEFAULT_BOUNDARY_GRID))
    gamma_grid: List[float] = field(default_factory=lambda: list(config.DEFAULT_GAMMA_GRID))
    format: str = config.OUTPUT_FORMAT

    def __post_init__(self):
        try:
            self._normalize()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid run configuration: {e}") from e
        self.validate()

    def _normalize(self):
        self.compare = [str(s) for s in self.compare]
        self.windows = [parse_tokens(w) for w in self.windows]
        self.ctx_window = parse_tokens(self.ctx_window)
        self.l_calib = parse_tokens(self.l_calib)
        self.boundary_grid = [parse_tokens(b) for b in self.boundary_grid]
        self.gamma_grid = [float(g) for g in self.gamma_grid]
        self.bw_efficiency = None if self.bw_efficiency is None else float(self.bw_efficiency)
        self.vram_reserve_gb = float(self.vram_reserve_gb)
        self.kv_dtype_bytes = float(self.kv_dtype_bytes)
        self.dispatch_ms = float(self.dispatch_ms)
        self.rho = float(self.rho)
        self.lam = float(self.lam)
        self.default_output_len = float(self.default_output_len)
        self.slo = {"percentile": float(self.slo.get("percentile", config.DEFAULT_SLO_PERCENTILE)),
                    "bound_ms": float(self.slo.get("bound_ms", config.DEFAULT_SLO_BOUND_MS))}
        self.routing = [
            {"label": str(r.get("label", r["profile"])), "profile": str(r["profile"]),
             "ctx_window": parse_tokens(r["ctx_window"])}
            for r in self.routing
        ]
        topo = dict(self.topology)
        topo["kind"] = TopologyKind(topo.get("kind", "fleetopt")).value
        topo["boundary"] = parse_tokens(topo["boundary"]) if topo.get("boundary") is not None else None
        topo["gamma"] = float(topo.get("gamma", 1.0))
        topo["long_window"] = parse_tokens(topo.get("long_window", config.DEFAULT_LONG_WINDOW))
        if topo["kind"] == TopologyKind.HOMOGENEOUS.value:
            topo["boundary"], topo["gamma"] = None, 1.0
        self.topology = topo

    def validate(self):
        sources = [key for key in WORKLOAD_SOURCES if self.workload.get(key)]
        if len(sources) != 1:
            raise ConfigError(f"workload needs exactly one of {', '.join(WORKLOAD_SOURCES)}, got {sources or 'none'}")
        unknown = set(self.workload) - set(WORKLOAD_SOURCES) - {"params"}
        if unknown:
            raise ConfigError(f"unknown workload keys: {', '.join(sorted(unknown))}")
        if "archetype" in sources:
            try:
                Archetype(self.workload["archetype"])
            except ValueError:
                raise ConfigError(
                    f"unknown archetype '{self.workload['archetype']}' "
                    f"(expected one of {', '.join(a.value for a in Archetype)})"
                )
        if self.format not in config.OUTPUT_FORMATS:
            raise ConfigError(f"output format must be one of {', '.join(config.OUTPUT_FORMATS)}, got '{self.format}'")
        if self.kv_sharding not in {s.value for s in KvSharding}:
            raise ConfigError(f"kv_sharding must be one of {', '.join(s.value for s in KvSharding)}")
        if not 0 <= self.rho <= 1:
            raise ConfigError(f"rho must be in [0, 1], got {self.rho}")
        if self.lam < 0:
            raise ConfigError(f"arrival rate must be nonnegative, got {self.lam}")
        if not self.windows or any(w < 1 for w in self.windows):
            raise ConfigError("windows must be a nonempty list of positive token counts")
        if not self.boundary_grid or not self.gamma_grid:
            raise ConfigError("boundary and gamma grids must be nonempty")
        if not 0 < self.slo["percentile"] < 1 or self.slo["bound_ms"] <= 0:
            raise ConfigError(f"SLO needs a percentile in (0, 1) and a positive bound, got {self.slo}")

    def computed_profile_args(self) -> Dict[str, Any]:
        """Keyword arguments for building GPU:MODEL subjects"""
        return {
            "bw_efficiency": self.bw_efficiency,
            "vram_reserve_gb": self.vram_reserve_gb,
            "kv_sharding": self.kv_sharding,
            "l_calib": self.l_calib,
            "kv_dtype_bytes": self.kv_dtype_bytes,
            "dispatch_ms": self.dispatch_ms,
            "clamp_infeasible": self.clamp_infeasible,
        }

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**dict(data))
        except (KeyError, AttributeError) as e:
            raise ConfigError(f"invalid run configuration: {e}") from e


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Load a run config

    Args:
        path: Config file; falls back to $FLEETWATT_CONFIG, then built-in defaults.
            A JSON report written by this tool works too (its 'config' block is used).
        overrides: Values from command-line flags, merged last

    Returns:
        RunConfig
    """
    path = path or os.environ.get(config.CONFIG_ENV_VAR)
    data: Dict[str, Any] = {}
    if path:
        data = load_yaml(path)
        if isinstance(data.get("config"), dict):
            data = data["config"]
        logger.info(f"Loaded config: {path}")

    overrides = dict(overrides or {})
    # a workload flag replaces the file's workload source instead of merging into it
    if "workload" in overrides:
        data = dict(data)
        data.pop("workload", None)
    return RunConfig.from_dict(deep_merge(data, overrides))
