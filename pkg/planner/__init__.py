"""
Analytical tokens-per-watt planner for LLM inference GPUs and fleets
"""

from .errors import *
from .gpu_power import (
    Quality, PowerCurve, GpuSpec, power_at, project_power_curve, derive_x0,
    solve_x0, fit_power_curve,
)
from .kv_capacity import (
    KvSharding, KvGeometry, kappa_per_gpu, usable_kv_vram, kv_token_budget,
    n_max, scale_budget,
)
from .perf_model import (
    WQuality, ProfileKind, ModelSpec, GpuProfile, WeightStream, with_dtype,
    weight_stream_time, kv_scan_overhead, decode_iteration_latency,
    decode_throughput, build_manual_profile, build_computed_profile, fit_kv_scan,
)
from .tokenomics import (
    OperatingPoint, gpu_tok_per_watt, context_sweep, halving_ratios,
    utilization_point, tok_per_dollar, compare_generations, compare_models,
    compare_routing, RoutingPool,
)
from .workload import (
    ContextCdf, SplitWorkload, Archetype, ArchetypeParams, ArchetypeClass,
    ingest_trace, read_trace, synth_archetype, split_at, classify_archetype,
    archetype_guidance,
)
from .fleet_planner import (
    LatencySlo, ErlangC, PoolConfig, PoolPlan, FleetPlan, erlang_c, size_pool,
    pool_operating_point, aggregate_fleet, fleet_tpw_analysis,
)
from .topology_opt import (
    TopologyKind, Topology, Candidate, OptimizationResult, GainDecomposition,
    plan_topology, optimize, gain_decomposition, multiplicativity_check,
)
