"""
Routing topology search and gain decomposition

Topologies:
    Homogeneous - one pool at long_window
    TwoPool     - prompts <= boundary go to a pool configured at boundary;
                  requests whose context outgrows it go long
    FleetOpt    - as TwoPool, but the short pool is configured at
                  gamma * boundary so generated tokens have headroom
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

from tqdm import tqdm

import config
from planner.errors import DomainError, InvalidTopology, OptimizationError, PlanningError
from planner.fleet_planner import FleetPlan, LatencySlo, PoolConfig, fleet_tpw_analysis
from planner.perf_model import GpuProfile
from planner.workload import ContextCdf, split_at

logger = logging.getLogger(__name__)

ProfileFactory = Callable[[int], GpuProfile]


class TopologyKind(str, Enum):
    HOMOGENEOUS = "homogeneous"
    TWO_POOL = "two-pool"
    FLEET_OPT = "fleetopt"


def _tokens(n: float) -> str:
    return f"{int(n) // 1024}K" if n >= 1024 and int(n) % 1024 == 0 else str(int(n))


@dataclass(frozen=True)
class Topology:
    kind: TopologyKind
    boundary: Optional[int] = None
    gamma: float = 1.0
    long_window: int = config.DEFAULT_LONG_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        if self.long_window < 1:
            raise InvalidTopology(f"long window must be >= 1, got {self.long_window}")
        if self.kind == TopologyKind.HOMOGENEOUS:
            if self.boundary is not None or self.gamma != 1.0:
                raise InvalidTopology("homogeneous topology takes no boundary or gamma")
            return
        if self.boundary is None or self.boundary < 1:
            raise InvalidTopology(f"{self.kind.value} needs a boundary >= 1")
        if self.boundary >= self.long_window:
            raise InvalidTopology(f"boundary {self.boundary} must be below the {self.long_window} long window")
        if self.kind == TopologyKind.TWO_POOL and self.gamma != 1.0:
            raise InvalidTopology("two-pool topology has gamma = 1")
        if self.gamma < 1.0:
            raise InvalidTopology(f"gamma must be >= 1, got {self.gamma}")
        if self.short_window > self.long_window:
            raise InvalidTopology(
                f"short window {self.short_window} (gamma {self.gamma} x {self.boundary}) exceeds {self.long_window}"
            )

    @property
    def short_window(self) -> Optional[int]:
        if self.boundary is None:
            return None
        return int(round(self.gamma * self.boundary))

    @property
    def label(self) -> str:
        if self.kind == TopologyKind.HOMOGENEOUS:
            return f"Homo {_tokens(self.long_window)}"
        if self.kind == TopologyKind.TWO_POOL:
            return f"Pool {_tokens(self.boundary)}"
        return f"FleetOpt {_tokens(self.boundary)}/gamma={self.gamma:g}"

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "boundary": self.boundary,
            "gamma": self.gamma,
            "long_window": self.long_window,
        }


def plan_topology(topology: Topology, workload: ContextCdf, profile_factory: ProfileFactory,
                  lam: float, slo: LatencySlo) -> FleetPlan:
    """
    Size the pools of one topology

    Args:
        topology: Routing topology
        workload: Context-length CDF of the whole fleet's traffic
        profile_factory: Maps a pool's context window to its serving profile
        lam: Fleet arrival rate (requests/second)
        slo: Latency objective

    Returns:
        FleetPlan (empty pools are dropped)
    """
    long_profile = profile_factory(topology.long_window)
    if topology.kind == TopologyKind.HOMOGENEOUS:
        pools = [PoolConfig(long_profile, topology.long_window, workload, lam, "long")]
    else:
        split = split_at(workload, topology.boundary, topology.short_window)
        pools = []
        if split.short_cdf is not None:
            pools.append(PoolConfig(profile_factory(topology.short_window), topology.short_window,
                                    split.short_cdf, lam * split.alpha, "short"))
        if split.long_cdf is not None:
            pools.append(PoolConfig(long_profile, topology.long_window,
                                    split.long_cdf, lam * (1 - split.alpha), "long"))
    return fleet_tpw_analysis(pools, sum(p.lam for p in pools), slo)


@dataclass(frozen=True)
class Candidate:
    topology: Topology
    plan: FleetPlan

    @property
    def tok_per_watt(self) -> float:
        return self.plan.fleet_tok_per_watt


@dataclass(frozen=True)
class OptimizationResult:
    best: Candidate
    ranking: Tuple[Candidate, ...]
    baseline: Optional[Candidate]

    @property
    def gain(self) -> Optional[float]:
        """Best tok/W over the homogeneous baseline"""
        if self.baseline is None or self.baseline.tok_per_watt == 0:
            return None
        return self.best.tok_per_watt / self.baseline.tok_per_watt


def _rank_key(candidate: Candidate):
    topo = candidate.topology
    boundary = topo.boundary if topo.boundary is not None else topo.long_window
    return (-candidate.tok_per_watt, candidate.plan.total_instances, boundary, topo.gamma)


def candidate_topologies(boundary_grid: Sequence[int], gamma_grid: Sequence[float],
                         long_window: int = config.DEFAULT_LONG_WINDOW) -> List[Topology]:
    """Valid grid topologies; gamma 1 is two-pool, larger gammas FleetOpt"""
    topologies = []
    for boundary in boundary_grid:
        for gamma in gamma_grid:
            kind = TopologyKind.TWO_POOL if gamma == 1 else TopologyKind.FLEET_OPT
            try:
                topologies.append(Topology(kind, int(boundary), float(gamma), long_window))
            except InvalidTopology as e:
                logger.debug(f"Skipping boundary={boundary}, gamma={gamma}: {e}")
    return topologies


def optimize(workload: ContextCdf, profile_factory: ProfileFactory, lam: float, slo: LatencySlo,
             boundary_grid: Sequence[int], gamma_grid: Sequence[float],
             long_window: int = config.DEFAULT_LONG_WINDOW, include_baseline: bool = True,
             show_progress: bool = False) -> OptimizationResult:
    """
    Exhaustive grid search for the topology with the highest fleet tok/W

    Ties go to fewer instances, then the smaller boundary, then smaller gamma.

    Raises:
        OptimizationError: every candidate failed to plan
    """
    if not boundary_grid or not gamma_grid:
        raise DomainError("boundary and gamma grids must be nonempty")

    topologies = candidate_topologies(boundary_grid, gamma_grid, long_window)
    if include_baseline:
        topologies.insert(0, Topology(TopologyKind.HOMOGENEOUS, long_window=long_window))

    candidates: List[Candidate] = []
    baseline = None
    for topology in tqdm(topologies, desc="Evaluating topologies", disable=not show_progress):
        try:
            plan = plan_topology(topology, workload, profile_factory, lam, slo)
        except (PlanningError, DomainError) as e:
            logger.warning(f"{topology.label} is infeasible: {e}")
            continue
        candidate = Candidate(topology, plan)
        logger.debug(f"{topology.label}: {plan.fleet_tok_per_watt:.4f} tok/W, {plan.total_instances} instances")
        if topology.kind == TopologyKind.HOMOGENEOUS:
            baseline = candidate
        candidates.append(candidate)

    if not candidates:
        raise OptimizationError(f"all {len(topologies)} topology candidates are infeasible")

    ranking = tuple(sorted(candidates, key=_rank_key))
    best = ranking[0]
    logger.info(f"Best topology: {best.topology.label} at {best.tok_per_watt:.3f} tok/W "
                f"({best.plan.total_instances} instances)")
    return OptimizationResult(best=best, ranking=ranking, baseline=baseline)


@dataclass(frozen=True)
class GainDecomposition:
    """
    Efficiency gains relative to the base GPU's homogeneous fleet

    delta_topo_new and delta_gen_opt are the same factors measured on the
    other axis (topology gain on the new GPU, generation gain at the optimum).
    """
    delta_topo: float
    delta_gen: float
    delta_combined: float
    delta_topo_new: float
    delta_gen_opt: float


def gain_decomposition(tpw_base_homo: float, tpw_base_opt: float,
                       tpw_new_homo: float, tpw_new_opt: float) -> GainDecomposition:
    values = (tpw_base_homo, tpw_base_opt, tpw_new_homo, tpw_new_opt)
    if any(v <= 0 for v in values):
        raise DomainError(f"gain decomposition needs positive tok/W values, got {values}")
    return GainDecomposition(
        delta_topo=tpw_base_opt / tpw_base_homo,
        delta_gen=tpw_new_homo / tpw_base_homo,
        delta_combined=tpw_new_opt / tpw_base_homo,
        delta_topo_new=tpw_new_opt / tpw_new_homo,
        delta_gen_opt=tpw_new_opt / tpw_base_opt,
    )


def multiplicativity_check(d: GainDecomposition) -> float:
    """Relative gap between the combined gain and topology x generation"""
    return abs(d.delta_combined - d.delta_topo * d.delta_gen) / d.delta_combined
