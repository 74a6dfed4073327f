"""
Pool sizing under a TTFT percentile SLO and fleet-level tok/W

Each pool is an M/M/c queue: requests arrive at rate lam, an instance serves
mean_output_len tokens per request at its full-concurrency decode rate, and
TTFT is approximated by the queue wait.
"""

import math
import logging
from dataclasses import dataclass
from typing import Iterator, List, Protocol, Sequence, Tuple

import config
from planner.errors import DomainError, SizingError, PlanningError
from planner.perf_model import GpuProfile, decode_throughput
from planner.workload import ContextCdf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatencySlo:
    metric: str = "TTFT"
    percentile: float = config.DEFAULT_SLO_PERCENTILE
    bound_ms: float = config.DEFAULT_SLO_BOUND_MS

    def __post_init__(self):
        if not 0 < self.percentile < 1:
            raise DomainError(f"SLO percentile must be in (0, 1), got {self.percentile}")
        if self.bound_ms <= 0:
            raise DomainError(f"SLO bound must be positive, got {self.bound_ms}")

    def to_dict(self):
        return {"metric": self.metric, "percentile": self.percentile, "bound_ms": self.bound_ms}


class StaffingModel(Protocol):
    def min_servers(self, lam: float, mu: float, slo: LatencySlo, max_servers: int) -> int:
        ...


def _wait_probabilities(offered_load: float, max_servers: int) -> Iterator[Tuple[int, float]]:
    """(c, P[wait]) for c = 1..max_servers, Erlang-B recursion carried across c"""
    b = 1.0
    for c in range(1, max_servers + 1):
        b = offered_load * b / (c + offered_load * b)
        if c <= offered_load:
            yield c, 1.0
        else:
            yield c, b / (1 - (offered_load / c) * (1 - b))


def erlang_c(servers: int, offered_load: float) -> float:
    """Probability an arrival waits in an M/M/c queue (requires offered_load < servers)"""
    if servers < 1:
        raise DomainError("servers must be >= 1")
    if offered_load <= 0:
        return 0.0
    if offered_load >= servers:
        return 1.0
    prob_wait = 1.0
    for _, prob_wait in _wait_probabilities(offered_load, servers):
        pass
    return prob_wait


class ErlangC:
    """Smallest c whose Erlang-C wait percentile meets the bound"""

    @staticmethod
    def wait_quantile(prob_wait: float, servers: int, lam: float, mu: float, q: float) -> float:
        """Seconds of queue wait not exceeded with probability q"""
        if prob_wait <= 1 - q:
            return 0.0
        return math.log(prob_wait / (1 - q)) / (servers * mu - lam)

    def min_servers(self, lam: float, mu: float, slo: LatencySlo,
                    max_servers: int = config.MAX_POOL_INSTANCES) -> int:
        if lam <= 0:
            return 1
        if mu <= 0:
            raise DomainError(f"service rate must be positive, got {mu}")
        load = lam / mu
        bound_s = slo.bound_ms / 1000.0
        for c, prob_wait in _wait_probabilities(load, max_servers):
            if c <= load:
                continue
            if self.wait_quantile(prob_wait, c, lam, mu, slo.percentile) <= bound_s:
                return c
        raise SizingError(f"no instance count up to {max_servers} meets the SLO (offered load {load:.1f})")


ERLANG_C = ErlangC()


@dataclass(frozen=True)
class PoolConfig:
    profile: GpuProfile
    ctx_window: int
    cdf: ContextCdf
    lam: float
    label: str = ""

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError(f"{self.label}: arrival rate must be nonnegative")
        if self.cdf.max_length > self.ctx_window:
            raise DomainError(
                f"{self.label}: requests up to {self.cdf.max_length} tokens exceed the {self.ctx_window} window"
            )

    @property
    def instance_throughput(self) -> float:
        """Tokens/second of one replica at full concurrency"""
        return decode_throughput(self.profile, self.profile.n_max(self.ctx_window), self.ctx_window)

    @property
    def service_rate(self) -> float:
        """Requests/second one replica completes"""
        return self.instance_throughput / self.cdf.mean_output_len


def size_pool(pool: PoolConfig, slo: LatencySlo, model: StaffingModel = ERLANG_C,
              max_instances: int = config.MAX_POOL_INSTANCES) -> int:
    """
    Minimum replicas that keep the TTFT percentile within the SLO

    Raises:
        SizingError: the window leaves no KV room or the cap is reached
    """
    if pool.lam <= 0:
        return 1
    if pool.profile.n_max(pool.ctx_window) == 0:
        raise SizingError(f"{pool.ctx_window}-token window exceeds the KV budget", pool.label)
    if pool.cdf.mean_output_len <= 0:
        raise SizingError("mean output length must be positive", pool.label)
    try:
        instances = model.min_servers(pool.lam, pool.service_rate, slo, max_instances)
    except SizingError as e:
        raise SizingError(str(e), pool.label) from e
    logger.debug(f"Sized {pool.label}: {instances} instances for lam={pool.lam:.2f}, mu={pool.service_rate:.3f}")
    return instances


@dataclass(frozen=True)
class PoolUsage:
    n_active_mean: float
    pool_power_kw: float
    pool_token_rate: float


def pool_operating_point(pool: PoolConfig, instances: int) -> PoolUsage:
    """Mean concurrency, power and delivered token rate of a sized pool"""
    if instances < 1:
        raise DomainError(f"instances must be >= 1, got {instances}")
    n_max = pool.profile.n_max(pool.ctx_window)
    if pool.lam > 0 and n_max > 0:
        rho = min(1.0, pool.lam / (instances * pool.service_rate))
    else:
        rho = 0.0
    n_active = rho * n_max
    return PoolUsage(
        n_active_mean=n_active,
        pool_power_kw=instances * pool.profile.power_at(n_active) / 1000.0,
        pool_token_rate=pool.lam * pool.cdf.mean_output_len,
    )


@dataclass(frozen=True)
class PoolPlan:
    config: PoolConfig
    instances: int
    n_active_mean: float
    pool_power_kw: float
    pool_token_rate: float

    @property
    def tok_per_watt(self) -> float:
        return self.pool_token_rate / (self.pool_power_kw * 1000.0)


@dataclass(frozen=True)
class FleetPlan:
    pools: Tuple[PoolPlan, ...]
    fleet_power_kw: float
    fleet_tok_per_watt: float
    slo: LatencySlo

    @property
    def total_instances(self) -> int:
        return sum(p.instances for p in self.pools)

    @property
    def lam(self) -> float:
        return sum(p.config.lam for p in self.pools)


def plan_pool(pool: PoolConfig, slo: LatencySlo, model: StaffingModel = ERLANG_C) -> PoolPlan:
    instances = size_pool(pool, slo, model)
    usage = pool_operating_point(pool, instances)
    return PoolPlan(pool, instances, usage.n_active_mean, usage.pool_power_kw, usage.pool_token_rate)


def aggregate_fleet(pool_plans: Sequence[PoolPlan], slo: LatencySlo) -> FleetPlan:
    """Fleet tok/W: total delivered tokens over total power"""
    if not pool_plans:
        raise PlanningError("fleet has no pools")
    power_kw = sum(p.pool_power_kw for p in pool_plans)
    token_rate = sum(p.pool_token_rate for p in pool_plans)
    return FleetPlan(
        pools=tuple(pool_plans),
        fleet_power_kw=power_kw,
        fleet_tok_per_watt=token_rate / (power_kw * 1000.0),
        slo=slo,
    )


def fleet_tpw_analysis(pools: Sequence[PoolConfig], lam_total: float, slo: LatencySlo,
                       model: StaffingModel = ERLANG_C) -> FleetPlan:
    """
    Size every pool and aggregate the fleet

    Args:
        pools: Pool configurations whose arrival rates sum to lam_total
        lam_total: Fleet arrival rate (requests/second)
        slo: Latency objective applied to every pool

    Returns:
        FleetPlan
    """
    if not pools:
        raise PlanningError("fleet has no pools")
    lam_sum = sum(p.lam for p in pools)
    if not math.isclose(lam_sum, lam_total, rel_tol=1e-6, abs_tol=1e-9):
        raise PlanningError(f"pool arrival rates sum to {lam_sum}, expected {lam_total}")

    plans: List[PoolPlan] = []
    for pool in pools:
        plan = plan_pool(pool, slo, model)
        logger.info(f"Pool {pool.label}: {plan.instances} x {pool.profile.gpu.name} "
                    f"@ {pool.ctx_window} tokens, {plan.pool_power_kw:.1f} kW, {plan.tok_per_watt:.2f} tok/W")
        plans.append(plan)
    return aggregate_fleet(plans, slo)
