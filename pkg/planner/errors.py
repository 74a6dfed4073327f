"""
Exception hierarchy for the planner
"""

from typing import Optional


class FleetWattError(Exception):
    """Base class for every planner failure"""


class DomainError(FleetWattError, ValueError):
    """An input falls outside the domain of an operation"""


class CapacityExceeded(DomainError):
    """More in-flight sequences requested than the KV budget holds"""


class InfeasibleArchetype(DomainError):
    """Archetype quantile constraints cannot be met"""


class InvalidTopology(DomainError):
    """Topology parameters are inconsistent (boundary, gamma, window)"""


class ConfigError(FleetWattError):
    """Run configuration or catalog entry is invalid"""


class InfeasibleModel(FleetWattError):
    """Model weights do not fit in GPU memory"""

    def __init__(self, message: str, deficit_bytes: float):
        super().__init__(message)
        self.deficit_bytes = deficit_bytes


class TraceIngestionError(FleetWattError):
    """A trace could not be read or contains a malformed record"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class PlanningError(FleetWattError):
    """Fleet planning failed"""


class SizingError(PlanningError):
    """No instance count satisfies the SLO for a pool"""

    def __init__(self, message: str, pool: Optional[str] = None):
        if pool is not None:
            message = f"pool '{pool}': {message}"
        super().__init__(message)
        self.pool = pool


class OptimizationError(PlanningError):
    """Every topology candidate was infeasible"""
