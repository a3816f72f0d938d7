"""Sequential monitoring of randomized experiments with constant and staircase boundaries."""

from seqmon.boundaries import (
    ConstantBoundary,
    StaircaseBoundary,
    StaircasePlan,
    TestConfig,
    constant_boundary,
    fdr_bound,
    staircase_boundaries,
)
from seqmon.errors import (
    ConvergenceError,
    DataError,
    DomainError,
    NumericalError,
    ResourceError,
    SeqmonError,
    UsageError,
)
from seqmon.monitor import Event, MonitorReport, MonitorState, run_stream, step

__version__ = "0.1.0"

__all__ = [
    "ConstantBoundary",
    "ConvergenceError",
    "DataError",
    "DomainError",
    "Event",
    "MonitorReport",
    "MonitorState",
    "NumericalError",
    "ResourceError",
    "SeqmonError",
    "StaircaseBoundary",
    "StaircasePlan",
    "TestConfig",
    "UsageError",
    "constant_boundary",
    "fdr_bound",
    "run_stream",
    "staircase_boundaries",
    "step",
]
