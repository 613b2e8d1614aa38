"""Memory-constrained batch scheduling for LLM inference on a single KV-cache worker."""

from .core import (
    BatchPlan,
    Instance,
    InfeasibleScheduleError,
    Metrics,
    Request,
    SimTrace,
    StartSchedule,
    ValidationError,
    Violation,
    batch_feasible_conservative,
    batch_feasible_exact,
    compute_metrics,
    f_metric,
    memory_usage_at,
    validate_schedule,
)
from .sim import Admission, ExecutionPolicy, execute_ordered, execute_sequential_batches

__version__ = "0.1.0"
