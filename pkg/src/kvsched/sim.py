"""Discrete-time execution of a request ordering under the KV-cache limit."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    BatchPlan,
    Instance,
    SimTrace,
    StartSchedule,
    ValidationError,
    batch_feasible_exact,
    build_trace,
    validate_schedule,
)


class Admission(str, Enum):
    PREFIX_BLOCKING = "prefix_blocking"
    SKIP_SCAN = "skip_scan"


@dataclass(frozen=True)
class ExecutionPolicy:
    admission: Admission = Admission.PREFIX_BLOCKING


class _FutureLoad:
    """Memory held at each future time by the requests admitted so far."""

    def __init__(self, size: int = 1024):
        self.load = np.zeros(size, dtype=np.int64)

    def _reserve(self, end: int) -> None:
        if end >= len(self.load):
            grown = np.zeros(max(end + 1, 2 * len(self.load)), dtype=np.int64)
            grown[: len(self.load)] = self.load
            self.load = grown

    def fits(self, t: int, s: int, o: int, M: int) -> bool:
        # For a fixed set, usage grows between completions, so the maximum over
        # all t' > t equals the maximum over completion checkpoints.
        self._reserve(t + o)
        window = self.load[t + 1 : t + o + 1]
        return bool((window + s + np.arange(1, o + 1)).max() <= M)

    def add(self, t: int, s: int, o: int) -> None:
        self._reserve(t + o)
        self.load[t + 1 : t + o + 1] += s + np.arange(1, o + 1)


def _check_order(instance: Instance, order: Sequence[int]) -> None:
    if len(order) != instance.n or set(order) != set(instance.by_id):
        raise ValidationError("order must be a permutation of the instance's request ids")


def execute_ordered(
    instance: Instance,
    order: Sequence[int],
    policy: ExecutionPolicy = ExecutionPolicy(),
) -> tuple[StartSchedule, SimTrace]:
    """Run the step loop: at every step scan pending requests in ``order`` and
    start each one whose addition keeps memory within M at every future step.

    Under prefix blocking the scan stops at the first request that does not fit.
    """
    _check_order(instance, order)
    M = instance.memory_limit
    by_id = instance.by_id
    pending = [by_id[i] for i in order]
    load = _FutureLoad()
    starts: dict[int, int] = {}
    t = 0
    if policy.admission is Admission.PREFIX_BLOCKING:
        head = 0
        while head < len(pending):
            while head < len(pending) and load.fits(t, pending[head].s, pending[head].o, M):
                r = pending[head]
                load.add(t, r.s, r.o)
                starts[r.id] = t
                head += 1
            t += 1
    else:
        while pending:
            remaining = []
            for r in pending:
                if load.fits(t, r.s, r.o, M):
                    load.add(t, r.s, r.o)
                    starts[r.id] = t
                else:
                    remaining.append(r)
            pending = remaining
            t += 1
    schedule = StartSchedule(starts)
    trace = build_trace(instance, schedule)
    trace.check_memory()
    return schedule, trace


def execute_sequential_batches(instance: Instance, plan: BatchPlan) -> tuple[StartSchedule, SimTrace]:
    """Start each batch together once the previous batch has fully completed."""
    plan.check_against(instance)
    by_id = instance.by_id
    starts: dict[int, int] = {}
    t = 0
    for k, batch in enumerate(plan.batches):
        reqs = [by_id[i] for i in batch]
        if not reqs:
            continue
        if not batch_feasible_exact(reqs, instance.memory_limit):
            raise ValidationError(f"batch {k} {list(batch)} does not fit in memory {instance.memory_limit}")
        for r in reqs:
            starts[r.id] = t
        t += max(r.o for r in reqs)
    schedule = StartSchedule(starts)
    violation = validate_schedule(instance, schedule)
    assert violation is None, violation
    trace = build_trace(instance, schedule)
    trace.check_memory()
    return schedule, trace
