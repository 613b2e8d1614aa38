"""Domain types, the KV-cache memory model, schedule validation and metrics.

Memory model: a request ``(s, o)`` started at step ``p`` emits one token per
step and holds ``s + (t - p)`` tokens of KV cache at every integer time
``t`` with ``p < t <= p + o``. It completes at ``c = p + o`` and holds nothing
at ``t <= p`` or ``t > p + o``. Peak occupancy is therefore ``s + o``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Malformed instance, schedule or plan."""


@dataclass(frozen=True)
class Request:
    id: int
    s: int
    o: int

    def __post_init__(self):
        for name in ("id", "s", "o"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ValidationError(f"request {name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.s < 1 or self.o < 1:
            raise ValidationError(f"request {self.id}: need s >= 1 and o >= 1, got s={self.s}, o={self.o}")

    @property
    def peak(self) -> int:
        """Memory held at the completion step."""
        return self.s + self.o


@dataclass(frozen=True)
class Instance:
    """Requests (all arriving at t=0, list order = arrival order) and capacity M."""

    requests: tuple[Request, ...]
    memory_limit: int

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))
        if not isinstance(self.memory_limit, (int, np.integer)) or self.memory_limit < 1:
            raise ValidationError(f"memory_limit must be a positive integer, got {self.memory_limit!r}")
        object.__setattr__(self, "memory_limit", int(self.memory_limit))
        seen = set()
        for r in self.requests:
            if r.id in seen:
                raise ValidationError(f"duplicate request id {r.id}")
            seen.add(r.id)
            if r.peak > self.memory_limit:
                raise ValidationError(
                    f"request {r.id}: s + o = {r.peak} exceeds memory limit {self.memory_limit}"
                )

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], memory_limit: int) -> "Instance":
        return cls(tuple(Request(i, s, o) for i, (s, o) in enumerate(pairs)), memory_limit)

    @property
    def n(self) -> int:
        return len(self.requests)

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.requests]

    @cached_property
    def by_id(self) -> dict[int, Request]:
        return {r.id: r for r in self.requests}

    def subset(self, ids: Iterable[int]) -> "Instance":
        return Instance(tuple(self.by_id[i] for i in ids), self.memory_limit)

    def to_dict(self) -> dict:
        return {
            "memory_limit": self.memory_limit,
            "requests": [{"id": r.id, "s": r.s, "o": r.o} for r in self.requests],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Instance":
        try:
            reqs = tuple(Request(int(d["id"]), int(d["s"]), int(d["o"])) for d in data["requests"])
            return cls(reqs, int(data["memory_limit"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed instance document: {exc}") from exc


@dataclass(frozen=True)
class StartSchedule:
    """Start step ``p`` for each request id; completion is ``p + o``."""

    starts: Mapping[int, int]

    def __post_init__(self):
        starts = {}
        for rid, p in dict(self.starts).items():
            if int(p) < 0:
                raise ValidationError(f"request {rid}: negative start {p}")
            starts[int(rid)] = int(p)
        object.__setattr__(self, "starts", starts)

    def check_covers(self, instance: Instance) -> None:
        missing = [i for i in instance.ids if i not in self.starts]
        if missing:
            raise ValidationError(f"schedule is missing requests {missing[:10]}")
        extra = [i for i in self.starts if i not in instance.by_id]
        if extra:
            raise ValidationError(f"schedule names unknown requests {extra[:10]}")

    def completions(self, instance: Instance) -> dict[int, int]:
        return {r.id: self.starts[r.id] + r.o for r in instance.requests}

    def to_dict(self) -> dict:
        return {"starts": {str(k): v for k, v in sorted(self.starts.items())}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "StartSchedule":
        return cls({int(k): int(v) for k, v in data["starts"].items()})


@dataclass(frozen=True)
class BatchPlan:
    """Ordered batches of request ids; each batch ascending by (o, id)."""

    batches: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "batches", tuple(tuple(b) for b in self.batches))
        seen = set()
        for b in self.batches:
            for rid in b:
                if rid in seen:
                    raise ValidationError(f"request {rid} appears in more than one batch")
                seen.add(rid)

    @classmethod
    def from_batches(cls, batches: Iterable[Iterable[Request]]) -> "BatchPlan":
        return cls(tuple(tuple(r.id for r in sorted(b, key=lambda r: (r.o, r.id))) for b in batches))

    def flatten(self) -> list[int]:
        return [rid for b in self.batches for rid in b]

    def check_against(self, instance: Instance, *, complete: bool = True) -> None:
        by_id = instance.by_id
        for k, b in enumerate(self.batches):
            for rid in b:
                if rid not in by_id:
                    raise ValidationError(f"batch {k} names unknown request {rid}")
            keys = [(by_id[r].o, r) for r in b]
            if keys != sorted(keys):
                raise ValidationError(f"batch {k} is not sorted by ascending o")
        if complete and len(self.flatten()) != instance.n:
            raise ValidationError("plan does not cover every request")


@dataclass(frozen=True)
class TraceStep:
    t: int
    active: tuple[int, ...]
    admitted: tuple[int, ...]
    memory_used: int


@dataclass
class SimTrace:
    memory_limit: int
    steps: list[TraceStep] = field(default_factory=list)

    @property
    def peak_memory(self) -> int:
        return max((s.memory_used for s in self.steps), default=0)

    def check_memory(self) -> None:
        for step in self.steps:
            if step.memory_used > self.memory_limit:
                raise AssertionError(
                    f"trace step {step.t}: memory {step.memory_used} exceeds {self.memory_limit}"
                )

    def to_csv(self) -> str:
        lines = ["step,active_count,admitted_ids,memory_used"]
        for s in self.steps:
            lines.append(f"{s.t},{len(s.active)},{' '.join(map(str, s.admitted))},{s.memory_used}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Metrics:
    tel: int
    mean_latency: float
    makespan: int
    peak_memory: int
    mean_utilization: float


@dataclass(frozen=True)
class Violation:
    """First time step at which the memory limit is exceeded."""

    t: int
    usage: int
    overflow: int

    def __str__(self):
        return f"memory {self.usage} exceeds limit by {self.overflow} at t={self.t}"


class InfeasibleScheduleError(ValueError):
    def __init__(self, violation: Violation):
        super().__init__(str(violation))
        self.violation = violation


def memory_usage_at(instance: Instance, schedule: StartSchedule, t_star: int) -> int:
    if t_star < 0:
        raise ValidationError("t_star must be non-negative")
    total = 0
    for rid, p in schedule.starts.items():
        try:
            r = instance.by_id[rid]
        except KeyError:
            raise ValidationError(f"unknown request id {rid}") from None
        if p < t_star <= p + r.o:
            total += r.s + t_star - p
    return total


def memory_profile(instance: Instance, schedule: StartSchedule) -> np.ndarray:
    """Usage at every integer t in [0, makespan], computed in O(n + makespan)."""
    schedule.check_covers(instance)
    if instance.n == 0:
        return np.zeros(1, dtype=np.int64)
    p = np.array([schedule.starts[r.id] for r in instance.requests], dtype=np.int64)
    s = np.array([r.s for r in instance.requests], dtype=np.int64)
    o = np.array([r.o for r in instance.requests], dtype=np.int64)
    horizon = int((p + o).max())
    # usage(t) = sum(s - p) + t * count over requests with p < t <= p + o
    base = np.zeros(horizon + 2, dtype=np.int64)
    count = np.zeros(horizon + 2, dtype=np.int64)
    np.add.at(base, p + 1, s - p)
    np.add.at(base, p + o + 1, -(s - p))
    np.add.at(count, p + 1, 1)
    np.add.at(count, p + o + 1, -1)
    base = np.cumsum(base)[: horizon + 1]
    count = np.cumsum(count)[: horizon + 1]
    return base + np.arange(horizon + 1, dtype=np.int64) * count


def validate_schedule(instance: Instance, schedule: StartSchedule) -> Violation | None:
    """Return None if memory stays within M at every step, else the first violation."""
    profile = memory_profile(instance, schedule)
    over = np.nonzero(profile > instance.memory_limit)[0]
    if over.size == 0:
        return None
    t = int(over[0])
    usage = int(profile[t])
    return Violation(t, usage, usage - instance.memory_limit)


def batch_feasible_exact(batch: Sequence[Request], M: int) -> bool:
    """Co-started batch fits: for each distinct o-value v, sum over o_j >= v of (s_j + v) <= M."""
    for v in {r.o for r in batch}:
        if sum(r.s + v for r in batch if r.o >= v) > M:
            return False
    return True


def batch_feasible_conservative(batch: Sequence[Request], M: int) -> bool:
    return sum(r.s + r.o for r in batch) <= M


def f_metric(batch: Sequence[Request]) -> Fraction:
    """Sum of decode lengths over squared batch size; smaller is better."""
    if not batch:
        raise ValueError("F is undefined for an empty batch")
    return Fraction(sum(r.o for r in batch), len(batch) ** 2)


def f_less(sum_a: int, k_a: int, sum_b: int, k_b: int) -> bool:
    """F(A) < F(B) by cross-multiplication."""
    return sum_a * k_b * k_b < sum_b * k_a * k_a


def compute_metrics(instance: Instance, schedule: StartSchedule) -> Metrics:
    violation = validate_schedule(instance, schedule)
    if violation is not None:
        raise InfeasibleScheduleError(violation)
    if instance.n == 0:
        return Metrics(0, 0.0, 0, 0, 0.0)
    completions = schedule.completions(instance).values()
    tel = sum(completions)
    profile = memory_profile(instance, schedule)
    busy = profile[1:][profile[1:] > 0]
    util = float(busy.mean() / instance.memory_limit) if busy.size else 0.0
    return Metrics(
        tel=tel,
        mean_latency=tel / instance.n,
        makespan=max(completions),
        peak_memory=int(profile.max()),
        mean_utilization=util,
    )


def build_trace(instance: Instance, schedule: StartSchedule) -> SimTrace:
    """Per-step view of a schedule: steps t = 0..makespan."""
    profile = memory_profile(instance, schedule)
    horizon = len(profile) - 1
    active: list[list[int]] = [[] for _ in range(horizon + 1)]
    admitted: list[list[int]] = [[] for _ in range(horizon + 1)]
    for r in instance.requests:
        p = schedule.starts[r.id]
        admitted[p].append(r.id)
        for t in range(p + 1, p + r.o + 1):
            active[t].append(r.id)
    trace = SimTrace(instance.memory_limit)
    trace.steps = [
        TraceStep(t, tuple(active[t]), tuple(admitted[t]), int(profile[t])) for t in range(horizon + 1)
    ]
    return trace


def load_instance(path: str | Path) -> Instance:
    with open(path) as fh:
        return Instance.from_dict(json.load(fh))


def dump_instance(instance: Instance, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(instance.to_dict(), fh, indent=1)
        fh.write("\n")


def load_schedule(path: str | Path) -> StartSchedule:
    with open(path) as fh:
        return StartSchedule.from_dict(json.load(fh))


def dump_schedule(schedule: StartSchedule, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(schedule.to_dict(), fh, indent=1)
        fh.write("\n")
