"""End-to-end scheduling policies built on the simulator.

Ordering policies (FCFS, MC-SF, MC-SF by total length, Sorted-LP) emit a total
order; Sorted-F and LP-Swap emit a :class:`BatchPlan` whose flattening is the
execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Sequence

from .core import BatchPlan, Instance, Request, SimTrace, StartSchedule
from .lp import expected_starts, solve_relaxation
from .selectors import SelectorConfig, SelectorKind, _greedy_fill, local_swap, select
from .sim import ExecutionPolicy, execute_ordered


class SchedulerKind(str, Enum):
    FCFS = "fcfs"
    MC_SF = "mc_sf"
    MC_SF_TOTAL = "mc_sf_total"
    SORTED_F = "sorted_f"
    SORTED_LP = "sorted_lp"
    LP_SWAP = "lp_swap"
    TYPE2_FIRST = "type2_first"


_USES_LP = {SchedulerKind.SORTED_LP, SchedulerKind.LP_SWAP}


@dataclass(frozen=True)
class SchedulerSpec:
    kind: SchedulerKind
    selector: SelectorConfig | None = None
    horizon_override: int | str | None = None
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", SchedulerKind(self.kind))
        if self.kind is SchedulerKind.SORTED_F:
            if self.selector is None:
                object.__setattr__(self, "selector", SelectorConfig())
        elif self.kind is SchedulerKind.LP_SWAP:
            if self.selector is None:
                object.__setattr__(self, "selector", SelectorConfig(kind=SelectorKind.LOCAL_SWAP))
            if self.selector.kind is not SelectorKind.LOCAL_SWAP:
                raise ValueError("lp_swap always refines with local_swap")
        elif self.selector is not None:
            raise ValueError(f"scheduler {self.kind.value} takes no selector")
        if self.horizon_override is not None and self.kind not in _USES_LP:
            raise ValueError("horizon_override only applies to LP-based schedulers")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind is SchedulerKind.SORTED_F:
            return f"sorted_f[{self.selector.kind.value}]"
        return self.kind.value

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.selector is not None and self.kind is SchedulerKind.SORTED_F:
            d["selector"] = self.selector.to_dict()
        if self.horizon_override is not None:
            d["horizon_override"] = self.horizon_override
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, data: dict | str) -> "SchedulerSpec":
        if isinstance(data, str):
            return cls(SchedulerKind(data))
        sel = data.get("selector")
        if isinstance(sel, str):
            sel = SelectorConfig(kind=sel)
        elif isinstance(sel, dict):
            sel = SelectorConfig.from_dict(sel)
        return cls(SchedulerKind(data["kind"]), sel, data.get("horizon_override"), data.get("label"))


def order_fcfs(instance: Instance) -> list[int]:
    return instance.ids


def order_sf(instance: Instance) -> list[int]:
    """Shortest decode first; ties by id."""
    return [r.id for r in sorted(instance.requests, key=lambda r: (r.o, r.id))]


def order_sf_total(instance: Instance) -> list[int]:
    """Smallest s + o first; ties by o, then id."""
    return [r.id for r in sorted(instance.requests, key=lambda r: (r.s + r.o, r.o, r.id))]


def order_type2_first(instance: Instance) -> list[int]:
    """For two-type instances: every request unlike the first one, then the rest.

    This is the alternative order used to show MC-SF's unbounded ratio.
    """
    if not instance.requests:
        return []
    head = instance.requests[0]
    first_type = [r.id for r in instance.requests if (r.s, r.o) == (head.s, head.o)]
    others = [r.id for r in instance.requests if (r.s, r.o) != (head.s, head.o)]
    return others + first_type


def plan_sorted_f(instance: Instance, selector: SelectorConfig = SelectorConfig()) -> BatchPlan:
    """Repeatedly take the selector's batch from the remaining pool (kept in id order)."""
    remaining = sorted(instance.requests, key=lambda r: r.id)
    batches = []
    while remaining:
        batch = select(remaining, instance.memory_limit, selector)
        if not batch:
            raise RuntimeError(f"selector {selector.kind.value} returned no batch for a nonempty pool")
        taken = {r.id for r in batch}
        batches.append(batch)
        remaining = [r for r in remaining if r.id not in taken]
    return BatchPlan.from_batches(batches)


def _resolve_horizon(instance: Instance, horizon: int | str | None) -> int | None:
    """``"auto"`` bounds the horizon by the makespan of the shortest-first run,
    which is itself a feasible integral schedule."""
    if horizon == "auto":
        schedule, _ = execute_ordered(instance, order_sf(instance))
        return max(p + instance.by_id[i].o for i, p in schedule.starts.items())
    return horizon


def lp_expected_starts(instance: Instance, horizon: int | str | None = None, method: str = "auto") -> dict[int, float]:
    return expected_starts(solve_relaxation(instance, _resolve_horizon(instance, horizon), method))


def _y_order(requests: Sequence[Request], y: dict[int, float]) -> list[Request]:
    # Round away solver noise so that ties fall through to (o, id).
    return sorted(requests, key=lambda r: (round(y[r.id], 9), r.o, r.id))


def plan_sorted_lp(instance: Instance, horizon: int | str | None = None, *, y: dict[int, float] | None = None) -> list[int]:
    """Order by the LP's expected start time; ties by o, then id."""
    if instance.n == 0:
        return []
    if y is None:
        y = lp_expected_starts(instance, horizon)
    return [r.id for r in _y_order(instance.requests, y)]


def plan_lp_swap(instance: Instance, horizon: int | str | None = None, *, y: dict[int, float] | None = None) -> BatchPlan:
    """Per batch: greedy fill in y-order, refine by local swap, sort by o; repeat.

    The LP is solved once and its y values are reused for every batch.
    """
    if instance.n == 0:
        return BatchPlan(())
    if y is None:
        y = lp_expected_starts(instance, horizon)
    M = instance.memory_limit
    remaining = list(instance.requests)
    batches = []
    while remaining:
        pool = _y_order(remaining, y)
        batch = local_swap(_greedy_fill(pool, M), pool, M)
        taken = {r.id for r in batch}
        batches.append(batch)
        remaining = [r for r in remaining if r.id not in taken]
    return BatchPlan.from_batches(batches)


def schedule_order(instance: Instance, spec: SchedulerSpec, *, y: dict[int, float] | None = None) -> list[int]:
    kind = spec.kind
    if kind is SchedulerKind.FCFS:
        return order_fcfs(instance)
    if kind is SchedulerKind.MC_SF:
        return order_sf(instance)
    if kind is SchedulerKind.MC_SF_TOTAL:
        return order_sf_total(instance)
    if kind is SchedulerKind.TYPE2_FIRST:
        return order_type2_first(instance)
    if kind is SchedulerKind.SORTED_F:
        return plan_sorted_f(instance, spec.selector).flatten()
    if kind is SchedulerKind.SORTED_LP:
        return plan_sorted_lp(instance, spec.horizon_override, y=y)
    if kind is SchedulerKind.LP_SWAP:
        return plan_lp_swap(instance, spec.horizon_override, y=y).flatten()
    raise ValueError(f"unknown scheduler {kind}")


def run_scheduler(
    instance: Instance,
    spec: SchedulerSpec,
    policy: ExecutionPolicy = ExecutionPolicy(),
    *,
    y: dict[int, float] | None = None,
) -> tuple[StartSchedule, SimTrace]:
    return execute_ordered(instance, schedule_order(instance, spec, y=y), policy)


def parse_scheduler(name: str, selector: str | None = None, epsilon: str | None = None) -> SchedulerSpec:
    """CLI shorthand: ``sorted_f``, ``sorted_f:local_swap``, ``lp_swap``, ..."""
    kind, _, sel = name.partition(":")
    sel = sel or selector
    kind = SchedulerKind(kind)
    if kind is SchedulerKind.SORTED_F:
        cfg = SelectorConfig(kind=sel or SelectorKind.EXACT_DP)
        if epsilon is not None:
            cfg = SelectorConfig(kind=cfg.kind, epsilon=Fraction(epsilon))
        return SchedulerSpec(kind, cfg)
    return SchedulerSpec(kind)
