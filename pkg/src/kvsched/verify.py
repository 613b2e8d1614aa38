"""Self-checking experiment suites.

Each suite returns a :class:`SuiteResult` with the measured values and a
pass flag; the CLI ``verify`` subcommand and the acceptance tests both run
them. Every simulated execution goes through :func:`_execute`, which
re-validates the schedule independently of the simulator's own check and
records the outcome in :data:`SAFETY`.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .core import (
    BatchPlan,
    Instance,
    Request,
    StartSchedule,
    batch_feasible_conservative,
    compute_metrics,
    f_metric,
    memory_usage_at,
    validate_schedule,
)
from .lp import build_model, rows_at_integral, solve_ip_exact, solve_makespan_exact, solve_relaxation
from .rng import SplitMix64
from .schedulers import (
    SchedulerSpec,
    lp_expected_starts,
    order_sf,
    order_sf_total,
    order_type2_first,
    plan_sorted_f,
    schedule_order,
)
from .selectors import SelectorConfig, SelectorKind, select, select_brute_force, select_exact_dp
from .sim import execute_ordered, execute_sequential_batches
from .workloads import (
    DistributionSpec,
    gen_3partition,
    gen_adversarial_sf,
    gen_adversarial_sf2,
    gen_partition_makespan,
    gen_synthetic,
    three_partition_tel,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: dict
    elapsed_s: float = 0.0
    limit_s: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items() if not isinstance(v, (list, dict)))
        limit = f" (limit {self.limit_s:g}s)" if self.limit_s else ""
        return f"{status} {self.name}: {shown}; {self.elapsed_s:.2f}s{limit}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, Fraction):
        return f"{v} (~{float(v):.4g})"
    return str(v)


@dataclass
class SafetyLog:
    runs: int = 0
    violations: int = 0
    worst_ratio: float = 0.0  # max over runs of peak memory / M

    def record(self, instance: Instance, schedule: StartSchedule, peak: int) -> None:
        self.runs += 1
        if validate_schedule(instance, schedule) is not None or peak > instance.memory_limit:
            self.violations += 1
        if instance.memory_limit:
            self.worst_ratio = max(self.worst_ratio, peak / instance.memory_limit)


SAFETY = SafetyLog()


def _execute(instance: Instance, order: Sequence[int]) -> int:
    """Simulate ``order`` and return TEL. The trace's memory assertion is on."""
    schedule, trace = execute_ordered(instance, order)
    SAFETY.record(instance, schedule, trace.peak_memory)
    return compute_metrics(instance, schedule).tel


def _execute_sequential(instance: Instance, plan: BatchPlan) -> int:
    schedule, trace = execute_sequential_batches(instance, plan)
    SAFETY.record(instance, schedule, trace.peak_memory)
    return compute_metrics(instance, schedule).tel


def _timed(name: str, limit_s: float | None, body: Callable[[], tuple[bool, dict]]) -> SuiteResult:
    start = time.perf_counter()
    ok, measured = body()
    elapsed = time.perf_counter() - start
    result = SuiteResult(name, ok, measured, elapsed, limit_s)
    if limit_s is not None and elapsed > limit_s:
        result.passed = False
        result.notes.append(f"took {elapsed:.1f}s, over the {limit_s:g}s limit")
    return result


def random_pairs(rng: SplitMix64, n: int, M: int, so_max: int) -> list[tuple[int, int]]:
    """n pairs with 1 <= s, o <= so_max and s + o <= M (rejection sampling)."""
    pairs = []
    while len(pairs) < n:
        s, o = 1 + rng.randbelow(so_max), 1 + rng.randbelow(so_max)
        if s + o <= M:
            pairs.append((s, o))
    return pairs


def random_instance(rng: SplitMix64, n_max: int, M_max: int, so_max: int, M_min: int = 2) -> Instance:
    M = M_min + rng.randbelow(M_max - M_min + 1)
    n = 1 + rng.randbelow(n_max)
    return Instance.from_pairs(random_pairs(rng, n, M, min(so_max, M - 1)), M)


# --- suites -------------------------------------------------------------------


def example1_instance() -> Instance:
    """One (63, 1) request and 21 requests (1, 2) sharing M = 64."""
    return Instance.from_pairs([(63, 1)] + [(1, 2)] * 21, 64)


def suite_example1(limit_s: float = 1.0) -> SuiteResult:
    def body():
        inst = example1_instance()
        mcsf = _execute(inst, order_sf(inst))
        exact = {}
        for kind in (SelectorKind.EXACT_DP, SelectorKind.SCALED_DP):
            plan = plan_sorted_f(inst, SelectorConfig(kind=kind))
            exact[kind.value] = _execute(inst, plan.flatten())
        ok = mcsf == 64 and all(v == 45 for v in exact.values())
        return ok, {"tel_mc_sf": mcsf, **{f"tel_sorted_f_{k}": v for k, v in exact.items()}}

    return _timed("example1", limit_s, body)


def _lemma1_holds(batch: Sequence[Request]) -> bool:
    # mean o > max o / 2  <=>  2 * sum o > k * max o
    return 2 * sum(r.o for r in batch) > len(batch) * max(r.o for r in batch)


def _random_pool(rng: SplitMix64, n_max=12, M_max=30, so_max=10) -> tuple[list[Request], int]:
    M = 2 + rng.randbelow(M_max - 1)
    n = 1 + rng.randbelow(n_max)
    pairs = random_pairs(rng, n, M, min(so_max, M - 1))
    return [Request(i, s, o) for i, (s, o) in enumerate(pairs)], M


def suite_lemma1(count: int = 1000, seed: int = 1, limit_s: float = 30.0) -> SuiteResult:
    def body():
        rng = SplitMix64(seed)
        violations = 0
        checked = 0
        for _ in range(count):
            pool, M = _random_pool(rng)
            for batch in (select_brute_force(pool, M), select_exact_dp(pool, M)):
                checked += 1
                if not batch or not _lemma1_holds(batch):
                    violations += 1
        return violations == 0, {"pools": count, "batches_checked": checked, "violations": violations}

    return _timed("lemma1", limit_s, body)


def suite_selectors(count: int = 500, seed: int = 2, limit_s: float = 60.0) -> SuiteResult:
    def body():
        rng = SplitMix64(seed)
        f_mismatch = same_set = scaled_mismatch = infeasible = 0
        scaled = SelectorConfig(kind=SelectorKind.SCALED_DP, epsilon=Fraction(1, 10), precision_B=10)
        for k in range(count):
            pool, M = _random_pool(rng)
            assert scaled.scale(M) == 1
            brute = select_brute_force(pool, M)
            exact = select_exact_dp(pool, M)
            if f_metric(brute) != f_metric(exact):
                f_mismatch += 1
            same_set += sorted(r.id for r in brute) == sorted(r.id for r in exact)
            if f_metric(select(pool, M, scaled)) != f_metric(exact):
                scaled_mismatch += 1
            for kind in (SelectorKind.LOCAL_SWAP, SelectorKind.QUANTILE_GREEDY):
                batch = select(pool, M, SelectorConfig(kind=kind, seed=k))
                if not batch or not batch_feasible_conservative(batch, M):
                    infeasible += 1
        ok = f_mismatch == 0 and scaled_mismatch == 0 and infeasible == 0
        return ok, {
            "pools": count,
            "f_mismatch_exact_vs_brute": f_mismatch,
            "identical_sets": same_set,
            "f_mismatch_scaled_vs_exact": scaled_mismatch,
            "heuristic_infeasible": infeasible,
        }

    return _timed("selectors", limit_s, body)


def adversarial_ratio(M: int, second: bool = False) -> tuple[int, int, float]:
    """(TEL shortest-first, TEL type-2-first, ratio) on the failure instance."""
    inst = gen_adversarial_sf2(M) if second else gen_adversarial_sf(M)
    first = _execute(inst, order_sf_total(inst) if second else order_sf(inst))
    alt = _execute(inst, order_type2_first(inst))
    return first, alt, first / alt


def suite_adversarial(
    sizes: Sequence[int] = (100, 400, 2500), sizes2: Sequence[int] = (100, 400), limit_s: float = 300.0
) -> SuiteResult:
    def body():
        ratios, floors_ok, measured = [], True, {}
        for M in sizes:
            a, b, r = adversarial_ratio(M)
            ratios.append(r)
            floors_ok &= r >= 0.1 * math.sqrt(M)
            measured[f"M{M}"] = f"{a}/{b}={r:.4f} (floor {0.1 * math.sqrt(M):.2f})"
        ratios2 = []
        for M in sizes2:
            a, b, r = adversarial_ratio(M, second=True)
            ratios2.append(r)
            measured[f"sf2_M{M}"] = f"{a}/{b}={r:.4f}"
        increasing = all(x < y for x, y in zip(ratios, ratios[1:]))
        increasing2 = all(x < y for x, y in zip(ratios2, ratios2[1:]))
        measured.update(increasing=increasing, floors_met=floors_ok, sf2_increasing=increasing2)
        return increasing and floors_ok and increasing2, measured

    return _timed("adversarial", limit_s, body)


def suite_np_reduction(limit_s: float = 60.0) -> SuiteResult:
    def body():
        xs, T = [7, 6, 7, 5, 7, 8], 20
        _, tel = solve_ip_exact(gen_3partition(xs, T))
        expected = three_partition_tel(len(xs) // 3)
        _, span_yes = solve_makespan_exact(gen_partition_makespan([3, 7, 4, 6], 10))
        _, span_no = solve_makespan_exact(gen_partition_makespan([2, 2, 2, 4], 5))
        ok = tel == expected and span_yes == 2 and span_no >= 3
        return ok, {
            "three_partition_tel": tel,
            "expected_tel": expected,
            "makespan_partitionable": span_yes,
            "makespan_no_partition": span_no,
        }

    return _timed("np_reduction", limit_s, body)


def _tiny(rng: SplitMix64) -> Instance:
    return random_instance(rng, n_max=6, M_max=12, so_max=4, M_min=5)


def suite_cr_bound(count: int = 200, seed: int = 3, bound: float = 48.0, limit_s: float = 300.0) -> SuiteResult:
    def body():
        rng = SplitMix64(seed)
        worst, over = Fraction(1), 0
        brute = SelectorConfig(kind=SelectorKind.BRUTE_FORCE)
        for _ in range(count):
            inst = _tiny(rng)
            _, opt = solve_ip_exact(inst)
            tel = _execute(inst, plan_sorted_f(inst, brute).flatten())
            ratio = Fraction(tel, opt)
            worst = max(worst, ratio)
            over += ratio > bound
        return over == 0, {"instances": count, "max_ratio": float(worst), "over_bound": over}

    return _timed("cr_bound", limit_s, body)


def suite_separate_bound(count: int = 1000, seed: int = 4, limit_s: float = 60.0) -> SuiteResult:
    def body():
        rng = SplitMix64(seed)
        violations, gap = 0, 0
        for _ in range(count):
            inst = random_instance(rng, n_max=25, M_max=60, so_max=15, M_min=4)
            plan = plan_sorted_f(inst)
            overlapped = _execute(inst, plan.flatten())
            sequential = _execute_sequential(inst, plan)
            violations += overlapped > sequential
            gap += sequential - overlapped
        return violations == 0, {"instances": count, "violations": violations, "total_tel_saved": gap}

    return _timed("separate_bound", limit_s, body)


LP_CHAIN_SCHEDULERS = ("fcfs", "mc_sf", "sorted_f", "sorted_lp", "lp_swap")


def suite_lp_chain(count: int = 100, seed: int = 5, limit_s: float = 300.0) -> SuiteResult:
    def body():
        rng = SplitMix64(seed)
        lp_over_ip = ip_over_tel = row_mismatch = 0
        max_gap = 0.0
        for _ in range(count):
            inst = _tiny(rng)
            model = build_model(inst)
            sol = solve_relaxation(inst, model.horizon)
            opt_sched, opt = solve_ip_exact(inst)
            if sol.objective > opt + 1e-6:
                lp_over_ip += 1
            max_gap = max(max_gap, opt - sol.objective)
            y = lp_expected_starts(inst, model.horizon)
            for name in LP_CHAIN_SCHEDULERS:
                spec = SchedulerSpec(name)
                if opt > _execute(inst, schedule_order(inst, spec, y=y)):
                    ip_over_tel += 1
            rows = rows_at_integral(model, opt_sched)
            for t in range(1, model.horizon + 1):
                if rows[t - 1] != memory_usage_at(inst, opt_sched, t):
                    row_mismatch += 1
                    break
        ok = lp_over_ip == 0 and ip_over_tel == 0 and row_mismatch == 0
        return ok, {
            "instances": count,
            "lp_above_ip": lp_over_ip,
            "ip_above_scheduler": ip_over_tel,
            "row_mismatch": row_mismatch,
            "max_ip_minus_lp": max_gap,
        }

    return _timed("lp_chain", limit_s, body)


C2_DISTRIBUTIONS = (("uniform", 100), ("normal", 100), ("binomial", 100), ("exponential", 100), ("mixed", 200))
C2_SCHEDULERS = (
    ("sorted_lp", SchedulerSpec("sorted_lp")),
    ("sorted_f_swap", SchedulerSpec("sorted_f", SelectorConfig(kind=SelectorKind.LOCAL_SWAP))),
    ("lp_swap", SchedulerSpec("lp_swap")),
)


def c2_table(seeds: Sequence[int], M: int = 100, horizon="auto") -> dict[str, dict[str, float]]:
    """Mean TEL per (distribution, scheduler); both LP schedulers share one LP per instance."""
    table = {}
    for kind, n in C2_DISTRIBUTIONS:
        sums = {name: 0 for name, _ in C2_SCHEDULERS}
        for seed in seeds:
            inst = gen_synthetic(DistributionSpec(kind, seed=seed), n, M)
            y = lp_expected_starts(inst, horizon)
            for name, spec in C2_SCHEDULERS:
                sums[name] += _execute(inst, schedule_order(inst, spec, y=y))
        table[kind] = {name: total / len(seeds) for name, total in sums.items()}
    return table


def spread(row: dict[str, float]) -> float:
    return max(row.values()) / min(row.values()) - 1.0


def suite_c2(seeds: Sequence[int] = tuple(range(1, 11)), tolerance: float = 0.10, limit_s: float = 600.0) -> SuiteResult:
    def body():
        table = c2_table(seeds)
        measured = {}
        ok = True
        for kind, row in table.items():
            sp = spread(row)
            ok &= sp <= tolerance
            measured[kind] = " / ".join(f"{row[name]:.1f}" for name, _ in C2_SCHEDULERS) + f" (spread {sp:.3f})"
        measured["table"] = table
        return ok, measured

    return _timed("c2", limit_s, body)


def suite_safety() -> SuiteResult:
    """Summary of every execution made so far in this process."""
    ok = SAFETY.runs > 0 and SAFETY.violations == 0 and SAFETY.worst_ratio <= 1.0
    measured = {"runs": SAFETY.runs, "violations": SAFETY.violations, "max_peak_over_M": SAFETY.worst_ratio}
    return SuiteResult("safety", ok, measured)


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "example1": suite_example1,
    "lemma1": suite_lemma1,
    "selectors": suite_selectors,
    "adversarial": suite_adversarial,
    "np_reduction": suite_np_reduction,
    "cr_bound": suite_cr_bound,
    "separate_bound": suite_separate_bound,
    "lp_chain": suite_lp_chain,
    "c2": suite_c2,
}


def run_suite(name: str) -> SuiteResult:
    if name == "safety":
        return suite_safety()
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['safety']}")
    return SUITES[name]()
