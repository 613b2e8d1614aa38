"""Time-indexed start-variable program, its LP relaxation, and exact oracles.

Variable ``x[i, t] = 1`` starts request i at step t. Memory row t (t = 1..T)
charges ``s_i + t - k`` to ``x[i, k]`` for ``k`` in ``[max(0, t - o_i), t - 1]``,
which is exactly the occupancy of :mod:`kvsched.core` evaluated at t.

Three LP back ends solve the same relaxation: a dense Bland simplex for tiny
models, HiGHS on the full sparse matrix, and column generation (HiGHS on a
restricted set of start columns, priced against all of them) for models with
hundreds of thousands of columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import highspy
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import simplex
from .core import Instance, StartSchedule, ValidationError
from .sim import execute_ordered

SIMPLEX_MAX_VARIABLES = 50_000
AUTO_SIMPLEX_VARIABLES = 600
HIGHS_MAX_VARIABLES = 5_000_000


class LPSolveError(RuntimeError):
    pass


class OracleGuardError(RuntimeError):
    pass


@dataclass(frozen=True)
class IpModel:
    instance: Instance
    horizon: int
    c: np.ndarray  # start-time coefficient t for x[i, t], flattened row-major
    constant: int  # sum of o_i
    A_eq: sp.csr_matrix  # one start-once row per request
    A_ub: sp.csr_matrix  # memory rows t = 1..horizon
    b_ub: np.ndarray

    @property
    def n(self) -> int:
        return self.instance.n

    @property
    def num_variables(self) -> int:
        return self.n * (self.horizon + 1)

    @property
    def num_rows(self) -> int:
        return self.n + self.horizon

    def var(self, i: int, t: int) -> int:
        return i * (self.horizon + 1) + t

    def memory_row(self, t: int) -> dict[tuple[int, int], int]:
        """Nonzero coefficients of memory row t keyed by (request position, start)."""
        row = self.A_ub.getrow(t - 1).tocoo()
        width = self.horizon + 1
        return {(int(j) // width, int(j) % width): int(v) for j, v in zip(row.col, row.data)}

    def objective_of(self, x: np.ndarray) -> float:
        return float(self.c @ np.ravel(x)) + self.constant


def default_horizon(instance: Instance) -> int:
    """Sum of decode lengths: running requests one at a time always fits."""
    return sum(r.o for r in instance.requests)


def build_model(instance: Instance, horizon_override: int | None = None) -> IpModel:
    if instance.n == 0:
        raise ValidationError("cannot build a model for an empty instance")
    max_o = max(r.o for r in instance.requests)
    horizon = default_horizon(instance) if horizon_override is None else int(horizon_override)
    if horizon < max_o:
        raise ValidationError(f"horizon {horizon} is shorter than the longest decode {max_o}")
    n, width = instance.n, horizon + 1
    c = np.tile(np.arange(width, dtype=float), n)

    eq_rows = np.repeat(np.arange(n), width)
    A_eq = sp.csr_matrix((np.ones(n * width), (eq_rows, np.arange(n * width))), shape=(n, n * width))

    rows, cols, vals = [], [], []
    for i, r in enumerate(instance.requests):
        for d in range(1, r.o + 1):  # d = t - k
            k = np.arange(0, horizon - d + 1)
            rows.append(k + d - 1)
            cols.append(i * width + k)
            vals.append(np.full(k.size, r.s + d, dtype=float))
    A_ub = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(horizon, n * width)
    )
    b_ub = np.full(horizon, float(instance.memory_limit))
    return IpModel(instance, horizon, c, default_horizon(instance), A_eq, A_ub, b_ub)


@dataclass(frozen=True)
class LpSolution:
    instance: Instance
    horizon: int
    values: np.ndarray  # shape (n, horizon + 1)
    objective: float
    method: str

    def expected_starts(self) -> dict[int, float]:
        return expected_starts(self)

    def to_dict(self) -> dict:
        return {"objective": self.objective, "y": {str(k): v for k, v in self.expected_starts().items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _check_solution(model: IpModel, x: np.ndarray, tol: float = 1e-9) -> None:
    scale = max(1.0, float(model.instance.memory_limit))
    eq_res = np.abs(model.A_eq @ x - 1.0).max()
    ub_res = (model.A_ub @ x - model.b_ub).max(initial=0.0) / scale
    neg = -x.min(initial=0.0)
    worst = max(eq_res, ub_res, neg)
    if worst > tol:
        raise LPSolveError(
            f"solution violates constraints (start-once {eq_res:.2e}, memory {ub_res:.2e}, sign {neg:.2e})"
        )


def solve_lp(model: IpModel, method: str = "auto") -> LpSolution:
    """Optimal basic solution of the relaxation (0 <= x, start-once, memory rows).

    ``method``: ``"simplex"`` (dense Bland pivoting), ``"highs"`` (scipy's HiGHS
    on sparse rows), or ``"auto"`` (simplex for small models, HiGHS otherwise).
    """
    nvar = model.num_variables
    if method == "auto":
        method = "simplex" if nvar <= AUTO_SIMPLEX_VARIABLES else "highs"
    if method == "simplex":
        if nvar > SIMPLEX_MAX_VARIABLES:
            raise LPSolveError(f"{nvar} variables exceed the dense simplex budget {SIMPLEX_MAX_VARIABLES}")
        try:
            x, _ = simplex.solve(
                model.c, model.A_ub.toarray(), model.b_ub, model.A_eq.toarray(), np.ones(model.n)
            )
        except simplex.Infeasible as exc:
            raise LPSolveError(f"LP infeasible within horizon {model.horizon}; try a larger horizon") from exc
        except simplex.LPError as exc:
            raise LPSolveError(str(exc)) from exc
    elif method == "highs":
        if nvar > HIGHS_MAX_VARIABLES:
            raise LPSolveError(f"{nvar} variables exceed the budget {HIGHS_MAX_VARIABLES}")
        res = linprog(
            model.c,
            A_ub=model.A_ub,
            b_ub=model.b_ub,
            A_eq=model.A_eq,
            b_eq=np.ones(model.n),
            bounds=(0, None),
            method="highs",
        )
        if res.status == 2:
            raise LPSolveError(f"LP infeasible within horizon {model.horizon}; try a larger horizon")
        if res.status != 0:
            raise LPSolveError(f"HiGHS failed: {res.message}")
        x = np.clip(res.x, 0.0, None)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    _check_solution(model, x, tol=1e-7)
    values = x.reshape(model.n, model.horizon + 1)
    return LpSolution(model.instance, model.horizon, values, model.objective_of(x), method)


def expected_starts(solution: LpSolution) -> dict[int, float]:
    """Mean start step per request id under the fractional solution."""
    t = np.arange(solution.horizon + 1)
    return {r.id: math.fsum(solution.values[i] * t) for i, r in enumerate(solution.instance.requests)}


# --- column generation -------------------------------------------------------

COLGEN_PER_REQUEST = 5
COLGEN_MAX_ROUNDS = 10_000
REDUCED_COST_TOL = 1e-7


def _seed_orders(instance: Instance) -> list[list[int]]:
    reqs = instance.requests

    def by(key):
        return [r.id for r in sorted(reqs, key=lambda r: (key(r), r.id))]

    return [
        by(lambda r: 0),
        by(lambda r: r.o),
        by(lambda r: (r.s + r.o, r.o)),
        by(lambda r: -r.o),
        by(lambda r: r.s),
        by(lambda r: r.s * r.o),
        by(lambda r: r.o * (2 * r.s + r.o)),  # twice the token-steps held
    ]


def _column_entries(s: int, o: int, t: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    d = np.arange(1, o + 1)
    d = d[t + d <= horizon]
    return t + d - 1, (s + d).astype(float)


def solve_relaxation_colgen(instance: Instance, horizon: int, *, per_request: int = COLGEN_PER_REQUEST) -> LpSolution:
    """Optimal solution of the relaxation by delayed column generation.

    The restricted master starts from the start times of a few greedy
    executions plus one costly artificial column per request (so it is always
    feasible). Each round prices every (request, start) pair in O(T * o) with a
    correlation of the memory-row duals, adds the ``per_request`` most negative
    columns of each request, and re-solves from the previous basis. It stops
    when no column prices below ``-REDUCED_COST_TOL``; the LP is infeasible iff
    an artificial column stays positive.
    """
    n, M, H = instance.n, instance.memory_limit, horizon
    reqs = instance.requests
    S = np.array([r.s for r in reqs])
    O = np.array([r.o for r in reqs])
    if H < O.max():
        raise ValidationError(f"horizon {H} is shorter than the longest decode {O.max()}")
    inf = highspy.kHighsInf
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    # New columns keep the basis primal feasible, so primal simplex resumes
    # where the last round stopped; extra threads only contend on small masters.
    h.setOptionValue("simplex_strategy", 4)
    h.setOptionValue("threads", 1)
    empty_i, empty_f = np.array([], dtype=np.int32), np.array([], dtype=float)
    h.addRows(n, np.ones(n), np.ones(n), 0, empty_i, empty_i, empty_f)
    h.addRows(H, np.full(H, -inf), np.full(H, float(M)), 0, empty_i, empty_i, empty_f)
    penalty = 4.0 * (H + int(O.max()))
    h.addCols(n, np.full(n, penalty), np.zeros(n), np.full(n, inf), n,
              np.arange(n, dtype=np.int32), np.arange(n, dtype=np.int32), np.ones(n))

    columns: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()

    def add(pairs):
        starts, idx, val = [], [], []
        for i, t in pairs:
            rows, coef = _column_entries(S[i], O[i], t, H)
            starts.append(len(idx))
            idx.append(i)
            val.append(1.0)
            idx.extend((n + rows).tolist())
            val.extend(coef.tolist())
            seen.add((i, t))
            columns.append((i, t))
        k = len(pairs)
        cost = np.array([float(t) for _, t in pairs])
        h.addCols(k, cost, np.zeros(k), np.full(k, inf), len(idx),
                  np.array(starts, dtype=np.int32), np.array(idx, dtype=np.int32), np.array(val))

    pos = {r.id: i for i, r in enumerate(reqs)}
    seed = set()
    for order in _seed_orders(instance):
        sched, _ = execute_ordered(instance, order)
        seed |= {(pos[rid], p) for rid, p in sched.starts.items() if p <= H}
    add(sorted(seed))

    steps = np.arange(H + 1)
    pad = np.zeros(H + int(O.max()) + 2)
    for _ in range(COLGEN_MAX_ROUNDS):
        h.run()
        if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            raise LPSolveError(f"HiGHS master failed: {h.modelStatusToString(h.getModelStatus())}")
        duals = np.array(h.getSolution().row_dual)
        u, pi = duals[:n], duals[n:]
        pad[:] = 0.0
        pad[1 : H + 1] = pi
        new = []
        for i in range(n):
            weights = S[i] + np.arange(1, O[i] + 1)
            charge = np.correlate(pad[1 : H + 1 + O[i]], weights, mode="valid")[: H + 1]
            rc = steps - u[i] - charge
            k = min(per_request, H + 1)
            for t in np.argpartition(rc, k - 1)[:k]:
                if rc[t] < -REDUCED_COST_TOL and (i, int(t)) not in seen:
                    new.append((i, int(t)))
        if not new:
            break
        add(new)
    else:
        raise LPSolveError(f"column generation did not converge in {COLGEN_MAX_ROUNDS} rounds")

    col_values = np.array(h.getSolution().col_value)
    if col_values[:n].max() > 1e-9:
        raise LPSolveError(f"LP infeasible within horizon {H}; try a larger horizon")
    values = np.zeros((n, H + 1))
    for (i, t), v in zip(columns, col_values[n:]):
        values[i, t] += max(v, 0.0)
    _check_values(instance, H, values)
    objective = float((values * steps).sum()) + int(O.sum())
    return LpSolution(instance, H, values, objective, "colgen")


def _check_values(instance: Instance, horizon: int, values: np.ndarray, tol: float = 1e-7) -> None:
    """Feasibility of a dense solution without building the full matrix."""
    load = np.zeros(horizon + 1)
    for i, r in enumerate(instance.requests):
        d = np.arange(1, r.o + 1)
        for t in np.flatnonzero(values[i] > 0):
            rows = t + d[t + d <= horizon]
            load[rows] += values[i, t] * (r.s + rows - t)
    eq_res = np.abs(values.sum(axis=1) - 1.0).max()
    ub_res = (load.max() - instance.memory_limit) / max(1.0, instance.memory_limit)
    if max(eq_res, ub_res) > tol:
        raise LPSolveError(f"solution violates constraints (start-once {eq_res:.2e}, memory {ub_res:.2e})")


def solve_relaxation(instance: Instance, horizon: int | None = None, method: str = "auto") -> LpSolution:
    """Relaxation optimum by any back end.

    ``"auto"`` uses the dense simplex up to ``AUTO_SIMPLEX_VARIABLES`` columns
    and column generation beyond; ``"simplex"`` and ``"highs"`` build the full
    matrix first.
    """
    if instance.n == 0:
        raise ValidationError("cannot solve the relaxation of an empty instance")
    horizon = default_horizon(instance) if horizon is None else int(horizon)
    if method == "auto":
        method = "simplex" if instance.n * (horizon + 1) <= AUTO_SIMPLEX_VARIABLES else "colgen"
    if method == "colgen":
        return solve_relaxation_colgen(instance, horizon)
    return solve_lp(build_model(instance, horizon), method)


def export_lp_text(model: IpModel) -> str:
    """CPLEX-LP text of the integer program (the relaxation drops the Binary section)."""
    reqs = model.instance.requests
    width = model.horizon + 1
    names = [f"x_{r.id}_{t}" for r in reqs for t in range(width)]
    out = [
        "\\ time-indexed start model",
        f"\\ objective constant (sum of o): {model.constant}",
        "Minimize",
    ]
    out.append(" obj: " + " + ".join(f"{int(model.c[j])} {names[j]}" for j in range(len(names))))
    out.append("Subject To")
    for i, r in enumerate(reqs):
        out.append(f" start_{r.id}: " + " + ".join(names[i * width + t] for t in range(width)) + " = 1")
    for t in range(1, model.horizon + 1):
        row = model.A_ub.getrow(t - 1).tocoo()
        terms = " + ".join(f"{int(v)} {names[j]}" for j, v in sorted(zip(row.col, row.data)))
        out.append(f" mem_{t}: {terms or '0 ' + names[0]} <= {model.instance.memory_limit}")
    out.append("Bounds")
    out.extend(f" 0 <= {name} <= 1" for name in names)
    out.append("Binary")
    out.extend(f" {name}" for name in names)
    out.append("End")
    return "\n".join(out) + "\n"


# --- exact oracles ---------------------------------------------------------


def _heuristic_starts(instance: Instance) -> list[StartSchedule]:
    reqs = instance.requests
    orders = [
        [r.id for r in reqs],
        [r.id for r in sorted(reqs, key=lambda r: (r.o, r.id))],
        [r.id for r in sorted(reqs, key=lambda r: (r.s + r.o, r.o, r.id))],
        [r.id for r in sorted(reqs, key=lambda r: (-r.o, r.id))],
    ]
    return [execute_ordered(instance, order)[0] for order in orders]


class _Search:
    """Depth-first search over integer start vectors with memory pruning."""

    def __init__(self, instance: Instance, horizon: int, order: list[int]):
        self.inst = instance
        self.reqs = [instance.requests[i] for i in order]
        self.horizon = horizon
        self.M = instance.memory_limit
        max_o = max(r.o for r in instance.requests)
        self.load = [0] * (horizon + max_o + 2)
        self.starts = [0] * len(order)
        # identical requests get non-decreasing starts in id order (symmetry breaking)
        self.twin_of = [-1] * len(order)
        for a in range(len(order)):
            for b in range(a - 1, -1, -1):
                ra, rb = self.reqs[a], self.reqs[b]
                if (ra.s, ra.o) == (rb.s, rb.o):
                    self.twin_of[a] = b if rb.id < ra.id else -1
                    break

    def fits(self, r, p) -> bool:
        load, M, s = self.load, self.M, r.s
        for d in range(1, r.o + 1):
            if load[p + d] + s + d > M:
                return False
        return True

    def place(self, r, p, sign) -> None:
        load, s = self.load, r.s
        for d in range(1, r.o + 1):
            load[p + d] += sign * (s + d)

    def min_start(self, depth: int) -> int:
        twin = self.twin_of[depth]
        return self.starts[twin] if twin >= 0 else 0


def _search_order(instance: Instance, by_size: bool) -> list[int]:
    idx = list(range(instance.n))
    if by_size:
        idx.sort(key=lambda i: (-instance.requests[i].peak, -instance.requests[i].o, instance.requests[i].id))
    else:
        idx.sort(key=lambda i: instance.requests[i].id)
    return idx


def _exact(
    instance: Instance, horizon: int | None, max_n: int, max_horizon: int, objective: str
) -> tuple[StartSchedule, int]:
    """Shared driver. Pass 1 searches (largest requests first) for anything
    better than the best heuristic; pass 2 walks requests in id order with
    starts ascending and stops at the first optimal vector, which is the
    lexicographically smallest one."""
    n = instance.n
    if n == 0:
        return StartSchedule({}), 0
    if n > max_n:
        raise OracleGuardError(f"exact oracle limited to {max_n} requests (got {n})")
    is_tel = objective == "tel"
    sum_o = sum(r.o for r in instance.requests)
    min_o = min(r.o for r in instance.requests)

    def value_of(sch: StartSchedule) -> int:
        comps = [sch.starts[r.id] + r.o for r in instance.requests]
        return sum(comps) if is_tel else max(comps)

    incumbents = _heuristic_starts(instance)
    if horizon is None:
        best_val = min(value_of(s) for s in incumbents)
        # every schedule at least as good as the incumbent starts by this step
        horizon = best_val - sum_o if is_tel else best_val - min_o
    else:
        fitting = [s for s in incumbents if max(s.starts.values()) <= horizon]
        best_val = min((value_of(s) for s in fitting), default=math.inf)
    if horizon > max_horizon:
        raise OracleGuardError(f"exact oracle limited to horizon {max_horizon} (need {horizon})")

    def run(order: list[int], target, strict: bool):
        state = _Search(instance, horizon, order)
        reqs = state.reqs
        rest_o = [0] * (n + 1)
        rest_max_o = [0] * (n + 1)
        for d in range(n - 1, -1, -1):
            rest_o[d] = rest_o[d + 1] + reqs[d].o
            rest_max_o[d] = max(rest_max_o[d + 1], reqs[d].o)
        best = [target, None]

        def dfs(depth: int, acc: int) -> bool:
            if depth == n:
                if (acc < best[0]) if strict else (acc <= best[0]):
                    best[0], best[1] = acc, list(state.starts)
                    return not strict
                return False
            r = reqs[depth]
            for p in range(state.min_start(depth), horizon + 1):
                c = p + r.o
                if is_tel:
                    nxt = acc + c
                    bound = nxt + rest_o[depth + 1]
                else:
                    nxt = max(acc, c)
                    bound = max(nxt, rest_max_o[depth + 1])
                # bound grows with p, so nothing later in this loop can help
                if (bound >= best[0]) if strict else (bound > best[0]):
                    break
                if not state.fits(r, p):
                    continue
                state.place(r, p, 1)
                state.starts[depth] = p
                done = dfs(depth + 1, nxt)
                state.place(r, p, -1)
                if done:
                    return True
            return False

        dfs(0, 0)
        if best[1] is None:
            return None
        return best[0], {reqs[d].id: best[1][d] for d in range(n)}

    improved = run(_search_order(instance, by_size=True), best_val, strict=True)
    if improved is not None:
        best_val = improved[0]
    if best_val == math.inf:
        raise OracleGuardError(f"no feasible schedule starts within horizon {horizon}")
    found = run(_search_order(instance, by_size=False), best_val, strict=False)
    assert found is not None
    return StartSchedule(found[1]), found[0]


def solve_ip_exact(
    instance: Instance, horizon: int | None = None, *, max_n: int = 8, max_horizon: int = 64
) -> tuple[StartSchedule, int]:
    """TEL-optimal schedule by exhaustive search over start vectors.

    Ties are broken by the lexicographically smallest start vector in id order.
    Without ``horizon`` the start range is bounded by the best heuristic TEL.
    """
    return _exact(instance, horizon, max_n, max_horizon, "tel")


def solve_makespan_exact(
    instance: Instance, horizon: int | None = None, *, max_n: int = 8, max_horizon: int = 64
) -> tuple[StartSchedule, int]:
    """Makespan-optimal schedule by the same search."""
    return _exact(instance, horizon, max_n, max_horizon, "makespan")


def rows_at_integral(model: IpModel, schedule: StartSchedule) -> np.ndarray:
    """Left-hand side of every memory row for the 0/1 vector of ``schedule``."""
    x = np.zeros(model.num_variables)
    for i, r in enumerate(model.instance.requests):
        p = schedule.starts[r.id]
        if p > model.horizon:
            raise ValidationError(f"request {r.id} starts at {p}, beyond horizon {model.horizon}")
        x[model.var(i, p)] = 1.0
    return model.A_ub @ x
