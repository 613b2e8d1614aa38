import random

import numpy as np
import pytest
from scipy.optimize import linprog

from kvsched import simplex
from kvsched.core import Instance, StartSchedule, ValidationError, memory_usage_at
from kvsched.lp import (
    OracleGuardError,
    build_model,
    default_horizon,
    export_lp_text,
    rows_at_integral,
    solve_ip_exact,
    solve_lp,
    solve_makespan_exact,
    solve_relaxation,
)
from kvsched.workloads import gen_3partition, gen_partition_makespan

from conftest import enumerate_optimum, random_instance


def test_model_shape_and_first_row():
    inst = Instance.from_pairs([(3, 2), (1, 4)], 10)
    m = build_model(inst)
    assert m.horizon == default_horizon(inst) == 6
    assert m.num_variables == 2 * 7
    assert m.num_rows == 2 + 6
    row1 = m.memory_row(1)
    assert row1 == {(0, 0): 4, (1, 0): 2}
    # row 3 charges x[0, 1] (d = 2) and x[0, 2] (d = 1), not x[0, 0] (finished)
    row3 = m.memory_row(3)
    assert row3[(0, 1)] == 5 and row3[(0, 2)] == 4 and (0, 0) not in row3
    assert row3[(1, 0)] == 4
    with pytest.raises(ValidationError):
        build_model(inst, 3)


def test_rows_reproduce_memory_usage():
    rng = random.Random(7)
    for _ in range(200):
        inst = random_instance(rng, n_max=5)
        m = build_model(inst)
        sched = StartSchedule({i: rng.randint(0, m.horizon - inst.by_id[i].o) for i in inst.ids})
        rows = rows_at_integral(m, sched)
        for t in range(1, m.horizon + 1):
            assert rows[t - 1] == memory_usage_at(inst, sched, t)


def test_simplex_small_problems():
    x, obj = simplex.solve([-1, -1], [[1, 2], [3, 1]], [4, 6], np.zeros((0, 2)), np.zeros(0))
    assert obj == pytest.approx(-2.8)
    assert x == pytest.approx([1.6, 1.2])
    with pytest.raises(simplex.Infeasible):
        simplex.solve([1, 1], [[1, 1]], [1], [[1, 1]], [2])
    with pytest.raises(simplex.Unbounded):
        simplex.solve([-1, 0], [[0, 1]], [1], np.zeros((0, 2)), np.zeros(0))


def test_simplex_matches_highs_on_random_lps():
    rng = np.random.default_rng(0)
    for _ in range(60):
        m, n = rng.integers(1, 6), rng.integers(2, 8)
        A = rng.integers(0, 5, size=(m, n)).astype(float)
        b = rng.integers(1, 20, size=m).astype(float)
        Aeq = np.ones((1, n))
        c = rng.integers(-5, 6, size=n).astype(float)
        ref = linprog(c, A_ub=A, b_ub=b, A_eq=Aeq, b_eq=[1.0], bounds=(0, None), method="highs")
        if ref.status == 2:
            with pytest.raises(simplex.Infeasible):
                simplex.solve(c, A, b, Aeq, np.array([1.0]))
            continue
        _, obj = simplex.solve(c, A, b, Aeq, np.array([1.0]))
        assert obj == pytest.approx(ref.fun, abs=1e-7)


def test_relaxation_back_ends_agree():
    rng = random.Random(8)
    for _ in range(40):
        inst = random_instance(rng, n_max=6, M_max=12, so_max=4)
        objs = {m: solve_relaxation(inst, None, m).objective for m in ("simplex", "highs", "colgen")}
        assert objs["simplex"] == pytest.approx(objs["highs"], abs=1e-6)
        assert objs["colgen"] == pytest.approx(objs["highs"], abs=1e-6)


def test_example1_relaxation(example1):
    sol = solve_relaxation(example1, None, "highs")
    ref = solve_lp(build_model(example1), "highs")
    assert sol.objective == pytest.approx(ref.objective)
    y = sol.expected_starts()
    assert all(y[i] == pytest.approx(0.0, abs=1e-9) for i in range(1, 22))
    assert y[0] > 1.0
    assert sol.objective < 45  # below the best integral TEL
    doc = sol.to_dict()
    assert set(doc) == {"objective", "y"} and len(doc["y"]) == 22


def test_colgen_on_larger_instance_matches_full_model():
    rng = random.Random(2)
    pairs = [(rng.randint(1, 10), rng.randint(1, 10)) for _ in range(15)]
    inst = Instance.from_pairs(pairs, 30)
    full = solve_relaxation(inst, 60, "highs")
    cg = solve_relaxation(inst, 60, "colgen")
    assert cg.objective == pytest.approx(full.objective, abs=1e-6)
    assert cg.values.shape == (15, 61)


def test_ip_oracle_matches_enumeration():
    rng = random.Random(4)
    for _ in range(60):
        inst = random_instance(rng, n_max=4, M_max=8, so_max=3)
        horizon = 6
        ref, ref_vec = enumerate_optimum(inst, horizon)
        if ref is None:
            continue
        sched, value = solve_ip_exact(inst, horizon)
        assert value == ref
        # lexicographically smallest optimal start vector in id order
        assert tuple(sched.starts[i] for i in inst.ids) == ref_vec
        span, _ = enumerate_optimum(inst, horizon, objective=max)
        assert solve_makespan_exact(inst, horizon)[1] == span


def test_ip_above_lp():
    rng = random.Random(6)
    for _ in range(40):
        inst = random_instance(rng, n_max=5, M_max=10, so_max=4)
        _, opt = solve_ip_exact(inst)
        assert solve_relaxation(inst).objective <= opt + 1e-7


def test_reduction_instances():
    _, tel = solve_ip_exact(gen_3partition([7, 6, 7, 5, 7, 8], 20))
    assert tel == 9
    assert solve_makespan_exact(gen_partition_makespan([3, 7, 4, 6], 10))[1] == 2
    assert solve_makespan_exact(gen_partition_makespan([2, 2, 2, 4], 5))[1] >= 3


def test_oracle_guards():
    big = Instance.from_pairs([(1, 1)] * 9, 10)
    with pytest.raises(OracleGuardError):
        solve_ip_exact(big)
    wide = Instance.from_pairs([(5, 40)] * 2, 50)
    with pytest.raises(OracleGuardError):
        solve_ip_exact(wide, max_horizon=10)


def test_clone_optimum_is_eleven():
    clone = Instance.from_pairs([(7, 1)] + [(1, 2)] * 3, 8)
    assert solve_ip_exact(clone)[1] == 11
    assert enumerate_optimum(clone, 5)[0] == 11


def test_export_lp_text():
    inst = Instance.from_pairs([(3, 2), (1, 4)], 10)
    text = export_lp_text(build_model(inst))
    assert text.startswith("\\ time-indexed start model")
    assert "Minimize" in text and "Binary" in text and text.rstrip().endswith("End")
    assert text.count(" mem_") == 6
    assert " start_0: " in text
