import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvsched.core import (
    BatchPlan,
    InfeasibleScheduleError,
    Instance,
    Request,
    StartSchedule,
    ValidationError,
    batch_feasible_conservative,
    batch_feasible_exact,
    build_trace,
    compute_metrics,
    f_less,
    f_metric,
    memory_profile,
    memory_usage_at,
    validate_schedule,
)

from conftest import random_instance


def test_request_and_instance_invariants():
    with pytest.raises(ValidationError):
        Request(0, 0, 5)
    with pytest.raises(ValidationError):
        Request(0, 3, 0)
    with pytest.raises(ValidationError):
        Instance.from_pairs([(5, 6)], 10)
    with pytest.raises(ValidationError):
        Instance((Request(1, 1, 1), Request(1, 2, 2)), 10)
    with pytest.raises(ValidationError):
        Instance((), 0)
    inst = Instance.from_pairs([(5, 5)], 10)
    assert inst.by_id[0].peak == 10


def test_memory_usage_examples(example1):
    inst = Instance.from_pairs([(5, 3)], 10)
    sched = StartSchedule({0: 0})
    assert memory_usage_at(inst, sched, 2) == 7
    assert memory_usage_at(inst, sched, 4) == 0
    assert memory_usage_at(inst, sched, 0) == 0
    assert memory_usage_at(inst, sched, 3) == 8

    starts = {0: 5, **{i: 1 for i in range(1, 22)}}
    assert memory_usage_at(example1, StartSchedule(starts), 3) == 63
    with pytest.raises(ValidationError):
        memory_usage_at(inst, StartSchedule({7: 0}), 1)


def _stepwise_usage(instance, schedule, t):
    # token-by-token replay: each step adds one token to every running request
    total = 0
    for r in instance.requests:
        p = schedule.starts[r.id]
        held = 0
        for step in range(p + 1, t + 1):
            if step > p + r.o:
                held = 0
                break
            held = r.s + (step - p)
        total += held
    return total


def test_memory_usage_matches_stepwise_replay(example1):
    sched = StartSchedule({0: 0, **{i: 1 for i in range(1, 22)}})
    for t in range(0, 6):
        assert memory_usage_at(example1, sched, t) == _stepwise_usage(example1, sched, t)


def test_validate_example1(example1):
    sorted_f = StartSchedule({0: 2, **{i: 0 for i in range(1, 22)}})
    assert validate_schedule(example1, sorted_f) is None

    together = StartSchedule({i: 0 for i in range(22)})
    v = validate_schedule(example1, together)
    assert v is not None
    # first step: 64 from (63,1) plus 21 * 2 from the (1,2) requests
    assert (v.t, v.usage, v.overflow) == (1, 64 + 42, 42)
    assert v.usage == memory_usage_at(example1, together, v.t)

    with pytest.raises(ValidationError):
        validate_schedule(example1, StartSchedule({0: 0}))


def test_validate_empty():
    inst = Instance((), 5)
    assert validate_schedule(inst, StartSchedule({})) is None
    assert compute_metrics(inst, StartSchedule({})).tel == 0


def test_batch_feasibility_examples(example1):
    type2 = list(example1.requests[1:])
    assert batch_feasible_exact(type2, 64)
    assert batch_feasible_conservative(type2, 64)
    assert batch_feasible_exact([Request(0, 4, 6)], 10)
    pair = [Request(0, 3, 1), Request(1, 3, 5)]
    assert batch_feasible_exact(pair, 9)
    assert not batch_feasible_exact(pair, 7)
    assert not batch_feasible_conservative(pair, 9)


def test_f_metric_examples(example1):
    assert f_metric([Request(0, 63, 1)]) == 1
    assert f_metric(list(example1.requests[1:])) == Fraction(42, 441)
    assert f_metric([Request(i, 1, 7) for i in range(5)]) == Fraction(7, 5)
    with pytest.raises(ValueError):
        f_metric([])


@given(st.lists(st.tuples(st.integers(1, 9), st.integers(1, 9)), min_size=1, max_size=8), st.integers(2, 40))
def test_conservative_implies_exact(pairs, M):
    batch = [Request(i, s, o) for i, (s, o) in enumerate(pairs)]
    if batch_feasible_conservative(batch, M):
        assert batch_feasible_exact(batch, M)


@given(
    st.lists(st.integers(1, 12), min_size=1, max_size=6),
    st.lists(st.integers(1, 12), min_size=1, max_size=6),
)
def test_f_comparison_exactness(a, b):
    fa = Fraction(sum(a), len(a) ** 2)
    fb = Fraction(sum(b), len(b) ** 2)
    assert (fa < fb) == f_less(sum(a), len(a), sum(b), len(b))


def _exact_by_replay(batch, M):
    inst = Instance(tuple(batch), 10**9)
    sched = StartSchedule({r.id: 0 for r in batch})
    return memory_profile(inst, sched).max() <= M


@given(st.lists(st.tuples(st.integers(1, 6), st.integers(1, 6)), min_size=1, max_size=6), st.integers(2, 30))
def test_exact_feasibility_matches_replay(pairs, M):
    batch = [Request(i, s, o) for i, (s, o) in enumerate(pairs)]
    assert batch_feasible_exact(batch, M) == _exact_by_replay(batch, M)


def test_profile_matches_pointwise_formula():
    rng = random.Random(3)
    for _ in range(200):
        inst = random_instance(rng, n_max=6)
        sched = StartSchedule({i: rng.randint(0, 6) for i in inst.ids})
        prof = memory_profile(inst, sched)
        for t in range(len(prof) + 2):
            expected = memory_usage_at(inst, sched, t)
            assert (prof[t] if t < len(prof) else 0) == expected
            assert expected == _stepwise_usage(inst, sched, t)
        ok = validate_schedule(inst, sched) is None
        assert ok == (max(memory_usage_at(inst, sched, t) for t in range(len(prof))) <= inst.memory_limit)


def test_usage_peaks_at_completion_checkpoints():
    rng = random.Random(11)
    for _ in range(300):
        inst = random_instance(rng, n_max=6)
        sched = StartSchedule({i: rng.randint(0, 5) for i in inst.ids})
        prof = memory_profile(inst, sched)
        checkpoints = {sched.starts[r.id] + r.o for r in inst.requests}
        assert prof.max() == max(prof[c] for c in checkpoints)


def test_metrics(example1):
    mcsf = StartSchedule({0: 0, **{i: 1 for i in range(1, 22)}})
    sortedf = StartSchedule({0: 2, **{i: 0 for i in range(1, 22)}})
    m1 = compute_metrics(example1, mcsf)
    m2 = compute_metrics(example1, sortedf)
    assert m1.tel == 64 and m2.tel == 45
    assert m1.makespan == 3 and m2.makespan == 3
    assert m2.peak_memory == 64
    assert 0 <= m2.mean_utilization <= 1
    single = Instance.from_pairs([(4, 7)], 20)
    m = compute_metrics(single, StartSchedule({0: 0}))
    assert (m.tel, m.makespan, m.mean_latency) == (7, 7, 7.0)
    with pytest.raises(InfeasibleScheduleError) as err:
        compute_metrics(example1, StartSchedule({i: 0 for i in range(22)}))
    assert err.value.violation.t == 1


def test_tel_uses_wide_accumulator():
    inst = Instance.from_pairs([(1, 10**6 - 1)] * 3, 10**6)
    sched = StartSchedule({0: 0, 1: 10**6, 2: 2 * 10**6})
    assert compute_metrics(inst, sched).tel == 3 * (10**6 - 1) + 3 * 10**6


def test_trace_and_plan(example1, tmp_path):
    sched = StartSchedule({0: 2, **{i: 0 for i in range(1, 22)}})
    trace = build_trace(example1, sched)
    assert [s.memory_used for s in trace.steps] == [0, 42, 63, 64]
    assert trace.steps[0].admitted == tuple(range(1, 22))
    assert trace.steps[3].active == (0,)
    csv = trace.to_csv().splitlines()
    assert csv[0] == "step,active_count,admitted_ids,memory_used"
    assert csv[3] == "2,21,0,63"

    plan = BatchPlan.from_batches([[example1.by_id[3], example1.by_id[1]], [example1.by_id[0]]])
    assert plan.batches == ((1, 3), (0,))
    with pytest.raises(ValidationError):
        BatchPlan(((1, 2), (2,)))
    with pytest.raises(ValidationError):
        BatchPlan(((1,), (0,))).check_against(example1)


def test_json_round_trip(example1, tmp_path):
    from kvsched.core import dump_instance, dump_schedule, load_instance, load_schedule

    dump_instance(example1, tmp_path / "i.json")
    assert load_instance(tmp_path / "i.json") == example1
    sched = StartSchedule({0: 2, **{i: 0 for i in range(1, 22)}})
    dump_schedule(sched, tmp_path / "s.json")
    assert load_schedule(tmp_path / "s.json") == sched
