import random

import pytest

from kvsched.core import BatchPlan, Instance, compute_metrics
from kvsched.schedulers import (
    SchedulerKind,
    SchedulerSpec,
    lp_expected_starts,
    order_sf,
    order_sf_total,
    order_type2_first,
    parse_scheduler,
    plan_lp_swap,
    plan_sorted_f,
    plan_sorted_lp,
    run_scheduler,
)
from kvsched.selectors import SelectorConfig, SelectorKind

from conftest import random_instance

EXPECTED_EXAMPLE1 = {
    "fcfs": 64,
    "mc_sf": 64,
    "mc_sf_total": 45,
    "sorted_f": 45,
    "sorted_lp": 45,
    "lp_swap": 45,
    "type2_first": 45,
}


@pytest.mark.parametrize("name,tel", sorted(EXPECTED_EXAMPLE1.items()))
def test_example1_every_scheduler(example1, name, tel):
    schedule, trace = run_scheduler(example1, SchedulerSpec(name))
    assert compute_metrics(example1, schedule).tel == tel
    assert trace.peak_memory <= 64


def test_sorted_f_plan(example1):
    plan = plan_sorted_f(example1)
    assert plan.batches == (tuple(range(1, 22)), (0,))
    for kind in SelectorKind:
        if kind is SelectorKind.BRUTE_FORCE:
            continue
        assert plan_sorted_f(example1, SelectorConfig(kind=kind)) == plan


def test_orders():
    inst = Instance.from_pairs([(9, 1), (1, 3), (2, 1), (1, 2)], 20)
    assert order_sf(inst) == [0, 2, 3, 1]
    assert order_sf_total(inst) == [2, 3, 1, 0]
    assert order_type2_first(inst) == [1, 2, 3, 0]


def test_lp_orders_follow_y(example1):
    y = lp_expected_starts(example1)
    assert plan_sorted_lp(example1, y=y)[-1] == 0
    # ties in y fall back to (o, id)
    flat = {i: 0.0 for i in example1.ids}
    assert plan_sorted_lp(example1, y=flat) == [0] + list(range(1, 22))
    plan = plan_lp_swap(example1, y=y)
    assert plan.batches == (tuple(range(1, 22)), (0,))


def test_plans_cover_and_fit():
    rng = random.Random(12)
    for _ in range(60):
        inst = random_instance(rng, n_max=10, M_max=25, so_max=6)
        for plan in (plan_sorted_f(inst), plan_lp_swap(inst)):
            assert isinstance(plan, BatchPlan)
            plan.check_against(inst)
            for batch in plan.batches:
                assert sum(inst.by_id[i].s + inst.by_id[i].o for i in batch) <= inst.memory_limit
                os = [inst.by_id[i].o for i in batch]
                assert os == sorted(os)
        assert sorted(plan_sorted_lp(inst)) == inst.ids


def test_spec_validation_and_names():
    assert SchedulerSpec("sorted_f").selector.kind is SelectorKind.EXACT_DP
    assert SchedulerSpec("sorted_f").name == "sorted_f[exact_dp]"
    assert SchedulerSpec("lp_swap").selector.kind is SelectorKind.LOCAL_SWAP
    with pytest.raises(ValueError):
        SchedulerSpec("mc_sf", SelectorConfig())
    with pytest.raises(ValueError):
        SchedulerSpec("lp_swap", SelectorConfig(kind="exact_dp"))
    with pytest.raises(ValueError):
        SchedulerSpec("fcfs", horizon_override=10)
    spec = parse_scheduler("sorted_f:scaled_dp", epsilon="1/4")
    assert spec.selector.kind is SelectorKind.SCALED_DP and str(spec.selector.epsilon) == "1/4"
    assert SchedulerSpec.from_dict(spec.to_dict()) == spec
    assert SchedulerSpec.from_dict("mc_sf").kind is SchedulerKind.MC_SF
    with pytest.raises(ValueError):
        parse_scheduler("nope")


def test_horizon_override(example1):
    a, _ = run_scheduler(example1, SchedulerSpec("sorted_lp", horizon_override="auto"))
    b, _ = run_scheduler(example1, SchedulerSpec("sorted_lp", horizon_override=10))
    assert compute_metrics(example1, a).tel == compute_metrics(example1, b).tel == 45
