import itertools
import random

import pytest

from kvsched.core import Instance, StartSchedule, validate_schedule


@pytest.fixture
def example1():
    """One (63, 1) request followed by 21 requests (1, 2), M = 64."""
    return Instance.from_pairs([(63, 1)] + [(1, 2)] * 21, 64)


def random_instance(rng: random.Random, n_max=6, M_max=12, so_max=4, n_min=1) -> Instance:
    M = rng.randint(2, M_max)
    n = rng.randint(n_min, n_max)
    pairs = []
    while len(pairs) < n:
        s, o = rng.randint(1, so_max), rng.randint(1, so_max)
        if s + o <= M:
            pairs.append((s, o))
    return Instance.from_pairs(pairs, M)


def enumerate_optimum(instance: Instance, horizon: int, objective=sum):
    """Best objective over every start vector in [0, horizon]^n (test oracle)."""
    best, best_vec = None, None
    ids = instance.ids
    for vec in itertools.product(range(horizon + 1), repeat=len(ids)):
        sched = StartSchedule(dict(zip(ids, vec)))
        if validate_schedule(instance, sched) is not None:
            continue
        value = objective([p + instance.by_id[i].o for i, p in zip(ids, vec)])
        if best is None or value < best:
            best, best_vec = value, vec
    return best, best_vec


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
