import math
from collections import Counter

import pytest

from kvsched.core import Instance, ValidationError
from kvsched.rng import SplitMix64
from kvsched.workloads import (
    DistributionSpec,
    gen_3partition,
    gen_adversarial_sf,
    gen_adversarial_sf2,
    gen_partition_makespan,
    gen_synthetic,
    load_trace,
    round_half_up,
    save_instance,
    three_partition_tel,
)

KINDS = ["uniform", "normal", "binomial", "exponential", "mixed"]


def test_splitmix64_reference_vector():
    # published outputs of the reference splitmix64.c for seed 1234567
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(5)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
        4593380528125082431,
        16408922859458223821,
    ]


def test_rng_ranges():
    rng = SplitMix64(3)
    xs = [rng.random() for _ in range(2000)]
    assert 0.0 <= min(xs) and max(xs) < 1.0
    assert abs(sum(xs) / len(xs) - 0.5) < 0.03
    ks = [rng.randbelow(7) for _ in range(7000)]
    assert set(ks) == set(range(7))
    sample = rng.sample(10, 4)
    assert len(set(sample)) == 4 and all(0 <= i < 10 for i in sample)
    with pytest.raises(ValueError):
        rng.randbelow(0)


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999, -0.5)] == [1, 2, 3, 2, 0]


@pytest.mark.parametrize("kind", KINDS)
def test_synthetic_deterministic_and_in_range(kind):
    a = gen_synthetic(DistributionSpec(kind, seed=11), 300, 100)
    b = gen_synthetic(DistributionSpec(kind, seed=11), 300, 100)
    c = gen_synthetic(DistributionSpec(kind, seed=12), 300, 100)
    assert a == b and a != c
    assert all(1 <= r.s <= 50 and 1 <= r.o <= 50 for r in a.requests)


def test_distribution_moments():
    n = 4000
    uni = gen_synthetic(DistributionSpec("uniform", seed=1), n, 100)
    mean_s = sum(r.s for r in uni.requests) / n
    assert abs(mean_s - 25.5) < 3 * math.sqrt((50**2 - 1) / 12 / n)
    binom = gen_synthetic(DistributionSpec("binomial", seed=1), n, 100)
    mean_o = sum(r.o for r in binom.requests) / n
    assert abs(mean_o - 25.5) < 3 * math.sqrt(49 * 0.25 / n)
    expo = gen_synthetic(DistributionSpec("exponential", seed=1), n, 100)
    assert min(r.o for r in expo.requests) == 1
    assert abs(sum(r.o for r in expo.requests) / n - 5.0) < 0.5


def _mixed_share_below_20():
    # P(s < 20): exponential(10) part rounds below 19.5; the lognormal part
    # (median 40, sd 0.25 in log space) essentially never does.
    p_exp = 1 - math.exp(-19.5 / 10)
    z = (math.log(19.5) - math.log(40)) / 0.25
    p_log = 0.5 * math.erfc(-z / math.sqrt(2))
    return 0.8 * p_exp + 0.2 * p_log


def test_mixed_short_prompt_share():
    n = 5000
    inst = gen_synthetic(DistributionSpec("mixed", seed=5), n, 100)
    share = sum(r.s < 20 for r in inst.requests) / n
    p = _mixed_share_below_20()
    assert abs(p - 0.6866) < 1e-3
    assert abs(share - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_normal_clip_then_round():
    inst = gen_synthetic(DistributionSpec("normal", seed=2, mu=0.0, sigma=1.0), 500, 100)
    # nearly everything clips to 1; nothing falls below it
    counts = Counter(r.s for r in inst.requests)
    assert min(counts) == 1 and counts[1] > 400


def test_adversarial_shapes():
    inst = gen_adversarial_sf(100)
    assert inst.n == 100 + 1000
    assert Counter((r.s, r.o) for r in inst.requests) == {(9, 1): 100, (1, 2): 1000}
    inst2 = gen_adversarial_sf2(100)
    assert Counter((r.s, r.o) for r in inst2.requests) == {(1, 9): 100, (10, 1): 1000}
    with pytest.raises(ValidationError):
        gen_adversarial_sf(99)
    with pytest.raises(ValidationError):
        gen_adversarial_sf(2601)


def test_reduction_generators():
    inst = gen_3partition([7, 6, 7, 5, 7, 8], 20)
    assert inst.memory_limit == 23 and all(r.o == 1 for r in inst.requests)
    assert three_partition_tel(2) == 9
    with pytest.raises(ValidationError) as err:
        gen_3partition([1, 2, 3, 4], 20)
    msg = str(err.value)
    assert "3m items" in msg and "item 0" in msg
    part = gen_partition_makespan([3, 7, 4, 6], 10)
    assert [r.s for r in part.requests] == [12, 28, 16, 24] and part.memory_limit == 44
    with pytest.raises(ValidationError):
        gen_partition_makespan([3, 7, 4], 10)


def test_trace_round_trip(tmp_path, example1):
    csv_path = tmp_path / "t.csv"
    csv_path.write_text("s,o\n63,1\n" + "1,2\n" * 21)
    assert load_trace(csv_path, 64) == example1
    save_instance(example1, tmp_path / "e.json")
    assert load_trace(tmp_path / "e.json") == example1
    save_instance(example1, tmp_path / "e.csv")
    assert load_trace(tmp_path / "e.csv", 64) == example1
    with pytest.raises(ValidationError):
        load_trace(csv_path)


def test_trace_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("s,o\n3,4\n0,5\n")
    with pytest.raises(ValidationError, match=":3:"):
        load_trace(bad, 100)
    big = tmp_path / "big.csv"
    big.write_text("s,o\n3,4\n60,50\n")
    with pytest.raises(ValidationError, match="line 3"):
        load_trace(big, 100)
    header = tmp_path / "h.csv"
    header.write_text("a,b\n1,1\n")
    with pytest.raises(ValidationError):
        load_trace(header, 10)


def test_spec_from_dict():
    spec = DistributionSpec.from_dict({"kind": "normal", "seed": 4, "sigma": 2.0, "ignored": 1})
    assert spec.sigma == 2.0 and spec.seed == 4
    assert isinstance(gen_synthetic(spec, 5, 100), Instance)
