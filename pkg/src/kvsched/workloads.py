"""Instance generators and trace ingestion.

Synthetic draws use :class:`~kvsched.rng.SplitMix64`; each request draws s then
o. Continuous values are clipped to their range and then rounded half up.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .core import Instance, Request, ValidationError
from .rng import SplitMix64

ADVERSARIAL_MAX_M = 2500


class DistributionKind(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"
    BINOMIAL = "binomial"
    EXPONENTIAL = "exponential"
    MIXED = "mixed"


@dataclass(frozen=True)
class DistributionSpec:
    kind: DistributionKind
    seed: int = 0
    s_max: int = 50
    o_max: int = 50
    # uniform: integers lo..hi-1
    lo: int = 1
    hi: int = 51
    # normal
    mu: float = 25.0
    sigma: float = 8.33
    # binomial(trials, p) + 1
    trials: int = 49
    p: float = 0.5
    # exponential (and the o-part of mixed)
    scale: float = 5.0
    # mixed s: exponential share / scale, lognormal (log-mean, log-sd), remap range for s > s_max
    mixed_exp_share: float = 0.8
    mixed_exp_scale: float = 10.0
    mixed_log_mu: float = math.log(40.0)
    mixed_log_sigma: float = 0.25
    mixed_remap_lo: float = 40.0
    mixed_remap_hi: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DistributionKind(self.kind))

    @classmethod
    def from_dict(cls, data: dict) -> "DistributionSpec":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _clip_round(x: float, hi: int) -> int:
    return round_half_up(min(max(x, 1.0), float(hi)))


def _draw_pair(spec: DistributionSpec, rng: SplitMix64) -> tuple[int, int]:
    kind = spec.kind
    if kind is DistributionKind.UNIFORM:
        s = spec.lo + rng.randbelow(spec.hi - spec.lo)
        o = spec.lo + rng.randbelow(spec.hi - spec.lo)
        return min(s, spec.s_max), min(o, spec.o_max)
    if kind is DistributionKind.NORMAL:
        s = _clip_round(rng.normal(spec.mu, spec.sigma), spec.s_max)
        o = _clip_round(rng.normal(spec.mu, spec.sigma), spec.o_max)
        return s, o
    if kind is DistributionKind.BINOMIAL:
        s = min(rng.binomial(spec.trials, spec.p) + 1, spec.s_max)
        o = min(rng.binomial(spec.trials, spec.p) + 1, spec.o_max)
        return s, o
    if kind is DistributionKind.EXPONENTIAL:
        s = _clip_round(rng.exponential(spec.scale), spec.s_max)
        o = _clip_round(rng.exponential(spec.scale), spec.o_max)
        return s, o
    if kind is DistributionKind.MIXED:
        if rng.random() < spec.mixed_exp_share:
            x = rng.exponential(spec.mixed_exp_scale)
        else:
            x = math.exp(rng.normal(spec.mixed_log_mu, spec.mixed_log_sigma))
        if x > spec.s_max:
            x = rng.uniform(spec.mixed_remap_lo, spec.mixed_remap_hi)
        s = _clip_round(x, spec.s_max)
        o = _clip_round(rng.exponential(spec.scale), spec.o_max)
        return s, o
    raise ValueError(f"unknown distribution {kind}")


def gen_synthetic(spec: DistributionSpec, n: int, M: int) -> Instance:
    rng = SplitMix64(spec.seed)
    return Instance.from_pairs((_draw_pair(spec, rng) for _ in range(n)), M)


def _sqrt_exact(M: int) -> int:
    root = math.isqrt(M)
    if root * root != M:
        raise ValidationError(f"M = {M} is not a perfect square")
    if M > ADVERSARIAL_MAX_M:
        raise ValidationError(f"M = {M} exceeds the cap {ADVERSARIAL_MAX_M} (instance has M**1.5 requests)")
    return root


def gen_adversarial_sf(M: int) -> Instance:
    """M requests (sqrt(M)-1, 1) followed by M**1.5 requests (1, 2)."""
    root = _sqrt_exact(M)
    return Instance.from_pairs([(root - 1, 1)] * M + [(1, 2)] * (M * root), M)


def gen_adversarial_sf2(M: int) -> Instance:
    """M requests (1, sqrt(M)-1) followed by M**1.5 requests (sqrt(M), 1)."""
    root = _sqrt_exact(M)
    return Instance.from_pairs([(1, root - 1)] * M + [(root, 1)] * (M * root), M)


def gen_3partition(xs: Sequence[int], T: int) -> Instance:
    """One request (x, 1) per item with memory T + 3.

    A batch of three items summing to T holds T + 3 tokens at its only step,
    so batches of the optimal schedule correspond exactly to the triples.
    """
    problems = []
    if len(xs) == 0 or len(xs) % 3:
        problems.append(f"need 3m items, got {len(xs)}")
    m = len(xs) // 3
    if sum(xs) != m * T:
        problems.append(f"items sum to {sum(xs)}, expected m*T = {m * T}")
    for i, x in enumerate(xs):
        if not (4 * x >= T and 2 * x < T):
            problems.append(f"item {i} = {x} is outside [T/4, T/2) for T = {T}")
    if problems:
        raise ValidationError("invalid 3-partition input: " + "; ".join(problems))
    return Instance.from_pairs([(x, 1) for x in xs], T + 3)


def three_partition_tel(m: int) -> int:
    """Optimal TEL when a 3-partition exists: batches of three at steps 1..m."""
    return 3 * m * (m + 1) // 2


def gen_partition_makespan(xs: Sequence[int], T: int) -> Instance:
    """Requests (n*x, 1) with memory n*T + n.

    A set S fits in one step iff n*sum(S) + |S| <= n*T + n, i.e. sum(S) <= T,
    so makespan 2 is achievable iff the multiset splits into two halves.
    """
    n = len(xs)
    if n == 0 or sum(xs) != 2 * T:
        raise ValidationError(f"items must sum to 2T = {2 * T}, got {sum(xs)}")
    bad = [i for i, x in enumerate(xs) if x < 1 or x > T]
    if bad:
        raise ValidationError(f"items {bad} lie outside [1, T]")
    return Instance.from_pairs([(n * x, 1) for x in xs], n * T + n)


# --- traces ---------------------------------------------------------------


def load_trace(path: str | Path, memory_limit: int | None = None) -> Instance:
    """Read a JSON instance, or a CSV with header ``s,o`` (ids = row index).

    ``memory_limit`` is required for CSV and overrides the JSON value if given.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            data = json.load(fh)
        if memory_limit is not None:
            data = {**data, "memory_limit": memory_limit}
        return Instance.from_dict(data)
    if memory_limit is None:
        raise ValidationError("a CSV trace needs an explicit memory limit")
    requests, oversized = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["s", "o"]:
            raise ValidationError(f"{path}: expected header 's,o', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                s, o = int(row[0]), int(row[1])
                req = Request(len(requests), s, o)
            except (ValueError, IndexError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad row {row}: {exc}") from None
            if req.peak > memory_limit:
                oversized.append(f"line {lineno} (s+o = {req.peak})")
            requests.append(req)
    if oversized:
        raise ValidationError(f"{path}: requests exceed memory {memory_limit}: " + ", ".join(oversized[:20]))
    return Instance(tuple(requests), memory_limit)


def save_instance(instance: Instance, path: str | Path) -> None:
    """JSON instance document, or ``s,o`` CSV when the suffix is .csv."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        if instance.ids != list(range(instance.n)):
            raise ValidationError("CSV traces need ids 0..n-1 in order")
        with open(path, "w", newline="") as fh:
            fh.write("s,o\n")
            for r in instance.requests:
                fh.write(f"{r.s},{r.o}\n")
        return
    with open(path, "w") as fh:
        json.dump(instance.to_dict(), fh, indent=1)
        fh.write("\n")
