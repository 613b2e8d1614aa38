"""Batch selection: pick a subset of the pool minimising F = sum(o) / k**2.

Every selector enforces the knapsack-style bound ``sum(s + o) <= M``; the
simulator re-checks exact feasibility when it admits requests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import Request, f_less
from .rng import SplitMix64

Batch = tuple[Request, ...]

BRUTE_FORCE_MAX_POOL = 20


class SelectorError(RuntimeError):
    pass


class SelectorKind(str, Enum):
    BRUTE_FORCE = "brute_force"
    EXACT_DP = "exact_dp"
    SCALED_DP = "scaled_dp"
    LOCAL_SWAP = "local_swap"
    QUANTILE_GREEDY = "quantile_greedy"


@dataclass(frozen=True)
class SelectorConfig:
    kind: SelectorKind = SelectorKind.EXACT_DP
    epsilon: Fraction = Fraction(1, 10)
    precision_B: int = 10
    sample_fraction: Fraction = Fraction(1, 2)
    quantile_p: Fraction = Fraction(3, 10)
    seed: int = 0
    max_dp_cells: int = 10_000_000

    def __post_init__(self):
        object.__setattr__(self, "kind", SelectorKind(self.kind))
        for name in ("epsilon", "sample_fraction", "quantile_p"):
            object.__setattr__(self, name, Fraction(str(getattr(self, name))))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.precision_B < 1:
            raise ValueError("precision_B must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if not 0 < self.quantile_p < 1:
            raise ValueError("quantile_p must lie in (0, 1)")

    def scale(self, M: int) -> Fraction:
        """Memory quantum used by the scaled DP: max(1, epsilon * M / B)."""
        return max(Fraction(1), self.epsilon * M / self.precision_B)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "epsilon": str(self.epsilon),
            "precision_B": self.precision_B,
            "sample_fraction": str(self.sample_fraction),
            "quantile_p": str(self.quantile_p),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SelectorConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _mem(batch: Sequence[Request]) -> int:
    return sum(r.s + r.o for r in batch)


def select_brute_force(pool: Sequence[Request], M: int) -> Batch:
    """Exhaustive search; ties on F go to the larger set, then less memory,
    then the lexicographically smallest id list."""
    if len(pool) > BRUTE_FORCE_MAX_POOL:
        raise SelectorError(f"brute force refuses pools larger than {BRUTE_FORCE_MAX_POOL}")
    best_key = None
    best: Batch = ()
    for k in range(1, len(pool) + 1):
        for combo in itertools.combinations(pool, k):
            mem = _mem(combo)
            if mem > M:
                continue
            key = (Fraction(sum(r.o for r in combo), k * k), -k, mem, sorted(r.id for r in combo))
            if best_key is None or key < best_key:
                best_key, best = key, combo
    return tuple(best)


def _knapsack_min_f(pool: Sequence[Request], weights: Sequence[int], cap: int, max_cells: int) -> Batch:
    """Exact minimum of sum(o)/k**2 subject to sum(weights) <= cap.

    ``suf[i, k, m]`` is the least total o over exactly k items from ``pool[i:]``
    with weight exactly m. Keeping every suffix layer lets the forward walk
    return the lexicographically smallest index set among optimal ones.
    """
    n = len(pool)
    if n == 0:
        return ()
    cells = (n + 1) * (n + 1) * (cap + 1)
    if cells > max_cells:
        raise SelectorError(
            f"exact DP needs {cells} cells (> budget {max_cells}); use the scaled_dp selector"
        )
    inf = np.iinfo(np.int64).max // 4
    suf = np.full((n + 1, n + 1, cap + 1), inf, dtype=np.int64)
    suf[n, 0, 0] = 0
    for i in range(n - 1, -1, -1):
        w, o = weights[i], pool[i].o
        layer = suf[i + 1].copy()
        if w <= cap:
            region = layer[1:, w:]
            np.minimum(region, suf[i + 1][:-1, : cap + 1 - w] + o, out=region)
        suf[i] = layer

    table = suf[0]
    best = None  # (sum_o, k, m)
    for k in range(1, n + 1):
        row = table[k]
        v = int(row.min())
        if v >= inf:
            continue
        m = int(np.argmax(row == v))
        if best is None or f_less(v, k, best[0], best[1]):
            best = (v, k, m)
        elif not f_less(best[0], best[1], v, k) and k > best[1]:
            best = (v, k, m)
    if best is None:
        return ()

    value, k, m = best
    chosen = []
    for i in range(n):
        if k == 0:
            break
        w, o = weights[i], pool[i].o
        if w <= m and suf[i + 1, k - 1, m - w] == value - o:
            chosen.append(pool[i])
            k, m, value = k - 1, m - w, value - o
    return tuple(chosen)


def select_exact_dp(pool: Sequence[Request], M: int, config: SelectorConfig = SelectorConfig()) -> Batch:
    return _knapsack_min_f(pool, [r.s + r.o for r in pool], M, config.max_dp_cells)


def select_scaled_dp(pool: Sequence[Request], M: int, config: SelectorConfig = SelectorConfig()) -> Batch:
    """Same DP on quantised memory: weight floor((s+o)/lam), capacity floor(M/lam).

    Rounding down can admit sets whose true memory slightly exceeds M; use
    ``scaled_overshoot`` to measure it.
    """
    lam = config.scale(M)
    weights = [math.floor((r.s + r.o) / lam) for r in pool]
    return _knapsack_min_f(pool, weights, math.floor(M / lam), config.max_dp_cells)


def scaled_overshoot(batch: Sequence[Request], M: int) -> int:
    return max(0, _mem(batch) - M)


def _greedy_fill(ordered: Sequence[Request], M: int) -> list[Request]:
    chosen, mem = [], 0
    for r in ordered:
        if mem + r.s + r.o <= M:
            chosen.append(r)
            mem += r.s + r.o
    return chosen


def local_swap(
    seed_batch: Sequence[Request],
    pool: Sequence[Request],
    M: int,
    trajectory: list[Fraction] | None = None,
) -> Batch:
    """Pairwise exchange from ``seed_batch``: replace a member by an outsider
    (scanned in ``pool`` order) while memory stays within M and F drops.

    The first improving swap is taken and the scan restarts. Appends F of
    every visited batch to ``trajectory`` when given.
    """
    batch = list(seed_batch)
    if not batch:
        return ()
    k = len(batch)
    mem = _mem(batch)
    total_o = sum(r.o for r in batch)
    if trajectory is not None:
        trajectory.append(Fraction(total_o, k * k))
    max_passes = 10 * max(len(pool), 1)
    for _ in range(max_passes):
        inside = {r.id for r in batch}
        outside = [r for r in pool if r.id not in inside]
        swapped = False
        for pos, r_out in enumerate(batch):
            for r_in in outside:
                dm = (r_in.s + r_in.o) - (r_out.s + r_out.o)
                if mem + dm > M:
                    continue
                # |X| is unchanged, so F drops iff the o-sum drops.
                if r_in.o < r_out.o:
                    batch[pos] = r_in
                    mem += dm
                    total_o += r_in.o - r_out.o
                    swapped = True
                    break
            if swapped:
                break
        if not swapped:
            return tuple(batch)
        if trajectory is not None:
            trajectory.append(Fraction(total_o, k * k))
    raise SelectorError(f"local swap did not converge within {max_passes} passes")


def select_local_swap(pool: Sequence[Request], M: int, config: SelectorConfig = SelectorConfig()) -> Batch:
    ordered = sorted(pool, key=lambda r: r.s + r.o)
    return local_swap(_greedy_fill(ordered, M), ordered, M)


def nearest_rank_quantile(values: Sequence[int], p: Fraction) -> int:
    ordered = sorted(values)
    rank = max(1, math.ceil(p * len(ordered)))
    return ordered[rank - 1]


@dataclass
class QuantileGreedyResult:
    batch: Batch
    core: Batch
    q_total: int
    q_output: int
    sample: list[int] = field(default_factory=list)


def quantile_greedy_detail(
    pool: Sequence[Request], M: int, config: SelectorConfig = SelectorConfig()
) -> QuantileGreedyResult:
    ordered = sorted(pool, key=lambda r: r.o)
    if not ordered:
        return QuantileGreedyResult((), (), 0, 0)
    size = max(1, math.floor(config.sample_fraction * len(ordered)))
    rng = SplitMix64(config.seed)
    sample_idx = rng.sample(len(ordered), size)
    sample = [ordered[i] for i in sample_idx]
    q_total = nearest_rank_quantile([r.s + r.o for r in sample], config.quantile_p)
    q_output = nearest_rank_quantile([r.o for r in sample], config.quantile_p)

    chosen, mem = [], 0
    for r in ordered:
        if r.s + r.o <= q_total and r.o <= q_output and mem + r.s + r.o <= M:
            chosen.append(r)
            mem += r.s + r.o
    core = tuple(chosen)
    taken = {r.id for r in chosen}
    rest = sorted((r for r in ordered if r.id not in taken), key=lambda r: Fraction(r.o, r.s + r.o))
    for r in rest:
        if mem + r.s + r.o <= M:
            chosen.append(r)
            mem += r.s + r.o
    return QuantileGreedyResult(tuple(chosen), core, q_total, q_output, sorted(r.id for r in sample))


def select_quantile_greedy(pool: Sequence[Request], M: int, config: SelectorConfig = SelectorConfig()) -> Batch:
    return quantile_greedy_detail(pool, M, config).batch


def select(pool: Sequence[Request], M: int, config: SelectorConfig = SelectorConfig()) -> Batch:
    """Dispatch on ``config.kind``. An empty pool yields an empty batch."""
    if not pool:
        return ()
    kind = config.kind
    if kind is SelectorKind.BRUTE_FORCE:
        return select_brute_force(pool, M)
    if kind is SelectorKind.EXACT_DP:
        return select_exact_dp(pool, M, config)
    if kind is SelectorKind.SCALED_DP:
        return select_scaled_dp(pool, M, config)
    if kind is SelectorKind.LOCAL_SWAP:
        return select_local_swap(pool, M, config)
    if kind is SelectorKind.QUANTILE_GREEDY:
        return select_quantile_greedy(pool, M, config)
    raise ValueError(f"unknown selector {kind}")


def with_kind(config: SelectorConfig, kind: SelectorKind | str) -> SelectorConfig:
    return replace(config, kind=SelectorKind(kind))
