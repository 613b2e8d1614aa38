"""Dense two-phase tableau simplex with Bland's rule.

Solves ``min c @ x  s.t.  A_ub @ x <= b_ub,  A_eq @ x == b_eq,  x >= 0`` for
``b_ub >= 0`` and ``b_eq >= 0``; meant for small models only.
"""

from __future__ import annotations

import numpy as np

TOL = 1e-9


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    col_vals = tab[:, col].copy()
    col_vals[row] = 0.0
    nz = np.nonzero(np.abs(col_vals) > 0)[0]
    if nz.size:
        tab[nz] -= np.outer(col_vals[nz], tab[row])


def _run(tab: np.ndarray, basis: list[int], n_cols: int, max_pivots: int) -> int:
    """Optimise the objective held in the last row over columns [0, n_cols)."""
    pivots = 0
    m = len(basis)
    while True:
        reduced = tab[-1, :n_cols]
        candidates = np.nonzero(reduced < -TOL)[0]
        if candidates.size == 0:
            return pivots
        col = int(candidates[0])  # Bland: lowest index enters
        column = tab[:m, col]
        rows = np.nonzero(column > TOL)[0]
        if rows.size == 0:
            raise Unbounded("objective is unbounded below")
        ratios = tab[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + TOL * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))  # Bland: lowest basic index leaves
        _pivot(tab, row, col)
        basis[row] = col
        pivots += 1
        if pivots > max_pivots:
            raise LPError(f"simplex exceeded {max_pivots} pivots")


def solve(
    c: np.ndarray,
    A_ub: np.ndarray,
    b_ub: np.ndarray,
    A_eq: np.ndarray,
    b_eq: np.ndarray,
    max_pivots: int = 200_000,
) -> tuple[np.ndarray, float]:
    c = np.asarray(c, dtype=float)
    A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
    A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_ub = np.asarray(b_ub, dtype=float)
    b_eq = np.asarray(b_eq, dtype=float)
    if (b_ub < 0).any() or (b_eq < 0).any():
        raise LPError("right-hand sides must be non-negative")
    n = c.size
    m_ub = b_ub.size if A_ub.size else 0
    m_eq = b_eq.size if A_eq.size else 0
    m = m_ub + m_eq
    # columns: x | slacks | artificials | rhs
    width = n + m_ub + m_eq + 1
    tab = np.zeros((m + 1, width))
    if m_ub:
        tab[:m_ub, :n] = A_ub
        tab[:m_ub, n : n + m_ub] = np.eye(m_ub)
        tab[:m_ub, -1] = b_ub
    if m_eq:
        tab[m_ub:m, :n] = A_eq
        tab[m_ub:m, n + m_ub : n + m_ub + m_eq] = np.eye(m_eq)
        tab[m_ub:m, -1] = b_eq
    basis = list(range(n, n + m_ub + m_eq))
    original = tab[:m, :-1].copy()

    # Phase 1: minimise the sum of artificials.
    art = n + m_ub
    if m_eq:
        tab[-1, art : art + m_eq] = 1.0
        tab[-1] -= tab[m_ub:m].sum(axis=0)
        _run(tab, basis, width - 1, max_pivots)
        if -tab[-1, -1] > 1e-7:
            raise Infeasible(f"phase 1 ended with infeasibility {-tab[-1, -1]:.3g}")
        # Drive artificials still basic (at zero) out of the basis.
        for row in range(m):
            if basis[row] >= art:
                nz = np.nonzero(np.abs(tab[row, :art]) > TOL)[0]
                if nz.size:
                    col = int(nz[0])
                    _pivot(tab, row, col)
                    basis[row] = col
        keep = [r for r in range(m) if basis[r] < art]
        tab = np.vstack([tab[keep], tab[-1:]])
        basis = [basis[r] for r in keep]
        tab = np.delete(tab, np.s_[art : art + m_eq], axis=1)

    # Phase 2: the real objective, expressed in terms of the non-basic columns.
    n_cols = n + m_ub
    tab[-1] = 0.0
    tab[-1, :n] = c
    for row, col in enumerate(basis):
        if tab[-1, col] != 0.0:
            tab[-1] -= tab[-1, col] * tab[row]
    _run(tab, basis, n_cols, max_pivots)

    # Re-solve the final basis against the original rows: long pivot
    # sequences leave round-off in the tableau's right-hand side.
    x = np.zeros(n_cols)
    B = original[:, basis]
    x_b = np.linalg.lstsq(B, np.concatenate([b_ub[:m_ub], b_eq[:m_eq]]), rcond=None)[0]
    x[basis] = x_b
    x = x[:n]
    x[np.abs(x) < TOL] = 0.0
    return x, float(c @ x)
