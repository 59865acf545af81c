"""Dense two-phase primal simplex with Bland's rule.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``,
``x >= 0``. Sized for the small LPs in this package (a few hundred columns).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9
MAX_ITER = 1_000_000


class NumericalFailure(RuntimeError):
    pass


class Infeasible(ValueError):
    pass


class Unbounded(ValueError):
    pass


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    iterations: int
    basis: list[int]


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])


def _run(T: np.ndarray, basis: list[int], n_cols: int, allowed: np.ndarray, it: int, tol: float) -> int:
    """Iterate on tableau ``T`` whose last row is the reduced-cost row."""
    m = T.shape[0] - 1
    while True:
        if it >= MAX_ITER:
            raise NumericalFailure(f"simplex exceeded {MAX_ITER} iterations")
        red = T[m, :n_cols]
        entering = np.flatnonzero((red < -tol) & allowed)
        if entering.size == 0:
            return it
        col = int(entering[0])  # Bland: lowest index
        colv = T[:m, col]
        pos = colv > tol
        if not pos.any():
            raise Unbounded("objective unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))  # Bland: lowest basic index
        _pivot(T, row, col)
        basis[row] = col
        it += 1


def solve(
    c: np.ndarray,
    A_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    tol: float = TOL,
) -> LpResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # Columns: structural | slacks | artificials. Rows are flipped so rhs >= 0;
    # a <= row with rhs >= 0 starts with its slack basic, every other row
    # gets an artificial.
    A = np.vstack([A_ub, A_eq])
    b = np.concatenate([b_ub, b_eq])
    S = np.zeros((m, m_ub))
    S[np.arange(m_ub), np.arange(m_ub)] = 1.0
    flip = b < 0
    A[flip] *= -1
    S[flip] *= -1
    b = np.abs(b)
    need_art = [i for i in range(m) if i >= m_ub or flip[i]]
    Art = np.zeros((m, len(need_art)))
    for k, i in enumerate(need_art):
        Art[i, k] = 1.0
    n_tot = n + m_ub + len(need_art)
    T = np.zeros((m + 1, n_tot + 1))
    T[:m, :n] = A
    T[:m, n : n + m_ub] = S
    T[:m, n + m_ub : n_tot] = Art
    T[:m, -1] = b
    basis = [0] * m
    for i in range(m_ub):
        if not flip[i]:
            basis[i] = n + i
    for k, i in enumerate(need_art):
        basis[i] = n + m_ub + k

    it = 0
    art_cols = np.arange(n + m_ub, n_tot)
    if need_art:
        T[m, :] = 0.0
        T[m, art_cols] = 1.0
        for i in need_art:
            T[m] -= T[i]
        allowed = np.ones(n_tot, dtype=bool)
        it = _run(T, basis, n_tot, allowed, it, tol)
        if -T[m, -1] > tol * max(1.0, np.abs(b).max(initial=0.0)) * 10:
            raise Infeasible(f"phase one ended with infeasibility {-T[m, -1]:.3g}")
        # drive remaining artificials out of the basis where possible
        for r in range(m):
            if basis[r] >= n + m_ub:
                nz = np.flatnonzero(np.abs(T[r, : n + m_ub]) > tol)
                if nz.size:
                    col = int(nz[0])
                    _pivot(T, r, col)
                    basis[r] = col
    allowed = np.ones(n_tot, dtype=bool)
    allowed[art_cols] = False
    T[m, :] = 0.0
    T[m, :n] = c
    for r in range(m):
        j = basis[r]
        if j < n and c[j] != 0.0:
            T[m] -= c[j] * T[r]
    it = _run(T, basis, n_tot, allowed, it, tol)

    x_full = np.zeros(n_tot)
    x_full[basis] = T[:m, -1]
    x = _polish(A, S, Art, b, basis, n, m_ub, x_full)
    x = np.where(np.abs(x) < tol, 0.0, x)
    x = np.maximum(x, 0.0)
    return LpResult(x=x, objective=float(c @ x), iterations=it, basis=list(basis))


def _polish(A, S, Art, b, basis, n, m_ub, x_full):
    """Re-solve the basic system directly to shed accumulated pivot error."""
    M = np.hstack([A, S, Art])
    Bm = M[:, basis]
    try:
        xb = np.linalg.solve(Bm, b)
    except np.linalg.LinAlgError:
        return x_full[:n]
    if np.any(xb < -1e-7):
        return x_full[:n]
    out = np.zeros(M.shape[1])
    out[basis] = xb
    return out[:n]
