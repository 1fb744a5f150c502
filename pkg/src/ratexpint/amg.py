"""Aggregation-based algebraic multigrid preconditioner.

A deliberately small stand-in for production AMG packages: double pairwise
aggregation with piecewise-constant transfer operators, damped-Jacobi
smoothing, and a V-cycle. It handles the complex-shifted M-matrices
(xi I + alpha A) arising from the rational Krylov solves; thanks to the
positive-real shift these systems are well inside its comfort zone.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def _pairwise_aggregates(a: sp.csr_matrix) -> np.ndarray:
    """Strength-based pairwise matching, fully vectorized.

    Repeated rounds of mutual-strongest-neighbor matching; a symmetric
    deterministic jitter breaks the ties of constant-coefficient stencils
    (with exactly equal strengths no mutual pairs would form). Leftovers
    join their partner's pair, isolated nodes stay singletons.
    """
    n = a.shape[0]
    coo = a.tocoo()
    offd = coo.row != coo.col
    rows_all = coo.row[offd].astype(np.int64)
    cols_all = coo.col[offd].astype(np.int64)
    vals_all = np.abs(coo.data[offd]).astype(np.float64)
    # symmetric tie-break jitter, deterministic in the index pair
    key = (rows_all + 1.0) * (cols_all + 1.0)
    jitter = np.abs(np.sin(key * 12.9898 + (rows_all + cols_all) * 0.1))
    vals_all = vals_all * (1.0 + 1e-6 * jitter)

    agg = -np.ones(n, dtype=np.int64)
    idx = np.arange(n)
    next_agg = 0
    partner_last = -np.ones(n, dtype=np.int64)
    for _ in range(3):
        free = agg < 0
        emask = free[rows_all] & free[cols_all]
        rows, cols, vals = rows_all[emask], cols_all[emask], vals_all[emask]
        if rows.size == 0:
            break
        partner = -np.ones(n, dtype=np.int64)
        order = np.lexsort((vals, rows))
        rows_s, cols_s = rows[order], cols[order]
        last = np.r_[rows_s[1:] != rows_s[:-1], True]
        partner[rows_s[last]] = cols_s[last]
        partner_last[partner >= 0] = partner[partner >= 0]
        has = partner >= 0
        safe = np.where(has, partner, 0)
        mutual = has & (partner[safe] == idx) & (idx < safe)
        leads = idx[mutual]
        if leads.size == 0:
            break
        agg[leads] = next_agg + np.arange(leads.size)
        agg[partner[leads]] = agg[leads]
        next_agg += leads.size
    # leftovers: adopt the aggregate of their strongest neighbor if it has one
    open_nodes = idx[agg < 0]
    if open_nodes.size:
        p = partner_last[open_nodes]
        ok = (p >= 0) & (agg[np.where(p >= 0, p, 0)] >= 0)
        agg[open_nodes[ok]] = agg[p[ok]]
    rest = idx[agg < 0]
    agg[rest] = next_agg + np.arange(rest.size)
    return agg


def _aggregate_level(a: sp.csr_matrix, rounds: int = 2) -> np.ndarray:
    """Compose `rounds` pairwise matchings (aggregates of size up to 2^rounds)."""
    n = a.shape[0]
    agg = np.arange(n, dtype=np.int64)
    current = a
    for _ in range(rounds):
        step = _pairwise_aggregates(current.tocsr())
        agg = step[agg]
        nc = int(step.max()) + 1
        p = sp.csr_matrix((np.ones(n, dtype=current.dtype), (np.arange(n), agg)),
                          shape=(n, int(agg.max()) + 1))
        current = (p.T @ a @ p).tocsr()
        if nc <= 1:
            break
    return agg


def build_aggregates(matrix, max_levels: int = 3, coarse_size: int = 600) -> list:
    """Aggregation maps for every level, computed once per operator.

    Matching only looks at off-diagonal strengths, which a diagonal shift
    does not touch and a positive scale does not reorder, so one hierarchy
    of aggregates serves every shifted system (xi I + alpha A) of the same
    operator. Tentative (unsmoothed) Galerkin products supply the coarse
    matrices that guide deeper levels.
    """
    a = sp.csr_matrix(matrix)
    maps = []
    while len(maps) < max_levels - 1 and a.shape[0] > coarse_size:
        agg = _aggregate_level(a)
        nc = int(agg.max()) + 1
        if nc >= a.shape[0]:
            break
        n = a.shape[0]
        p = sp.csr_matrix((np.ones(n, dtype=a.dtype), (np.arange(n), agg)),
                          shape=(n, nc))
        maps.append(agg)
        a = (p.T @ a @ p).tocsr()
    return maps


class _Level:
    __slots__ = ("a", "p", "dinv")

    def __init__(self, a: sp.csr_matrix, p, dinv):
        self.a = a
        self.p = p
        self.dinv = dinv


class AmgPreconditioner:
    """V-cycle preconditioner for a fixed sparse matrix.

    Parameters
    ----------
    matrix : sparse matrix (real or complex), diagonally nonzero.
    max_levels : hierarchy depth including the coarsest level.
    coarse_size : stop coarsening below this size and solve directly.
    omega : damping factor for the Jacobi smoother.
    smooth_steps : pre- and post-smoothing sweeps.
    smooth_prolongator : apply one damped-Jacobi sweep to the tentative
        piecewise-constant prolongator; costs some coarse-operator fill and
        buys near-size-independent convergence on Laplacian-like systems.
    """

    def __init__(self, matrix, max_levels: int = 3, coarse_size: int = 600,
                 omega: float = 0.7, smooth_steps: int = 1,
                 smooth_prolongator: bool = True, aggregates: list | None = None):
        a = sp.csr_matrix(matrix)
        self.omega = float(omega)
        self.smooth_steps = int(smooth_steps)
        self.levels: list[_Level] = []
        self.dtype = a.dtype
        if aggregates is None:
            aggregates = build_aggregates(a, max_levels, coarse_size)
        for agg in aggregates:
            diag = a.diagonal()
            if np.any(diag == 0):
                raise ValueError("AMG smoother requires a nonzero diagonal")
            nc = int(agg.max()) + 1
            n = a.shape[0]
            if agg.shape[0] != n or nc >= n:
                break
            p = sp.csr_matrix((np.ones(n, dtype=a.dtype), (np.arange(n), agg)),
                              shape=(n, nc))
            if smooth_prolongator:
                dinv_a = sp.diags(1.0 / diag) @ a
                p = (p - (2.0 / 3.0) * (dinv_a @ p)).tocsr()
            self.levels.append(_Level(a, p, 1.0 / diag))
            a = (p.T @ a @ p).tocsr()
        self._coarse_lu = spla.splu(a.tocsc())
        self._coarse_n = a.shape[0]

    @property
    def num_levels(self) -> int:
        return len(self.levels) + 1

    def _cycle(self, level: int, b: np.ndarray) -> np.ndarray:
        if level == len(self.levels):
            return self._coarse_lu.solve(b)
        lvl = self.levels[level]
        x = self.omega * lvl.dinv * b
        for _ in range(self.smooth_steps - 1):
            x += self.omega * lvl.dinv * (b - lvl.a @ x)
        r = b - lvl.a @ x
        xc = self._cycle(level + 1, lvl.p.T @ r)
        x = x + lvl.p @ xc
        for _ in range(self.smooth_steps):
            x += self.omega * lvl.dinv * (b - lvl.a @ x)
        return x

    def matvec(self, b: np.ndarray) -> np.ndarray:
        return self._cycle(0, np.asarray(b, dtype=self.dtype))

    def as_linear_operator(self) -> spla.LinearOperator:
        n = self.levels[0].a.shape[0] if self.levels else self._coarse_n
        return spla.LinearOperator((n, n), matvec=self.matvec, dtype=self.dtype)
