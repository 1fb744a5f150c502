"""Shifted linear system solvers.

Every finite-pole rational Krylov step needs one solve with
(xi I + alpha A) for a complex pole xi and a positive operator scale alpha.
Poles and scales repeat across Krylov iterations and time steps, so direct
factorizations (and iterative preconditioners) are cached per
(pole, scale, operator) key. The block variant eliminates the small
Jordan tail of the augmented operator first and back-substitutes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .amg import AmgPreconditioner, build_aggregates
from .linalg import SparseOperator

PRECONDITIONERS = ("none", "ilu0", "aggregation-amg")


class SolverError(RuntimeError):
    pass


class IterativeDivergence(SolverError):
    """Raised when callers insist on a converged solve that was not reached."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class ShiftedSystemKey:
    """Identity of one shifted system (xi I + alpha A)."""

    pole: complex
    scale: float
    operator_id: str

    @classmethod
    def make(cls, op: SparseOperator, pole: complex, scale: float) -> "ShiftedSystemKey":
        return cls(pole=complex(pole), scale=float(scale), operator_id=op.fingerprint)


@dataclass
class SolverConfig:
    mode: str = "direct"                 # "direct" | "iterative"
    tolerance: float = 1e-7              # relative residual target, iterative mode
    max_iterations: int = 400
    preconditioner: str = "ilu0"         # "none" | "ilu0" | "aggregation-amg"
    amg_levels: int = 4

    def __post_init__(self):
        if self.mode not in ("direct", "iterative"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.tolerance <= 0:
            raise ValueError("solver tolerance must be positive")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveInfo:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool = True


def shifted_matrix(op: SparseOperator, pole: complex, scale: float) -> sp.csr_matrix:
    """(xi I + alpha A) as a sparse matrix; complex dtype iff the pole is complex."""
    pole = complex(pole)
    dtype = np.complex128 if pole.imag != 0 else np.float64
    shift = pole if pole.imag != 0 else pole.real
    a = op.tocsr().astype(dtype) * scale
    return (a + sp.identity(op.n, format="csr", dtype=dtype) * shift).tocsr()


#: Fill-reducing orderings accepted by :func:`factorize` (SuperLU names).
ORDERINGS = {"colamd": "COLAMD", "amd": "MMD_AT_PLUS_A", "natural": "NATURAL"}


class Factorization:
    """Sparse LU of one shifted system, reusable across right-hand sides."""

    __slots__ = ("key", "_lu", "n", "dtype")

    def __init__(self, key: ShiftedSystemKey, matrix: sp.csr_matrix,
                 ordering: str = "colamd"):
        if ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {ordering!r}; expected one of {tuple(ORDERINGS)}")
        self.key = key
        self.n = matrix.shape[0]
        self.dtype = matrix.dtype
        try:
            self._lu = spla.splu(matrix.tocsc(), permc_spec=ORDERINGS[ordering])
        except RuntimeError as exc:
            raise SolverError(
                f"factorization of (xi I + alpha A) failed for pole {key.pole}: {exc}; "
                "the pole may coincide with a negated eigenvalue") from exc

    @property
    def permutation(self):
        return self._lu.perm_r, self._lu.perm_c

    @property
    def lower(self):
        return self._lu.L

    @property
    def upper(self):
        return self._lu.U

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if rhs.shape[0] != self.n:
            raise ValueError("right-hand side dimension mismatch")
        if np.iscomplexobj(rhs) and not np.issubdtype(self.dtype, np.complexfloating):
            return self._lu.solve(np.ascontiguousarray(rhs.real)) \
                + 1j * self._lu.solve(np.ascontiguousarray(rhs.imag))
        return self._lu.solve(rhs.astype(self.dtype, copy=False))


class _Preconditioner:
    """Cached preconditioner (plus the assembled matrix) for one shifted system."""

    def __init__(self, kind: str, matrix: sp.csr_matrix, amg_levels: int,
                 aggregates: Optional[list] = None):
        self.kind = kind
        self.matrix = matrix
        if kind == "none":
            self.op = None
        elif kind == "ilu0":
            ilu = spla.spilu(matrix.tocsc(), drop_tol=1e-4, fill_factor=10)
            self.op = spla.LinearOperator(matrix.shape, matvec=ilu.solve, dtype=matrix.dtype)
        elif kind == "aggregation-amg":
            self.op = AmgPreconditioner(matrix, max_levels=amg_levels,
                                        aggregates=aggregates).as_linear_operator()
        else:  # pragma: no cover
            raise ValueError(kind)


class SolverCache:
    """Per-process cache of factorizations and preconditioners.

    Lookups are synchronized and single-flight: concurrent requests for the
    same key perform the numeric work exactly once. There is no eviction;
    call :meth:`clear` explicitly.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._factorizations: dict[ShiftedSystemKey, Factorization] = {}
        self._preconditioners: dict[tuple, _Preconditioner] = {}
        self._aggregates: dict[tuple, list] = {}
        self._building: dict = {}
        self.numeric_factorizations = 0
        self.hits = 0

    def clear(self):
        with self._lock:
            self._factorizations.clear()
            self._preconditioners.clear()
            self._aggregates.clear()
            self._building.clear()
            self.numeric_factorizations = 0
            self.hits = 0

    def _single_flight(self, table: dict, key, build):
        with self._lock:
            entry = table.get(key)
            if entry is not None:
                self.hits += 1
                return entry
            gate = self._building.setdefault(key, threading.Lock())
        with gate:
            with self._lock:
                entry = table.get(key)
                if entry is not None:
                    self.hits += 1
                    return entry
            entry = build()
            with self._lock:
                table[key] = entry
                self._building.pop(key, None)
            return entry

    def factorization(self, op: SparseOperator, key: ShiftedSystemKey,
                      ordering: str = "colamd") -> Factorization:
        def build():
            fact = Factorization(key, shifted_matrix(op, key.pole, key.scale), ordering)
            with self._lock:
                self.numeric_factorizations += 1
            return fact

        return self._single_flight(self._factorizations, key, build)

    def aggregates(self, op: SparseOperator, levels: int) -> list:
        """Aggregation maps shared by every shifted system of one operator."""
        akey = ("agg", op.fingerprint, levels)

        def build():
            return build_aggregates(op.tocsr(), max_levels=levels)

        return self._single_flight(self._aggregates, akey, build)

    def preconditioner(self, op: SparseOperator, key: ShiftedSystemKey,
                       cfg: SolverConfig) -> _Preconditioner:
        pkey = (key, cfg.preconditioner, cfg.amg_levels)

        def build():
            aggregates = None
            if cfg.preconditioner == "aggregation-amg":
                aggregates = self.aggregates(op, cfg.amg_levels)
            return _Preconditioner(cfg.preconditioner,
                                   shifted_matrix(op, key.pole, key.scale),
                                   cfg.amg_levels, aggregates=aggregates)

        return self._single_flight(self._preconditioners, pkey, build)


def factorize(op: SparseOperator, key: ShiftedSystemKey,
              cache: Optional[SolverCache] = None,
              ordering: str = "colamd") -> Factorization:
    """LU-factorize (xi I + alpha A) with a fill-reducing ordering."""
    if cache is not None:
        return cache.factorization(op, key, ordering)
    return Factorization(key, shifted_matrix(op, key.pole, key.scale), ordering)


def solve_direct(fact: Factorization, rhs: np.ndarray) -> np.ndarray:
    """Forward/backward substitution with a cached factorization."""
    return fact.solve(rhs)


def solve_iterative(op: SparseOperator, key: ShiftedSystemKey, rhs: np.ndarray,
                    cfg: SolverConfig, cache: Optional[SolverCache] = None) -> SolveInfo:
    """Preconditioned Krylov solve of (xi I + alpha A) x = rhs.

    CG for real poles (the system is Hermitian positive definite), BiCGStab
    for complex poles. Requires Re(xi) > 0; indefinite shifts belong on the
    direct path. Non-convergence returns the best iterate with
    ``converged=False``.
    """
    if complex(key.pole).real <= 0:
        raise SolverError(
            f"iterative path requires Re(pole) > 0, got {key.pole}; use the direct solver")
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return SolveInfo(np.zeros_like(rhs), 0, 0.0, True)
    if cache is not None:
        entry = cache.preconditioner(op, key, cfg)
    else:
        entry = _Preconditioner(cfg.preconditioner,
                                shifted_matrix(op, key.pole, key.scale), cfg.amg_levels)
    matrix, precond = entry.matrix, entry.op
    if np.iscomplexobj(rhs) and matrix.dtype != np.complex128:
        matrix = matrix.astype(np.complex128)
    if precond is not None and np.iscomplexobj(rhs) and precond.dtype != np.complex128:
        base = precond
        precond = spla.LinearOperator(matrix.shape, dtype=np.complex128,
                                      matvec=lambda v: base @ v.real + 1j * (base @ v.imag))

    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    # CG needs a Hermitian positive definite preconditioner; the pivoted
    # incomplete LU is not symmetric, so it rides with BiCGStab instead.
    hermitian = complex(key.pole).imag == 0 and cfg.preconditioner in ("none", "aggregation-amg")
    method = spla.cg if hermitian else spla.bicgstab
    x, info = method(matrix, rhs, rtol=cfg.tolerance, atol=0.0,
                     maxiter=cfg.max_iterations, M=precond, callback=count)
    residual = float(np.linalg.norm(rhs - matrix @ x)) / bnorm
    converged = info == 0 and residual <= cfg.tolerance * 10
    return SolveInfo(x=x, iterations=iterations, residual=residual, converged=converged)


def solve_jordan_tail(pole: complex, rhs_tail: np.ndarray) -> np.ndarray:
    """Solve (xi I_p - J_p) x = xi * rhs_tail by back-substitution.

    J_p is the nilpotent upper Jordan block, so the system is upper
    bidiagonal with diagonal xi and superdiagonal -1.
    """
    p = rhs_tail.shape[0]
    if p == 0:
        return rhs_tail
    if pole == 0:
        raise SolverError("pole 0 makes the Jordan tail singular")
    x = np.zeros(p, dtype=np.result_type(rhs_tail.dtype, np.asarray(pole).dtype, np.float64))
    x[p - 1] = rhs_tail[p - 1]
    for i in range(p - 2, -1, -1):
        x[i] = rhs_tail[i] + x[i + 1] / pole
    return x


class ShiftedSolver:
    """Front end used by the Krylov engine: solves against one operator
    under varying poles and scales, tracking per-solve residuals.
    """

    def __init__(self, op: SparseOperator, config: Optional[SolverConfig] = None,
                 cache: Optional[SolverCache] = None):
        self.op = op
        self.config = config or SolverConfig()
        self.cache = cache if cache is not None else SolverCache()
        self.solve_log: list[SolveInfo] = []
        self._matrices: dict[tuple, sp.csr_matrix] = {}

    def _matrix(self, pole: complex, scale: float) -> sp.csr_matrix:
        mkey = (complex(pole), float(scale))
        mat = self._matrices.get(mkey)
        if mat is None:
            mat = shifted_matrix(self.op, pole, scale)
            self._matrices[mkey] = mat
        return mat

    def solve_shifted(self, pole: complex, scale: float, rhs: np.ndarray) -> np.ndarray:
        key = ShiftedSystemKey.make(self.op, pole, scale)
        if self.config.mode == "direct":
            fact = factorize(self.op, key, self.cache)
            x = solve_direct(fact, rhs)
            bnorm = float(np.linalg.norm(rhs))
            res = 0.0
            if bnorm > 0:
                res = float(np.linalg.norm(rhs - self._matrix(pole, scale) @ x)) / bnorm
            info = SolveInfo(x=x, iterations=0, residual=res, converged=True)
        else:
            info = solve_iterative(self.op, key, rhs, self.config, self.cache)
            if not info.converged:
                raise IterativeDivergence(
                    f"iterative solve for pole {pole} stalled at residual {info.residual:.3e} "
                    f"after {info.iterations} iterations", info)
        self.solve_log.append(info)
        return info.x

    def solve_block(self, aug, pole: complex, rhs: np.ndarray) -> np.ndarray:
        """Solve (xi I - A_tilde) x = xi * rhs for the augmented operator.

        The Jordan tail is eliminated first; its solution feeds the coupling
        block into the right-hand side of one shifted solve.
        """
        return block_backsubstitute(aug, pole, rhs, self)


def block_backsubstitute(aug, pole: complex, rhs: np.ndarray,
                         solver: ShiftedSolver) -> np.ndarray:
    """Block solve of the augmented shifted system.

    ``aug`` carries the sparse top block -alpha A, the dense coupling block C
    and an implicit Jordan tail of size p. For p = 0 this reduces to one
    shifted solve with right-hand side xi * rhs.
    """
    n, p = aug.n, aug.p
    if rhs.shape[0] != n + p:
        raise ValueError(f"expected right-hand side of length {n + p}, got {rhs.shape[0]}")
    if p == 0:
        return solver.solve_shifted(pole, aug.alpha, pole * rhs)
    if pole == 0:
        raise SolverError("pole 0 is singular on the augmented system")
    x_tail = solve_jordan_tail(pole, rhs[n:])
    top_rhs = pole * rhs[:n] + aug.C @ x_tail
    x_top = solver.solve_shifted(pole, aug.alpha, top_rhs)
    out = np.zeros(n + p, dtype=np.result_type(x_top.dtype, x_tail.dtype))
    out[:n] = x_top
    out[n:] = x_tail
    return out
