"""Rational Krylov approximation of the action of the matrix exponential.

The central objects: an implicitly stored augmented operator whose
exponential action evaluates a whole linear combination of phi-functions in
one go, a rational Arnoldi decomposition extended one pole at a time, the
a-posteriori error estimate that drives subspace adaptivity, and the two
``expmv`` engines (rational with pole sets, polynomial with sub-stepping)
used by the exponential integrators.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .linalg import (SparseOperator, dense_expm, orthogonal_extend,
                     phi_column_stack)
from .poles import INF_POLE, PoleSet, is_infinite
from .solvers import ShiftedSolver

#: Default adaptivity parameters for the rational engine.
RATIONAL_DEFAULTS = {"tol": 1e-8, "m_min": 5, "check_cadence": 5}
#: Default adaptivity parameters for the polynomial baseline.
POLYNOMIAL_DEFAULTS = {"tol": 1e-8, "m_min": 10, "m_max": 128, "check_cadence": 5}

#: Sub-step sizes below this fraction of the requested step abort the
#: polynomial engine.
SUBSTEP_UNDERFLOW = 1e-12


class KrylovError(RuntimeError):
    pass


class SingularProjection(KrylovError):
    """The square projected system K_m is singular; extend with a polynomial
    step and retry."""


class ToleranceNotReached(KrylovError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# Augmented operator.
# ---------------------------------------------------------------------------

@dataclass
class AugmentedOperator:
    """Block upper-triangular operator [[-alpha A, C], [0, J_p]].

    J_p is the nilpotent upper Jordan block of size p; C holds the
    phi-combination payload columns in reversed order [c_p, ..., c_1]. The
    operator is applied matrix-free: the (n+p)^2 matrix is never formed
    except by :meth:`dense` for small oracles. Its spectrum is the spectrum
    of -alpha A together with the eigenvalue 0 of multiplicity p.
    """

    op: SparseOperator
    alpha: float
    C: np.ndarray  # (n, p)

    @property
    def n(self) -> int:
        return self.op.n

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @property
    def dim(self) -> int:
        return self.n + self.p

    def apply(self, x: np.ndarray) -> np.ndarray:
        n, p = self.n, self.p
        top = -self.alpha * self.op.matvec(x[:n])
        if p:
            top = top + self.C @ x[n:]
        out = np.zeros(self.dim, dtype=np.result_type(top.dtype, x.dtype))
        out[:n] = top
        if p > 1:
            out[n:n + p - 1] = x[n + 1:]
        return out

    def norm_bound(self) -> float:
        """Cheap upper bound on the 2-norm, for term-decay heuristics."""
        bound = abs(self.alpha) * self.op.norm_inf()
        if self.p:
            bound += float(np.abs(self.C).max(initial=0.0)) * self.p + 1.0
        return bound

    def dense(self) -> np.ndarray:
        n, p = self.n, self.p
        dtype = np.result_type(self.C.dtype, np.float64) if p else np.float64
        a = np.zeros((n + p, n + p), dtype=dtype)
        a[:n, :n] = -self.alpha * self.op.todense()
        if p:
            a[:n, n:] = self.C
            for j in range(p - 1):
                a[n + j, n + j + 1] = 1.0
        return a


def assemble_augmented(op: SparseOperator, alpha: float,
                       c_vectors: Sequence[np.ndarray]) -> tuple[AugmentedOperator, np.ndarray]:
    """Build the augmented operator and start vector for payload [c_0, ..., c_p].

    The start vector is (c_0; e_p) with e_p the last unit vector of the
    Jordan tail; the exponential action then satisfies
    e^{h A~}(c_0; e_p) = (sum_k h^k phi_k(-h alpha A) c_k; e^{h J_p} e_p).
    """
    if len(c_vectors) == 0:
        raise ValueError("need at least the c_0 payload vector")
    n = op.n
    for k, c in enumerate(c_vectors):
        if np.shape(c)[0] != n:
            raise ValueError(f"payload c_{k} has length {np.shape(c)[0]}, expected {n}")
    p = len(c_vectors) - 1
    dtype = np.result_type(np.float64, *(np.asarray(c).dtype for c in c_vectors))
    C = np.zeros((n, p), dtype=dtype)
    for k in range(1, p + 1):
        C[:, p - k] = c_vectors[k]  # column order [c_p, ..., c_1]
    aug = AugmentedOperator(op=op, alpha=float(alpha), C=C)
    c_tilde = np.zeros(n + p, dtype=dtype)
    c_tilde[:n] = c_vectors[0]
    if p:
        c_tilde[n + p - 1] = 1.0
    return aug, c_tilde


# ---------------------------------------------------------------------------
# Rational Arnoldi decomposition.
# ---------------------------------------------------------------------------

class RationalDecomposition:
    """Growing rational Arnoldi decomposition A~ V K = V H.

    After m steps the basis has m+1 orthonormal columns (m on happy
    breakdown), H and K are (m+1) x m with upper-Hessenberg structure, and
    the consumed poles are recorded per step. The decomposition mutates in
    place; it is confined to one expmv call and never shared.
    """

    def __init__(self, aug: AugmentedOperator, c_tilde: np.ndarray,
                 capacity: int = 40, dtype=None):
        self.aug = aug
        norm = float(np.linalg.norm(c_tilde))
        if norm == 0:
            raise ValueError("start vector is zero")
        self.start_norm = norm
        if dtype is None:
            dtype = np.result_type(c_tilde.dtype, np.float64)
        capacity = max(4, capacity)
        self.V = np.zeros((aug.dim, capacity + 1), dtype=dtype)
        self.V[:, 0] = c_tilde / norm
        self.H = np.zeros((capacity + 1, capacity), dtype=dtype)
        self.K = np.zeros((capacity + 1, capacity), dtype=dtype)
        self.m = 0
        self.nv = 1
        self.poles_used: list[complex] = []
        self.happy = False

    @property
    def dim(self) -> int:
        return self.aug.dim

    @property
    def beta_last(self) -> float:
        return 0.0 if self.m == 0 else abs(self.H[self.m, self.m - 1])

    def basis(self) -> np.ndarray:
        return self.V[:, :self.nv]

    def hess(self) -> np.ndarray:
        return self.H[:self.m + 1, :self.m]

    def kmat(self) -> np.ndarray:
        return self.K[:self.m + 1, :self.m]

    def _ensure_capacity(self, m_new: int):
        cap = self.H.shape[1]
        if m_new <= cap:
            return
        new_cap = max(2 * cap, m_new)
        V = np.zeros((self.dim, new_cap + 1), dtype=self.V.dtype)
        V[:, :self.V.shape[1]] = self.V
        H = np.zeros((new_cap + 1, new_cap), dtype=self.H.dtype)
        H[:self.H.shape[0], :self.H.shape[1]] = self.H
        K = np.zeros_like(H)
        K[:self.K.shape[0], :self.K.shape[1]] = self.K
        self.V, self.H, self.K = V, H, K

    def _promote_complex(self):
        if not np.issubdtype(self.V.dtype, np.complexfloating):
            self.V = self.V.astype(np.complex128)
            self.H = self.H.astype(np.complex128)
            self.K = self.K.astype(np.complex128)


def start_decomposition(aug: AugmentedOperator, c_tilde: np.ndarray,
                        capacity: int = 40, dtype=None) -> RationalDecomposition:
    return RationalDecomposition(aug, c_tilde, capacity=capacity, dtype=dtype)


def rational_arnoldi_step(d: RationalDecomposition, pole: complex,
                          solver: Optional[ShiftedSolver] = None) -> RationalDecomposition:
    """Extend the decomposition by one step with the given pole.

    An infinite pole is a polynomial step (one operator application); a
    finite pole additionally solves the shifted block system. The
    continuation vector is the newest basis vector. On happy breakdown the
    decomposition is flagged and must not be extended further.
    """
    if d.happy:
        raise KrylovError("decomposition reached an invariant subspace; cannot extend")
    pole = complex(pole) if not is_infinite(pole) else INF_POLE
    finite = not is_infinite(pole)
    if finite and (pole.imag != 0):
        d._promote_complex()
    if finite and solver is None:
        raise ValueError("finite poles require a shifted-system solver")
    d._ensure_capacity(d.m + 1)

    v_cont = d.V[:, d.nv - 1]
    b = d.aug.apply(v_cont)
    if finite:
        x = solver.solve_block(d.aug, pole, b)
    else:
        x = b
    if np.iscomplexobj(x):
        d._promote_complex()

    j = d.m
    res = orthogonal_extend(d.V[:, :d.nv], x, reorth=1)
    d.H[:d.nv, j] = res.h
    d.K[j, j] = 1.0
    if finite:
        d.K[:d.nv, j] += res.h / pole
    if res.breakdown:
        d.happy = True
    else:
        d.H[d.nv, j] = res.beta
        if finite:
            d.K[d.nv, j] += res.beta / pole
        d.V[:, d.nv] = res.v
        d.nv += 1
    d.m += 1
    d.poles_used.append(pole)
    return d


def arnoldi_relation_residual(d: RationalDecomposition) -> float:
    """Frobenius residual of A~ V K - V H, normalized; test/diagnostic helper."""
    if d.m == 0:
        return 0.0
    V = d.basis()
    K = d.kmat()[:d.nv, :]
    H = d.hess()[:d.nv, :]
    AVK = np.column_stack([d.aug.apply(col) for col in (V @ K).T])
    num = np.linalg.norm(AVK - V @ H)
    den = max(d.aug.norm_bound(), 1.0) * max(np.linalg.norm(K), 1.0)
    return float(num / den)


def _square_blocks(d: RationalDecomposition):
    if d.m == 0:
        raise KrylovError("empty decomposition")
    m = d.m
    return d.H[:m, :m], d.K[:m, :m]


def _projected_matrix(d: RationalDecomposition) -> np.ndarray:
    """S = H_m K_m^{-1}, the compression of A~ onto the subspace."""
    import warnings

    H, K = _square_blocks(d)
    with warnings.catch_warnings():
        # singularity is detected from the pivots below and raised as our own
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(K.T)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-14 * max(diag.max(), 1e-300):
        raise SingularProjection(
            "projected system K_m is singular; append a polynomial step and retry")
    return sla.lu_solve((lu, piv), H.T).T


def _approximant_and_estimate(d: RationalDecomposition, h: float):
    """One dense exponential serving both the approximant and the estimate.

    The (m+1)-dimensional bordered matrix [[S, e_1], [0, 0]] yields e^{hS}
    in its exponential's top-left block and h phi_1(hS) e_1 in the last
    column, which is exactly the ingredient of the error estimate.
    """
    m = d.m
    S = _projected_matrix(d)
    bordered = np.zeros((m + 1, m + 1), dtype=S.dtype)
    bordered[:m, :m] = S
    bordered[0, m] = 1.0
    E = dense_expm(h * bordered)
    y = d.start_norm * (d.V[:, :m] @ E[:m, 0])
    beta = d.beta_last
    if beta == 0.0 or h == 0.0:
        return y, 0.0
    _, K = _square_blocks(d)
    w = E[:m, m] / h
    u = sla.solve(K, w)
    estimate = h * d.start_norm * beta * abs(u[m - 1])
    return y, float(estimate)


def evaluate_approximant(d: RationalDecomposition, h: float) -> np.ndarray:
    """norm(c~) V_m e^{h H_m K_m^{-1}} e_1, the subspace approximation of
    e^{h A~} c~."""
    y, _ = _approximant_and_estimate(d, h)
    return y


def error_estimate(d: RationalDecomposition, h: float) -> float:
    """Leading-term a-posteriori estimate of the 2-norm approximation error.

    h * norm(c~) * h_{m+1,m} * |e_m^* K_m^{-1} phi_1(h H_m K_m^{-1}) e_1|;
    zero after happy breakdown. Derived under the convention that the newest
    step used an infinite pole, which the adaptive loop enforces before
    checking.
    """
    if d.beta_last == 0.0:
        return 0.0
    _, est = _approximant_and_estimate(d, h)
    return est


def full_error_expansion(d: RationalDecomposition, h: float, terms: int,
                         return_partials: bool = False):
    """Truncated error series: the estimate's higher-order siblings.

    Accumulates sum_k e_m^* K_m^{-1} phi_k(h S) e_1 (h A~)^{k-1} v_{m+1}
    for k = 1..terms and returns its 2-norm times h norm(c~) h_{m+1,m}.
    With one term this reduces to :func:`error_estimate`.
    """
    if terms < 1:
        raise ValueError("need at least one term")
    beta = d.beta_last
    if beta == 0.0:
        return (0.0, [0.0] * terms) if return_partials else 0.0
    m = d.m
    S = _projected_matrix(d)
    _, K = _square_blocks(d)
    e1 = np.zeros(m, dtype=S.dtype)
    e1[0] = 1.0
    cols = phi_column_stack(S, h, e1, terms)  # columns h^k phi_k(hS) e_1
    scale = h ** -np.arange(1, terms + 1)
    rhs = cols * scale[np.newaxis, :]
    U = sla.solve(K, rhs)
    gammas = U[m - 1, :]
    z = d.V[:, m].astype(np.result_type(S.dtype, d.V.dtype), copy=True)
    acc = np.zeros_like(z)
    prefactor = h * d.start_norm * beta
    partials = []
    for k in range(terms):
        acc = acc + gammas[k] * z
        partials.append(prefactor * float(np.linalg.norm(acc)))
        if k + 1 < terms:
            z = h * d.aug.apply(z)
    result = partials[-1]
    return (result, partials) if return_partials else result


# ---------------------------------------------------------------------------
# Adaptive expmv engines.
# ---------------------------------------------------------------------------

@dataclass
class ExpmvReport:
    """Result and diagnostics of one exponential-action evaluation."""

    vector: np.ndarray
    n: int
    m: int
    estimate: float
    tol: float
    converged: bool
    breakdown: bool = False
    estimate_history: list = field(default_factory=list)
    poles_consumed: list = field(default_factory=list)
    substeps: int = 1
    arnoldi_steps: int = 0
    solver_iterations: list = field(default_factory=list)
    solver_residual_max: float = 0.0
    wall_time: float = 0.0

    @property
    def phi_combination(self) -> np.ndarray:
        """Top block: the requested linear combination of phi-function actions."""
        return self.vector[:self.n]


def _fold_payload(alpha: float, c_vectors: Sequence[np.ndarray], h: float):
    """Absorb the step size into the operator scale and payload.

    e^{h A~(alpha)} (c_0; e_p) has the same top block as
    e^{A~(h alpha)} (c_0; e_p) with c_k scaled by h^k, and the folded form is
    what the pole sets are fitted for: every shifted solve becomes
    (xi I + h alpha A).
    """
    folded = [np.asarray(c_vectors[0])]
    for k in range(1, len(c_vectors)):
        folded.append((h ** k) * np.asarray(c_vectors[k]))
    return alpha * h, folded


def expmv_rational(op: SparseOperator, alpha: float, c_vectors: Sequence[np.ndarray],
                   h: float, pole_set: Optional[PoleSet], solver: Optional[ShiftedSolver],
                   tol: float = RATIONAL_DEFAULTS["tol"],
                   m_min: int = RATIONAL_DEFAULTS["m_min"],
                   m_max: Optional[int] = None,
                   check_cadence: int = RATIONAL_DEFAULTS["check_cadence"],
                   m_hard: Optional[int] = None) -> ExpmvReport:
    """Adaptive rational Krylov evaluation of e^{h A~} c~.

    Finite poles are consumed in order (truncated at ``m_max``); after
    exhaustion the subspace keeps growing with polynomial steps until the
    error estimate meets ``tol``. The estimate is only evaluated every
    ``check_cadence`` iterations past ``m_min``, and a polynomial step is
    inserted before each check when the newest step used a finite pole
    (completing a conjugate pair first so that conjugate-closed sets keep
    real data real).

    Raises
    ------
    ToleranceNotReached
        If the hard subspace cap is hit first; the partial result rides on
        the exception's ``report``.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    t0 = time.perf_counter()
    alpha_eff, folded = _fold_payload(alpha, c_vectors, h)
    aug, c_tilde = assemble_augmented(op, alpha_eff, folded)

    finite_poles = list(pole_set) if pole_set is not None else []
    if m_max is None:
        m_max = len(finite_poles)
    finite_poles = finite_poles[:m_max]
    if m_hard is None:
        m_hard = max(m_max + 128, 64)
    m_hard = min(m_hard, aug.dim)
    m_min = max(1, min(m_min, m_hard))

    complex_data = np.iscomplexobj(c_tilde) or any(p.imag != 0 for p in finite_poles)
    dtype = np.complex128 if complex_data else np.float64
    d = RationalDecomposition(aug, c_tilde, capacity=min(max(2 * m_min, m_max + 8, 40), m_hard),
                              dtype=dtype)

    log_start = len(solver.solve_log) if solver is not None else 0
    pole_ptr = 0

    def next_step():
        nonlocal pole_ptr
        if pole_ptr < len(finite_poles):
            xi = finite_poles[pole_ptr]
            pole_ptr += 1
            rational_arnoldi_step(d, xi, solver)
        else:
            rational_arnoldi_step(d, INF_POLE)

    def settle_for_check():
        """Make the newest step polynomial, finishing a conjugate pair first."""
        if d.happy or not d.poles_used:
            return
        last = d.poles_used[-1]
        if is_infinite(last):
            return
        if (pole_set is not None and pole_ptr < len(finite_poles) and last.imag != 0):
            nxt = finite_poles[pole_ptr]
            if abs(nxt - last.conjugate()) <= 1e-12 * max(abs(nxt), 1.0):
                next_step()
                if d.happy:
                    return
        rational_arnoldi_step(d, INF_POLE)

    history: list[tuple[int, float]] = []
    result = None
    estimate = math.inf
    converged = False

    while True:
        while d.m < m_min and not d.happy and d.m < m_hard:
            next_step()
        settle_for_check()
        if d.happy:
            result = evaluate_approximant(d, 1.0)
            estimate = 0.0
            history.append((d.m, 0.0))
            converged = True
            break
        for _attempt in range(3):
            try:
                result, estimate = _approximant_and_estimate(d, 1.0)
                break
            except SingularProjection:
                if d.m >= m_hard or d.happy:
                    raise
                rational_arnoldi_step(d, INF_POLE)
        history.append((d.m, estimate))
        if estimate <= tol:
            converged = True
            break
        if d.m >= m_hard:
            break
        target = min(d.m + check_cadence, m_hard)
        while d.m < target and not d.happy:
            next_step()

    report = ExpmvReport(
        vector=result, n=op.n, m=d.m, estimate=estimate, tol=tol,
        converged=converged, breakdown=d.happy, estimate_history=history,
        poles_consumed=list(d.poles_used), substeps=1, arnoldi_steps=d.m,
        solver_iterations=[s.iterations for s in solver.solve_log[log_start:]]
        if solver is not None else [],
        solver_residual_max=max((s.residual for s in solver.solve_log[log_start:]),
                                default=0.0) if solver is not None else 0.0,
        wall_time=time.perf_counter() - t0,
    )
    if not converged:
        raise ToleranceNotReached(
            f"error estimate {estimate:.3e} above tolerance {tol:.3e} "
            f"at the hard subspace cap m={d.m}", report)
    return report


def expmv_polynomial(op: SparseOperator, alpha: float, c_vectors: Sequence[np.ndarray],
                     h: float,
                     tol: float = POLYNOMIAL_DEFAULTS["tol"],
                     m_min: int = POLYNOMIAL_DEFAULTS["m_min"],
                     m_max: int = POLYNOMIAL_DEFAULTS["m_max"],
                     check_cadence: int = POLYNOMIAL_DEFAULTS["check_cadence"]) -> ExpmvReport:
    """Polynomial Krylov evaluation of e^{h A~} c~ with time sub-stepping.

    Runs Arnoldi with the same a-posteriori estimate (all poles at
    infinity); if the subspace cap is reached before the estimate meets the
    proportional sub-step budget, the sub-step is halved and the segment
    restarted, composing e^{h A~} = prod e^{theta_i A~}.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    t0 = time.perf_counter()
    alpha_eff, folded = _fold_payload(alpha, c_vectors, h)
    aug, c_tilde = assemble_augmented(op, alpha_eff, folded)
    m_max = min(m_max, aug.dim)
    m_min = max(1, min(m_min, m_max))

    history: list[tuple[int, float]] = []
    w = c_tilde
    done = 0.0
    theta = 1.0
    substeps = 0
    total_steps = 0
    final_estimate = 0.0
    breakdown = False

    while done < 1.0 - 1e-15:
        theta = min(theta, 1.0 - done)
        if theta < SUBSTEP_UNDERFLOW:
            raise KrylovError(f"sub-step underflow: theta={theta:.3e}")
        sub_tol = tol * theta
        d = RationalDecomposition(aug, w, capacity=m_max,
                                  dtype=np.result_type(w.dtype, np.float64))
        accepted = False
        while True:
            while d.m < m_min and not d.happy and d.m < m_max:
                rational_arnoldi_step(d, INF_POLE)
            if d.happy:
                w = evaluate_approximant(d, theta)
                history.append((d.m, 0.0))
                total_steps += d.m
                breakdown = True
                accepted = True
                final_estimate = 0.0
                break
            value, estimate = _approximant_and_estimate(d, theta)
            history.append((d.m, estimate))
            if estimate <= sub_tol:
                w = value
                total_steps += d.m
                final_estimate = estimate
                accepted = True
                break
            if d.m >= m_max:
                total_steps += d.m
                break
            target = min(d.m + check_cadence, m_max)
            while d.m < target and not d.happy:
                rational_arnoldi_step(d, INF_POLE)
        if accepted:
            done += theta
            substeps += 1
        else:
            theta /= 2.0

    return ExpmvReport(
        vector=w, n=op.n, m=total_steps, estimate=final_estimate, tol=tol,
        converged=True, breakdown=breakdown, estimate_history=history,
        poles_consumed=[], substeps=substeps, arnoldi_steps=total_steps,
        solver_iterations=[], wall_time=time.perf_counter() - t0,
    )
