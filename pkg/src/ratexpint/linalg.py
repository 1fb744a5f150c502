"""Sparse and small-dense linear algebra kernels.

This module is the computational substrate for the rest of the package:
CSR operators, the scaling-and-squaring matrix exponential, phi-functions
of small matrices, and Gram-Schmidt orthogonalization.

Dense matrices and vectors are plain numpy arrays throughout; complex
inputs are supported everywhere.
"""

from __future__ import annotations

import hashlib
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

#: Dimension cap for dense kernels. Krylov compressions in this package stay
#: well below it; the cap guards against accidentally densifying a PDE operator.
SMALL_MATRIX_CAP = 512

#: Largest phi-function index supported by :func:`phi_dense`.
MAX_PHI_INDEX = 8

#: Relative threshold below which Gram-Schmidt declares an invariant subspace.
BREAKDOWN_RTOL = 1e-12


class DimensionMismatch(ValueError):
    pass


class SparseOperator:
    """Real sparse matrix in CSR form, optionally tagged as symmetric.

    Instances are immutable after construction and safe for concurrent reads.
    """

    __slots__ = ("n", "_csr", "symmetric", "_fingerprint")

    def __init__(self, csr: sp.csr_matrix, symmetric: bool = False):
        csr = sp.csr_matrix(csr)
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"operator must be square, got {csr.shape}")
        if not np.issubdtype(csr.dtype, np.floating):
            csr = csr.astype(np.float64)
        if not np.all(np.isfinite(csr.data)):
            raise ValueError("operator entries must be finite")
        csr.sort_indices()
        self.n = csr.shape[0]
        self._csr = csr
        self.symmetric = bool(symmetric)
        self._fingerprint = None

    # CSR array views
    @property
    def row_ptr(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_idx(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    def tocsr(self) -> sp.csr_matrix:
        return self._csr

    def tocsc(self) -> sp.csc_matrix:
        return self._csr.tocsc()

    def todense(self) -> np.ndarray:
        return self._csr.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"operator is {self.n}-dim, vector is {x.shape[0]}-dim")
        return self._csr @ x

    def norm_inf(self) -> float:
        """Infinity norm; for the symmetric operators here it bounds the spectral radius."""
        return float(abs(self._csr).sum(axis=1).max()) if self.nnz else 0.0

    @property
    def fingerprint(self) -> str:
        """Stable content hash, used to key factorization caches."""
        if self._fingerprint is None:
            h = hashlib.sha1()
            h.update(np.int64(self.n).tobytes())
            h.update(self._csr.indptr.tobytes())
            h.update(self._csr.indices.tobytes())
            h.update(self._csr.data.tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def check_symmetry(self, rtol: float = 1e-12) -> bool:
        d = self._csr - self._csr.T
        scale = max(1.0, float(abs(self._csr).max()))
        return abs(d).max() <= rtol * scale if d.nnz else True

    @classmethod
    def identity(cls, n: int) -> "SparseOperator":
        return cls(sp.identity(n, format="csr"), symmetric=True)

    @classmethod
    def zeros(cls, n: int) -> "SparseOperator":
        return cls(sp.csr_matrix((n, n)), symmetric=True)

    @classmethod
    def from_dense(cls, a: np.ndarray, symmetric: bool = False) -> "SparseOperator":
        return cls(sp.csr_matrix(np.asarray(a, dtype=np.float64)), symmetric=symmetric)

    def scaled(self, factor: float) -> "SparseOperator":
        return SparseOperator(self._csr * float(factor), symmetric=self.symmetric)

    def __repr__(self):
        return f"SparseOperator(n={self.n}, nnz={self.nnz}, symmetric={self.symmetric})"


def spmv(op: SparseOperator, x: np.ndarray) -> np.ndarray:
    """y = A x in working precision."""
    return op.matvec(x)


# ---------------------------------------------------------------------------
# Dense matrix exponential: diagonal Pade with scaling and squaring.
# Degree switches at the usual double-precision 1-norm thresholds; degree 13
# with norm-threshold scaling handles everything above them.
# ---------------------------------------------------------------------------

_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
         960960.0, 16380.0, 182.0, 1.0),
}

_PADE_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_uv(a: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE_COEFFS[degree]
    n = a.shape[0]
    eye = np.eye(n, dtype=a.dtype)
    a2 = a @ a
    if degree == 13:
        a4 = a2 @ a2
        a6 = a2 @ a4
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye)
        return u, v
    powers = [eye, a2]
    for _ in range((degree - 1) // 2 - 1):
        powers.append(powers[-1] @ a2)
    u = sum(b[2 * k + 1] * powers[k] for k in range((degree + 1) // 2))
    v = sum(b[2 * k] * powers[k] for k in range((degree + 1) // 2))
    return a @ u, v


def dense_expm(z: np.ndarray) -> np.ndarray:
    """Matrix exponential of a small dense matrix.

    Raises
    ------
    ValueError
        If the input contains non-finite entries or the scaling/squaring
        phase overflows.
    """
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {z.shape}")
    m = z.shape[0]
    if m == 0:
        return np.zeros((0, 0), dtype=z.dtype)
    if not np.all(np.isfinite(z)):
        raise ValueError("matrix exponential of non-finite input")
    dtype = np.complex128 if np.iscomplexobj(z) else np.float64
    a = z.astype(dtype, copy=True)

    norm = float(np.linalg.norm(a, 1))
    squarings = 0
    degree = 13
    for d in (3, 5, 7, 9):
        if norm <= _PADE_THETA[d]:
            degree = d
            break
    if degree == 13 and norm > _PADE_THETA[13]:
        squarings = int(np.ceil(np.log2(norm / _PADE_THETA[13])))
        a /= 2.0 ** squarings

    u, v = _pade_uv(a, degree)
    try:
        r = sla.solve(v - u, v + u)
    except sla.LinAlgError as exc:  # pragma: no cover - Pade denominator singular
        raise ValueError("Pade denominator is singular") from exc
    for _ in range(squarings):
        r = r @ r
        if not np.all(np.isfinite(r)):
            raise ValueError("overflow during squaring phase of the matrix exponential")
    return r


def expm_action_dense(z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """e^Z v through the dense exponential; brute-force oracle helper."""
    return dense_expm(z) @ v


# ---------------------------------------------------------------------------
# phi-functions of small matrices.
# ---------------------------------------------------------------------------

def phi_dense(z: np.ndarray, k: int) -> np.ndarray:
    """phi_k(Z) for a small dense matrix Z.

    phi_0 = exp; higher indices come from one block-augmented exponential
    (nilpotent shift blocks appended to Z) so that no linear solves with a
    possibly singular Z are needed. The augmented matrix has dimension
    (k+1) * m for an m-by-m input.
    """
    if k < 0:
        raise ValueError("phi index must be >= 0")
    if k > MAX_PHI_INDEX:
        raise ValueError(f"phi index {k} exceeds the configured maximum {MAX_PHI_INDEX}")
    z = np.asarray(z)
    if z.ndim == 0:
        return phi_dense(z.reshape(1, 1), k)[0, 0]
    m = z.shape[0]
    if m > SMALL_MATRIX_CAP:
        raise ValueError(f"matrix dimension {m} exceeds the small-matrix cap {SMALL_MATRIX_CAP}")
    if k == 0:
        return dense_expm(z)
    return phi_dense_all(z, k)[k]


def phi_dense_all(z: np.ndarray, kmax: int) -> list[np.ndarray]:
    """[phi_0(Z), ..., phi_kmax(Z)] from a single augmented exponential."""
    z = np.asarray(z)
    m = z.shape[0]
    dtype = np.complex128 if np.iscomplexobj(z) else np.float64
    dim = m * (kmax + 1)
    w = np.zeros((dim, dim), dtype=dtype)
    w[:m, :m] = z
    eye = np.eye(m, dtype=dtype)
    for j in range(kmax):
        w[j * m:(j + 1) * m, (j + 1) * m:(j + 2) * m] = eye
    e = dense_expm(w)
    return [e[:m, j * m:(j + 1) * m].copy() for j in range(kmax + 1)]


def phi_column_stack(s: np.ndarray, h: float, payload: np.ndarray, kmax: int) -> np.ndarray:
    """Columns [h^1 phi_1(hS) b, ..., h^kmax phi_kmax(hS) b] for one vector b.

    Uses the (m + kmax)-dimensional augmented exponential: the payload sits in
    the first column of the coupling block and a nilpotent Jordan block shifts
    it through successive phi indices.
    """
    s = np.asarray(s)
    m = s.shape[0]
    dtype = np.promote_types(np.promote_types(s.dtype, payload.dtype), np.float64)
    dim = m + kmax
    w = np.zeros((dim, dim), dtype=dtype)
    w[:m, :m] = s
    w[:m, m] = payload
    for j in range(kmax - 1):
        w[m + j, m + j + 1] = 1.0
    e = dense_expm(h * w)
    return e[:m, m:]


# ---------------------------------------------------------------------------
# Orthogonalization.
# ---------------------------------------------------------------------------

class OrthResult(NamedTuple):
    v: np.ndarray | None   # None on happy breakdown
    h: np.ndarray          # projection coefficients onto the existing basis
    beta: float            # residual norm (the Hessenberg subdiagonal candidate)
    breakdown: bool


def orthogonal_extend(basis: np.ndarray, x: np.ndarray, reorth: int = 1) -> OrthResult:
    """Orthogonalize x against the columns of `basis` (classical Gram-Schmidt).

    With one reorthogonalization pass this is the usual "twice is enough"
    scheme. On exit x = basis @ h + beta * v with v unit-norm and orthogonal
    to the basis; beta below the breakdown threshold signals an invariant
    subspace and returns v as None.

    Parameters
    ----------
    basis : (n, m) array with orthonormal columns; m may be zero.
    x : length-n vector.
    reorth : number of reorthogonalization passes after the first projection.
    """
    x = np.asarray(x)
    n = x.shape[0]
    if basis.ndim != 2 or basis.shape[0] != n:
        raise DimensionMismatch("basis/vector dimension mismatch")
    m = basis.shape[1]
    norm0 = float(np.linalg.norm(x))
    w = x.astype(np.promote_types(basis.dtype, x.dtype), copy=True)
    h = np.zeros(m, dtype=w.dtype)
    for _ in range(1 + max(0, reorth)):
        if m == 0:
            break
        c = basis.conj().T @ w
        w -= basis @ c
        h += c
    beta = float(np.linalg.norm(w))
    if beta <= BREAKDOWN_RTOL * max(norm0, 1e-300):
        return OrthResult(None, h, beta, True)
    return OrthResult(w / beta, h, beta, False)
