"""Dense linear algebra with deterministic conventions.

Every decomposition returned from here is canonical: eigen/singular vectors
carry the sign rule (largest-magnitude entry nonnegative, lowest index on a
tie) and repeated values get a basis built against e_1, e_2, ... so two runs
on the same input always agree bit for bit.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import linalg as sla
from scipy.stats import ortho_group

from lib.errors import AsymmetricMatrixError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10       # relative singular value cutoff
CLUSTER_TOL = 1e-9     # relative spacing below which values count as repeated
SYMMETRY_TOL = 1e-10
_TIE_TOL = 1e-10       # magnitude tie tolerance for the sign rule
_GS_DROP = 1e-8        # Gram-Schmidt residual below which a seed vector is skipped


# -------------------------
# Types
# -------------------------
@dataclass(frozen=True)
class EconSVD:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    rank: int

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


@dataclass(frozen=True)
class SymEig:
    values: np.ndarray
    vectors: np.ndarray


def as_matrix(A, name: str = "A") -> np.ndarray:
    M = np.asarray(A, dtype=float)
    if M.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {M.shape}")
    if M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return M


def _require_same_shape(U: np.ndarray, Uref: np.ndarray):
    if U.shape != Uref.shape:
        raise ShapeError(f"shape mismatch: {U.shape} vs {Uref.shape}")


def _require_symmetric(S: np.ndarray, name: str = "S"):
    if S.shape[0] != S.shape[1]:
        raise ShapeError(f"{name} must be square, got {S.shape}")
    scale = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
        raise AsymmetricMatrixError(f"{name} is not symmetric")


# -------------------------
# Canonical bases
# -------------------------
def sign_rule(U: np.ndarray) -> np.ndarray:
    """Column signs that make the largest-magnitude entry of each column nonnegative."""
    signs = np.ones(U.shape[1])
    for j in range(U.shape[1]):
        col = U[:, j]
        mags = np.abs(col)
        top = mags.max()
        if top == 0.0:
            continue
        idx = int(np.flatnonzero(mags >= top * (1.0 - _TIE_TOL))[0])
        if col[idx] < 0:
            signs[j] = -1.0
    return signs


def cluster_ranges(values: np.ndarray, tol: float = CLUSTER_TOL) -> List[Tuple[int, int]]:
    """Half-open index ranges of runs of (sorted) values closer than tol * max|value|."""
    n = len(values)
    if n == 0:
        return []
    scale = max(float(np.max(np.abs(values))), np.finfo(float).tiny)
    ranges, start = [], 0
    for i in range(1, n):
        if abs(values[i] - values[i - 1]) > tol * scale:
            ranges.append((start, i))
            start = i
    ranges.append((start, n))
    return ranges


def _gram_schmidt_rows(Q: np.ndarray) -> np.ndarray:
    """Rotation R (c x c) so that Q @ R is built from projections of e_1, e_2, ..."""
    c = Q.shape[1]
    basis: List[np.ndarray] = []
    for i in range(Q.shape[0]):
        v = Q[i, :].copy()
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > _GS_DROP:
            basis.append(v / nv)
        if len(basis) == c:
            break
    return np.column_stack(basis)


def canonical_cluster_basis(Q: np.ndarray, seeds: Optional[np.ndarray] = None) -> np.ndarray:
    """Deterministic orthonormal basis for range(Q).

    The basis is obtained by projecting the seed columns (identity by default)
    onto range(Q) in order and orthonormalizing what survives.
    """
    if Q.shape[1] <= 1:
        return Q.copy()
    coeffs = Q.T @ seeds if seeds is not None else Q.T
    R = _gram_schmidt_rows(coeffs.T)
    return Q @ R


def orthonormal_completion(U: np.ndarray) -> np.ndarray:
    """Columns completing U (n x r, orthonormal) to an orthonormal basis of R^n."""
    n, r = U.shape
    Q = U.copy()
    extra: List[np.ndarray] = []
    for i in range(n):
        if len(extra) == n - r:
            break
        v = -Q @ Q[i, :]
        v[i] += 1.0
        v -= Q @ (Q.T @ v)
        nv = np.linalg.norm(v)
        if nv > _GS_DROP:
            v /= nv
            extra.append(v)
            Q = np.column_stack([Q, v])
    if not extra:
        return np.zeros((n, 0))
    return np.column_stack(extra)


# -------------------------
# Decompositions
# -------------------------
def econ_svd(A, tol: float = RANK_TOL) -> EconSVD:
    A = as_matrix(A)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    m, n = A.shape
    if not np.any(A):
        return EconSVD(U=np.zeros((m, 0)), S=np.zeros(0), V=np.zeros((n, 0)), rank=0)

    try:
        U, s, Vt = sla.svd(A, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.debug("gesdd did not converge, retrying with gesvd")
        U, s, Vt = sla.svd(A, full_matrices=False, lapack_driver="gesvd")

    r = int(np.count_nonzero(s > tol * s[0])) if tol > 0 else int(np.count_nonzero(s > 0))
    if r < len(s):
        logger.debug("econ_svd truncated rank %d -> %d (tol=%g)", len(s), r, tol)
    U, s, V = U[:, :r].copy(), s[:r].copy(), Vt[:r].T.copy()

    for a, b in cluster_ranges(s):
        if b - a > 1:
            R = _gram_schmidt_rows(U[:, a:b])
            U[:, a:b] = U[:, a:b] @ R
            V[:, a:b] = V[:, a:b] @ R
    signs = sign_rule(U)
    return EconSVD(U=U * signs, S=s, V=V * signs, rank=r)


def sym_eig_ascending(S) -> SymEig:
    S = as_matrix(S, "S")
    _require_symmetric(S)
    w, Q = sla.eigh(0.5 * (S + S.T))
    for a, b in cluster_ranges(w):
        if b - a > 1:
            Q[:, a:b] = canonical_cluster_basis(Q[:, a:b])
    return SymEig(values=w, vectors=Q * sign_rule(Q))


# -------------------------
# Frames and subspaces
# -------------------------
def sign_align(U, Uref) -> np.ndarray:
    U, Uref = as_matrix(U, "U"), as_matrix(Uref, "Uref")
    _require_same_shape(U, Uref)
    dots = np.sum(U * Uref, axis=0)
    return U * np.where(dots < 0, -1.0, 1.0)


def subspace_dist(U, Uref) -> float:
    """Sign-aligned Frobenius distance between two orthonormal frames."""
    Uref = as_matrix(Uref, "Uref")
    return float(np.linalg.norm(sign_align(U, Uref) - Uref))


def column_dists(U, Uref) -> np.ndarray:
    Uref = as_matrix(Uref, "Uref")
    return np.linalg.norm(sign_align(U, Uref) - Uref, axis=0)


def principal_angles(A, B) -> np.ndarray:
    return sla.subspace_angles(as_matrix(A, "A"), as_matrix(B, "B"))


def is_admissible(A, gap_tol: float = 1e-8) -> bool:
    """Distinct, nonzero singular values (relative to the largest)."""
    s = sla.svdvals(as_matrix(A))
    if s.size == 0 or s[0] == 0.0:
        return False
    thr = gap_tol * s[0]
    return bool(np.all(s > thr) and np.all(-np.diff(s) > thr))


def eigengap(S) -> float:
    S = as_matrix(S, "S")
    _require_symmetric(S)
    w = sla.eigvalsh(0.5 * (S + S.T))
    if w.size < 2:
        return float("inf")
    return float(np.min(np.diff(w)))


def dft2_magnitude(A) -> np.ndarray:
    return np.abs(sfft.fft2(as_matrix(A), norm="ortho"))


# -------------------------
# Random generators
# -------------------------
def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept None, an int or an existing SeedSequence (used as is, so spawning advances it)."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def random_orthogonal(n: int, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if n == 1:
        return np.array([[1.0 if rng.random() < 0.5 else -1.0]])
    return ortho_group.rvs(dim=n, random_state=rng)


def random_orthogonal_batch(n: int, count: int, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = ortho_group.rvs(dim=n, size=count, random_state=rng)
    return out.reshape(count, n, n)


def random_admissible(m: int, d: int, seed=None, ratio: float = 0.6, scale: float = 1.0) -> np.ndarray:
    """Haar-random singular vectors with geometrically spaced singular values."""
    rng = np.random.default_rng(seed)
    r = min(m, d)
    U = random_orthogonal(m, rng)[:, :r]
    V = random_orthogonal(d, rng)[:, :r]
    s = scale * ratio ** np.arange(r)
    return (U * s) @ V.T
