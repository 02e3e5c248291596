"""Descramblers: orthogonal P making P f_k(X) as smooth as possible under D.

eta(P) = ||D P A||_F^2 / N depends on A only through C = A A^T / N, so the
problem is the Brockett-type trace minimization tr(D^T D P C P^T) over O(n).
descramble_closed solves it exactly by pairing the largest singular values of
A / sqrt(N) with the smallest eigenvalues of D^T D. descramble_manifold solves
the same problem by Riemannian descent and serves as an independent check.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg as sla

from lib.errors import DegenerateProblemError, ShapeError
from lib.linalg import (
    as_matrix,
    cluster_ranges,
    column_dists,
    econ_svd,
    is_admissible,
    orthonormal_completion,
    random_orthogonal,
    seed_sequence,
    sign_align,
    sym_eig_ascending,
)
from lib.network import FeedForwardNet, jacobian_at, layer_output
from lib.stencils import smooth_basis_of

logger = logging.getLogger(__name__)

METHODS = ("closed_form", "manifold", "mds", "jacobian")
ARMIJO_C = 1e-4


# -------------------------
# Types
# -------------------------
@dataclass(frozen=True)
class DescrambleReport:
    P: np.ndarray
    objective: float
    method: str
    rank_used: int
    iterations: int = 0
    grad_norm: float = 0.0
    alignment: str = "none"
    degenerate: bool = False
    stalled: bool = False
    starts: int = 1
    extras: dict = field(default_factory=dict)

    def orthogonality_error(self) -> float:
        return float(np.linalg.norm(self.P.T @ self.P - np.eye(self.P.shape[1])))

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("P")
        out["shape"] = list(self.P.shape)
        out["orthogonality_error"] = self.orthogonality_error()
        return out


@dataclass(frozen=True)
class TheoryLimit:
    P_limit: np.ndarray
    T_r: np.ndarray
    U: np.ndarray
    sigma: Optional[float] = None
    bound: Optional[float] = None
    descrambled_weight: Optional[np.ndarray] = None
    distance_fro: Optional[float] = None
    distance_op: Optional[float] = None
    distance_col: Optional[float] = None
    gap: Optional[float] = None
    degenerate: bool = False


# -------------------------
# Objective
# -------------------------
def eta_smoothness(D, P, A) -> float:
    D, P, A = as_matrix(D, "D"), as_matrix(P, "P"), as_matrix(A, "A")
    if D.shape[1] != P.shape[0] or P.shape[1] != A.shape[0]:
        raise ShapeError(f"cannot form D P A with D {D.shape}, P {P.shape}, A {A.shape}")
    R = D @ (P @ A)
    return float(np.sum(R * R) / A.shape[1])


def _complete(T: np.ndarray, U: np.ndarray) -> np.ndarray:
    """T[:, :r] U^T plus the remaining T columns mapped from a completion of range(U)."""
    r = U.shape[1]
    P = T[:, :r] @ U.T
    if r < T.shape[0]:
        P += T[:, r:] @ orthonormal_completion(U).T
    return P


def _check_stencil(D: np.ndarray, n: int):
    if D.shape[1] != n:
        raise ShapeError(f"stencil has {D.shape[1]} columns, tapped data has {n} rows")


# -------------------------
# Closed form
# -------------------------
def descramble_closed(D, A, gap_tol: float = 1e-8) -> DescrambleReport:
    D, A = as_matrix(D, "D"), as_matrix(A, "A")
    n, N = A.shape
    _check_stencil(D, n)
    if not np.any(A):
        raise DegenerateProblemError("descrambler undefined for all-zero data")
    S = A / math.sqrt(N)
    svd = econ_svd(S)
    basis = smooth_basis_of(D)
    R = svd.rank
    P = _complete(basis.vectors, svd.U)

    tied = [(a, b) for a, b in cluster_ranges(basis.values) if b - a > 1 and a < R]
    admissible = is_admissible(S, gap_tol)
    degenerate = (not admissible) or bool(tied)
    if degenerate:
        logger.debug("descramble_closed: degenerate spectrum (admissible=%s, tied modes=%s)", admissible, tied)
    return DescrambleReport(
        P=P, objective=eta_smoothness(D, P, A), method="closed_form", rank_used=R,
        degenerate=degenerate, extras={"admissible": admissible, "tied_modes": [list(t) for t in tied]},
    )


# -------------------------
# Riemannian descent on O(n)
# -------------------------
def _qr_retract(Y: np.ndarray) -> np.ndarray:
    Q, R = sla.qr(Y)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def _descend(G: np.ndarray, C: np.ndarray, P0: np.ndarray, max_iters: int, tol: float):
    def f(P):
        return float(np.sum((G @ P) * (P @ C)))

    def rgrad(P):
        E = 2.0 * G @ P @ C
        return 0.5 * (E - P @ E.T @ P)

    tau0 = 1.0 / max(2.0 * np.linalg.norm(G, 2) * np.linalg.norm(C, 2), np.finfo(float).tiny)
    P = P0
    fx = f(P)
    xi = rgrad(P)
    gn = float(np.linalg.norm(xi))
    tau = tau0
    stalled = False
    it = 0
    for it in range(1, max_iters + 1):
        if gn <= tol:
            it -= 1
            break
        step = tau
        for _ in range(60):
            P_new = _qr_retract(P - step * xi)
            f_new = f(P_new)
            if f_new <= fx - ARMIJO_C * step * gn ** 2:
                break
            step *= 0.5
        else:
            stalled = True
            break
        xi_new = rgrad(P_new)
        s = P_new - P
        y = xi_new - xi
        sy = abs(float(np.sum(s * y)))
        tau = float(np.sum(s * s)) / sy if sy > 0 else tau0
        tau = min(max(tau, 1e-3 * tau0), 1e3 * tau0)
        P, fx, xi = P_new, f_new, xi_new
        gn = float(np.linalg.norm(xi))
    return P, fx, gn, it, stalled


def descramble_manifold(D, A, max_iters: int = 5000, tol: Optional[float] = None, restarts: int = 0,
                        seed=None, workers: int = 1) -> DescrambleReport:
    """Riemannian gradient descent with QR retraction and Armijo backtracking.

    Starts from the identity plus `restarts` Haar-random points and keeps the best.
    """
    D, A = as_matrix(D, "D"), as_matrix(A, "A")
    n, N = A.shape
    _check_stencil(D, n)
    G = D.T @ D
    C = A @ A.T / N
    if tol is None:
        tol = 1e-9 * max(float(np.trace(C)), np.finfo(float).tiny)

    children = seed_sequence(seed).spawn(restarts)
    starts = [np.eye(n)] + [random_orthogonal(n, c) for c in children]

    def run(P0):
        return _descend(G, C, P0, max_iters, tol)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(P0) for P0 in starts]

    P, fx, gn, iters, stalled = min(results, key=lambda res: res[1])
    if stalled:
        logger.debug("descramble_manifold: line search stalled at grad norm %.3g", gn)
    logger.debug("descramble_manifold: eta=%.12g after %d iterations, grad=%.3g", fx, iters, gn)
    svd_rank = econ_svd(A / math.sqrt(N)).rank
    return DescrambleReport(P=P, objective=eta_smoothness(D, P, A), method="manifold", rank_used=svd_rank,
                            iterations=iters, grad_norm=gn, stalled=stalled, starts=len(starts))


# -------------------------
# Network front ends
# -------------------------
def _dispatch(D, A, method: str, **opts) -> DescrambleReport:
    if method == "closed_form":
        return descramble_closed(D, A, **opts)
    if method == "manifold":
        return descramble_manifold(D, A, **opts)
    raise ValueError(f"method must be closed_form or manifold, got {method!r}")


def descramble_layer(net: FeedForwardNet, k: int, X, D, method: str = "closed_form", **opts) -> DescrambleReport:
    return _dispatch(D, layer_output(net, k, X), method, **opts)


def linearized_tap(net: FeedForwardNet, k: int, X) -> np.ndarray:
    """Columns f_k(xbar) + J (x_i - xbar) with xbar the batch mean."""
    X = as_matrix(X, "X")
    xbar = X.mean(axis=1, keepdims=True)
    return layer_output(net, k, xbar) + jacobian_at(net, k, xbar) @ (X - xbar)


def descramble_jacobian(net: FeedForwardNet, k: int, X, D, method: str = "closed_form", **opts) -> DescrambleReport:
    rep = _dispatch(D, linearized_tap(net, k, X), method, **opts)
    extras = dict(rep.extras, solver=rep.method)
    return DescrambleReport(P=rep.P, objective=rep.objective, method="jacobian", rank_used=rep.rank_used,
                            iterations=rep.iterations, grad_norm=rep.grad_norm, degenerate=rep.degenerate,
                            stalled=rep.stalled, starts=rep.starts, extras=extras)


# -------------------------
# MDS criterion
# -------------------------
def mds_descrambler(W) -> DescrambleReport:
    """argmax_P tr(P W) = V U^T; the optimum is the nuclear norm."""
    W = as_matrix(W, "W")
    if W.shape[0] != W.shape[1]:
        raise ShapeError(f"MDS needs a square matrix, got {W.shape}")
    U, s, Vt = sla.svd(W)
    P = Vt.T @ U.T
    rank = int(np.count_nonzero(s > 1e-10 * s[0])) if s[0] > 0 else 0
    return DescrambleReport(P=P, objective=float(np.sum(s)), method="mds", rank_used=rank)


# -------------------------
# Theoretical limits
# -------------------------
def theory_limit_noise(W, D) -> TheoryLimit:
    """Large-N limit for isotropic noise inputs: T_r U_1^T (completed)."""
    W = as_matrix(W, "W")
    D = as_matrix(D, "D")
    _check_stencil(D, W.shape[0])
    admissible = is_admissible(W)
    if not admissible:
        logger.warning("theory_limit_noise: W is not admissible, the limit is not unique")
    svd = econ_svd(W)
    T = smooth_basis_of(D).vectors
    r = svd.rank
    return TheoryLimit(
        P_limit=_complete(T, svd.U), T_r=T[:, :r], U=svd.U,
        descrambled_weight=(T[:, :r] * svd.S) @ svd.V.T,
        gap=_leading_gap(W @ W.T, r), degenerate=not admissible,
    )


def _leading_gap(S: np.ndarray, r: int) -> float:
    """Smallest gap among the top r eigenvalues and the next one (if any)."""
    w = np.sort(sla.eigvalsh(S))[::-1]
    top = w[: min(r + 1, len(w))]
    if top.size < 2:
        return float("inf")
    return float(np.min(-np.diff(top)))


def theory_limit_sigma(W, D, E_ssT, sigma: float, strict: bool = False) -> TheoryLimit:
    """Limit for signal + sigma noise, with the perturbation bound on the frame drift.

    Sigma(s) = W (E + s^2 I) W^T has the eigenvectors of W W^T + s^-2 W E W^T.
    """
    W, D = as_matrix(W, "W"), as_matrix(D, "D")
    E = as_matrix(E_ssT, "E_ssT")
    _check_stencil(D, W.shape[0])
    if E.shape != (W.shape[1], W.shape[1]):
        raise ShapeError(f"E_ssT must be {W.shape[1]}x{W.shape[1]}, got {E.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    svd = econ_svd(W)
    r = svd.rank
    WEW = W @ E @ W.T
    WEW = 0.5 * (WEW + WEW.T)
    inv2 = 0.0 if math.isinf(sigma) else sigma ** -2
    eig = sym_eig_ascending(W @ W.T + inv2 * WEW)
    U_sigma = sign_align(eig.vectors[:, ::-1][:, :r], svd.U)

    C = _leading_gap(W @ W.T, r)
    degenerate = C <= 0.0
    if degenerate:
        if strict:
            raise DegenerateProblemError("eigengap of W W^T is zero, the bound is undefined")
        bound = float("inf")
    else:
        bound = 2.0 ** 1.5 * inv2 * float(np.linalg.norm(WEW, 2)) / C

    T = smooth_basis_of(D).vectors
    P_limit = _complete(T, U_sigma)
    diff = U_sigma - svd.U
    return TheoryLimit(
        P_limit=P_limit, T_r=T[:, :r], U=U_sigma, sigma=float(sigma), bound=bound,
        descrambled_weight=P_limit @ W,
        distance_fro=float(np.linalg.norm(diff)),
        distance_op=float(np.linalg.norm(diff, 2)),
        distance_col=float(np.max(column_dists(U_sigma, svd.U))),
        gap=C, degenerate=degenerate,
    )


# -------------------------
# Views and comparisons
# -------------------------
def rescale_homomorphism(P, T_r, U) -> np.ndarray:
    """phi(P) = T_r^T P U; sends T_r U^T to the identity."""
    P, T_r, U = as_matrix(P, "P"), as_matrix(T_r, "T_r"), as_matrix(U, "U")
    if P.shape[0] != T_r.shape[0] or P.shape[1] != U.shape[0] or T_r.shape[1] != U.shape[1]:
        raise ShapeError(f"phi needs P {P.shape} conformable with T_r {T_r.shape} and U {U.shape}")
    return T_r.T @ P @ U


def align_descrambler(P, P_ref, D) -> np.ndarray:
    """Q P with Q orthogonal, commuting with D^T D, and Q P closest to P_ref.

    Q acts block-wise on each eigenvalue cluster of D^T D, so eta is unchanged.
    """
    P, P_ref = as_matrix(P, "P"), as_matrix(P_ref, "P_ref")
    if P.shape != P_ref.shape:
        raise ShapeError(f"shape mismatch: {P.shape} vs {P_ref.shape}")
    basis = smooth_basis_of(D)
    T = basis.vectors
    K = T.T @ (P_ref @ P.T) @ T
    B = np.zeros_like(K)
    for a, b in cluster_ranges(basis.values):
        B[a:b, a:b], _ = sla.orthogonal_procrustes(np.eye(b - a), K[a:b, a:b])
    return T @ B @ T.T @ P


def rmae(A, B) -> float:
    """mean|A - B| / mean|B|."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ShapeError(f"shape mismatch: {A.shape} vs {B.shape}")
    denom = float(np.mean(np.abs(B)))
    if denom == 0.0:
        return 0.0 if not np.any(A) else float("inf")
    return float(np.mean(np.abs(A - B)) / denom)
