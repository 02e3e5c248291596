"""Smoothness operators D and the trigonometric basis T."""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import linalg as sla

from lib.errors import ShapeError, UnsupportedOperationError
from lib.linalg import (
    SymEig,
    as_matrix,
    canonical_cluster_basis,
    cluster_ranges,
    sign_rule,
    sym_eig_ascending,
)

logger = logging.getLogger(__name__)

KINDS = ("fourier", "finite-difference")
BOUNDARIES = ("periodic", "one-sided")


@dataclass(frozen=True)
class StencilSpec:
    kind: str = "fourier"
    size: int = 16
    fd_order: int = 1
    fd_boundary: str = "periodic"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedOperationError(f"unknown stencil kind {self.kind!r}, expected one of {KINDS}")
        if self.size < 2:
            raise ValueError(f"stencil size must be >= 2, got {self.size}")
        if self.kind == "fourier" and (self.size % 2 or self.size < 4):
            raise UnsupportedOperationError(f"fourier stencil needs even size >= 4, got {self.size}")
        if self.kind == "finite-difference":
            if self.fd_order not in (1, 2):
                raise UnsupportedOperationError(f"finite-difference order must be 1 or 2, got {self.fd_order}")
            if self.fd_boundary not in BOUNDARIES:
                raise UnsupportedOperationError(f"unknown boundary {self.fd_boundary!r}")
            if self.fd_boundary == "one-sided" and self.size <= self.fd_order:
                raise ValueError(f"one-sided order {self.fd_order} needs size > {self.fd_order}")

    @classmethod
    def from_mapping(cls, values: Mapping, size: Optional[int] = None) -> "StencilSpec":
        return cls(
            kind=str(values.get("kind", "fourier")),
            size=int(size if size is not None else values.get("size", 16)),
            fd_order=int(values.get("fd_order", 1)),
            fd_boundary=str(values.get("fd_boundary", "periodic")),
        )

    def with_size(self, size: int) -> "StencilSpec":
        return StencilSpec(self.kind, size, self.fd_order, self.fd_boundary)


# -------------------------
# Stencils
# -------------------------
def fourier_diff_matrix(m: int) -> np.ndarray:
    if m % 2 or m < 4:
        raise UnsupportedOperationError(f"fourier_diff_matrix needs even m >= 4, got {m}")
    h = 2.0 * np.pi / m
    k = np.arange(1, m)
    col = np.zeros(m)
    col[1:] = 0.5 * (-1.0) ** k / np.tan(k * h / 2.0)
    # circulant(col)[i, j] = col[(i - j) % m]
    return sla.circulant(col)


def finite_diff_matrix(spec: StencilSpec) -> np.ndarray:
    if spec.kind != "finite-difference":
        raise UnsupportedOperationError(f"finite_diff_matrix got a {spec.kind} spec")
    m, order = spec.size, spec.fd_order
    if spec.fd_boundary == "one-sided":
        # rows e_{i+1} - e_i, or e_i - 2 e_{i+1} + e_{i+2}
        return np.diff(np.eye(m), n=order, axis=0)

    col = np.zeros(m)
    if order == 1:
        col[0] = -1.0
        col[m - 1] += 1.0
    else:
        col[0] = -2.0
        col[1] += 1.0
        col[m - 1] += 1.0
    return sla.circulant(col)


def stencil_from_spec(spec: StencilSpec) -> np.ndarray:
    if spec.kind == "fourier":
        return fourier_diff_matrix(spec.size)
    return finite_diff_matrix(spec)


# -------------------------
# Bases
# -------------------------
def trig_basis(m: int) -> np.ndarray:
    """Unit-norm interleaved [1, sin_1, cos_1, sin_2, cos_2, ...] sampled on the periodic grid.

    For even m the last sine column vanishes on the grid and is replaced by
    the Nyquist vector cos(pi l).
    """
    if m < 2:
        raise ValueError(f"trig_basis needs m >= 2, got {m}")
    l = np.arange(m)[:, None]
    k = np.arange(m)[None, :]
    T = np.where(k % 2 == 0, np.cos(np.pi * l * k / m), np.sin(np.pi * l * (k + 1) / m))
    if m % 2 == 0:
        T[:, m - 1] = np.cos(np.pi * np.arange(m))
    return T / np.linalg.norm(T, axis=0)


def smooth_basis_of(D) -> SymEig:
    """Eigenpairs of DᵀD, smoothest first.

    Repeated eigenvalues get the basis spanned by projecting trig_basis columns
    in order, so a cos/sin pair comes out sin first.
    """
    D = as_matrix(D, "D")
    m = D.shape[1]
    eig = sym_eig_ascending(D.T @ D)
    Q = eig.vectors.copy()
    T = trig_basis(m)
    for a, b in cluster_ranges(eig.values):
        if b - a > 1:
            Q[:, a:b] = canonical_cluster_basis(Q[:, a:b], seeds=T)
            logger.debug("smooth_basis_of: cluster [%d, %d) recanonicalized", a, b)
    return SymEig(values=eig.values, vectors=Q * sign_rule(Q))


def match_trig_basis(D, T) -> float:
    """Off-diagonal energy of TᵀDᵀDT relative to ‖DᵀD‖_F."""
    D, T = as_matrix(D, "D"), as_matrix(T, "T")
    m = D.shape[1]
    if T.shape != (m, m):
        raise ShapeError(f"T must be {m}x{m}, got {T.shape}")
    G = D.T @ D
    scale = np.linalg.norm(G)
    if scale == 0.0:
        return 0.0
    M = T.T @ G @ T
    off = M - np.diag(np.diag(M))
    return float(np.linalg.norm(off) / scale)
