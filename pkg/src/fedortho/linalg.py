"""Dense linear-algebra primitives: SVD, Gram-Schmidt, subspace projections.

All matrices are float64 numpy arrays. Bases are stored column-wise; a basis
with zero columns is a valid "empty" basis and projections against it are
exact identities (no arithmetic is performed), which matters for bit-exact
equivalence of the projected and unprojected aggregation paths.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

__all__ = [
    "OrthonormalBasis",
    "SvdResult",
    "empty_basis",
    "svd",
    "gram_schmidt",
    "project_out",
    "project_rows_out",
    "gaussian_matrix",
    "principal_angles",
    "seed_from",
]


@dataclass
class OrthonormalBasis:
    """Orthonormal columns spanning a subspace of R^dim."""

    dim: int
    vectors: np.ndarray  # dim x k

    @property
    def k(self) -> int:
        return self.vectors.shape[1]


@dataclass
class SvdResult:
    """Thin SVD a = u @ diag(s) @ v.T with s sorted descending."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def empty_basis(dim: int) -> OrthonormalBasis:
    if dim < 1:
        raise InvalidInput(f"basis dimension must be >= 1, got {dim}")
    return OrthonormalBasis(dim, np.zeros((dim, 0)))


def _as_matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInput(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


def svd(a) -> SvdResult:
    """Thin SVD with singular values sorted descending."""
    a = _as_matrix(a)
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInput("svd input must have at least one row and one column")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return SvdResult(u=u, s=s, v=vt.T)


def gram_schmidt(columns, drop_tol: float = 1e-10) -> OrthonormalBasis:
    """Modified Gram-Schmidt with a relative drop rule.

    A column is dropped when its residual norm after orthogonalization
    against the columns accepted so far falls below ``drop_tol`` times its
    original norm. One re-orthogonalization pass keeps the output
    orthonormal to ~1e-14 even for badly conditioned inputs.
    """
    columns = _as_matrix(columns, "columns")
    dim = columns.shape[0]
    if dim == 0:
        raise InvalidInput("gram_schmidt input has zero rows")
    if drop_tol <= 0:
        raise InvalidInput("drop_tol must be positive")
    kept: list[np.ndarray] = []
    for j in range(columns.shape[1]):
        c = columns[:, j]
        orig = np.linalg.norm(c)
        if orig == 0.0:
            continue
        r = c.copy()
        for _ in range(2):  # second pass: re-orthogonalize
            for q in kept:
                r = r - q * (q @ r)
        rn = np.linalg.norm(r)
        if rn < drop_tol * orig:
            continue
        kept.append(r / rn)
    vectors = np.column_stack(kept) if kept else np.zeros((dim, 0))
    return OrthonormalBasis(dim, vectors)


def project_out(basis: OrthonormalBasis, x) -> np.ndarray:
    """Remove the basis component column-wise: x - O (O^T x)."""
    x = _as_matrix(x, "x")
    if x.shape[0] != basis.dim:
        raise InvalidInput(
            f"x has {x.shape[0]} rows, basis dimension is {basis.dim}"
        )
    if basis.k == 0:
        return x.copy()
    o = basis.vectors
    return x - o @ (o.T @ x)


def project_rows_out(basis: OrthonormalBasis, delta) -> np.ndarray:
    """Remove the basis component from the row space: delta - (delta O) O^T."""
    delta = _as_matrix(delta, "delta")
    if delta.shape[1] != basis.dim:
        raise InvalidInput(
            f"delta has {delta.shape[1]} columns, basis dimension is {basis.dim}"
        )
    if basis.k == 0:
        return delta.copy()
    o = basis.vectors
    return delta - (delta @ o) @ o.T


def gaussian_matrix(rows: int, cols: int, rng_seed) -> np.ndarray:
    """Seeded matrix of i.i.d. standard normal entries."""
    if rows < 1 or cols < 1:
        raise InvalidInput("gaussian_matrix dimensions must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return rng.standard_normal((rows, cols))


def principal_angles(b1: OrthonormalBasis, b2: OrthonormalBasis) -> np.ndarray:
    """Canonical angles (radians, ascending) between two subspaces.

    Cosines are clamped to [0, 1] before arccos to absorb rounding above 1.
    """
    if b1.dim != b2.dim:
        raise InvalidInput("bases live in different ambient dimensions")
    if b1.k == 0 or b2.k == 0:
        return np.zeros(0)
    cos = np.linalg.svd(b1.vectors.T @ b2.vectors, compute_uv=False)
    cos = np.clip(cos, 0.0, 1.0)
    return np.sort(np.arccos(cos))


def seed_from(*parts) -> int:
    """Stable 64-bit seed derived from a mixed tuple of ints/strings.

    Unlike hash(), the result is identical across interpreter runs.
    Integer-like parts are canonicalized so numpy ints and Python ints
    hash identically.
    """
    canon = tuple(int(p) if isinstance(p, (int, np.integer)) else p for p in parts)
    h = hashlib.sha256(repr(canon).encode()).digest()
    return int.from_bytes(h[:8], "little")
