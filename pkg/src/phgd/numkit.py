"""Small dense linear algebra: SVD by one-sided Jacobi and the pseudoinverse.

Matrices are plain 2-D ``float64`` numpy arrays. :func:`as_matrix` is the
validating constructor; everything else accepts anything it accepts.
"""
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ShapeMismatch

DenseMatrix = np.ndarray

DEFAULT_RANK_TOL = 1e-12
MAX_DIM = 16


class SvdFactors(NamedTuple):
    """Thin SVD ``m = u @ diag(sigma) @ v.T`` with ``sigma`` descending."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def as_matrix(a) -> DenseMatrix:
    """Return a read-only 2-D float64 copy of ``a``, rejecting NaN/Inf."""
    m = np.array(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    m.setflags(write=False)
    return m


def _complete_orthonormal(u, filled):
    """Replace the columns of ``u`` not flagged in ``filled`` by an orthonormal completion."""
    m = u.shape[0]
    basis = [u[:, k] for k in range(u.shape[1]) if filled[k]]
    for k in range(u.shape[1]):
        if filled[k]:
            continue
        best, best_norm = None, -1.0
        for e in np.eye(m):
            r = e.copy()
            for _ in range(2):
                for b in basis:
                    r -= (b @ r) * b
            nr = np.linalg.norm(r)
            if nr > best_norm:
                best, best_norm = r, nr
        u[:, k] = best / best_norm
        basis.append(u[:, k])
    return u


def svd(m) -> SvdFactors:
    """Thin singular value decomposition, ``r = min(rows, cols)``.

    Raises :class:`~phgd.errors.IterationLimit` if the Jacobi sweeps do not
    converge within 200 sweeps.
    """
    a = as_matrix(m)
    if max(a.shape) > MAX_DIM:
        raise ShapeMismatch(f"svd supports at most {MAX_DIM}x{MAX_DIM}, got {a.shape}")
    if a.shape[0] < a.shape[1]:
        f = svd(a.T)
        return SvdFactors(f.v, f.sigma, f.u)
    # scale to unit max entry so squared column norms cannot underflow
    amax = float(np.abs(a).max()) if a.size else 0.0
    if amax == 0.0:
        amax = 1.0
    b, w = kernels.jacobi_columns(a / amax)
    sig = np.sqrt(np.einsum("ij,ij->j", b, b))
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    b = b[:, order]
    v = w[:, order]
    u = np.zeros_like(b)
    # columns at round-off level carry no direction; complete them instead
    noise = np.finfo(float).eps * max(a.shape) * (sig[0] if sig.size else 0.0)
    filled = sig > noise
    u[:, filled] = b[:, filled] / sig[filled]
    if not filled.all():
        u = _complete_orthonormal(u, filled)
    return SvdFactors(u, sig * amax, v)


def pinv(m, rank_tol: float = DEFAULT_RANK_TOL) -> DenseMatrix:
    """Moore-Penrose pseudoinverse.

    Singular values at or below ``rank_tol * sigma_max * max(rows, cols)``
    are treated as zero.
    """
    if rank_tol < 0:
        raise ValueError("rank_tol must be non-negative")
    a = as_matrix(m)
    u, sig, v = svd(a)
    if sig.size == 0:
        return np.zeros(a.T.shape)
    cutoff = rank_tol * sig[0] * max(a.shape)
    keep = (sig > cutoff) & (sig > 0.0)
    return (v[:, keep] / sig[keep]) @ u[:, keep].T


def _check(cond, msg):
    if not cond:
        raise ShapeMismatch(msg)


def matmul(a, b) -> DenseMatrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a.ndim in (1, 2) and b.ndim in (1, 2), "matmul needs vectors or matrices")
    _check(a.shape[-1] == b.shape[0], f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a) -> DenseMatrix:
    return np.asarray(a, dtype=np.float64).T


def add(a, b) -> DenseMatrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a.shape == b.shape, f"cannot add {a.shape} and {b.shape}")
    return a + b


def scale(a, c: float) -> DenseMatrix:
    return float(c) * np.asarray(a, dtype=np.float64)


def dot(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    _check(a.shape == b.shape, f"dot of lengths {a.size} and {b.size}")
    return float(a @ b)


def norm2(a) -> float:
    """Euclidean (Frobenius for matrices) norm."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    return float(np.sqrt(a @ a))
