"""Dense SVD / symmetric eigendecomposition and the nuclear norm.

All functions accept plain ``numpy`` arrays. The ``*_batch`` helpers operate
on stacks of matrices of shape ``(..., m, n)`` and are what the objective and
covariance code use in their inner loops.
"""

from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

# relative truncation for the nuclear-norm subgradient
SUBGRADIENT_RTOL = 1e-8
SYMMETRY_TOL = 1e-10


class SvdResult(NamedTuple):
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray


class EigResult(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    return m


def svd(m) -> SvdResult:
    """Thin SVD ``m = U @ diag(s) @ V.T`` with ``s`` sorted descending.

    Returns ``V`` (not ``V.T``) so both factor matrices have orthonormal
    columns.
    """
    m = _as_matrix(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return SvdResult(u, s, vt.T)


def nuclear_norm(m) -> float:
    """Sum of singular values."""
    m = _as_matrix(m)
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def nuclear_norm_subgradient(m, tol=None):
    """Subgradient ``U_r @ V_r.T`` of the nuclear norm at ``m``.

    Only singular directions with singular value strictly above ``tol`` are
    kept; ``tol`` defaults to ``1e-8`` times the largest singular value. At
    the zero matrix the zero matrix is returned.
    """
    m = _as_matrix(m)
    if tol is not None and not tol > 0:
        raise InvalidInputError("tol must be positive")
    _, grad = nuclear_norm_batch(m, tol=tol)
    return grad


def nuclear_norm_batch(stack, tol=None, with_grad=True):
    """Nuclear norms (and subgradients) of a stack of matrices.

    Parameters
    ----------
    stack : ndarray, shape (..., m, n)
    tol : float, optional
        Absolute truncation threshold. When omitted each matrix uses
        ``SUBGRADIENT_RTOL`` times its own largest singular value.

    Returns
    -------
    norms : ndarray, shape (...)
    grads : ndarray, shape (..., m, n) or None
    """
    stack = np.asarray(stack, dtype=np.float64)
    if not with_grad:
        s = np.linalg.svd(stack, compute_uv=False)
        return s.sum(axis=-1), None
    u, s, vt = np.linalg.svd(stack, full_matrices=False)
    if tol is None:
        cut = SUBGRADIENT_RTOL * s[..., :1]
    else:
        cut = tol
    keep = (s > cut).astype(np.float64)
    grads = np.matmul(u * keep[..., None, :], vt)
    return s.sum(axis=-1), grads


def eig_sym(m) -> EigResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    m = _as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"eig_sym needs a square matrix, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise InvalidInputError("eig_sym needs a symmetric matrix")
    vals, vecs = eig_sym_batch(m)
    return EigResult(vals, vecs)


def eig_sym_batch(stack):
    """Descending-order eigendecomposition of a stack of symmetric matrices."""
    stack = np.asarray(stack, dtype=np.float64)
    sym = 0.5 * (stack + np.swapaxes(stack, -1, -2))
    vals, vecs = np.linalg.eigh(sym)
    return vals[..., ::-1], vecs[..., ::-1]


def reconstruct_sym(vals, vecs):
    """``Q @ diag(vals) @ Q.T`` over a stack."""
    return np.matmul(vecs * vals[..., None, :], np.swapaxes(vecs, -1, -2))
