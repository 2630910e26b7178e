"""Matrix kernels: SVD, nuclear norm and its subgradient, singular value
thresholding, and the unitary DFT along mode 3.

The SVD is LAPACK's (via :func:`numpy.linalg.svd`). Functions accept either a
single matrix or a stack of matrices with the matrix in the last two axes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

DEFAULT_RANK_TOL = 1e-6


class SvdResult(NamedTuple):
    """Thin SVD ``M = U @ diag(S) @ V.T`` (``V.conj().T`` for complex input)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


class SvdError(np.linalg.LinAlgError):
    pass


def svd(M) -> SvdResult:
    """Thin SVD with singular values in non-increasing order.

    Raises
    ------
    SvdError
        If the input is not finite or LAPACK fails to converge. The message
        carries the shape and the Frobenius and max-abs norms of the input.
    """
    M = np.asarray(M)
    if not np.issubdtype(M.dtype, np.complexfloating):
        M = M.astype(np.float64, copy=False)
    if M.ndim < 2:
        raise ValueError(f"svd needs a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SvdError(f"svd input of shape {M.shape} has non-finite entries")
    try:
        U, S, Vh = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        fro = float(np.linalg.norm(M))
        amax = float(np.max(np.abs(M))) if M.size else 0.0
        raise SvdError(
            f"svd did not converge for shape {M.shape} (fro={fro:.3e}, max|a|={amax:.3e})"
        ) from exc
    return SvdResult(U, S, np.swapaxes(Vh, -1, -2).conj())


def nuclear_norm(M) -> float | np.ndarray:
    """Sum of singular values (one value per matrix for stacked input)."""
    total = svd(M).S.sum(axis=-1)
    return float(total) if np.ndim(total) == 0 else total


def _rank_mask(S: np.ndarray, rank_tol: float) -> np.ndarray:
    # singular values above rank_tol * S_max count towards the numerical rank
    smax = S[..., :1]
    return (S > rank_tol * smax) & (smax > 0)


def nuclear_subgrad(M, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """The subgradient ``U_r V_r^T`` of the nuclear norm, with ``r`` the numerical rank.

    The free component of the subdifferential (the part orthogonal to both
    singular subspaces) is taken to be zero. A zero matrix gets a zero
    subgradient.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    U, S, V = svd(M)
    keep = _rank_mask(S, rank_tol).astype(U.dtype)
    return (U * keep[..., None, :]) @ np.swapaxes(V, -1, -2).conj()


def nuclear_value_and_subgrad(M, rank_tol: float = DEFAULT_RANK_TOL):
    """Both nuclear norm and subgradient from one SVD (stack-aware)."""
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    U, S, V = svd(M)
    keep = _rank_mask(S, rank_tol).astype(U.dtype)
    G = (U * keep[..., None, :]) @ np.swapaxes(V, -1, -2).conj()
    return S.sum(axis=-1), G


def svt(M, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal map of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    U, S, V = svd(M)
    shrunk = np.maximum(S - tau, 0.0)
    return (U * shrunk[..., None, :]) @ np.swapaxes(V, -1, -2).conj()


def dft_mode3(t) -> np.ndarray:
    """Unitary DFT of every mode-3 fiber.

    ``F[l, j, f] = n3**-0.5 * sum_s t[l, j, s] * exp(-2j*pi*f*s/n3)``, so the
    transform preserves the Frobenius norm.
    """
    return np.fft.fft(np.asarray(t), axis=2, norm="ortho")


def idft_mode3(t) -> np.ndarray:
    """Inverse of :func:`dft_mode3` (complex output; take ``.real`` for real data)."""
    return np.fft.ifft(np.asarray(t), axis=2, norm="ortho")
