"""Dense 3-mode tensors and the structural operations the rest of the package uses.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n1, n2, n3)`` and dtype
float64, stored C-contiguous: the last index ``s`` varies fastest, then ``j``,
then ``l``. Masks are boolean arrays of the same shape with ``True`` marking an
observed entry.

Modes are numbered 1, 2, 3 as in the usual tensor notation. Slice indices are
ordinary 0-based Python indices.
"""

from __future__ import annotations

import numpy as np

MODES = (1, 2, 3)

# axis orders realising permute(X, i) for i = 1, 2, 3 and their inverses
_PERM = {1: (1, 2, 0), 2: (0, 2, 1), 3: (0, 1, 2)}
_IPERM = {1: (2, 0, 1), 2: (0, 2, 1), 3: (0, 1, 2)}


def check_mode(i) -> int:
    if i not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {i!r}")
    return int(i)


def as_tensor(t, name: str = "tensor") -> np.ndarray:
    """Coerce ``t`` to a finite float64 array of order 3."""
    arr = np.ascontiguousarray(t, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a 3-mode array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_mask(m, shape=None) -> np.ndarray:
    arr = np.asarray(m)
    if arr.dtype != np.bool_:
        arr = arr.astype(bool)
    if arr.ndim != 3:
        raise ValueError(f"mask must be a 3-mode array, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"mask shape {arr.shape} does not match tensor shape {tuple(shape)}")
    return arr


def missing_rate(m) -> float:
    """Fraction of unobserved entries of a mask."""
    m = as_mask(m)
    return 1.0 - np.count_nonzero(m) / m.size


def permute(t, i) -> np.ndarray:
    """Move mode ``i`` to the third position, keeping the other two in order.

    ``permute(X, 1)[j, s, l] == X[l, j, s]`` and ``permute(X, 2)[l, s, j] == X[l, j, s]``;
    mode 3 is the identity. Always returns a fresh C-contiguous copy.
    """
    i = check_mode(i)
    return np.transpose(t, _PERM[i]).copy(order="C")


def ipermute(t, i) -> np.ndarray:
    """Inverse of :func:`permute`."""
    i = check_mode(i)
    return np.transpose(t, _IPERM[i]).copy(order="C")


def permuted_shape(shape, i) -> tuple[int, int, int]:
    i = check_mode(i)
    return tuple(shape[a] for a in _PERM[i])


def concat3(a, b, c) -> np.ndarray:
    """Stack three equally-shaped tensors along mode 3 (``a`` bands first)."""
    a, b, c = (np.asarray(x, dtype=np.float64) for x in (a, b, c))
    if not (a.shape == b.shape == c.shape) or a.ndim != 3:
        raise ValueError(f"concat3 needs three tensors of one 3-mode shape, got {a.shape}, {b.shape}, {c.shape}")
    return np.concatenate((a, b, c), axis=2)


def split3(t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Undo :func:`concat3`: cut mode 3 into three equal consecutive blocks."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or t.shape[2] % 3:
        raise ValueError(f"third dimension must be divisible by 3, got shape {t.shape}")
    n3 = t.shape[2] // 3
    return (
        np.ascontiguousarray(t[:, :, :n3]),
        np.ascontiguousarray(t[:, :, n3 : 2 * n3]),
        np.ascontiguousarray(t[:, :, 2 * n3 :]),
    )


def mode3_product(t, M) -> np.ndarray:
    """Multiply every mode-3 fiber of ``t`` by ``M`` (shape ``(m_out, n3)``)."""
    t = np.asarray(t, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or t.ndim != 3 or M.shape[1] != t.shape[2]:
        raise ValueError(f"cannot apply matrix of shape {M.shape} along mode 3 of tensor {t.shape}")
    return t @ M.T


def frontal_slice(t, i, k: int) -> np.ndarray:
    """Mode-``i`` frontal slice ``k``: ``X[k,:,:]``, ``X[:,k,:]`` or ``X[:,:,k]``."""
    i = check_mode(i)
    t = np.asarray(t)
    n = t.shape[i - 1]
    if not 0 <= k < n:
        raise IndexError(f"slice index {k} out of range for mode {i} of size {n}")
    index = [slice(None)] * 3
    index[i - 1] = k
    return np.array(t[tuple(index)])


def project_omega(t, m) -> np.ndarray:
    """Keep observed entries, zero the rest."""
    t = np.asarray(t, dtype=np.float64)
    m = as_mask(m, t.shape)
    return np.where(m, t, 0.0)


def frobenius_sq(t) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.vdot(t, t))
