"""Tensor nuclear norm (t-SVD, Fourier along mode 3) completion by ADMM.

Used both as a stand-alone inpainting baseline and to initialise the latent
tensors of the deep model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import linalg, tensor_core as tc

log = logging.getLogger(__name__)


@dataclass
class AdmmConfig:
    rho: float = 1e-2
    rho_growth: float = 1.05
    rho_max: float = 1e6
    max_iters: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.rho_growth < 1:
            raise ValueError("rho_growth must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


class TnnResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool
    objective: list  # TNN of Z after each iteration


def _half_spectrum(n3: int) -> int:
    # Fourier slices 0..n3//2 determine the rest by conjugate symmetry
    return n3 // 2 + 1


def tnn_value(t) -> float:
    """Sum of nuclear norms of the (unitary) Fourier-domain frontal slices."""
    F = np.moveaxis(linalg.dft_mode3(t), 2, 0)
    return float(linalg.nuclear_norm(F).sum())


def tsvt(t, tau: float) -> np.ndarray:
    """Tensor singular value thresholding: SVT of every Fourier frontal slice.

    Only the first ``n3 // 2 + 1`` slices are thresholded; the others are
    their complex conjugates, which keeps the inverse transform real.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    t = np.asarray(t, dtype=np.float64)
    n3 = t.shape[2]
    F = linalg.dft_mode3(t)
    h = _half_spectrum(n3)
    half = np.moveaxis(F[:, :, :h], 2, 0)
    shrunk = np.moveaxis(linalg.svt(half, tau), 0, 2)
    out = np.empty_like(F)
    out[:, :, :h] = shrunk
    if n3 > 1:
        mirror = np.arange(h, n3)
        out[:, :, mirror] = np.conj(shrunk[:, :, n3 - mirror])
    return linalg.idft_mode3(out).real


def tnn_complete(o, m, cfg: AdmmConfig | None = None) -> TnnResult:
    """Complete ``o`` on the unobserved entries of mask ``m``.

    Solves ``min ||X||_TNN  s.t.  P_Omega(X) = P_Omega(O)`` by ADMM with an
    increasing penalty. Stops once both the relative change of X and the
    relative gap between X and its low-rank split Z fall below ``cfg.tol``.
    Observed entries of the result equal ``o`` exactly.
    """
    cfg = cfg or AdmmConfig()
    o = tc.as_tensor(o, "observation")
    m = tc.as_mask(m, o.shape)
    if not m.any():
        raise ValueError("mask has no observed entries")

    known = np.where(m, o, 0.0)
    x = known.copy()
    w = np.zeros_like(x)
    rho = cfg.rho
    objective = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        z = tsvt(x + w / rho, 1.0 / rho)
        x_new = z - w / rho
        x_new[m] = o[m]
        w += rho * (x_new - z)
        scale = max(np.linalg.norm(x_new), 1e-12)
        change = np.linalg.norm(x_new - x) / scale
        # the first iterates sit at Z = 0 with X unchanged, so also require X ~ Z
        gap = np.linalg.norm(x_new - z) / scale
        x = x_new
        objective.append(tnn_value(z))
        rho = min(rho * cfg.rho_growth, cfg.rho_max)
        if change < cfg.tol and gap < cfg.tol:
            converged = True
            break
    if cfg.max_iters and not converged:
        log.warning("TNN-ADMM stopped after %d iterations without reaching tol=%g", it, cfg.tol)
    return TnnResult(x, it, converged or cfg.max_iters == 0, objective)
