"""Synthetic test tensors with known low-rank structure."""

from __future__ import annotations

import numpy as np


def rank1_tensor(dims, seed: int = 0) -> np.ndarray:
    """Outer product of three uniform random vectors (tubal rank 1)."""
    rng = np.random.default_rng(seed)
    a, b, c = (rng.random(n) for n in dims)
    return np.einsum("i,j,k->ijk", a, b, c)


def _smooth_profile(rng, n: int, n_waves: int = 3) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    out = np.full(n, 1.0)
    for f in range(1, n_waves + 1):
        out += rng.uniform(-0.5, 0.5) / f * np.cos(np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return out


def smooth_low_rank(dims, rank: int = 2, seed: int = 0, peak: float = 0.9) -> np.ndarray:
    """Sum of ``rank`` outer products of smooth positive profiles, scaled to max ``peak``.

    Each term is rank one in every sense, so the tubal rank is at most ``rank``.
    Values lie in ``(0, peak]``.
    """
    rng = np.random.default_rng(seed)
    x = np.zeros(tuple(dims))
    for _ in range(rank):
        u, v, w = (_smooth_profile(rng, n) for n in dims)
        x += np.einsum("i,j,k->ijk", u, v, w)
    return peak * x / x.max()


def smooth_field(shape, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """White noise blurred by a periodic Gaussian of width ``sigma`` pixels, rescaled to [0, 1]."""
    noise = rng.normal(size=shape)
    f1 = np.fft.fftfreq(shape[0])[:, None]
    f2 = np.fft.fftfreq(shape[1])[None, :]
    gain = np.exp(-2.0 * np.pi**2 * sigma**2 * (f1**2 + f2**2))
    field = np.fft.ifft2(np.fft.fft2(noise) * gain).real
    return (field - field.min()) / (field.max() - field.min())


def hsi_like(dims, n_materials: int = 3, sigma: float = 2.0, seed: int = 0, peak: float = 0.9) -> np.ndarray:
    """Few smooth abundance maps times smooth spectra, scaled to max ``peak``.

    Every mode-1 and mode-2 slice has rank at most ``n_materials``. The spatial
    maps are smooth but not low rank, so the tubal rank is only numerically
    low: a handful of Fourier-domain singular values carry almost all energy.
    """
    rng = np.random.default_rng(seed)
    n1, n2, n3 = (int(d) for d in dims)
    t = np.linspace(0.0, 1.0, n3)
    x = np.zeros((n1, n2, n3))
    for q in range(n_materials):
        spectrum = 1.0 + 0.5 * np.cos(np.pi * (q + 1) * t + rng.uniform(0, 2 * np.pi))
        x += np.einsum("ij,k->ijk", smooth_field((n1, n2), sigma, rng), spectrum)
    return peak * x / x.max()
