"""Full-reference quality indices for hyperspectral tensors: PSNR, SSIM, SAM.

Bands are the mode-3 frontal slices. PSNR and SSIM clamp both inputs to
``[0, 1]`` and use a data range of 1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
SAM_EPS = 1e-12


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape or x.ndim != 3:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def _clamp(a):
    return np.clip(a, 0.0, 1.0)


def psnr_per_band(x, ref) -> np.ndarray:
    x, ref = _pair(x, ref)
    mse = np.mean((_clamp(x) - _clamp(ref)) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        vals = -10.0 * np.log10(mse)
    return np.minimum(vals, PSNR_CAP)


def psnr(x, ref, mode: str = "band") -> float:
    """Peak signal-to-noise ratio in dB.

    ``mode="band"`` (default) averages the per-band PSNR; ``mode="global"``
    uses the MSE of the whole tensor. Either way a value is capped at 100 dB,
    which is what an exact match returns.
    """
    if mode == "band":
        return float(np.mean(psnr_per_band(x, ref)))
    if mode == "global":
        x, ref = _pair(x, ref)
        mse = np.mean((_clamp(x) - _clamp(ref)) ** 2)
        return PSNR_CAP if mse == 0 else float(min(-10.0 * np.log10(mse), PSNR_CAP))
    raise ValueError(f"unknown psnr mode {mode!r}")


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian; the 2-D window is its outer product."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _valid_filter(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    a = sliding_window_view(a, g.size, axis=0) @ g
    return sliding_window_view(a, g.size, axis=1) @ g


def _ssim_terms(mx, my, sxx, syy, sxy):
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim_per_band(x, ref) -> np.ndarray:
    x, ref = _pair(x, ref)
    x, ref = _clamp(x), _clamp(ref)
    n1, n2, _ = x.shape
    if n1 < SSIM_WIN or n2 < SSIM_WIN:
        # window does not fit: one global window per band
        mx, my = x.mean(axis=(0, 1)), ref.mean(axis=(0, 1))
        sxx = (x * x).mean(axis=(0, 1)) - mx * mx
        syy = (ref * ref).mean(axis=(0, 1)) - my * my
        sxy = (x * ref).mean(axis=(0, 1)) - mx * my
        return _ssim_terms(mx, my, sxx, syy, sxy)
    g = gaussian_window()
    mx, my = _valid_filter(x, g), _valid_filter(ref, g)
    sxx = _valid_filter(x * x, g) - mx * mx
    syy = _valid_filter(ref * ref, g) - my * my
    sxy = _valid_filter(x * ref, g) - mx * my
    return _ssim_terms(mx, my, sxx, syy, sxy).mean(axis=(0, 1))


def ssim(x, ref) -> float:
    """Mean single-scale SSIM over bands.

    11x11 Gaussian window (sigma 1.5) evaluated only where it fits entirely
    inside the image (no padding), with constants ``(0.01)^2`` and ``(0.03)^2``.
    Bands smaller than the window fall back to a single global window.
    """
    return float(np.mean(ssim_per_band(x, ref)))


def sam(x, ref) -> float:
    """Mean spectral angle in radians between the mode-3 fibers of ``x`` and ``ref``.

    Pixels where either fiber has norm below 1e-12 are skipped. The angle
    ``arccos(<a, b> / (|a| |b|))`` is evaluated as
    ``2 * atan2(|a/|a| - b/|b||, |a/|a| + b/|b||)``, which is the same angle
    but stays accurate near 0 where ``arccos`` loses half the digits.
    """
    x, ref = _pair(x, ref)
    nx = np.linalg.norm(x, axis=2)
    nr = np.linalg.norm(ref, axis=2)
    ok = (nx >= SAM_EPS) & (nr >= SAM_EPS)
    if not ok.any():
        raise ValueError("every spectral fiber is degenerate; SAM undefined")
    a = x[ok] / nx[ok][:, None]
    b = ref[ok] / nr[ok][:, None]
    angle = 2.0 * np.arctan2(np.linalg.norm(a - b, axis=1), np.linalg.norm(a + b, axis=1))
    return float(np.mean(angle))


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    sam: float
    psnr_per_band: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(x, ref, psnr_mode: str = "band", **metadata) -> MetricsReport:
    """All three indices for a recovered tensor clamped to ``[0, 1]``."""
    x, ref = _pair(x, ref)
    x = _clamp(x)
    meta = {
        "psnr_mode": psnr_mode,
        "psnr_cap_db": PSNR_CAP,
        "ssim_window": SSIM_WIN,
        "ssim_sigma": SSIM_SIGMA,
        "ssim_k": [SSIM_K1, SSIM_K2],
        "sam_unit": "rad",
        "clamped": True,
    }
    meta.update(metadata)
    return MetricsReport(
        psnr=psnr(x, ref, psnr_mode),
        ssim=ssim(x, ref),
        sam=sam(x, ref),
        psnr_per_band=[float(v) for v in psnr_per_band(x, ref)],
        metadata=meta,
    )
