"""Binary tensor files, run configuration documents and line-delimited reports.

Tensor file layout (all integers little-endian)::

    bytes 0-3    magic b"T3D1"
    bytes 4-27   n1, n2, n3 as uint64
    byte  28     scalar width tag: 8 = float64 tensor, 1 = uint8 mask
    bytes 29-    row-major payload, n1 * n2 * n3 scalars

A 1x1x1 tensor therefore occupies 37 bytes.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .degradation import DegradeSpec
from .model import HyperParams
from .tnn import AdmmConfig

MAGIC = b"T3D1"
_HEADER = struct.Struct("<4s3QB")
HEADER_SIZE = _HEADER.size
WIDTH_FLOAT64 = 8
WIDTH_MASK = 1
_MAX_BYTES = 2**62

METHODS = ("3deeprep", "tnn")


class TensorFileError(ValueError):
    """Malformed or unreadable tensor file."""


class RangeWarning(UserWarning):
    """Image data with values outside ``[0, 1]``."""


def _check_range(t: np.ndarray, where: str):
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        warnings.warn(
            f"{where}: values span [{t.min():.4g}, {t.max():.4g}], outside the image range [0, 1]",
            RangeWarning,
            stacklevel=3,
        )


def _write(path, dims, width: int, payload: bytes):
    Path(path).write_bytes(_HEADER.pack(MAGIC, *dims, width) + payload)


def _read(path, expect_width: int) -> tuple[tuple[int, int, int], bytes]:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise TensorFileError(f"{path}: {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, n1, n2, n3, width = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TensorFileError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if width != expect_width:
        raise TensorFileError(f"{path}: scalar width tag {width}, expected {expect_width}")
    # python ints do not overflow, so this catches dims whose product cannot be addressed
    n_bytes = n1 * n2 * n3 * width
    if n_bytes > _MAX_BYTES:
        raise TensorFileError(f"{path}: dims {(n1, n2, n3)} overflow the addressable payload size")
    payload = data[HEADER_SIZE:]
    if len(payload) < n_bytes:
        raise TensorFileError(f"{path}: truncated payload, {len(payload)} of {n_bytes} bytes present")
    if len(payload) > n_bytes:
        raise TensorFileError(f"{path}: {len(payload) - n_bytes} trailing bytes after the payload")
    return (n1, n2, n3), payload


def save_tensor(t, path, image: bool = True):
    """Write a float64 tensor. ``image=True`` warns on values outside [0, 1]."""
    t = tc.as_tensor(t)
    if image:
        _check_range(t, str(path))
    _write(path, t.shape, WIDTH_FLOAT64, t.astype("<f8", copy=False).tobytes(order="C"))


def load_tensor(path, image: bool = True) -> np.ndarray:
    dims, payload = _read(path, WIDTH_FLOAT64)
    t = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if image:
        _check_range(t, str(path))
    return t


def save_mask(m, path):
    m = tc.as_mask(m)
    _write(path, m.shape, WIDTH_MASK, m.astype(np.uint8).tobytes(order="C"))


def load_mask(path) -> np.ndarray:
    dims, payload = _read(path, WIDTH_MASK)
    raw = np.frombuffer(payload, dtype=np.uint8)
    if raw.size and raw.max() > 1:
        raise TensorFileError(f"{path}: mask payload holds values other than 0 and 1")
    return raw.astype(bool).reshape(dims)


# ---------------------------------------------------------------------------
# images


def false_color(t, bands=(70, 40, 10)) -> np.ndarray:
    """8-bit RGB array of three 1-based bands, clamped to [0, 1] and scaled to 0-255."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-mode tensor, got shape {t.shape}")
    if len(bands) != 3:
        raise ValueError("need exactly three bands (r, g, b)")
    n3 = t.shape[2]
    for b in bands:
        if int(b) != b or not 1 <= b <= n3:
            raise ValueError(f"band {b} out of range 1..{n3}")
    rgb = np.clip(t[:, :, [int(b) - 1 for b in bands]], 0.0, 1.0)
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def default_bands(n3: int) -> tuple[int, int, int]:
    """(70, 40, 10) when the tensor has enough bands, else three spread-out ones."""
    if n3 >= 70:
        return (70, 40, 10)
    return tuple(int(b) for b in np.linspace(n3, 1, 3).round())


def export_false_color(t, bands, path):
    """Binary PPM (P6) of three bands, as in :func:`false_color`."""
    rgb = false_color(t, bands)
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes(order="C"))


def read_ppm(path) -> np.ndarray:
    """Read back a binary PPM written by :func:`export_false_color`."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    pixels = parts[4]
    if len(pixels) != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# configuration


def _from_dict(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"{where} must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**data)


@dataclass
class RunConfig:
    """Everything needed to replay a run. Missing sections take their defaults."""

    method: str = "3deeprep"
    degrade: DegradeSpec = field(default_factory=DegradeSpec)
    hyper: HyperParams = field(default_factory=HyperParams)
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValueError("run config must be a mapping")
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ValueError(f"unknown key(s) in run config: {', '.join(unknown)}")
        hyper = data.get("hyper") or {}
        if not isinstance(hyper, dict):
            raise ValueError(f"hyper must be a mapping, got {type(hyper).__name__}")
        hyper = dict(hyper)
        if "directions" in hyper:
            hyper["directions"] = tuple(hyper["directions"])
        return cls(
            method=data.get("method", "3deeprep"),
            degrade=_from_dict(DegradeSpec, data.get("degrade"), "degrade"),
            hyper=_from_dict(HyperParams, hyper, "hyper"),
            admm=_from_dict(AdmmConfig, data.get("admm"), "admm"),
            outputs=dict(data.get("outputs") or {}),
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "degrade": self.degrade.to_dict(),
            "hyper": self.hyper.to_dict(),
            "admm": {f.name: getattr(self.admm, f.name) for f in fields(self.admm)},
            "outputs": dict(self.outputs),
        }


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from e
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def sidecar(path, suffix: str) -> Path:
    """``out.t3d`` -> ``out.t3d.<suffix>``, the place for run artefacts beside an output."""
    p = Path(path)
    return p.with_name(p.name + "." + suffix)


# ---------------------------------------------------------------------------
# line-delimited reports


def append_jsonl(path, record: dict):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True, allow_nan=True) + "\n")


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
