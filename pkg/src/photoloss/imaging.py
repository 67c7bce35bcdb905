"""Raster containers, PNG/PFM I/O and windowed local statistics.

All statistics are computed in float64 regardless of the storage type.
Borders use reflect padding (the edge sample is not repeated), so every
pixel gets a full-support window.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import png

from .errors import ContractViolation, RasterLoadError

__all__ = [
    "ImagePlane",
    "DepthMap",
    "WindowSpec",
    "WindowStats",
    "load_raster",
    "save_raster",
    "read_pfm",
    "write_pfm",
    "load_labels",
    "save_labels",
    "window_filter",
    "window_filter_adjoint",
    "window_stats",
    "window_support_mask",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImagePlane:
    """H x W x C intensity raster with a declared dynamic range ``L``."""

    data: np.ndarray
    dynamic_range: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ContractViolation(f"image must be HxW, HxWx1 or HxWx3, got shape {data.shape}")
        if not self.dynamic_range > 0:
            raise ContractViolation("dynamic range must be positive")
        if not np.all(np.isfinite(data)):
            raise ContractViolation("image contains non-finite intensities")
        if data.size and (data.min() < 0 or data.max() > self.dynamic_range):
            raise ContractViolation(
                f"intensities must lie in [0, {self.dynamic_range}], "
                f"got [{data.min()}, {data.max()}]"
            )
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "dynamic_range", float(self.dynamic_range))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def scaled(self, k: float) -> ImagePlane:
        """Return ``k * I`` with dynamic range ``k * L``."""
        return ImagePlane(self.data * k, self.dynamic_range * k)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth in meters plus a validity mask.

    Invalid pixels are flagged only by ``valid``; their ``data`` entries
    are meaningless (stored as 0).
    """

    data: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ContractViolation(f"depth map must be HxW, got shape {data.shape}")
        if self.valid is None:
            valid = np.isfinite(data) & (data > 0)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != data.shape:
                raise ContractViolation("validity mask shape does not match depth")
            if np.any(valid & ~(np.isfinite(data) & (data > 0))):
                raise ContractViolation("valid depth must be finite and strictly positive")
        data = np.where(valid, data, 0.0)
        valid = valid.copy()
        valid.setflags(write=False)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


# --------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class WindowSpec:
    """Local window used for SSIM statistics.

    ``kind`` is ``"box"`` (uniform mean, default 3x3) or ``"gaussian"``
    (normalized Gaussian, conventionally 11x11 with sigma 1.5).
    """

    kind: str = "box"
    size: int = 3
    sigma: float = 1.5

    def __post_init__(self):
        if self.kind not in ("box", "gaussian"):
            raise ContractViolation(f"unknown window kind {self.kind!r}")
        if self.size < 1 or self.size % 2 == 0:
            raise ContractViolation("window size must be a positive odd integer")

    @classmethod
    def gaussian11(cls) -> WindowSpec:
        return cls("gaussian", 11, 1.5)

    @property
    def radius(self) -> int:
        return self.size // 2

    @cached_property
    def weights(self) -> np.ndarray:
        if self.kind == "box":
            w = np.full((self.size, self.size), 1.0 / self.size**2)
        else:
            c = np.arange(self.size, dtype=np.float64) - self.radius
            g = np.exp(-0.5 * (c / self.sigma) ** 2)
            w = np.outer(g, g)
            w /= w.sum()
        w.setflags(write=False)
        return w

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "size": self.size}
        if self.kind == "gaussian":
            d["sigma"] = self.sigma
        return d


def _as_hwc(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[:, :, None] if a.ndim == 2 else a


def _reflect_index(n: int, r: int) -> np.ndarray:
    return np.pad(np.arange(n), r, mode="reflect")


def _pad(a: np.ndarray, r: int) -> np.ndarray:
    h, w = a.shape[:2]
    return a[_reflect_index(h, r)[:, None], _reflect_index(w, r)[None, :]]


def _check_window_fits(shape, spec: WindowSpec):
    h, w = shape[:2]
    if h < spec.size or w < spec.size:
        raise ContractViolation(f"raster {h}x{w} smaller than {spec.size}x{spec.size} window")


def window_filter(a: np.ndarray, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Windowed weighted mean of ``a`` (HxW or HxWxC), reflect-padded."""
    a = np.asarray(a, dtype=np.float64)
    _check_window_fits(a.shape, spec)
    r = spec.radius
    h, w = a.shape[:2]
    p = _pad(a, r)
    # accumulate offsets from the centre sample: a constant window then
    # yields exactly its value (a plain sum of 9 copies of 0.4 does not)
    acc = np.zeros_like(a)
    if spec.kind == "box":
        for i in range(spec.size):
            for j in range(spec.size):
                acc += p[i : i + h, j : j + w] - a
        return a + acc / spec.size**2
    wts = spec.weights
    for i in range(spec.size):
        for j in range(spec.size):
            acc += wts[i, j] * (p[i : i + h, j : j + w] - a)
    return a + acc


def window_filter_adjoint(g: np.ndarray, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Transpose of :func:`window_filter` (reflect padding folded back)."""
    g = np.asarray(g, dtype=np.float64)
    r = spec.radius
    h, w = g.shape[:2]
    gp = np.zeros((h + 2 * r, w + 2 * r) + g.shape[2:])
    wts = spec.weights
    for i in range(spec.size):
        for j in range(spec.size):
            gp[i : i + h, j : j + w] += wts[i, j] * g
    out = np.zeros_like(g)
    ri = _reflect_index(h, r)
    ci = _reflect_index(w, r)
    np.add.at(out, (ri[:, None], ci[None, :]), gp)
    return out


def window_support_mask(valid: np.ndarray, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Pixels whose whole (reflect-padded) window lies on ``valid`` pixels."""
    valid = np.asarray(valid, dtype=bool)
    r = spec.radius
    h, w = valid.shape[:2]
    p = _pad(valid, r)
    out = np.ones_like(valid)
    for i in range(spec.size):
        for j in range(spec.size):
            out &= p[i : i + h, j : j + w]
    return out


def _window_comoment(a, b, mu_a, mu_b, spec: WindowSpec) -> np.ndarray:
    """sum_o w_o (a_{q+o} - mu_a(q)) (b_{q+o} - mu_b(q)), two-pass form."""
    r = spec.radius
    h, w = a.shape[:2]
    pa, pb = _pad(a, r), _pad(b, r)
    out = np.zeros_like(mu_a)
    if spec.kind == "box":
        for i in range(spec.size):
            for j in range(spec.size):
                out += (pa[i : i + h, j : j + w] - mu_a) * (pb[i : i + h, j : j + w] - mu_b)
        return out / spec.size**2
    wts = spec.weights
    for i in range(spec.size):
        for j in range(spec.size):
            out += wts[i, j] * (pa[i : i + h, j : j + w] - mu_a) * (pb[i : i + h, j : j + w] - mu_b)
    return out


@dataclass(frozen=True, eq=False)
class WindowStats:
    """Local means, variances and covariance, each an HxWxC raster."""

    mu_x: np.ndarray
    mu_y: np.ndarray
    sigma_x2: np.ndarray
    sigma_y2: np.ndarray
    sigma_xy: np.ndarray

    def scaled(self, k: float) -> WindowStats:
        """Statistics of ``k*I_x, k*I_y`` obtained by linearity."""
        k2 = k * k
        return WindowStats(
            k * self.mu_x, k * self.mu_y, k2 * self.sigma_x2, k2 * self.sigma_y2, k2 * self.sigma_xy
        )


def window_stats(I_x, I_y, window: WindowSpec = WindowSpec()) -> WindowStats:
    """Per-pixel windowed statistics of two images.

    Accepts :class:`ImagePlane` values or raw arrays. Variances and the
    covariance use the centered two-pass form, which is exactly zero on
    constant windows and never negative for variances.
    """
    if isinstance(I_x, ImagePlane) and isinstance(I_y, ImagePlane):
        if I_x.dynamic_range != I_y.dynamic_range:
            raise ContractViolation("images have different dynamic ranges")
    x = _as_hwc(I_x.data if isinstance(I_x, ImagePlane) else I_x)
    y = _as_hwc(I_y.data if isinstance(I_y, ImagePlane) else I_y)
    if x.shape != y.shape:
        raise ContractViolation(f"shape mismatch {x.shape} vs {y.shape}")
    _check_window_fits(x.shape, window)
    mu_x = window_filter(x, window)
    mu_y = window_filter(y, window)
    return WindowStats(
        mu_x=mu_x,
        mu_y=mu_y,
        sigma_x2=_window_comoment(x, x, mu_x, mu_x, window),
        sigma_y2=_window_comoment(y, y, mu_y, mu_y, window),
        sigma_xy=_window_comoment(x, y, mu_x, mu_y, window),
    )


# --------------------------------------------------------------------------
# PFM


def _pfm_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    """Return (token, token_start, position after the single trailing whitespace)."""
    n = len(buf)
    while pos < n and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise RasterLoadError("truncated PFM header", start)
    if pos >= n:
        raise RasterLoadError("PFM header not terminated", pos)
    return buf[start:pos], start, pos + 1


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Decode a PFM file into an HxW (``Pf``) or HxWx3 (``PF``) float64 array.

    Rows are returned top-to-bottom; the magnitude of the scale field is
    applied to the samples and its sign selects the byte order.
    """
    with open(path, "rb") as f:
        buf = f.read()
    magic, off, pos = _pfm_token(buf, 0)
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise RasterLoadError(f"bad PFM magic {magic!r}", off)
    tok, off, pos = _pfm_token(buf, pos)
    try:
        width = int(tok)
    except ValueError:
        raise RasterLoadError(f"bad PFM width {tok!r}", off) from None
    tok, off, pos = _pfm_token(buf, pos)
    try:
        height = int(tok)
    except ValueError:
        raise RasterLoadError(f"bad PFM height {tok!r}", off) from None
    if width <= 0 or height <= 0:
        raise RasterLoadError(f"bad PFM dimensions {width}x{height}", off)
    tok, off, pos = _pfm_token(buf, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise RasterLoadError(f"bad PFM scale {tok!r}", off) from None
    if scale == 0 or not np.isfinite(scale):
        raise RasterLoadError(f"bad PFM scale {scale}", off)
    nbytes = width * height * channels * 4
    if len(buf) - pos != nbytes:
        raise RasterLoadError(
            f"PFM payload is {len(buf) - pos} bytes, expected {nbytes} for "
            f"{width}x{height}x{channels}",
            pos,
        )
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    flat = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=pos)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise RasterLoadError("non-finite sample in PFM", pos + 4 * int(bad[0]))
    shape = (height, width) if channels == 1 else (height, width, 3)
    data = np.flipud(flat.reshape(shape)).astype(np.float64)
    if abs(scale) != 1.0:
        data = data * abs(scale)
    return data


def write_pfm(path: str | os.PathLike, data: np.ndarray, little_endian: bool = True) -> None:
    """Encode an HxW or HxWx3 array as float32 PFM (bottom-to-top rows)."""
    data = np.asarray(data)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if data.ndim == 2:
        magic = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
    else:
        raise ContractViolation(f"PFM holds 1 or 3 channels, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ContractViolation("PFM data must be finite")
    h, w = data.shape[:2]
    dtype = "<f4" if little_endian else ">f4"
    payload = np.ascontiguousarray(np.flipud(data).astype(dtype)).tobytes()
    scale = b"-1.0" if little_endian else b"1.0"
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{w} {h}".encode() + b"\n" + scale + b"\n" + payload)


# --------------------------------------------------------------------------
# PNG


def _read_png(path) -> tuple[np.ndarray, int]:
    try:
        width, height, rows, info = png.Reader(filename=os.fspath(path)).read()
        arr = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except png.Error as e:
        raise RasterLoadError(f"cannot decode PNG: {e}", 0) from e
    planes = info["planes"]
    if info.get("palette"):
        raise RasterLoadError("palette PNGs are not supported", 0)
    arr = arr.reshape(height, width, planes)
    if info.get("alpha"):
        arr = arr[:, :, : planes - 1]
    if info["bitdepth"] not in (8, 16):
        raise RasterLoadError(f"unsupported PNG bit depth {info['bitdepth']}", 0)
    return arr, info["bitdepth"]


def _write_png(path, arr: np.ndarray, bitdepth: int) -> None:
    h, w, c = arr.shape
    writer = png.Writer(w, h, greyscale=(c == 1), bitdepth=bitdepth)
    with open(path, "wb") as f:
        writer.write(f, arr.reshape(h, w * c).tolist())


def load_labels(path: str | os.PathLike) -> np.ndarray:
    """Read a single-channel 8/16-bit PNG as an integer label raster (0 = none)."""
    arr, _ = _read_png(path)
    if arr.shape[2] != 1:
        raise RasterLoadError("label raster must be single-channel", 0)
    return arr[:, :, 0].astype(np.int64)


def save_labels(path: str | os.PathLike, labels: np.ndarray) -> None:
    """Write a non-negative integer label raster as a 16-bit greyscale PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min() < 0 or labels.max() >= 1 << 16:
        raise ContractViolation("labels must be HxW integers in [0, 65535]")
    _write_png(path, labels.astype(np.uint32)[..., None], 16)


def _format_of(path, fmt):
    if fmt is None:
        fmt = os.path.splitext(os.fspath(path))[1].lstrip(".")
    fmt = fmt.lower()
    if fmt not in ("png", "pfm"):
        raise ContractViolation(f"unsupported raster format {fmt!r}")
    return fmt


def load_raster(path: str | os.PathLike, format: str | None = None, dynamic_range: float = 1.0):
    """Load a PNG as :class:`ImagePlane` or a single-channel PFM as :class:`DepthMap`.

    PNG samples are normalized so that the maximum code value maps to
    ``dynamic_range``. PFM samples ``<= 0`` are treated as invalid depth.
    """
    if _format_of(path, format) == "png":
        arr, bitdepth = _read_png(path)
        maxval = (1 << bitdepth) - 1
        return ImagePlane(arr.astype(np.float64) * (dynamic_range / maxval), dynamic_range)
    data = read_pfm(path)
    if data.ndim != 2:
        raise RasterLoadError("depth PFM must be single-channel (Pf)", 0)
    return DepthMap(data, data > 0)


def save_raster(path: str | os.PathLike, raster, format: str | None = None, bitdepth: int = 8) -> None:
    """Write an :class:`ImagePlane` (PNG or PFM), a :class:`DepthMap` (PFM) or a raw array (PFM)."""
    fmt = _format_of(path, format)
    if fmt == "pfm":
        if isinstance(raster, ImagePlane):
            data = raster.data
        elif isinstance(raster, DepthMap):
            data = np.where(raster.valid, raster.data, 0.0)
        else:
            data = np.asarray(raster)
        write_pfm(path, data)
        return
    if not isinstance(raster, ImagePlane):
        raise ContractViolation("PNG output requires an ImagePlane")
    if bitdepth not in (8, 16):
        raise ContractViolation("PNG bit depth must be 8 or 16")
    maxval = (1 << bitdepth) - 1
    codes = np.rint(raster.data / raster.dynamic_range * maxval).astype(np.uint32)
    _write_png(path, codes, bitdepth)
