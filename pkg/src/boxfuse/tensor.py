"""Dense-grid numeric kernels.

A feature map is a numpy array of shape ``(rows, cols, channels)``: rows run
along the x axis of the BEV grid, cols along y. Everything here is a pure
function; inputs are never modified. ``float32`` is the working dtype, and
``float64`` inputs stay ``float64`` so gradient checks are not dominated by
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import ConfigError, ShapeError

DTYPE = np.float32


@dataclass(frozen=True)
class ConvParams:
    """Weights ``(out, in, k, k)`` with ``k`` in {1, 3}, bias ``(out,)``."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        w = self.weight
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] not in (1, 3):
            raise ShapeError(f"conv weight must be (out, in, k, k) with k in {{1,3}}, got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {w.shape[0]} outputs")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    @property
    def padding(self) -> int:
        return self.kernel // 2


@dataclass(frozen=True)
class BnAffine:
    """Inference-mode batch norm: stored statistics plus affine."""

    mean: np.ndarray
    var: np.ndarray
    scale: np.ndarray
    shift: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        n = self.mean.shape
        if not (self.var.shape == self.scale.shape == self.shift.shape == n):
            raise ShapeError("batch norm statistics must share one shape")
        if np.any(self.var < 0):
            raise ConfigError("batch norm variance must be non-negative")

    @classmethod
    def identity(cls, channels: int, dtype=DTYPE) -> BnAffine:
        return cls(
            mean=np.zeros(channels, dtype),
            var=np.ones(channels, dtype),
            scale=np.ones(channels, dtype),
            shift=np.zeros(channels, dtype),
        )

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


def _check_map(x: np.ndarray) -> None:
    if x.ndim != 3:
        raise ShapeError(f"feature map must be (rows, cols, channels), got shape {x.shape}")


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Zero-padded 2D convolution (cross-correlation, as in deep-learning libraries).

    Output spatial size is ``ceil(n / stride)`` for both kernel sizes. The
    kernel is applied one tap at a time as a matrix product, so memory stays at
    one input-sized buffer regardless of channel count.
    """
    _check_map(x)
    rows, cols, cin = x.shape
    if cin != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} input channels, got {cin}")
    k, s, pad = p.kernel, p.stride, p.padding
    out_r = (rows + 2 * pad - k) // s + 1
    out_c = (cols + 2 * pad - k) // s + 1
    dtype = np.result_type(x.dtype, p.weight.dtype)
    xp = np.pad(x.astype(dtype, copy=False), ((pad, pad), (pad, pad), (0, 0)))
    # (k, k, in, out) so every tap is a contiguous matrix for BLAS
    taps = np.ascontiguousarray(p.weight.astype(dtype, copy=False).transpose(2, 3, 1, 0))
    out = np.zeros((out_r * out_c, p.out_channels), dtype)
    for i in range(k):
        for j in range(k):
            tap = xp[i : i + s * (out_r - 1) + 1 : s, j : j + s * (out_c - 1) + 1 : s, :]
            out += np.ascontiguousarray(tap).reshape(-1, cin) @ taps[i, j]
    out += p.bias.astype(dtype, copy=False)
    return out.reshape(out_r, out_c, p.out_channels)


def bn_affine(x: np.ndarray, b: BnAffine) -> np.ndarray:
    _check_map(x)
    if x.shape[2] != b.channels:
        raise ShapeError(f"batch norm has {b.channels} channels, input has {x.shape[2]}")
    dtype = x.dtype
    inv = (b.scale / np.sqrt(b.var + b.eps)).astype(dtype)
    return ((x - b.mean.astype(dtype)) * inv + b.shift.astype(dtype)).astype(dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def _interp_axis(n: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and weights for half-pixel-centre upsampling of one axis."""
    src = (np.arange(n * m, dtype=np.float64) + 0.5) / m - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling by an integer factor, align-corners disabled.

    Output cell ``i`` samples source coordinate ``(i + 0.5) / factor - 0.5``,
    clamped to the valid range at the borders.
    """
    _check_map(x)
    if factor not in (1, 2, 4):
        raise ConfigError(f"unsupported upsampling factor {factor}")
    if factor == 1:
        return x.copy()
    rows, cols, _ = x.shape
    r_lo, r_hi, r_f = _interp_axis(rows, factor)
    c_lo, c_hi, c_f = _interp_axis(cols, factor)
    r_f = r_f.astype(x.dtype)[:, None, None]
    c_f = c_f.astype(x.dtype)[None, :, None]
    top = x[r_lo] * (1 - r_f) + x[r_hi] * r_f
    return top[:, c_lo] * (1 - c_f) + top[:, c_hi] * c_f


def _window_view(x: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    rows, cols = x.shape[:2]
    if out_rows <= 0 or out_cols <= 0 or rows % out_rows or cols % out_cols:
        raise ConfigError(
            f"cannot pool {rows}x{cols} to {out_rows}x{out_cols}: window ratio must be integral"
        )
    wr, wc = rows // out_rows, cols // out_cols
    return x.reshape(out_rows, wr, out_cols, wc, *x.shape[2:])


def adaptive_avg_pool(x: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Mean over non-overlapping windows. Works on 2D masks as well as 3D maps."""
    return _window_view(x, out_rows, out_cols).mean(axis=(1, 3), dtype=x.dtype)


def max_pool_to(x: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    return _window_view(x, out_rows, out_cols).max(axis=(1, 3))


def dilate_binary(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square (Chebyshev) dilation with a ``2*radius+1`` kernel, zero outside the grid."""
    if radius < 0:
        raise ConfigError("dilation radius must be >= 0")
    out = mask.copy()
    if radius == 0:
        return out
    rows, cols = mask.shape[:2]
    # separable: max along rows, then along cols
    tmp = out.copy()
    for d in range(1, radius + 1):
        if d >= rows:
            break
        tmp[d:] = np.maximum(tmp[d:], out[:-d])
        tmp[:-d] = np.maximum(tmp[:-d], out[d:])
    out = tmp.copy()
    for d in range(1, radius + 1):
        if d >= cols:
            break
        out[:, d:] = np.maximum(out[:, d:], tmp[:, :-d])
        out[:, :-d] = np.maximum(out[:, :-d], tmp[:, d:])
    return out


def assert_finite(x: np.ndarray, what: str = "feature map") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x


def write_feature_map(x: np.ndarray, dest: str | Path | TextIO) -> None:
    """Text dump: ``rows cols channels`` header then one value per line, channel-fastest."""
    if x.ndim == 2:
        x = x[:, :, None]
    _check_map(x)
    lines = [f"{x.shape[0]} {x.shape[1]} {x.shape[2]}"]
    lines.extend(repr(float(v)) for v in x.ravel(order="C"))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text)
    else:
        dest.write(text)


def read_feature_map(src: str | Path | TextIO, dtype=DTYPE) -> np.ndarray:
    text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
    lines = text.split("\n")
    try:
        rows, cols, ch = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise ShapeError(f"bad feature map header: {lines[0]!r}") from exc
    values = np.array([float(t) for t in lines[1 : 1 + rows * cols * ch]], dtype=dtype)
    if values.size != rows * cols * ch:
        raise ShapeError(f"expected {rows * cols * ch} values, found {values.size}")
    return values.reshape(rows, cols, ch)
