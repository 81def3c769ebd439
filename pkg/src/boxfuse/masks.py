"""Object/background region masks for the alignment loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import PseudoBev
from .tensor import dilate_binary, max_pool_to

DEFAULT_TAU = 0.0
DEFAULT_DILATION = 2


@dataclass(frozen=True)
class RegionMasks:
    """Binary ``(H, W)`` float32 maps with ``obj + bg == 1``."""

    obj: np.ndarray
    bg: np.ndarray
    fg: np.ndarray


def build_masks(
    x: PseudoBev | np.ndarray,
    out_rows: int,
    out_cols: int,
    tau: float = DEFAULT_TAU,
    d_r: int = DEFAULT_DILATION,
) -> RegionMasks:
    values = x.values if isinstance(x, PseudoBev) else np.asarray(x)
    if values.ndim == 3:
        values = values[:, :, 0]
    pooled = max_pool_to(values, out_rows, out_cols)
    fg = (pooled > tau).astype(np.float32)
    obj = dilate_binary(fg, d_r)
    return RegionMasks(obj=obj, bg=1.0 - obj, fg=fg)
