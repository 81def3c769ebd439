"""Region-weighted cosine alignment loss and the total objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .masks import RegionMasks

NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    a_det: float = 1.0
    a_align: float = 1.0
    a_obj: float = 1.0
    a_bg: float = 0.5
    a_cls: float = 1.0
    a_reg: float = 2.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {v}")


def _check(fhat: np.ndarray, fstar: np.ndarray, omega: np.ndarray) -> np.ndarray:
    if fhat.shape != fstar.shape or fhat.ndim != 3:
        raise ShapeError(f"feature shapes differ: {fhat.shape} vs {fstar.shape}")
    omega = np.asarray(omega)
    if omega.ndim == 3:
        omega = omega[:, :, 0]
    if omega.shape != fhat.shape[:2]:
        raise ShapeError(f"mask is {omega.shape}, features are {fhat.shape[:2]}")
    return omega


def cell_cosine(fhat: np.ndarray, fstar: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell cosine over channels plus both norms. Zero-norm cells get cosine 0."""
    a = fhat.astype(np.float64, copy=False)
    b = fstar.astype(np.float64, copy=False)
    na = np.sqrt(np.einsum("ijk,ijk->ij", a, a))
    nb = np.sqrt(np.einsum("ijk,ijk->ij", b, b))
    dot = np.einsum("ijk,ijk->ij", a, b)
    ok = (na >= NORM_EPS) & (nb >= NORM_EPS)
    cos = np.zeros_like(dot)
    cos[ok] = dot[ok] / (na[ok] * nb[ok])
    return np.clip(cos, -1.0, 1.0), na, nb


def cos_align(fhat: np.ndarray, fstar: np.ndarray, omega: np.ndarray) -> float:
    omega = _check(fhat, fstar, omega)
    cos, _, _ = cell_cosine(fhat, fstar)
    w = omega.astype(np.float64)
    return float(np.sum(w * (1.0 - cos)) / max(1.0, float(np.sum(np.abs(w)))))


def align_loss_agent(fhat: np.ndarray, fstar: np.ndarray, masks: RegionMasks, w: LossWeights = LossWeights()) -> float:
    return w.a_obj * cos_align(fhat, fstar, masks.obj) + w.a_bg * cos_align(fhat, fstar, masks.bg)


def detection_loss(cls_loss: float, reg_loss: float, w: LossWeights = LossWeights()) -> float:
    """Combine externally computed classification and regression terms."""
    return w.a_cls * cls_loss + w.a_reg * reg_loss


def total_loss(det_loss: float, per_agent_align: Sequence[float], w: LossWeights = LossWeights()) -> float:
    align = float(np.mean(per_agent_align)) if len(per_agent_align) else 0.0
    return w.a_det * det_loss + w.a_align * align


def grad_cos_align(fhat: np.ndarray, fstar: np.ndarray, omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic d(cos_align)/d(fhat).

    Returns ``(grad, degenerate)`` where ``degenerate`` flags masked cells with
    a norm below 1e-12; the gradient is zeroed there.
    """
    omega = _check(fhat, fstar, omega)
    a = fhat.astype(np.float64, copy=False)
    b = fstar.astype(np.float64, copy=False)
    cos, na, nb = cell_cosine(a, b)
    w = omega.astype(np.float64)
    norm = max(1.0, float(np.sum(np.abs(w))))
    degenerate = (w != 0) & ((na < NORM_EPS) | (nb < NORM_EPS))
    live = (w != 0) & ~degenerate

    grad = np.zeros_like(a)
    na_l, nb_l = na[live][:, None], nb[live][:, None]
    # d cos / d a = b / (|a||b|) - cos * a / |a|^2
    dcos = b[live] / (na_l * nb_l) - cos[live][:, None] * a[live] / (na_l * na_l)
    grad[live] = -(w[live][:, None] / norm) * dcos
    return grad, degenerate
