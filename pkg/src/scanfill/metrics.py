"""SSIM / MS-SSIM (differentiable) and the scalar error metrics.

Images are handled as NCHW tensors. 3-d inputs are taken to be a single
H x W x C raster and converted. SSIM statistics use a Gaussian window
applied without padding ("valid"), per channel; per-channel scores are then
averaged over channels.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, avg_pool2d, conv2d

CANONICAL_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class MsSsimScaleWarning(UserWarning):
    """Issued when an image is too small for every configured MS-SSIM scale."""


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")


@dataclass(frozen=True)
class MsSsimParams:
    base: SsimParams = field(default_factory=SsimParams)
    scale_weights: tuple[float, ...] = CANONICAL_WEIGHTS

    def __post_init__(self):
        if not self.scale_weights or any(w <= 0 for w in self.scale_weights):
            raise ValueError("scale weights must be positive")

    @property
    def normalized_weights(self) -> tuple[float, ...]:
        total = sum(self.scale_weights)
        return tuple(w / total for w in self.scale_weights)

    def max_scales(self, h: int, w: int) -> int:
        n = 0
        while min(h, w) >= self.base.window_size * 2 ** n:
            n += 1
        return n

    def fitted(self, h: int, w: int) -> "MsSsimParams":
        """Copy restricted to the scales that fit an h x w image, weights renormalized."""
        n = min(self.max_scales(h, w), len(self.scale_weights))
        if n < 1:
            raise ValueError(
                f"image {h}x{w} is smaller than the {self.base.window_size}-pixel SSIM window")
        kept = self.scale_weights[:n]
        total = sum(kept)
        return replace(self, scale_weights=tuple(w / total for w in kept))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def as_nchw(x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if x.ndim == 3:
        return x.transpose(2, 0, 1).reshape(1, x.shape[2], x.shape[0], x.shape[1])
    if x.ndim != 4:
        raise ValueError(f"expected an H x W x C image or an NCHW batch, got shape {x.shape}")
    return x


def _blur(x: Tensor, win: np.ndarray) -> Tensor:
    b, c, h, w = x.shape
    k = len(win)
    flat = x.reshape(b * c, 1, h, w)
    flat = conv2d(flat, Tensor(win.reshape(1, 1, 1, k).astype(x.dtype)))
    flat = conv2d(flat, Tensor(win.reshape(1, 1, k, 1).astype(x.dtype)))
    return flat.reshape(b, c, flat.shape[2], flat.shape[3])


def _ssim_terms(x: Tensor, y: Tensor, p: SsimParams) -> tuple[Tensor, Tensor]:
    """Per-(image, channel) mean SSIM and mean contrast-structure term."""
    if min(x.shape[2:]) < p.window_size:
        raise ValueError(f"image {x.shape[2]}x{x.shape[3]} is smaller than the {p.window_size}-pixel window")
    win = gaussian_window(p.window_size, p.window_sigma)
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    mu_x = _blur(x, win)
    mu_y = _blur(y, win)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    s_xx = _blur(x * x, win) - mu_xx
    s_yy = _blur(y * y, win) - mu_yy
    s_xy = _blur(x * y, win) - mu_xy
    cs_map = (s_xy * 2.0 + c2) / (s_xx + s_yy + c2)
    lum_map = (mu_xy * 2.0 + c1) / (mu_xx + mu_yy + c1)
    return (lum_map * cs_map).mean(axis=(2, 3)), cs_map.mean(axis=(2, 3))


def _check_pair(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def ssim(a, b, p: SsimParams | None = None, reduction: str = "mean") -> Tensor:
    """Single-scale SSIM. ``reduction`` is ``"mean"`` (scalar) or ``"none"`` (one value per image)."""
    p = p or SsimParams()
    x, y = as_nchw(a), as_nchw(b)
    _check_pair(x, y)
    s, _ = _ssim_terms(x, y, p)
    per_image = s.mean(axis=1)
    return per_image.mean() if reduction == "mean" else per_image


def ms_ssim(a, b, p: MsSsimParams | None = None, reduction: str = "mean") -> Tensor:
    """Multi-scale SSIM, differentiable and unclamped.

    Contrast-structure terms of the first scales and the full SSIM of the last
    scale are floored at zero and combined as a weighted geometric product.
    Scales that do not fit the image are dropped (with a warning) and the
    remaining weights renormalized.
    """
    p = p or MsSsimParams()
    x, y = as_nchw(a), as_nchw(b)
    _check_pair(x, y)
    h, w = x.shape[2:]
    fitted = p.fitted(h, w)
    n = len(fitted.scale_weights)
    if n < len(p.scale_weights):
        warnings.warn(
            f"{h}x{w} image fits only {n} of {len(p.scale_weights)} MS-SSIM scales; weights renormalized",
            MsSsimScaleWarning, stacklevel=2)
    factors = []
    for i, wt in enumerate(fitted.scale_weights):
        s, cs = _ssim_terms(x, y, p.base)
        term = s if i == n - 1 else cs
        factors.append(term.relu() ** wt)
        if i < n - 1:
            x, y = avg_pool2d(x, 2), avg_pool2d(y, 2)
    value = factors[0]
    for f in factors[1:]:
        value = value * f
    per_image = value.mean(axis=1)
    return per_image.mean() if reduction == "mean" else per_image


def ms_ssim_score(a, b, p: MsSsimParams | None = None) -> np.ndarray:
    """Reported MS-SSIM per image, clamped to [0, 1]."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MsSsimScaleWarning)
        raw = ms_ssim(_const(a), _const(b), p, reduction="none").data
    return np.clip(raw.astype(np.float64), 0.0, 1.0)


def _const(x):
    return Tensor(x.data) if isinstance(x, Tensor) else x


def ms_ssim_loss(pred, target, mask_ignored=None, p: MsSsimParams | None = None) -> Tensor:
    """``1 - ms_ssim`` on full (composited) images; the mask argument is accepted and unused."""
    return 1.0 - ms_ssim(pred, target, p)


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    return float(np.mean((pred - target) ** 2))


def mape_with_diagnostics(pred, target, eps: float = 1e-6) -> tuple[float, int]:
    """MAPE in percent plus the number of terms excluded because ``|target| < eps``."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    keep = np.abs(target) >= eps
    excluded = int((~keep).sum())
    if not keep.any():
        return float("nan"), excluded
    return float(100.0 * np.mean(np.abs(pred[keep] - target[keep]) / np.abs(target[keep]))), excluded


def mape(pred, target, eps: float = 1e-6) -> float:
    return mape_with_diagnostics(pred, target, eps)[0]
