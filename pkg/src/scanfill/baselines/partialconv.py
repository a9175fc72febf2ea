"""Partial convolutions with mask propagation, the U-shaped network built from them, and its loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..autodiff import Module, Tensor, concat, conv2d, no_grad, upsample_nearest
from ..autodiff.nn import _uniform
from ..autodiff.tensor import ShapeError
from ..models.convnp import PredictionResult, composite_tensor


def _mask_count(mask: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    ones = Tensor(np.ones((1, mask.shape[1], kh, kw), dtype=np.float64))
    with no_grad():
        return conv2d(Tensor(mask.astype(np.float64)), ones, stride=stride, padding=padding).data


def partial_conv2d(x: Tensor, mask: np.ndarray, weight: Tensor, bias: Tensor | None = None,
                   stride: int = 1, padding: int = 0) -> tuple[Tensor, np.ndarray]:
    """Convolve only observed inputs and renormalize by window size / observed count.

    ``mask`` is (B, 1, H, W) or (B, C, H, W) with 1 = valid.  Windows with no
    valid input produce 0 and an invalid output pixel; all others become valid.
    """
    mask = np.asarray(mask)
    if mask.ndim != 4 or mask.shape[0] != x.shape[0] or mask.shape[2:] != x.shape[2:] \
            or mask.shape[1] not in (1, x.shape[1]):
        raise ShapeError(f"mask {mask.shape} is not broadcastable to features {x.shape}")
    kh, kw = weight.shape[2:]
    count = _mask_count(mask, kh, kw, stride, padding)
    window = mask.shape[1] * kh * kw
    valid = count > 0
    ratio = np.where(valid, window / np.where(valid, count, 1.0), 0.0).astype(x.dtype)
    out = conv2d(x * Tensor(mask.astype(x.dtype)), weight, stride=stride, padding=padding) * Tensor(ratio)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    out = out * Tensor(valid.astype(x.dtype))
    return out, valid.astype(x.dtype)


class PartialConv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1):
        self.weight = _uniform(rng, (cout, cin, k, k), cin * k * k)
        self.bias = _uniform(rng, (cout,), cin * k * k)
        self.stride = stride
        self.padding = k // 2

    def forward(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        return partial_conv2d(x, mask, self.weight, self.bias, self.stride, self.padding)


@dataclass(frozen=True)
class PartialConvConfig:
    levels: int = 4
    base_channels: int = 32
    channels: int = 3


@dataclass(frozen=True)
class PartialConvLossWeights:
    valid: float = 1.0
    hole: float = 6.0
    tv: float = 0.1


def _expand(mask: np.ndarray, c: int) -> np.ndarray:
    return np.broadcast_to(mask, (mask.shape[0], c) + mask.shape[2:]) if mask.shape[1] == 1 else mask


class PartialConvNet(Module):
    """U-shaped stack of partial convolutions; the mask travels alongside the features."""

    kind = "partialconv"

    def __init__(self, config: PartialConvConfig | None = None, seed: int = 0):
        self.config = config or PartialConvConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        widths = [c.base_channels * 2 ** min(i, 2) for i in range(c.levels)]
        self.widths = widths
        self.enc = [PartialConv2d(c.channels if i == 0 else widths[i - 1], widths[i], 3, rng,
                                  stride=1 if i == 0 else 2) for i in range(c.levels)]
        self.dec = [PartialConv2d(widths[i + 1] + widths[i], widths[i], 3, rng) for i in range(c.levels - 1)]
        self.out = PartialConv2d(widths[0] + c.channels, c.channels, 3, rng)

    def check_input(self, h: int, w: int) -> None:
        f = 2 ** (self.config.levels - 1)
        if h % f or w % f:
            raise ShapeError(f"PartialConv net needs dims divisible by {f}; pad {h}x{w} accordingly")

    def mean(self, corrupted, context) -> Tensor:
        x = corrupted if isinstance(corrupted, Tensor) else Tensor(corrupted)
        self.check_input(*x.shape[2:])
        m = np.asarray(context, dtype=x.dtype)
        feats, masks = [], []
        h, hm = x, m
        for layer in self.enc:
            h, hm = layer(h, hm)
            h = h.relu()
            feats.append(h)
            masks.append(hm)
        for i in reversed(range(len(self.dec))):
            up = upsample_nearest(h, 2)
            um = np.repeat(np.repeat(hm, 2, axis=2), 2, axis=3)
            h = concat([up, feats[i]], axis=1)
            hm = np.concatenate([_expand(um, up.shape[1]), _expand(masks[i], feats[i].shape[1])], axis=1)
            h, hm = self.dec[i](h, hm)
            h = h.relu()
        h = concat([h, x], axis=1)
        hm = np.concatenate([_expand(hm, self.widths[0]), _expand(m, x.shape[1])], axis=1)
        out, _ = self.out(h, hm)
        return out.sigmoid()

    def forward(self, corrupted, context) -> PredictionResult:
        mu = self.mean(corrupted, context)
        return PredictionResult(mu, composite_tensor(mu, corrupted, context))

    def predict(self, corrupted: np.ndarray, context: np.ndarray, seed: int = 0) -> np.ndarray:
        dtype = self.parameters()[0].dtype
        with no_grad():
            return self.mean(np.asarray(corrupted, dtype=dtype), np.asarray(context, dtype=dtype)).data


def partialconv_loss_terms(pred: Tensor, clean, context,
                           weights: PartialConvLossWeights | None = None) -> dict[str, Tensor]:
    """L1 on valid and hole pixels plus total variation of the composite over the 1-px dilated hole."""
    weights = weights or PartialConvLossWeights()
    clean = np.asarray(clean, dtype=pred.dtype)
    ctx = np.asarray(context, dtype=pred.dtype)
    n = float(pred.size)
    diff = pred - Tensor(clean)
    valid = (diff * Tensor(ctx)).abs().sum() * (1.0 / n)
    hole = (diff * Tensor(1.0 - ctx)).abs().sum() * (1.0 / n)
    comp = composite_tensor(pred, clean, ctx)
    holes = ctx[:, 0] < 0.5
    region = np.stack([ndimage.binary_dilation(hm, structure=np.ones((3, 3))) for hm in holes])[:, None]
    horiz = (region[..., :, 1:] & region[..., :, :-1]).astype(pred.dtype)
    vert = (region[..., 1:, :] & region[..., :-1, :]).astype(pred.dtype)
    tv = ((comp[:, :, :, 1:] - comp[:, :, :, :-1]).abs() * Tensor(horiz)).sum() * (1.0 / n) \
        + ((comp[:, :, 1:, :] - comp[:, :, :-1, :]).abs() * Tensor(vert)).sum() * (1.0 / n)
    total = valid * weights.valid + hole * weights.hole + tv * weights.tv
    return {"valid": valid, "hole": hole, "tv": tv, "total": total}


def partialconv_loss(pred: Tensor, clean, context, weights: PartialConvLossWeights | None = None) -> Tensor:
    return partialconv_loss_terms(pred, clean, context, weights)["total"]
