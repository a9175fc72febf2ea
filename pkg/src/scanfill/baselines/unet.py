from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Conv2d, ConvTranspose2d, Module, Tensor, avg_pool2d, concat, no_grad
from ..models.convnp import PredictionResult, composite_tensor
from ..autodiff.tensor import ShapeError


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 4
    base_channels: int = 32
    in_channels: int = 4
    out_channels: int = 3
    skip: bool = True

    def check_input(self, h: int, w: int) -> None:
        f = 2 ** (self.levels - 1)
        if h % f or w % f:
            ph, pw = (-h) % f, (-w) % f
            raise ShapeError(
                f"U-Net with {self.levels} levels needs dims divisible by {f}; "
                f"pad {h}x{w} by ({ph}, {pw}) to {h + ph}x{w + pw}")


class _DoubleConv(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.a = Conv2d(cin, cout, 3, rng)
        self.b = Conv2d(cout, cout, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.b(self.a(x).relu()).relu()


class UNet(Module):
    """Encoder-decoder with average pooling, transposed-conv upsampling and skip connections.

    Input is the zero-filled RGB image stacked with the context mask.
    """

    kind = "unet"

    def __init__(self, config: UNetConfig | None = None, seed: int = 0):
        self.config = config or UNetConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        widths = [c.base_channels * 2 ** i for i in range(c.levels)]
        self.down = [_DoubleConv(c.in_channels if i == 0 else widths[i - 1], widths[i], rng)
                     for i in range(c.levels)]
        self.up = [ConvTranspose2d(widths[i + 1], widths[i], 2, rng) for i in range(c.levels - 1)]
        self.merge = [_DoubleConv(widths[i] * (2 if c.skip else 1), widths[i], rng)
                      for i in range(c.levels - 1)]
        self.head = Conv2d(widths[0], c.out_channels, 1, rng)

    def mean(self, corrupted, context) -> Tensor:
        corrupted = corrupted if isinstance(corrupted, Tensor) else Tensor(corrupted)
        self.config.check_input(*corrupted.shape[2:])
        x = concat([corrupted, Tensor(np.asarray(context, dtype=corrupted.dtype))], axis=1)
        skips = []
        for i, block in enumerate(self.down):
            x = block(x)
            if i < len(self.down) - 1:
                skips.append(x)
                x = avg_pool2d(x, 2)
        for i in reversed(range(len(self.up))):
            x = self.up[i](x)
            if self.config.skip:
                x = concat([x, skips[i]], axis=1)
            x = self.merge[i](x)
        return self.head(x).sigmoid()

    def forward(self, corrupted, context) -> PredictionResult:
        mu = self.mean(corrupted, context)
        return PredictionResult(mu, composite_tensor(mu, corrupted, context))

    def predict(self, corrupted: np.ndarray, context: np.ndarray, seed: int = 0) -> np.ndarray:
        dtype = self.parameters()[0].dtype
        with no_grad():
            return self.mean(np.asarray(corrupted, dtype=dtype), np.asarray(context, dtype=dtype)).data
