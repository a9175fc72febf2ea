from __future__ import annotations

import numpy as np

from ..autodiff import Conv2d, Module, Tensor


class ResBlock(Module):
    """Pre-activation residual block with two 3x3 convolutions."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.conv1 = Conv2d(width, width, 3, rng)
        self.conv2 = Conv2d(width, width, 3, rng)
        # residual branch starts silent so the block begins as the identity
        self.conv2.weight.data[...] = 0.0
        self.conv2.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(self.conv1(x.relu()).relu())


class ResNetTrunk(Module):
    """1x1 projection to ``width`` channels followed by ``depth`` 3x3 conv layers in residual pairs."""

    def __init__(self, cin: int, width: int, depth: int, rng: np.random.Generator):
        if depth < 2 or depth % 2:
            raise ValueError(f"trunk depth must be an even number of conv layers, got {depth}")
        self.proj = Conv2d(cin, width, 1, rng)
        self.blocks = [ResBlock(width, rng) for _ in range(depth // 2)]
        self.depth = depth

    def forward(self, x: Tensor) -> Tensor:
        h = self.proj(x)
        for block in self.blocks:
            h = block(h)
        return h


class PointwiseMLP(Module):
    """Per-pixel MLP realized with 1x1 convolutions; ReLU between layers, none after the last."""

    def __init__(self, cin: int, hidden: int, cout: int, layers: int, rng: np.random.Generator):
        if layers < 1:
            raise ValueError("MLP needs at least one layer")
        dims = [cin] + [hidden] * (layers - 1) + [cout]
        self.layers = [Conv2d(a, b, 1, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x.relu())
        return x
