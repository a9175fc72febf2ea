"""SetConv: density-normalized positive convolution of the masked context."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Module, Tensor, concat, depthwise_conv2d, parameter

POSITIVITY_FLOOR = 1e-8


@dataclass
class FunctionalRepresentation:
    """``grid`` is (B, 1 + C, H, W): channel 0 is the raw density, the rest the normalized signal."""

    grid: Tensor
    empty_context: np.ndarray

    @property
    def density(self) -> Tensor:
        return self.grid[:, :1]

    @property
    def signal(self) -> Tensor:
        return self.grid[:, 1:]

    def coverage_grid(self, kernel: Tensor) -> Tensor:
        """Grid with the density divided by the kernel mass, so it reads as local coverage in [0, 1]."""
        return concat([self.density / kernel.sum(), self.signal], axis=1)


def positive_kernel(raw: Tensor) -> Tensor:
    return raw.abs() + POSITIVITY_FLOOR


def set_conv(image, context_mask, kernel: Tensor, eps_div: float = 1e-8) -> FunctionalRepresentation:
    """Encode a gridded context set.

    ``image`` is (B, C, H, W), ``context_mask`` (B, 1, H, W) with 1 on observed
    pixels and ``kernel`` a (k, k) strictly positive weight shared by the
    density and all signal channels.  Signal channels are divided by the
    density (floored at ``eps_div``) so a lone context point reproduces its own
    value everywhere inside the kernel footprint.
    """
    image = image if isinstance(image, Tensor) else Tensor(image)
    mask = context_mask if isinstance(context_mask, Tensor) else Tensor(context_mask, dtype=image.dtype)
    if image.shape[0] != mask.shape[0] or image.shape[2:] != mask.shape[2:]:
        raise ValueError(f"image {image.shape} and mask {mask.shape} dims differ")
    k = kernel.shape[-1]
    phi = concat([mask, image * mask], axis=1)
    r = depthwise_conv2d(phi, kernel, padding=k // 2)
    density = r[:, :1]
    signal = r[:, 1:] / density.clip(lo=eps_div)
    empty = mask.data.reshape(mask.shape[0], -1).sum(axis=1) == 0
    return FunctionalRepresentation(concat([density, signal], axis=1), empty)


class SetConv(Module):
    def __init__(self, kernel_size: int, rng: np.random.Generator, eps_div: float = 1e-8):
        if kernel_size % 2 == 0:
            raise ValueError("SetConv kernel size must be odd")
        c = np.arange(kernel_size) - kernel_size // 2
        d2 = c[:, None] ** 2 + c[None, :] ** 2
        scale = 1.0
        init = np.exp(-d2 / (2 * scale ** 2)) * rng.uniform(0.9, 1.1, size=d2.shape)
        self.raw_kernel = parameter(init.astype(np.float32))
        self.eps_div = eps_div

    @property
    def kernel(self) -> Tensor:
        return positive_kernel(self.raw_kernel)

    def forward(self, image, context_mask) -> FunctionalRepresentation:
        return set_conv(image, context_mask, self.kernel, self.eps_div)

    def features(self, image, context_mask) -> Tensor:
        """Trunk input: coverage-scaled density plus normalized signal."""
        kernel = self.kernel
        return set_conv(image, context_mask, kernel, self.eps_div).coverage_grid(kernel)
