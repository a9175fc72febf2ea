"""Inpainting tasks: an image plus a scanline mask splits into context and target pixels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class InpaintTask:
    """``clean`` is H x W x 3 in [0, 1]; ``missing`` is H x W bool (True = scanline gap)."""

    clean: np.ndarray
    missing: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        if self.clean.ndim != 3 or self.clean.shape[:2] != self.missing.shape:
            raise ValueError(f"image {self.clean.shape} and mask {self.missing.shape} do not match")

    @property
    def context_mask(self) -> np.ndarray:
        return (~self.missing).astype(self.clean.dtype)

    @property
    def target_mask(self) -> np.ndarray:
        return self.missing.astype(self.clean.dtype)

    @property
    def corrupted(self) -> np.ndarray:
        """Zero-filled view the models see."""
        return self.clean * self.context_mask[..., None]

    @property
    def empty_context(self) -> bool:
        return bool(self.missing.all())

    def composite(self, prediction: np.ndarray) -> np.ndarray:
        """Keep observed pixels, take ``prediction`` inside the gaps."""
        return np.where(self.missing[..., None], prediction.astype(self.clean.dtype), self.clean)


def composite(image: np.ndarray, missing: np.ndarray, prediction: np.ndarray) -> np.ndarray:
    return np.where(missing[..., None], prediction.astype(image.dtype), image)


def batch_arrays(tasks: Sequence[InpaintTask], dtype=np.float32):
    """Stack tasks into NCHW arrays: (corrupted, context mask (N,1,H,W), clean)."""
    clean = np.stack([t.clean for t in tasks]).astype(dtype).transpose(0, 3, 1, 2)
    ctx = np.stack([~t.missing for t in tasks]).astype(dtype)[:, None]
    return clean * ctx, ctx, clean


def to_hwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))
