"""Procedural satellite-like textures and scanline masks for smoke-scale experiments.

Textures mimic agricultural scenes: field parcels with hard borders, crop-row
patterns a few pixels wide and mild sensor grain.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

TRAIN_FAMILIES = ("gradients", "blobs", "stripes")
HELD_OUT_FAMILIES = ("cells",)


def _palette(rng: np.random.Generator, n: int) -> np.ndarray:
    base = rng.uniform(0.15, 0.85, size=3)
    return np.clip(base + rng.normal(0, 0.2, size=(n, 3)), 0.02, 0.98)


def _grid(size: int):
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="ij")


def _grain(size: int, rng: np.random.Generator, amp: float = 0.04) -> np.ndarray:
    """Sensor-like noise, correlated over ~1 px and mostly shared across bands."""
    g = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), (0.7, 0.7, 0))
    g = g.mean(axis=-1, keepdims=True) * 0.7 + g * 0.3
    return amp * g / (g.std() + 1e-12)


def _rows(size: int, rng: np.random.Generator, period: float, sharpness: float = 3.0) -> np.ndarray:
    """Crop-row pattern in [0, 1]: a squared-off sinusoid at a random angle and phase."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    s = np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period + rng.uniform(0, 2 * np.pi))
    return 0.5 + 0.5 * np.tanh(sharpness * s) / np.tanh(sharpness)


def gradient_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grid(size)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / (np.ptp(t) + 1e-12)
    a, b = _palette(rng, 2)
    img = a + (b - a) * t[..., None] + 0.15 * (_rows(size, rng, rng.uniform(3, 7))[..., None] - 0.5)
    return np.clip(img + _grain(size, rng), 0, 1)


def blob_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Hard-edged round fields, each with its own row pattern, over a plain background."""
    yy, xx = _grid(size)
    bg, *cols = _palette(rng, 6)
    img = np.broadcast_to(bg, (size, size, 3)).copy()
    for col in cols:
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.1, 0.3)
        inside = (np.hypot(yy - cy, xx - cx) < r)[..., None]
        rows = 0.2 * (_rows(size, rng, rng.uniform(3, 7)) - 0.5)
        img = np.where(inside, col + rows[..., None], img)
    return np.clip(img + _grain(size, rng), 0, 1)


def stripe_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    a, b = _palette(rng, 2)
    t = _rows(size, rng, rng.uniform(3, 8))
    return np.clip(a + (b - a) * t[..., None] + _grain(size, rng), 0, 1)


def cell_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Voronoi parcels with sharp borders, each carrying rows of its own period."""
    yy, xx = _grid(size)
    n = int(rng.integers(4, 9))
    seeds = rng.uniform(0, 1, size=(n, 2))
    d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    labels = d.argmin(axis=-1)
    cols = _palette(rng, n)
    rows = np.stack([_rows(size, rng, p) for p in rng.uniform(3, 7, n)])
    own = np.take_along_axis(rows, labels[None], axis=0)[0]
    img = cols[labels] + 0.2 * (own[..., None] - 0.5)
    return np.clip(img + _grain(size, rng), 0, 1)


_FAMILIES = {
    "gradients": gradient_texture,
    "blobs": blob_texture,
    "stripes": stripe_texture,
    "cells": cell_texture,
}


def texture(family: str, size: int, rng: np.random.Generator) -> np.ndarray:
    try:
        fn = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown texture family {family!r}; choose from {sorted(_FAMILIES)}") from None
    return fn(size, rng).astype(np.float32)


def texture_corpus(n: int, size: int, seed: int, families=TRAIN_FAMILIES) -> tuple[np.ndarray, list[str]]:
    """``n`` images cycling through ``families``; returns (N, size, size, 3) float32 and ids."""
    rng = np.random.default_rng(seed)
    images, ids = [], []
    for i in range(n):
        fam = families[i % len(families)]
        images.append(texture(fam, size, rng))
        ids.append(f"{fam}-{i:04d}")
    return np.stack(images), ids


def scanline_mask(size: int, rng: np.random.Generator, height: int | None = None) -> np.ndarray:
    """Tilted parallel gap stripes of 1-3 px, mimicking SLC-off striping (True = missing)."""
    h, w = (height or size), size
    theta = rng.uniform(-0.15, 0.15)
    period = rng.uniform(9.0, 16.0)
    width = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0, period)
    yy, xx = np.mgrid[0:h, 0:w]
    s = yy * np.cos(theta) - xx * np.sin(theta) + phase
    # gap width grows slightly across the scene, as in real SLC-off imagery
    local_width = width * (1.0 + 0.3 * xx / max(w - 1, 1))
    return np.mod(s, period) < local_width


def mask_pool(n: int, size: int, seed: int, min_missing: int = 100, max_fraction: float = 0.20) -> np.ndarray:
    """``n`` synthetic masks that pass the acceptance filter; (n, size, size) bool."""
    if min_missing >= max_fraction * size * size:
        raise ValueError(f"no {size}x{size} mask can have >= {min_missing} missing pixels and "
                         f"< {max_fraction:.0%} coverage; use a larger size or lower min_missing")
    rng = np.random.default_rng(seed)
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 1000 * n:
            raise RuntimeError(f"mask generator accepted only {len(out)} of {n} masks at size {size}")
        m = scanline_mask(size, rng)
        count = int(m.sum())
        if count >= min_missing and count < max_fraction * m.size:
            out.append(m)
    return np.stack(out)
