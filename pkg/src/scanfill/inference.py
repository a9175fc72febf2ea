"""Apply trained models to new rasters, whole or tile by tile."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .autodiff import Module, ShapeError
from .checkpoint import Checkpoint
from .tasks import composite


def _resolve(model) -> tuple[Module, dict]:
    if isinstance(model, Checkpoint):
        return model.build(), model.meta
    return model, {}


def worker_count(default: int = 1) -> int:
    """Worker cap from ``SCANFILL_THREADS`` (falls back to ``default``)."""
    raw = os.environ.get("SCANFILL_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(n, 1)


def _predict(model: Module, image: np.ndarray, missing: np.ndarray, seed: int, num_samples: int) -> np.ndarray:
    ctx = (~missing).astype(np.float32)[None, None]
    corrupted = (image.astype(np.float32) * ctx[0, 0][..., None]).transpose(2, 0, 1)[None]
    if model.kind == "convlnp":
        mu = model.predict(corrupted, ctx, seed=seed, num_samples=num_samples)
    else:
        mu = model.predict(corrupted, ctx, seed=seed)
    return np.clip(mu[0].transpose(1, 2, 0), 0.0, 1.0)


def inpaint(model, image: np.ndarray, missing: np.ndarray, seed: int = 0, num_samples: int | None = None,
            expected_size: int | None = None) -> np.ndarray:
    """Fill the ``missing`` pixels of an H x W x 3 image; observed pixels are returned untouched.

    ``model`` is a built model or a :class:`Checkpoint`.  If the checkpoint
    records its training size (or ``expected_size`` is given) other sizes are
    rejected; use :func:`patch_inpaint` for those.
    """
    model, meta = _resolve(model)
    image = np.asarray(image)
    missing = np.asarray(missing, dtype=bool)
    if image.ndim != 3 or image.shape[:2] != missing.shape:
        raise ShapeError(f"image {image.shape} and mask {missing.shape} do not match")
    train_cfg = meta.get("train_config", {})
    size = expected_size or train_cfg.get("image_size")
    if size and image.shape[:2] != (size, size):
        raise ShapeError(f"model was trained on {size}x{size} images, got {image.shape[0]}x{image.shape[1]}; "
                         f"use patch_inpaint(..., patch={size}) for other sizes")
    if not missing.any():
        return image.copy()
    samples = num_samples or train_cfg.get("latent_eval", 32)
    return composite(image, missing, _predict(model, image, missing, seed, samples))


def tile_origins(length: int, patch: int, overlap: int) -> list[int]:
    """Tile starts along one axis: regular stride, last tile aligned to the far edge."""
    stride = patch - overlap
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] != length - patch:
        starts.append(length - patch)
    return starts


def _feather(patch: int, overlap: int, at_start: bool, at_end: bool) -> np.ndarray:
    """Linear ramp over ``overlap`` pixels on interior tile edges, flat on image borders."""
    i = np.arange(patch, dtype=np.float64)
    w = np.ones(patch)
    if overlap:
        if not at_start:
            w = np.minimum(w, (i + 1) / (overlap + 1))
        if not at_end:
            w = np.minimum(w, (patch - i) / (overlap + 1))
    return w


def patch_inpaint(model, image: np.ndarray, missing: np.ndarray, patch: int = 64, overlap: int = 0,
                  seed: int = 0, num_samples: int | None = None, workers: int | None = None) -> np.ndarray:
    """Inpaint a large raster by running the model on ``patch`` x ``patch`` tiles.

    With ``overlap == 0`` tiles are written in row-major order, so pixels
    covered twice by the edge-aligned last row/column take the later tile.
    With ``overlap > 0`` overlapping predictions are blended by linear
    feathering.  Observed pixels are copied from the input at the end either way.
    """
    model, meta = _resolve(model)
    image = np.asarray(image)
    missing = np.asarray(missing, dtype=bool)
    h, w = missing.shape
    if image.shape[:2] != (h, w):
        raise ShapeError(f"image {image.shape} and mask {missing.shape} do not match")
    if patch > h or patch > w:
        raise ShapeError(f"patch {patch} is larger than the {h}x{w} image")
    if not 0 <= overlap < patch:
        raise ValueError("overlap must be in [0, patch)")
    if not missing.any():
        return image.copy()
    samples = num_samples or meta.get("train_config", {}).get("latent_eval", 32)
    ys, xs = tile_origins(h, patch, overlap), tile_origins(w, patch, overlap)
    tiles = [(y, x) for y in ys for x in xs]

    def run(origin):
        y, x = origin
        m = missing[y:y + patch, x:x + patch]
        im = image[y:y + patch, x:x + patch]
        if not m.any():
            return im.astype(np.float64)
        return composite(im, m, _predict(model, im, m, seed, samples)).astype(np.float64)

    n = workers or worker_count()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(run, tiles))
    else:
        results = [run(t) for t in tiles]

    if overlap == 0:
        out = image.astype(np.float64).copy()
        for (y, x), tile in zip(tiles, results):
            out[y:y + patch, x:x + patch] = tile
    else:
        acc = np.zeros(image.shape, dtype=np.float64)
        norm = np.zeros((h, w, 1), dtype=np.float64)
        for (y, x), tile in zip(tiles, results):
            wy = _feather(patch, overlap, y == 0, y + patch == h)
            wx = _feather(patch, overlap, x == 0, x + patch == w)
            wt = (wy[:, None] * wx[None, :])[..., None]
            acc[y:y + patch, x:x + patch] += wt * tile
            norm[y:y + patch, x:x + patch] += wt
        out = acc / norm
    return composite(image, missing, out.astype(image.dtype))
