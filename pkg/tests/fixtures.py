"""Synthetic image fixtures shared by the data-pipeline, CLI and acceptance tests."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from scanfill.data import ImageRecord, accept_mask, cloud_filter, decode_image, missing_pixels


def png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def rgba_with_missing(size: int, n_missing: int, seed: int = 0) -> np.ndarray:
    """Opaque textured RGBA image with ``n_missing`` transparent pixels laid out row by row."""
    rng = np.random.default_rng(seed)
    arr = np.empty((size, size, 4), dtype=np.uint8)
    arr[..., :3] = rng.integers(20, 235, (size, size, 3))
    arr[..., 3] = 255
    row0 = int(rng.integers(0, size // 2))
    flat = arr[..., 3].reshape(-1)
    flat[row0 * size:row0 * size + n_missing] = 0
    return arr


def write_rgba_corpus(directory, count: int, size: int = 64, seed: int = 0) -> Path:
    """PNG files with horizontal transparent stripes, each passing the mask filter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        arr = np.empty((size, size, 4), dtype=np.uint8)
        arr[..., :3] = rng.integers(20, 235, (size, size, 3))
        arr[..., 3] = 255
        for _ in range(int(rng.integers(1, 3))):
            y = int(rng.integers(0, size - 4))
            arr[y:y + int(rng.integers(2, 5)), :, 3] = 0
        (directory / f"scene-{i:03d}.png").write_bytes(png_bytes(arr))
    return directory


def _white_fraction_image(side: int, white: int) -> np.ndarray:
    img = np.zeros((side, side, 3), dtype=np.float32)
    img.reshape(-1, 3)[:white] = 1.0
    return img


def _white_border(size: int = 128, window: int = 64) -> np.ndarray:
    img = np.ones((size, size, 3), dtype=np.float32)
    o = (size - window) // 2
    img[o:o + window, o:o + window] = 0.2
    return img


# (name, filter, payload, expected keep/accept); mask payloads are RGBA PNG bytes
FILTER_CASES = [
    ("mask-150px-of-128sq", "mask", lambda: png_bytes(rgba_with_missing(128, 150, 1)), True),
    ("mask-99px", "mask", lambda: png_bytes(rgba_with_missing(128, 99, 2)), False),
    ("mask-100px-boundary", "mask", lambda: png_bytes(rgba_with_missing(128, 100, 3)), True),
    ("mask-25pct", "mask", lambda: png_bytes(rgba_with_missing(128, 4096, 4)), False),
    ("mask-just-under-20pct", "mask", lambda: png_bytes(rgba_with_missing(128, 3276, 5)), True),
    ("mask-exactly-20pct-of-50sq", "mask", lambda: png_bytes(rgba_with_missing(50, 500, 6)), False),
    ("mask-none-missing", "mask", lambda: png_bytes(rgba_with_missing(64, 0, 7)), False),
    ("cloud-all-white", "cloud", lambda: np.ones((64, 64, 3), dtype=np.float32), False),
    ("cloud-all-black", "cloud", lambda: np.zeros((64, 64, 3), dtype=np.float32), True),
    ("cloud-exactly-90pct-white-10sq", "cloud", lambda: _white_fraction_image(10, 90), False),
    ("cloud-89pct-white-10sq", "cloud", lambda: _white_fraction_image(10, 89), True),
    ("cloud-white-outside-centre", "cloud", _white_border, True),
]


def run_filter_case(kind: str, payload) -> bool:
    if kind == "mask":
        pixels, alpha = decode_image(payload)
        return accept_mask(missing_pixels(ImageRecord("case", "Kenya", "post2003", pixels, alpha)))
    return cloud_filter(payload)
