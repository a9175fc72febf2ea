"""Local image ingestion, scanline mask extraction, filters, corruption and fold splits."""
from __future__ import annotations

import hashlib
import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tasks import InpaintTask

log = logging.getLogger(__name__)

REGIONS = ("Kenya", "UK", "Norway", "Brazil", "Nepal")
ERAS = ("pre2003", "post2003")
IMAGE_SUFFIXES = (".png",)
MIN_MISSING = 100
MAX_MISSING_FRACTION = 0.20
WHITE_THRESHOLD = 0.95
CLOUD_WINDOW = 64


class IngestError(ValueError):
    pass


class MaskShortfallWarning(UserWarning):
    pass


def normalize_region(region: str) -> str:
    """Known regions keep their canonical spelling; anything else becomes ``Other:<tag>``."""
    for r in REGIONS:
        if region.lower() == r.lower():
            return r
    tag = region.split(":", 1)[1] if region.lower().startswith("other:") else region
    if not tag:
        raise ValueError("empty region tag")
    return f"Other:{tag}"


@dataclass
class ImageRecord:
    id: str
    region: str
    era: str
    pixels: np.ndarray
    alpha: np.ndarray | None = None
    path: str = ""
    sha256: str = ""


@dataclass
class ManifestEntry:
    id: str
    path: str
    region: str
    era: str
    sha256: str
    fold: int | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def folds(self, k: int | None = None) -> list[list[int]]:
        k = k or 1 + max(r.fold for r in self.records if r.fold is not None)
        return [[i for i, r in enumerate(self.records) if r.fold == f] for f in range(k)]

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.records], indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls([ManifestEntry(**r) for r in json.loads(text)])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text())


# ----------------------------------------------------------------- decoding

def _png_bit_depth(raw: bytes) -> int | None:
    if raw[:8] != b"\x89PNG\r\n\x1a\n" or len(raw) < 29 or raw[12:16] != b"IHDR":
        return None
    return raw[24]


def decode_image(raw: bytes) -> tuple[np.ndarray, np.ndarray | None]:
    """8-bit RGB/RGBA bytes -> (H x W x 3 float32 in [0, 1], alpha or None)."""
    depth = _png_bit_depth(raw)
    if depth is not None and depth != 8:
        raise IngestError(f"unsupported bit depth {depth}")
    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            mode = im.mode
            if mode not in ("RGB", "RGBA"):
                if mode in ("I;16", "I;16B", "I", "F"):
                    raise IngestError(f"unsupported bit depth (mode {mode})")
                raise IngestError(f"unsupported colour mode {mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise IngestError(f"undecodable image: {exc}") from None
    pixels = arr[..., :3].astype(np.float32) / 255.0
    alpha = arr[..., 3].astype(np.float32) / 255.0 if mode == "RGBA" else None
    return pixels, alpha


def load_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())[0]


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def ingest_directory(path, region: str, era: str) -> tuple[DatasetManifest, list[ImageRecord], list[tuple[str, str]]]:
    """Decode every PNG under ``path`` in name order.

    Returns the manifest, the decoded records and ``(file, reason)`` pairs for
    skipped files.  Raises :class:`IngestError` if nothing usable was found.
    """
    if era not in ERAS:
        raise ValueError(f"era must be one of {ERAS}")
    region = normalize_region(region)
    root = Path(path)
    if not root.is_dir():
        raise IngestError(f"{root} is not a directory")
    records, skipped = [], []
    for file in sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        raw = file.read_bytes()
        try:
            pixels, alpha = decode_image(raw)
        except IngestError as exc:
            log.warning("skipping %s: %s", file.name, exc)
            skipped.append((str(file), str(exc)))
            continue
        records.append(ImageRecord(file.stem, region, era, pixels, alpha, str(file),
                                   hashlib.sha256(raw).hexdigest()))
    if not records:
        raise IngestError(f"no usable images in {root}")
    manifest = DatasetManifest([ManifestEntry(r.id, r.path, r.region, r.era, r.sha256) for r in records])
    return manifest, records, skipped


# ------------------------------------------------------------------- masks

@dataclass(frozen=True)
class ScanlineMask:
    bits: np.ndarray
    source_id: str = ""

    @property
    def missing_count(self) -> int:
        return int(self.bits.sum())

    @property
    def missing_fraction(self) -> float:
        return self.missing_count / self.bits.size

    @property
    def thickness(self) -> float:
        """Mean vertical run length of missing pixels; gaps run roughly horizontally."""
        b = np.asarray(self.bits, dtype=np.int8)
        padded = np.pad(b, ((1, 1), (0, 0)))
        starts = int((np.diff(padded, axis=0) == 1).sum())
        return self.missing_count / starts if starts else 0.0


def accept_mask(bits: np.ndarray, min_missing: int = MIN_MISSING,
                max_fraction: float = MAX_MISSING_FRACTION) -> bool:
    count = int(np.count_nonzero(bits))
    if max_fraction == MAX_MISSING_FRACTION:
        # integer form so the 20% boundary is exact
        return count >= min_missing and count * 5 < bits.size
    return count >= min_missing and count < max_fraction * bits.size


def missing_pixels(record: ImageRecord) -> np.ndarray:
    if record.alpha is not None:
        return record.alpha == 0
    return np.all(record.pixels == 0, axis=-1)


def extract_scanline_masks(records: Sequence[ImageRecord], count: int = 100,
                           min_missing: int = MIN_MISSING,
                           max_fraction: float = MAX_MISSING_FRACTION) -> list[ScanlineMask]:
    """First ``count`` acceptable masks in id order; warns when fewer exist."""
    bad = [r.id for r in records if r.era != "post2003"]
    if bad:
        raise ValueError(f"mask extraction needs post2003 records; got pre2003: {bad[:5]}")
    out = []
    for rec in sorted(records, key=lambda r: r.id):
        bits = missing_pixels(rec)
        if accept_mask(bits, min_missing, max_fraction):
            out.append(ScanlineMask(bits, rec.id))
            if len(out) == count:
                break
    if len(out) < count:
        warnings.warn(f"only {len(out)} of {count} requested masks passed the filter",
                      MaskShortfallWarning, stacklevel=2)
    return out


def save_mask(path, mask) -> None:
    bits = mask.bits if isinstance(mask, ScanlineMask) else np.asarray(mask, dtype=bool)
    Image.fromarray(np.where(bits, 255, 0).astype(np.uint8)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def save_mask_pool(directory, masks: Sequence[ScanlineMask]) -> list[dict]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for i, m in enumerate(masks):
        name = f"mask-{i:04d}.png"
        save_mask(directory / name, m)
        index.append({"file": name, "source_id": m.source_id, "missing_count": m.missing_count,
                      "missing_fraction": m.missing_fraction, "thickness": m.thickness})
    (directory / "masks.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return index


def load_mask_pool(directory) -> np.ndarray:
    """(N, H, W) bool in the order listed by ``masks.json`` (or file-name order)."""
    directory = Path(directory)
    index = directory / "masks.json"
    names = [e["file"] for e in json.loads(index.read_text())] if index.exists() \
        else sorted(p.name for p in directory.glob("*.png"))
    if not names:
        raise IngestError(f"no masks in {directory}")
    return np.stack([load_mask(directory / n) for n in names])


# ------------------------------------------------------- filters and crops

def crop_center(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    if size > h or size > w:
        raise ValueError(f"cannot crop {h}x{w} to {size}x{size}")
    top, left = (h - size) // 2, (w - size) // 2
    return image[top:top + size, left:left + size]


def cloud_filter(image: np.ndarray, white_threshold: float = WHITE_THRESHOLD,
                 window: int = CLOUD_WINDOW) -> bool:
    """Keep iff fewer than 90% of the central window's pixels are white in every channel."""
    h, w = image.shape[:2]
    wh, ww = min(window, h), min(window, w)
    top, left = (h - wh) // 2, (w - ww) // 2
    center = image[top:top + wh, left:left + ww]
    white = int(np.all(center >= white_threshold, axis=-1).sum())
    return white * 10 < 9 * center.shape[0] * center.shape[1]


def apply_scanline(image: np.ndarray, mask, image_id: str = "") -> InpaintTask:
    bits = mask.bits if isinstance(mask, ScanlineMask) else np.asarray(mask, dtype=bool)
    return InpaintTask(np.asarray(image), bits, image_id)


def prepare_images(records: Iterable[ImageRecord], size: int, cloud: bool = True
                   ) -> tuple[list[ImageRecord], list[str]]:
    """Centre-crop to ``size`` and drop cloudy scenes; returns kept records and dropped ids."""
    kept, dropped = [], []
    for rec in records:
        if min(rec.pixels.shape[:2]) < size:
            dropped.append(rec.id)
            continue
        if cloud and not cloud_filter(rec.pixels):
            dropped.append(rec.id)
            continue
        alpha = crop_center(rec.alpha, size) if rec.alpha is not None else None
        kept.append(ImageRecord(rec.id, rec.region, rec.era, crop_center(rec.pixels, size).copy(),
                                alpha, rec.path, rec.sha256))
    return kept, dropped


# ------------------------------------------------------------------- folds

def kfold_split(n: int, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Seeded permutation cut into ``k`` contiguous slices of test indices."""
    if k < 2 or n < k:
        raise ValueError(f"cannot split {n} records into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def assign_folds(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> DatasetManifest:
    folds = kfold_split(len(manifest), k, seed)
    out = [ManifestEntry(**asdict(r)) for r in manifest.records]
    for f, idx in enumerate(folds):
        for i in idx:
            out[i].fold = f
    return DatasetManifest(out)
