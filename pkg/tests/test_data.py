import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from fixtures import FILTER_CASES, png_bytes, rgba_with_missing, run_filter_case, write_rgba_corpus
from scanfill.data import (DatasetManifest, ImageRecord, IngestError, MaskShortfallWarning, ScanlineMask,
                           accept_mask, apply_scanline, assign_folds, cloud_filter, crop_center, decode_image,
                           extract_scanline_masks, ingest_directory, kfold_split, load_mask, load_mask_pool,
                           normalize_region, prepare_images, save_image, load_image, save_mask, save_mask_pool)


@pytest.fixture
def corpus(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        arr = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        (tmp_path / f"img{i}.png").write_bytes(png_bytes(arr))
    (tmp_path / "broken.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
    (tmp_path / "notes.txt").write_text("ignored")
    return tmp_path


@pytest.mark.parametrize("name,kind,build,expected", FILTER_CASES, ids=[c[0] for c in FILTER_CASES])
def test_filter_fixture(name, kind, build, expected):
    assert run_filter_case(kind, build()) is expected


def test_filter_fixture_has_twelve_cases():
    assert len(FILTER_CASES) == 12


def test_ingest_skips_corrupt_file(corpus, caplog):
    manifest, records, skipped = ingest_directory(corpus, "Kenya", "post2003")
    assert len(manifest) == 3 and manifest.ids == ["img0", "img1", "img2"]
    assert len(skipped) == 1 and skipped[0][0].endswith("broken.png")
    assert sum("broken.png" in r.message for r in caplog.records) == 1
    assert records[0].pixels.dtype == np.float32 and records[0].pixels.max() <= 1


def test_reingest_identical_checksums(corpus):
    a = ingest_directory(corpus, "UK", "pre2003")[0]
    b = ingest_directory(corpus, "UK", "pre2003")[0]
    assert a.to_json() == b.to_json()


def test_sixteen_bit_rejected(tmp_path):
    arr = (np.arange(64, dtype=np.uint16).reshape(8, 8) * 1000)
    path = tmp_path / "deep.png"
    Image.fromarray(arr).save(path)
    with pytest.raises(IngestError, match="unsupported bit depth"):
        decode_image(path.read_bytes())
    (tmp_path / "ok.png").write_bytes(png_bytes(np.zeros((4, 4, 3), dtype=np.uint8)))
    _, _, skipped = ingest_directory(tmp_path, "Kenya", "post2003")
    assert "unsupported bit depth" in skipped[0][1]


def test_ingest_errors(tmp_path):
    with pytest.raises(IngestError):
        ingest_directory(tmp_path, "Kenya", "post2003")
    with pytest.raises(ValueError):
        ingest_directory(tmp_path, "Kenya", "1999")


def test_grayscale_rejected():
    with pytest.raises(IngestError, match="colour mode"):
        decode_image(png_bytes(np.zeros((4, 4), dtype=np.uint8)))


def test_region_normalization():
    assert normalize_region("kenya") == "Kenya"
    assert normalize_region("Peru") == "Other:Peru"
    assert normalize_region("Other:Chile") == "Other:Chile"
    with pytest.raises(ValueError):
        normalize_region("Other:")


def test_rgba_alpha_defines_missing_pixels():
    pixels, alpha = decode_image(png_bytes(rgba_with_missing(32, 40)))
    assert int((alpha == 0).sum()) == 40


def test_mask_thresholds_scale_with_image():
    bits = np.zeros((64, 64), dtype=bool)
    bits.reshape(-1)[:819] = True   # 819 / 4096 < 20%
    assert accept_mask(bits)
    bits.reshape(-1)[:820] = True
    assert not accept_mask(bits)


def test_extract_masks_order_and_shortfall(tmp_path):
    write_rgba_corpus(tmp_path, 5)
    _, records, _ = ingest_directory(tmp_path, "Kenya", "post2003")
    with pytest.warns(MaskShortfallWarning, match="only 5 of 8"):
        masks = extract_scanline_masks(records, count=8)
    assert [m.source_id for m in masks] == [f"scene-{i:03d}" for i in range(5)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert len(extract_scanline_masks(records, count=3)) == 3


def test_extract_masks_requires_post2003(tmp_path):
    write_rgba_corpus(tmp_path, 2, size=32)
    _, records, _ = ingest_directory(tmp_path, "Kenya", "pre2003")
    with pytest.raises(ValueError, match="post2003"):
        extract_scanline_masks(records)


def test_mask_png_round_trip(tmp_path):
    bits = np.random.default_rng(0).random((20, 24)) < 0.1
    save_mask(tmp_path / "m.png", bits)
    assert np.array_equal(load_mask(tmp_path / "m.png"), bits)
    masks = [ScanlineMask(bits, "a"), ScanlineMask(~bits, "b")]
    index = save_mask_pool(tmp_path / "pool", masks)
    assert index[1]["source_id"] == "b"
    pool = load_mask_pool(tmp_path / "pool")
    assert np.array_equal(pool[0], bits) and np.array_equal(pool[1], ~bits)


def test_mask_thickness():
    bits = np.zeros((10, 10), dtype=bool)
    bits[2:5] = True
    bits[7] = True
    assert ScanlineMask(bits).thickness == pytest.approx(2.0)


def test_crop_center_marker_and_floor_rule():
    img = np.zeros((256, 256, 3))
    img[128, 128] = 1
    out = crop_center(img, 128)
    assert out.shape == (128, 128, 3) and out[64, 64, 0] == 1
    assert np.array_equal(crop_center(img, 256), img)
    odd = np.arange(65 * 65).reshape(65, 65, 1)
    assert crop_center(odd, 64)[0, 0, 0] == 0
    with pytest.raises(ValueError):
        crop_center(img, 512)


def test_cloud_filter_ignores_outside_window():
    img = np.zeros((128, 128, 3))
    img[:30] = 1.0
    assert cloud_filter(img)
    img[:] = 0.96
    assert not cloud_filter(img)


def test_prepare_images_drops_cloudy_and_small():
    recs = [ImageRecord("a", "Kenya", "post2003", np.zeros((80, 80, 3), np.float32)),
            ImageRecord("b", "Kenya", "post2003", np.ones((80, 80, 3), np.float32)),
            ImageRecord("c", "Kenya", "post2003", np.zeros((40, 40, 3), np.float32))]
    kept, dropped = prepare_images(recs, 64)
    assert [r.id for r in kept] == ["a"] and dropped == ["b", "c"]
    assert kept[0].pixels.shape == (64, 64, 3)


def test_apply_scanline_round_trip():
    img = np.random.default_rng(0).random((8, 8, 3))
    bits = np.zeros((8, 8), dtype=bool)
    bits[3] = True
    task = apply_scanline(img, bits)
    assert np.all(task.context_mask[3] == 0) and np.all(task.corrupted[3] == 0)
    assert np.array_equal(task.composite(img), img)
    empty = apply_scanline(img, np.zeros((8, 8), dtype=bool))
    assert np.all(empty.context_mask == 1)


@given(st.integers(5, 60), st.integers(2, 5), st.integers(0, 100))
def test_kfold_partitions(n, k, seed):
    folds = kfold_split(n, k, seed)
    allidx = np.concatenate(folds)
    assert len(folds) == k
    assert sorted(allidx.tolist()) == list(range(n))
    assert max(map(len, folds)) - min(map(len, folds)) <= 1


def test_kfold_seeded_and_errors():
    assert all(np.array_equal(a, b) for a, b in zip(kfold_split(20, 5, 3), kfold_split(20, 5, 3)))
    with pytest.raises(ValueError):
        kfold_split(3, 5)


def test_manifest_folds_and_json(corpus):
    manifest = ingest_directory(corpus, "Kenya", "post2003")[0]
    with_folds = assign_folds(manifest, k=3, seed=1)
    assert sorted(sum(with_folds.folds(), [])) == [0, 1, 2]
    assert manifest.records[0].fold is None
    again = DatasetManifest.from_json(with_folds.to_json())
    assert again.to_json() == with_folds.to_json()


def test_image_save_load_round_trip(tmp_path):
    img = np.round(np.random.default_rng(0).random((6, 7, 3)) * 255) / 255
    save_image(tmp_path / "x.png", img)
    assert np.allclose(load_image(tmp_path / "x.png"), img, atol=1e-7)
