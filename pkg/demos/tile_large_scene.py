"""Fill scanline gaps in a scene larger than the training crops by tiling it into patches.

    python demos/tile_large_scene.py --checkpoint demo-out/convcnp.sfck --overlap 8
"""
import argparse
from pathlib import Path

import numpy as np

from scanfill.checkpoint import Checkpoint
from scanfill.data import save_image
from scanfill.inference import patch_inpaint
from scanfill.synthetic import scanline_mask, texture_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--overlap", type=int, default=8)
    p.add_argument("--out", default="demo-out")
    args = p.parse_args()

    ckpt = Checkpoint.load(args.checkpoint)
    patch = ckpt.meta.get("train_config", {}).get("image_size", 48)
    tiles = texture_corpus(9, 64, 42)[0]
    scene = np.concatenate([np.concatenate(list(tiles[r * 3:r * 3 + 3]), axis=1) for r in range(3)], axis=0)
    missing = scanline_mask(scene.shape[1], np.random.default_rng(0), height=scene.shape[0])

    filled = patch_inpaint(ckpt, scene, missing, patch=patch, overlap=args.overlap)
    err = np.abs(filled - scene)[missing].mean()
    print(f"{scene.shape[0]}x{scene.shape[1]} scene, {missing.mean():.1%} missing, "
          f"mean abs error in gaps {err:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / "scene_corrupted.png", scene * ~missing[..., None])
    save_image(out / "scene_filled.png", filled)


if __name__ == "__main__":
    main()
