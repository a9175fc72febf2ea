"""How much does gap filling help a regressor trained on the images?

Labels come from a frozen random network applied to clean images.  A fresh regressor is then
fit on clean, zero-filled and inpainted versions of the same images and scored by MAPE.

    python demos/downstream_regression.py --checkpoint demo-out/convcnp.sfck
"""
import argparse

import numpy as np

from scanfill.checkpoint import Checkpoint
from scanfill.downstream import RegressorConfig, SyntheticTaskSpec, compare_variants
from scanfill.synthetic import mask_pool, texture_corpus
from scanfill.training import ModelMethod, NavierStokesMethod, make_eval_tasks


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--checkpoint", help="trained ConvCNP; omitted means Navier-Stokes only")
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=60)
    args = p.parse_args()

    images, ids = texture_corpus(64, args.size, 3000)
    pool = mask_pool(100, args.size, 7)
    methods = [NavierStokesMethod()]
    if args.checkpoint:
        methods.append(ModelMethod(Checkpoint.load(args.checkpoint).build()))

    medians: dict[str, list[float]] = {}
    for seed in range(args.seeds):
        tasks = make_eval_tasks(images, ids, pool, seed)
        variants = {"clean": images, "scanline": np.stack([t.corrupted for t in tasks])}
        for m in methods:
            preds = m.predict(tasks, seed)
            variants[m.name] = np.stack([t.composite(np.clip(q, 0, 1)) for t, q in zip(tasks, preds)])
        table, _ = compare_variants(SyntheticTaskSpec(10.0, 0, seed + 1, args.size), images, variants,
                                    cfg=RegressorConfig(epochs=args.epochs), seed=seed)
        for name in variants:
            medians.setdefault(name, []).append(float(table.values(name, "mape").mean()))
        print(f"seed {seed}: " + "  ".join(f"{k} {v[-1]:.2f}%" for k, v in medians.items()))
    print("median MAPE: " + "  ".join(f"{k} {np.median(v):.2f}%" for k, v in medians.items()))


if __name__ == "__main__":
    main()
