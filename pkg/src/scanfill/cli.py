"""``scanfill`` command line: every command reads a JSON config and writes into its own run directory.

Exit codes: 0 success, 1 invalid arguments or config, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import config as C
from .checkpoint import Checkpoint
from .data import (DatasetManifest, IngestError, ManifestEntry, ScanlineMask, assign_folds, crop_center,
                   extract_scanline_masks, ingest_directory, load_image, load_mask, load_mask_pool,
                   normalize_region, prepare_images, save_image, save_mask_pool)
from .downstream import RegressorConfig, SyntheticTaskSpec, compare_variants, write_sidecar
from .inference import inpaint, patch_inpaint
from .synthetic import mask_pool, texture_corpus
from .training import (ModelMethod, ScoreTable, TrainConfig, cross_validate, evaluate, make_eval_tasks,
                       method_by_name, summary_csv, train)

log = logging.getLogger("scanfill")

COMMANDS = ("masks extract", "data prepare", "train", "eval", "cv", "inpaint", "patch-inpaint",
            "downstream", "report")


class ConfigError(ValueError):
    """Config is well-formed but lacks what the chosen command needs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _require(value, key: str, command: str):
    if value is None:
        raise ConfigError(f"`{command}` needs {key} in the config")
    return value


# --------------------------------------------------------------- run dirs

def make_run_dir(cfg: C.RunConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    base = Path(cfg.out) / f"{command.replace(' ', '-')}-{cfg.seed}-{stamp}"
    run, n = base, 1
    while run.exists():
        run = base.with_name(f"{base.name}.{n}")
        n += 1
    run.mkdir(parents=True)
    (run / "config.json").write_text(C.canonical_json(cfg))
    return run


def _attach_log(run: Path) -> logging.Handler:
    handler = logging.FileHandler(run / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("scanfill")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    logging.captureWarnings(True)
    logging.getLogger("py.warnings").addHandler(handler)
    return handler


# ----------------------------------------------------------------- inputs

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_manifest_images(manifest: DatasetManifest, size: int, verify: bool = True):
    images = []
    for entry in manifest.records:
        path = Path(entry.path)
        if verify and entry.sha256 and _sha256(path) != entry.sha256:
            raise IngestError(f"{path} does not match its manifest checksum")
        img = load_image(path)
        if min(img.shape[:2]) < size:
            raise IngestError(f"{path} is {img.shape[0]}x{img.shape[1]}, smaller than size {size}")
        images.append(crop_center(img, size))
    return np.stack(images).astype(np.float32)


def load_dataset(cfg: C.RunConfig, command: str):
    """(images, ids, manifest or None) from a prepared manifest, a raw directory or the synthetic source."""
    d = cfg.data
    if d.manifest:
        manifest = DatasetManifest.load(d.manifest)
        return load_manifest_images(manifest, cfg.size), manifest.ids, manifest
    if d.images_dir:
        _, records, _ = ingest_directory(d.images_dir, d.region, d.era)
        kept, _ = prepare_images(records, cfg.size, d.cloud_filter)
        if not kept:
            raise IngestError("no images survived cropping and the cloud filter")
        return np.stack([r.pixels for r in kept]), [r.id for r in kept], None
    if d.synthetic:
        s = d.synthetic
        images, ids = texture_corpus(s.count, cfg.size, s.seed, tuple(s.families))
        return images, ids, None
    raise ConfigError(f"`{command}` needs data.manifest, data.images_dir or data.synthetic")


def load_masks(cfg: C.RunConfig, command: str) -> np.ndarray:
    d = cfg.data
    if d.masks_dir:
        pool = load_mask_pool(d.masks_dir)
        if min(pool.shape[1:]) < cfg.size:
            raise IngestError(f"masks are {pool.shape[1]}x{pool.shape[2]}, smaller than size {cfg.size}")
        return np.stack([crop_center(m, cfg.size) for m in pool])
    if d.synthetic_mask_seed is not None:
        return mask_pool(d.mask_count, cfg.size, d.synthetic_mask_seed)
    raise ConfigError(f"`{command}` needs data.masks_dir or data.synthetic_mask_seed")


def train_config(cfg: C.RunConfig) -> TrainConfig:
    overrides = {k: v for k, v in cfg.train.model_dump().items() if v is not None}
    overrides["arch"] = dict(cfg.train.arch)
    return TrainConfig.defaults(cfg.model, cfg.size, seed=cfg.seed, **overrides)


def _region(cfg: C.RunConfig, manifest: DatasetManifest | None) -> str:
    if manifest and manifest.records:
        return manifest.records[0].region
    return normalize_region(cfg.data.region)


# --------------------------------------------------------------- commands

def cmd_masks_extract(cfg: C.RunConfig, run: Path) -> None:
    d = cfg.data
    if d.mask_source_dir:
        manifest, records, skipped = ingest_directory(d.mask_source_dir, d.region, "post2003")
        records, dropped = prepare_images(records, cfg.size, cloud=False)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            masks = extract_scanline_masks(records, d.mask_count)
        for w in caught:
            log.warning("%s", w.message)
        manifest.save(run / "source_manifest.json")
        (run / "skipped.json").write_text(json.dumps({"undecodable": skipped, "too_small": dropped}, indent=1) + "\n")
    elif d.synthetic_mask_seed is not None:
        pool = mask_pool(d.mask_count, cfg.size, d.synthetic_mask_seed)
        masks = [ScanlineMask(m, f"synthetic-{i:04d}") for i, m in enumerate(pool)]
    else:
        raise ConfigError("`masks extract` needs data.mask_source_dir or data.synthetic_mask_seed")
    save_mask_pool(run / "masks", masks)
    log.info("wrote %d masks", len(masks))


def cmd_data_prepare(cfg: C.RunConfig, run: Path) -> None:
    d = cfg.data
    out = run / "images"
    out.mkdir()
    if d.images_dir:
        _, records, skipped = ingest_directory(d.images_dir, d.region, d.era)
        kept, dropped = prepare_images(records, cfg.size, d.cloud_filter)
        items = [(r.id, r.region, r.era, r.pixels) for r in kept]
    elif d.synthetic:
        images, ids = texture_corpus(d.synthetic.count, cfg.size, d.synthetic.seed, tuple(d.synthetic.families))
        region = normalize_region(d.region)
        items = [(i, region, d.era, img) for i, img in zip(ids, images)]
        skipped, dropped = [], []
    else:
        raise ConfigError("`data prepare` needs data.images_dir or data.synthetic")
    if len(items) < d.folds:
        raise IngestError(f"only {len(items)} usable images for {d.folds} folds")
    entries = []
    for image_id, region, era, pixels in items:
        path = out / f"{image_id}.png"
        save_image(path, pixels)
        entries.append(ManifestEntry(image_id, str(path), region, era, _sha256(path)))
    manifest = assign_folds(DatasetManifest(entries), d.folds, cfg.seed)
    manifest.save(run / "manifest.json")
    (run / "skipped.json").write_text(json.dumps({"undecodable": skipped, "filtered": dropped}, indent=1) + "\n")
    log.info("prepared %d images (%d filtered, %d undecodable)", len(entries), len(dropped), len(skipped))


def cmd_train(cfg: C.RunConfig, run: Path) -> None:
    images, ids, _ = load_dataset(cfg, "train")
    masks = load_masks(cfg, "train")
    tcfg = train_config(cfg)
    result = train(tcfg, images, ids, masks, log_path=run / "train_log.jsonl",
                   progress=lambda h: log.info("epoch %d loss %.6f lr %.3g", h["epoch"], h["mean_loss"], h["lr"]))
    result.final.save(run / "final.sfck")
    result.best.save(run / "best.sfck")
    if result.aborted:
        raise RuntimeError(f"training aborted: {result.diagnostics}")


def cmd_eval(cfg: C.RunConfig, run: Path) -> None:
    e = cfg.eval
    images, ids, manifest = load_dataset(cfg, "eval")
    masks = load_masks(cfg, "eval")
    fold = 0
    if e.fold is not None:
        if manifest is None:
            raise ConfigError("eval.fold needs data.manifest with fold assignments")
        idx = [i for i, r in enumerate(manifest.records) if r.fold == e.fold]
        if not idx:
            raise ConfigError(f"no images in fold {e.fold}")
        images, ids, fold = images[idx], [ids[i] for i in idx], e.fold
    if e.checkpoint:
        ckpt = Checkpoint.load(e.checkpoint)
        samples = ckpt.meta.get("train_config", {}).get("latent_eval", 32)
        method = ModelMethod(ckpt.build(), ckpt.kind, num_samples=samples)
    elif e.method:
        method = method_by_name(e.method)
    else:
        raise ConfigError("`eval` needs eval.checkpoint or eval.method")
    table = evaluate(method, images, ids, masks, cfg.seed, _region(cfg, manifest), fold, tuple(e.metrics))
    table.save(run / "scores.csv")
    (run / "summary.csv").write_text(summary_csv(table.summary()))


def cmd_cv(cfg: C.RunConfig, run: Path) -> None:
    images, ids, manifest = load_dataset(cfg, "cv")
    masks = load_masks(cfg, "cv")
    ood = {}
    for region, path in cfg.cv.ood_manifests.items():
        m = DatasetManifest.load(path)
        ood[region] = (load_manifest_images(m, cfg.size), m.ids)
    result = cross_validate(train_config(cfg), images, ids, masks, cfg.data.folds,
                            _region(cfg, manifest), ood, run_dir=run)
    result.table.save(run / "scores.csv")
    (run / "summary.csv").write_text(summary_csv(result.table.summary()))


def _load_pair(cfg: C.RunConfig, command: str):
    i = cfg.inpaint
    ckpt = Checkpoint.load(_require(i.checkpoint, "inpaint.checkpoint", command))
    image = load_image(_require(i.image, "inpaint.image", command))
    missing = load_mask(_require(i.mask, "inpaint.mask", command))
    return ckpt, image, missing


def cmd_inpaint(cfg: C.RunConfig, run: Path) -> None:
    ckpt, image, missing = _load_pair(cfg, "inpaint")
    out = inpaint(ckpt, image, missing, seed=cfg.seed, num_samples=cfg.inpaint.num_samples)
    save_image(run / "inpainted.png", out)


def cmd_patch_inpaint(cfg: C.RunConfig, run: Path) -> None:
    ckpt, image, missing = _load_pair(cfg, "patch-inpaint")
    i = cfg.inpaint
    out = patch_inpaint(ckpt, image, missing, patch=i.patch, overlap=i.overlap, seed=cfg.seed,
                        num_samples=i.num_samples)
    save_image(run / "inpainted.png", out)


def cmd_downstream(cfg: C.RunConfig, run: Path) -> None:
    ds = cfg.downstream
    images, ids, manifest = load_dataset(cfg, "downstream")
    masks = load_masks(cfg, "downstream")
    tasks = make_eval_tasks(images, ids, masks, cfg.seed)
    variants = {}
    for name in ds.methods:
        if name == "clean":
            variants[name] = images
        elif name == "scanline":
            variants[name] = np.stack([t.corrupted for t in tasks])
        else:
            preds = method_by_name(name).predict(tasks, cfg.seed)
            variants[name] = np.stack([t.composite(np.clip(p, 0, 1)) for t, p in zip(tasks, preds)])
    for name, path in ds.checkpoints.items():
        ckpt = Checkpoint.load(path)
        samples = ckpt.meta.get("train_config", {}).get("latent_eval", 32)
        preds = ModelMethod(ckpt.build(), name, num_samples=samples).predict(tasks, cfg.seed)
        variants[name] = np.stack([t.composite(np.clip(p, 0, 1)) for t, p in zip(tasks, preds)])
    if not variants:
        raise ConfigError("`downstream` needs downstream.methods or downstream.checkpoints")
    spec = SyntheticTaskSpec(ds.scale, ds.f_seed, ds.g_seed, cfg.size)
    reg = RegressorConfig(**ds.regressor.model_dump())
    table, sidecar = compare_variants(spec, images.astype(np.float32), variants, _region(cfg, manifest), reg, cfg.seed)
    table.save(run / "scores.csv")
    (run / "summary.csv").write_text(summary_csv(table.summary()))
    write_sidecar(run / "downstream.json", sidecar)


def montage(rows: list[tuple[np.ndarray, np.ndarray, np.ndarray]], gap: int = 2) -> np.ndarray:
    """Stack (corrupted, inpainted, clean) triptychs vertically with white separators."""
    h, w = rows[0][0].shape[:2]
    out = np.ones((len(rows) * (h + gap) - gap, 3 * (w + gap) - gap, 3), dtype=np.float32)
    for r, triple in enumerate(rows):
        for c, img in enumerate(triple):
            out[r * (h + gap):r * (h + gap) + h, c * (w + gap):c * (w + gap) + w] = img
    return out


def cmd_report(cfg: C.RunConfig, run: Path) -> None:
    rep = cfg.report
    if not rep.scores and not rep.montage_checkpoint:
        raise ConfigError("`report` needs report.scores or report.montage_checkpoint")
    if rep.scores:
        table = ScoreTable()
        for path in rep.scores:
            table.extend(ScoreTable.load(path))
        (run / "summary.csv").write_text(summary_csv(table.summary()))
    if rep.montage_checkpoint:
        images, ids, _ = load_dataset(cfg, "report")
        masks = load_masks(cfg, "report")
        n = min(rep.montage_count, len(images))
        tasks = make_eval_tasks(images[:n], ids[:n], masks, cfg.seed)
        ckpt = Checkpoint.load(rep.montage_checkpoint)
        preds = ModelMethod(ckpt.build(), ckpt.kind).predict(tasks, cfg.seed)
        rows = [(t.corrupted, t.composite(np.clip(p, 0, 1)), t.clean) for t, p in zip(tasks, preds)]
        save_image(run / "montage.png", montage(rows))


HANDLERS = {
    "masks extract": cmd_masks_extract, "data prepare": cmd_data_prepare, "train": cmd_train,
    "eval": cmd_eval, "cv": cmd_cv, "inpaint": cmd_inpaint, "patch-inpaint": cmd_patch_inpaint,
    "downstream": cmd_downstream, "report": cmd_report,
}


# ------------------------------------------------------------------ entry

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config (see `scanfill schema`)")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=["convcnp", "convlnp", "unet", "partialconv"])
    p.add_argument("--size", type=int, help="image side length in pixels")
    p.add_argument("--out", help="parent directory for run directories")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scanfill", description="Scanline inpainting with convolutional neural processes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for group, action in (("masks", "extract"), ("data", "prepare")):
        g = sub.add_parser(group).add_subparsers(dest="action", required=True, parser_class=_Parser)
        _common(g.add_parser(action))
    for name in ("train", "eval", "cv", "inpaint", "patch-inpaint", "downstream", "report"):
        _common(sub.add_parser(name))
    sub.add_parser("schema", help="print the config JSON schema")
    return parser


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid config:\n" + "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "schema":
        sys.stdout.write(C.schema_json())
        return 0
    command = f"{args.command} {args.action}" if args.command in ("masks", "data") else args.command
    try:
        cfg = C.load_config(args.config)
        cfg = C.with_overrides(cfg, seed=args.seed, model=args.model, size=args.size, out=args.out)
        cfg = C.absolutize(cfg)
    except ValidationError as exc:
        print(_format_validation(exc), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    run = make_run_dir(cfg, command)
    handler = _attach_log(run)
    try:
        HANDLERS[command](cfg, run)
    except ConfigError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        log.exception("%s failed", command)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finally:
        logging.getLogger("scanfill").removeHandler(handler)
        logging.getLogger("py.warnings").removeHandler(handler)
        handler.close()
    log.info("run directory %s", run)
    print(run)
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
