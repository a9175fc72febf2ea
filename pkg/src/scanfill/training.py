"""Seeded training loops, fixed-mask evaluation, score tables and cross-validation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, LrSchedule, Module, backward
from .baselines.navier_stokes import NsConfig, navier_stokes_inpaint
from .baselines.partialconv import partialconv_loss
from .checkpoint import Checkpoint, build_model
from .data import kfold_split
from .metrics import MsSsimParams, MsSsimScaleWarning, mse, ms_ssim_score
from .models.convnp import np_loss
from .tasks import InpaintTask, batch_arrays, to_hwc

log = logging.getLogger(__name__)


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass(frozen=True)
class TrainConfig:
    model: str = "convcnp"
    epochs: int = 400
    batch_size: int = 8
    base_lr: float = 1e-4
    lr_schedule: str = "exponential-decay"
    decay_factor: float = 5.0
    latent_train: int = 16
    latent_eval: int = 32
    seed: int = 0
    image_size: int = 64
    max_steps: int | None = None
    arch: dict = field(default_factory=dict)

    @classmethod
    def defaults(cls, model: str, image_size: int = 64, **overrides) -> "TrainConfig":
        """Published defaults per model and image size, then ``overrides``."""
        base = {"model": model, "image_size": image_size}
        if model == "convlnp":
            base.update(epochs=200, batch_size=4)
            if image_size >= 128:
                base.update(latent_train=4, latent_eval=8)
        base.update(overrides)
        return cls(**base)

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.base_lr, self.lr_schedule, self.decay_factor, max(self.epochs, 1))


@dataclass
class TrainResult:
    model: Module
    final: Checkpoint
    best: Checkpoint
    history: list[dict]
    aborted: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def losses(self) -> list[float]:
        return [h["mean_loss"] for h in self.history]


def epoch_masks(ids: Sequence[str], pool_size: int, seed: int, epoch: int) -> np.ndarray:
    """Pool index per image for one epoch, reproducible from (seed, epoch, image id)."""
    return np.array([np.random.default_rng([seed, epoch, stable_hash(i)]).integers(pool_size) for i in ids])


def eval_masks(ids: Sequence[str], pool_size: int, seed: int) -> np.ndarray:
    """Pool index per image for evaluation; fixed per (image, seed) so every method sees the same gaps."""
    return np.array([np.random.default_rng([seed, stable_hash(i), 1]).integers(pool_size) for i in ids])


def model_loss(model: Module, corrupted: np.ndarray, context: np.ndarray, clean: np.ndarray,
               params: MsSsimParams, num_samples: int = 1, rng: np.random.Generator | None = None):
    if model.kind == "convlnp":
        out = model.forward(corrupted, context, num_samples=num_samples, rng=rng)
    else:
        out = model.forward(corrupted, context)
    if model.kind == "partialconv":
        return partialconv_loss(out.mu, clean, context)
    return np_loss(out, clean, params)


def train(cfg: TrainConfig, images: np.ndarray, ids: Sequence[str], mask_pool: np.ndarray,
          log_path=None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit ``cfg.model`` on (N, H, W, 3) ``images`` with per-epoch random scanline masks."""
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0 or len(mask_pool) == 0:
        raise ValueError("training needs at least one image and one mask")
    if len(ids) != len(images):
        raise ValueError("ids and images differ in length")
    if images.shape[1:3] != mask_pool.shape[1:3]:
        raise ValueError(f"images {images.shape[1:3]} and masks {mask_pool.shape[1:3]} differ in size")
    model = build_model(cfg.model, dict(cfg.arch), seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.base_lr)
    schedule = cfg.schedule()
    params = MsSsimParams().fitted(*images.shape[1:3])
    meta = {"train_config": _jsonable(asdict(cfg))}
    history: list[dict] = []
    best_loss, best_state, best_epoch = math.inf, model.state_dict(), -1
    steps, aborted, diagnostics = 0, False, {}
    sink = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = schedule(epoch)
            picks = epoch_masks(ids, len(mask_pool), cfg.seed, epoch)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(images))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and steps >= cfg.max_steps:
                    break
                idx = order[start:start + cfg.batch_size]
                tasks = [InpaintTask(images[i], mask_pool[picks[i]]) for i in idx]
                corrupted, ctx, clean = batch_arrays(tasks)
                rng = np.random.default_rng([cfg.seed, epoch, start])
                loss = model_loss(model, corrupted, ctx, clean, params, cfg.latent_train, rng)
                value = float(loss.data)
                if not np.isfinite(value):
                    aborted = True
                    diagnostics = {"epoch": epoch, "step": steps, "loss": repr(value),
                                   "batch_ids": [ids[i] for i in idx]}
                    log.error("non-finite loss at epoch %d step %d; keeping last good parameters", epoch, steps)
                    break
                opt.zero_grad()
                backward(loss)
                opt.step(lr)
                losses.append(value)
                steps += 1
            if losses:
                rec = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": lr,
                       "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3)}
                history.append(rec)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
                    sink.flush()
                if progress:
                    progress(rec)
                if rec["mean_loss"] < best_loss:
                    best_loss, best_state, best_epoch = rec["mean_loss"], model.state_dict(), epoch
            if aborted or (cfg.max_steps is not None and steps >= cfg.max_steps):
                break
    finally:
        if sink:
            sink.close()
    final_meta = dict(meta, epochs_run=len(history), steps=steps, aborted=aborted,
                      final_loss=history[-1]["mean_loss"] if history else None)
    final = Checkpoint.from_model(model, final_meta)
    best = Checkpoint(final.kind, final.config, best_state, dict(meta, best_epoch=best_epoch,
                                                                  best_loss=best_loss if history else None))
    if aborted:
        final.meta["diagnostics"] = diagnostics
    return TrainResult(model, final, best, history, aborted, diagnostics)


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))


# ------------------------------------------------------------- evaluation

class Method:
    """Something that fills the gaps of a batch of tasks; returns (N, H, W, 3) predictions."""

    name = "method"

    def predict(self, tasks: Sequence[InpaintTask], seed: int) -> np.ndarray:
        raise NotImplementedError


class ModelMethod(Method):
    def __init__(self, model: Module, name: str | None = None, num_samples: int = 32, batch_size: int = 8):
        self.model = model
        self.name = name or model.kind
        self.num_samples = num_samples
        self.batch_size = batch_size

    def predict(self, tasks, seed):
        out = []
        for start in range(0, len(tasks), self.batch_size):
            chunk = tasks[start:start + self.batch_size]
            corrupted, ctx, _ = batch_arrays(chunk)
            if self.model.kind == "convlnp":
                mu = self.model.predict(corrupted, ctx, seed=seed + start, num_samples=self.num_samples)
            else:
                mu = self.model.predict(corrupted, ctx, seed=seed)
            out.append(to_hwc(mu))
        return np.concatenate(out)


class NavierStokesMethod(Method):
    name = "ns"

    def __init__(self, cfg: NsConfig | None = None):
        self.cfg = cfg

    def predict(self, tasks, seed):
        return np.stack([navier_stokes_inpaint(t.corrupted, t.missing, self.cfg) for t in tasks])


class ZeroFillMethod(Method):
    name = "zero-fill"

    def predict(self, tasks, seed):
        return np.stack([t.corrupted for t in tasks])


class OracleMethod(Method):
    """Returns the clean image; an upper bound used to sanity check the harness."""

    name = "oracle"

    def predict(self, tasks, seed):
        return np.stack([t.clean for t in tasks])


def method_by_name(name: str) -> Method:
    table = {"ns": NavierStokesMethod, "zero-fill": ZeroFillMethod, "oracle": OracleMethod}
    if name not in table:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(table)} or a checkpoint")
    return table[name]()


SCORE_HEADER = ("model", "region", "fold", "image_id", "metric", "value", "seed")


@dataclass(frozen=True)
class ScoreRow:
    model: str
    region: str
    fold: int
    image_id: str
    metric: str
    value: float
    seed: int


@dataclass
class ScoreTable:
    rows: list[ScoreRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def extend(self, other: "ScoreTable") -> None:
        self.rows.extend(other.rows)

    def values(self, model: str | None = None, metric: str = "ms_ssim", region: str | None = None) -> np.ndarray:
        return np.array([r.value for r in self.rows if r.metric == metric
                         and (model is None or r.model == model) and (region is None or r.region == region)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for r in self.rows:
            w.writerow([r.model, r.region, r.fold, r.image_id, r.metric, repr(float(r.value)), r.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScoreTable":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != SCORE_HEADER:
            raise ValueError(f"score table header must be {','.join(SCORE_HEADER)}")
        return cls([ScoreRow(r["model"], r["region"], int(r["fold"]), r["image_id"], r["metric"],
                             float(r["value"]), int(r["seed"])) for r in reader])

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "ScoreTable":
        return cls.from_csv(Path(path).read_text())

    def summary(self) -> list[dict]:
        """Mean and standard error (sample sd / sqrt(n)) per (model, region, metric)."""
        groups: dict[tuple, list[float]] = {}
        for r in self.rows:
            groups.setdefault((r.model, r.region, r.metric), []).append(r.value)
        out = []
        for (model, region, metric), vals in sorted(groups.items()):
            v = np.asarray(vals, dtype=np.float64)
            se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
            out.append({"model": model, "region": region, "metric": metric, "n": len(v),
                        "mean": float(v.mean()), "se": se})
        return out


def summary_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "region", "metric", "n", "mean", "se"])
    for s in summary:
        w.writerow([s["model"], s["region"], s["metric"], s["n"], repr(s["mean"]), repr(s["se"])])
    return buf.getvalue()


def make_eval_tasks(images: np.ndarray, ids: Sequence[str], mask_pool: np.ndarray, seed: int) -> list[InpaintTask]:
    picks = eval_masks(ids, len(mask_pool), seed)
    return [InpaintTask(np.asarray(img, dtype=np.float32), mask_pool[p], i)
            for img, i, p in zip(images, ids, picks)]


def evaluate(method: Method, images: np.ndarray, ids: Sequence[str], mask_pool: np.ndarray, seed: int = 0,
             region: str = "Kenya", fold: int = 0, metrics: Sequence[str] = ("ms_ssim",)) -> ScoreTable:
    """Score ``method`` on fixed seeded masks; predictions are composited before scoring."""
    tasks = make_eval_tasks(images, ids, mask_pool, seed)
    preds = method.predict(tasks, seed)
    table = ScoreTable()
    h, w = tasks[0].clean.shape[:2]
    params = MsSsimParams().fitted(h, w)
    for task, pred in zip(tasks, preds):
        comp = task.composite(np.clip(pred, 0.0, 1.0))
        for metric in metrics:
            if metric == "ms_ssim":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", MsSsimScaleWarning)
                    value = float(ms_ssim_score(comp.astype(np.float64), task.clean.astype(np.float64), params)[0])
            elif metric == "mse":
                value = mse(comp, task.clean)
            else:
                raise ValueError(f"unknown metric {metric!r}")
            table.rows.append(ScoreRow(method.name, region, fold, task.image_id, metric, value, seed))
    return table


# --------------------------------------------------------- cross-validation

@dataclass
class CvResult:
    checkpoints: list[Checkpoint]
    table: ScoreTable
    folds: list[np.ndarray]
    histories: list[list[dict]]


def cross_validate(cfg: TrainConfig, images: np.ndarray, ids: Sequence[str], mask_pool: np.ndarray,
                   k: int = 5, region: str = "Kenya", ood: dict[str, tuple[np.ndarray, list[str]]] | None = None,
                   run_dir=None) -> CvResult:
    """Train on each fold's complement, score its test slice, and score every OOD set with every fold."""
    folds = kfold_split(len(images), k, cfg.seed)
    table, checkpoints, histories = ScoreTable(), [], []
    for f, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(images)), test_idx)
        fold_cfg = replace(cfg, seed=cfg.seed + f)
        log_path = Path(run_dir) / f"train-fold{f}.jsonl" if run_dir else None
        result = train(fold_cfg, images[train_idx], [ids[i] for i in train_idx], mask_pool, log_path)
        checkpoints.append(result.final)
        histories.append(result.history)
        method = ModelMethod(result.model, num_samples=cfg.latent_eval)
        table.extend(evaluate(method, images[test_idx], [ids[i] for i in test_idx], mask_pool,
                              fold_cfg.seed, region, f))
        for ood_region, (ood_images, ood_ids) in (ood or {}).items():
            table.extend(evaluate(method, ood_images, ood_ids, mask_pool, fold_cfg.seed, ood_region, f))
        if run_dir:
            result.final.save(Path(run_dir) / f"fold{f}.sfck")
    return CvResult(checkpoints, table, folds, histories)
