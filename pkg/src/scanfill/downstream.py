"""Synthetic downstream regression: do inpainted images support a regressor as well as clean ones?

Labels come from a frozen, randomly initialised CNN ``f`` applied to scaled
clean images.  A fresh network ``g`` of the same architecture (different
seed) is trained on clean, corrupted or inpainted versions of the same
images, and its test MAPE is compared across input variants.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Adam, Conv2d, EarlyStopping, Linear, Module, ReduceOnPlateau, Tensor, avg_pool2d, backward, no_grad
from .data import kfold_split
from .metrics import mape_with_diagnostics
from .training import ScoreRow, ScoreTable

log = logging.getLogger(__name__)

LABEL_NET_NOTE = "label net widths 3-8-16, 2x2 average pooling and ReLU are not fixed by the method description"


@dataclass(frozen=True)
class SyntheticTaskSpec:
    scale: float = 10.0
    f_seed: int = 0
    g_seed: int = 1
    image_size: int = 64

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be non-negative")
        if self.f_seed == self.g_seed:
            raise ValueError("label and regressor networks need different seeds")


@dataclass(frozen=True)
class RegressorConfig:
    epochs: int = 300
    batch_size: int = 8
    lr: float = 1e-3
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    early_stop_patience: int = 8
    early_stop_threshold: float = 1e-4
    folds: int = 5


class LabelNet(Module):
    """Two 3x3 conv layers with ReLU and 2x2 average pooling, then a linear scalar head."""

    def __init__(self, image_size: int, seed: int):
        rng = np.random.default_rng(seed)
        self.conv1 = Conv2d(3, 8, 3, rng)
        self.conv2 = Conv2d(8, 16, 3, rng)
        side = image_size // 4
        self.head = Linear(16 * side * side, 1, rng)

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = avg_pool2d(self.conv1(x).relu(), 2)
        h = avg_pool2d(self.conv2(h).relu(), 2)
        return self.head(h.reshape(h.shape[0], -1)).reshape(-1)


def build_label_net(seed: int, image_size: int = 64) -> LabelNet:
    """Label network ``f``; never trained, only evaluated under ``no_grad``."""
    return LabelNet(image_size, seed)


def _nchw(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2))


def make_labels(f: LabelNet, images: np.ndarray, scale: float, batch_size: int = 32) -> np.ndarray:
    """``f(scale * X)`` for each (H, W, 3) image in ``images``."""
    x = _nchw(images) * np.float32(scale)
    with no_grad():
        out = [f(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
    labels = np.concatenate(out).astype(np.float64)
    if not np.isfinite(labels).all():
        raise FloatingPointError("label network produced non-finite labels")
    return labels


@dataclass
class FoldOutcome:
    fold: int
    mape: float | None
    excluded: int = 0
    epochs: int = 0
    failed: bool = False
    reason: str = ""


@dataclass
class RegressorResult:
    folds: list[FoldOutcome] = field(default_factory=list)

    @property
    def mapes(self) -> list[float]:
        return [f.mape for f in self.folds if not f.failed]

    @property
    def mean_mape(self) -> float:
        return float(np.mean(self.mapes)) if self.mapes else float("nan")

    @property
    def failed_folds(self) -> list[int]:
        return [f.fold for f in self.folds if f.failed]


def fit_regressor(g: LabelNet, x: np.ndarray, y: np.ndarray, cfg: RegressorConfig, seed: int) -> int:
    """MSE training with plateau LR reduction and early stopping on the epoch training loss."""
    opt = Adam(g.parameters(), lr=cfg.lr)
    plateau = ReduceOnPlateau(cfg.lr, cfg.plateau_factor, cfg.plateau_patience)
    stopper = EarlyStopping(cfg.early_stop_patience, cfg.early_stop_threshold)
    lr = cfg.lr
    target = y.astype(np.float32)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(x))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            err = g(x[idx]) - Tensor(target[idx])
            loss = (err * err).mean()
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite regressor loss at epoch {epoch}")
            opt.zero_grad()
            backward(loss)
            opt.step(lr)
            total += value * len(idx)
        epoch_loss = total / len(x)
        lr = plateau.step(epoch_loss)
        if stopper.step(epoch_loss):
            return epoch + 1
    return cfg.epochs


def train_regressor(spec: SyntheticTaskSpec, inputs: np.ndarray, labels: np.ndarray,
                    cfg: RegressorConfig | None = None, split_seed: int = 0) -> RegressorResult:
    """Cross-validated test MAPE of ``g`` trained on ``inputs`` (H, W, 3 images) against ``labels``."""
    cfg = cfg or RegressorConfig()
    x = _nchw(inputs)
    labels = np.asarray(labels, dtype=np.float64)
    result = RegressorResult()
    for f, test_idx in enumerate(kfold_split(len(x), cfg.folds, split_seed)):
        train_idx = np.setdiff1d(np.arange(len(x)), test_idx)
        g = LabelNet(x.shape[2], spec.g_seed)
        try:
            epochs = fit_regressor(g, x[train_idx], labels[train_idx], cfg, spec.g_seed + f)
            with no_grad():
                pred = g(x[test_idx]).data.astype(np.float64)
            if not np.isfinite(pred).all():
                raise FloatingPointError("non-finite predictions")
            value, excluded = mape_with_diagnostics(pred, labels[test_idx])
            result.folds.append(FoldOutcome(f, value, excluded, epochs))
        except FloatingPointError as exc:
            log.warning("fold %d failed: %s", f, exc)
            result.folds.append(FoldOutcome(f, None, failed=True, reason=str(exc)))
    return result


def compare_variants(spec: SyntheticTaskSpec, clean: np.ndarray, variants: dict[str, np.ndarray],
                     region: str = "Kenya", cfg: RegressorConfig | None = None, seed: int = 0
                     ) -> tuple[ScoreTable, dict]:
    """MAPE per fold for each input variant; every variant shares labels, folds and ``g`` init.

    ``variants`` maps a method name (e.g. ``clean``, ``scanline``, ``convcnp``)
    to images aligned with ``clean``.  Returns the table and a JSON-ready
    sidecar with seeds, failures and the label-net note.
    """
    cfg = cfg or RegressorConfig()
    f = build_label_net(spec.f_seed, clean.shape[1])
    labels = make_labels(f, clean, spec.scale)
    table = ScoreTable()
    sidecar = {"spec": asdict(spec), "regressor": asdict(cfg), "seed": seed, "region": region,
               "note": LABEL_NET_NOTE, "failed_folds": {}, "excluded_terms": {}}
    for name, images in variants.items():
        if images.shape != clean.shape:
            raise ValueError(f"variant {name!r} has shape {images.shape}, expected {clean.shape}")
        res = train_regressor(spec, images, labels, cfg, split_seed=seed)
        for outcome in res.folds:
            if not outcome.failed:
                table.rows.append(ScoreRow(name, region, outcome.fold, "all", "mape", outcome.mape, seed))
        if res.failed_folds:
            sidecar["failed_folds"][name] = res.failed_folds
        sidecar["excluded_terms"][name] = sum(o.excluded for o in res.folds)
    return table, sidecar


def write_sidecar(path, sidecar: dict) -> None:
    with open(path, "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")
