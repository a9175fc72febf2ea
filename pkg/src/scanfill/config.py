"""Declarative run configuration: strict JSON, unknown keys rejected."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

ModelKind = Literal["convcnp", "convlnp", "unet", "partialconv"]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticSource(Strict):
    count: int = Field(64, ge=1)
    families: list[str] = ["gradients", "blobs", "stripes"]
    seed: int = 0


class DataSection(Strict):
    images_dir: Optional[str] = None
    synthetic: Optional[SyntheticSource] = None
    region: str = "Kenya"
    era: Literal["pre2003", "post2003"] = "pre2003"
    cloud_filter: bool = True
    folds: int = Field(5, ge=2)
    manifest: Optional[str] = None
    masks_dir: Optional[str] = None
    mask_source_dir: Optional[str] = None
    mask_count: int = Field(100, ge=1)
    synthetic_mask_seed: Optional[int] = None


class TrainSection(Strict):
    epochs: Optional[int] = Field(None, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    base_lr: Optional[float] = Field(None, gt=0)
    lr_schedule: Optional[Literal["constant", "exponential-decay"]] = None
    decay_factor: Optional[float] = Field(None, gt=0)
    latent_train: Optional[int] = Field(None, ge=1)
    latent_eval: Optional[int] = Field(None, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    arch: dict = {}


class EvalSection(Strict):
    checkpoint: Optional[str] = None
    method: Optional[Literal["oracle", "ns", "zero-fill"]] = None
    fold: Optional[int] = None
    metrics: list[Literal["ms_ssim", "mse"]] = ["ms_ssim"]

    @model_validator(mode="after")
    def _one_source(self):
        if self.checkpoint and self.method:
            raise ValueError("give either eval.checkpoint or eval.method, not both")
        return self


class CvSection(Strict):
    ood_manifests: dict[str, str] = {}


class InpaintSection(Strict):
    checkpoint: Optional[str] = None
    image: Optional[str] = None
    mask: Optional[str] = None
    patch: int = Field(64, ge=1)
    overlap: int = Field(0, ge=0)
    num_samples: Optional[int] = Field(None, ge=1)


class RegressorSection(Strict):
    epochs: int = Field(300, ge=1)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-3, gt=0)
    plateau_factor: float = Field(0.1, gt=0)
    plateau_patience: int = Field(3, ge=0)
    early_stop_patience: int = Field(8, ge=1)
    early_stop_threshold: float = Field(1e-4, ge=0)
    folds: int = Field(5, ge=2)


class DownstreamSection(Strict):
    scale: float = Field(10.0, ge=0)
    f_seed: int = 0
    g_seed: int = 1
    methods: list[str] = ["clean", "scanline", "ns"]
    checkpoints: dict[str, str] = {}
    regressor: RegressorSection = RegressorSection()


class ReportSection(Strict):
    scores: list[str] = []
    montage_checkpoint: Optional[str] = None
    montage_count: int = Field(4, ge=1)


class RunConfig(Strict):
    seed: int = 0
    model: ModelKind = "convcnp"
    size: int = Field(64, ge=8)
    out: str = "runs"
    data: DataSection = DataSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    cv: CvSection = CvSection()
    inpaint: InpaintSection = InpaintSection()
    downstream: DownstreamSection = DownstreamSection()
    report: ReportSection = ReportSection()


_PATH_FIELDS = {
    "data": ("images_dir", "manifest", "masks_dir", "mask_source_dir"),
    "eval": ("checkpoint",),
    "inpaint": ("checkpoint", "image", "mask"),
    "report": ("montage_checkpoint",),
}


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    return RunConfig.model_validate(raw)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    data = cfg.model_dump()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.model_validate(data)


def absolutize(cfg: RunConfig, base: Path | None = None) -> RunConfig:
    """Make every path in ``cfg`` absolute so a snapshot replays from any directory."""
    base = base or Path.cwd()
    data = cfg.model_dump()

    def fix(p):
        return str((base / p).resolve()) if p else p

    data["out"] = fix(data["out"])
    for section, keys in _PATH_FIELDS.items():
        for k in keys:
            data[section][k] = fix(data[section][k])
    data["cv"]["ood_manifests"] = {k: fix(v) for k, v in data["cv"]["ood_manifests"].items()}
    data["downstream"]["checkpoints"] = {k: fix(v) for k, v in data["downstream"]["checkpoints"].items()}
    data["report"]["scores"] = [fix(p) for p in data["report"]["scores"]]
    return RunConfig.model_validate(data)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(), indent=1, sort_keys=True) + "\n"


def schema_json() -> str:
    return json.dumps(RunConfig.model_json_schema(), indent=1, sort_keys=True) + "\n"
