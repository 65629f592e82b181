"""Flat training configuration and its ``key=value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .backbone import BackboneConfig, ClipSpec
from .data import AugmentPolicy
from .errors import ParameterError
from .heads import VQA_MODES, HeadConfig
from .losses import SUBJECT_MODES, LossConfig
from .model import ModelConfig

LOSS_MODES = ("fl", "fl_cl", "fl_bce", "cbs")


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    batch_size: int = 8
    epochs: int = 50
    lr_init: float = 1e-8
    lr_max: float = 1e-3
    cycle_epochs: float = 4.0
    scheduler: str = "triangular2"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # ablation switches
    vqa: str = "full"
    loss: str = "cbs"
    # losses
    gamma: float = 2.0
    alpha: str = "auto"  # "auto" (inverse class frequency) or comma-separated weights
    margin: float = 2.0
    subject_mode: str = "soft"
    # clip geometry and model
    T: int = 16
    H: int = 32
    W: int = 32
    t: int = 4
    h: int = 8
    w: int = 8
    d: int = 32
    spatial_layers: int = 2
    temporal_layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    pool: str = "mean"
    n_classes: int = 2
    mc_branches: int = 3
    ks: int = 4
    fusion_hidden: int = 8
    # augmentation (training only)
    hflip: float = 0.5
    vflip: float = 0.5
    rotation: float = 10.0
    crop: float = 1.0
    brightness: float = 0.1
    contrast: float = 0.1
    # evaluation and synthetic data
    folds: int = 5
    eval_batch_size: int = 32
    n_subjects: int = 20
    clips_per_subject: int = 10
    quality_lo: float = 0.2
    quality_hi: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if not 0 < self.lr_init <= self.lr_max:
            raise ParameterError("need 0 < lr_init <= lr_max")
        if self.cycle_epochs <= 0:
            raise ParameterError("cycle_epochs must be > 0")
        if self.scheduler not in ("triangular2", "triangular"):
            raise ParameterError(f"unknown scheduler mode {self.scheduler!r}")
        if self.vqa not in VQA_MODES:
            raise ParameterError(f"vqa must be one of {VQA_MODES}")
        if self.loss not in LOSS_MODES:
            raise ParameterError(f"loss must be one of {LOSS_MODES}")
        if self.subject_mode not in SUBJECT_MODES:
            raise ParameterError(f"subject_mode must be one of {SUBJECT_MODES}")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    @property
    def spec(self) -> ClipSpec:
        return ClipSpec(self.T, self.H, self.W, self.t, self.h, self.w, self.d)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            spec=self.spec,
            backbone=BackboneConfig(self.spatial_layers, self.temporal_layers, self.heads, self.mlp_ratio, self.pool),
            heads=HeadConfig(self.n_classes, self.mc_branches, self.ks, self.fusion_hidden, self.vqa),
        )

    def loss_config(self) -> LossConfig:
        alpha = None if self.alpha == "auto" else tuple(float(a) for a in self.alpha.split(","))
        return LossConfig(gamma=self.gamma, alpha=alpha, margin=self.margin)

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(self.hflip, self.vflip, self.rotation, self.crop, self.brightness, self.contrast)

    @property
    def uses_contrastive(self) -> bool:
        return self.loss in ("fl_cl", "cbs")

    @property
    def uses_subject(self) -> bool:
        return self.loss in ("fl_bce", "cbs")


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, raw: str):
    kind = type(getattr(TrainConfig(), name))
    try:
        return kind(float(raw)) if kind is int and "e" in raw.lower() else kind(raw)
    except ValueError:
        raise ParameterError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ParameterError(f"line {lineno}: unknown key {key!r}")
        changes[key] = _coerce(key, value)
    return (base or TrainConfig()).replace(**changes)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k}={getattr(cfg, k)!r}\n".replace("'", "") for k in _FIELDS)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
