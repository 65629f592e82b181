"""Single-branch pipeline: encode, score quality, classify, tune."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, ClipSpec, encode, init_backbone
from .heads import HeadConfig, QualityBundle, init_heads, mc_classify, quality_forward, tune_cls
from .tensor import ParameterStore, Tensor


@dataclass(frozen=True)
class ModelConfig:
    spec: ClipSpec = field(default_factory=ClipSpec)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)

    def validate(self) -> None:
        self.backbone.validate(self.spec.d)
        self.heads.validate()


@dataclass
class BranchOutput:
    features: Tensor  # [bs, n_t + 1, d]
    quality: QualityBundle | None
    logits: Tensor  # raw class scores, before tuning
    tuned: Tensor
    yhat: np.ndarray
    probs: Tensor  # softmax of the tuned logits


def init_model(cfg: ModelConfig, seed: int | np.random.Generator = 0) -> ParameterStore:
    cfg.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    store = ParameterStore()
    init_backbone(store, cfg.spec, cfg.backbone, rng)
    init_heads(store, cfg.spec.d, cfg.spec.n_t, cfg.heads, rng)
    return store


def forward_branch(store: ParameterStore, clips: np.ndarray, cfg: ModelConfig) -> BranchOutput:
    f = encode(clips, cfg.spec, cfg.backbone, store)
    quality = quality_forward(f, store, cfg.spec.n_t, cfg.heads.vqa_mode)
    logits = mc_classify(f, store, cfg.heads.mc_branches)
    if quality is None:
        tuned, yhat = logits, np.argmax(logits.data, axis=1)
    else:
        tuned, yhat = tune_cls(logits, quality.vqs)
    return BranchOutput(f, quality, logits, tuned, yhat, T.softmax(tuned, axis=-1))
