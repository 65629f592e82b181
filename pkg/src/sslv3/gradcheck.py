"""Finite-difference verification of the full training objective on tiny models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig, ClipSpec
from .combined import PairBatch, dual_forward, make_pair
from .data import AugmentPolicy, synth_generate
from .heads import HeadConfig
from .losses import SubjectLedger, cbs_loss, contrastive_loss, focal_loss, subject_bce
from .model import ModelConfig, init_model
from .tensor import GradCheckReport, ParameterStore, Tensor, grad_check

TINY_SPEC = ClipSpec(T=8, H=16, W=16, t=2, h=4, w=4, d=16)


def tiny_config(rng: np.random.Generator | None = None, vqa_mode: str = "full") -> ModelConfig:
    """The tiny gradient-check model; with ``rng`` the structural options are drawn at random."""
    if rng is None:
        return ModelConfig(TINY_SPEC, BackboneConfig(1, 1, 2), HeadConfig(vqa_mode=vqa_mode))
    backbone = BackboneConfig(
        spatial_layers=int(rng.integers(0, 3)),
        temporal_layers=int(rng.integers(1, 3)),
        heads=int(rng.choice([1, 2, 4])),
        mlp_ratio=int(rng.choice([1, 2])),
        pool=str(rng.choice(["mean", "cls"])),
    )
    heads = HeadConfig(mc_branches=int(rng.integers(1, 4)), ks=int(rng.integers(1, 5)), vqa_mode=vqa_mode)
    return ModelConfig(TINY_SPEC, backbone, heads)


def cbs_objective(pair: PairBatch, cfg: ModelConfig, gamma: float = 2.0, alpha=None, margin: float = 2.0):
    """The full loss of a one-batch epoch: focal + contrastive + soft subject term (I = 1)."""

    def f(store: ParameterStore) -> Tensor:
        b1, b2 = dual_forward(pair, store, cfg)
        fl = (focal_loss(b1.tuned, pair.x1.labels, gamma, alpha) + focal_loss(b2.tuned, pair.x2.labels, gamma, alpha)) * 0.5
        cl = contrastive_loss(b1.logits, b2.logits, pair.match, margin)
        bce = None
        for x, out in ((pair.x1, b1), (pair.x2, b2)):
            ledger = SubjectLedger(cfg.heads.n_classes)
            ledger.update(out.yhat, out.probs, x.labels, x.subject_ids)
            term = subject_bce(ledger, "soft")
            bce = term if bce is None else bce + term
        return cbs_loss(fl, cl, bce * 0.5, last_batch=1)

    return f


@dataclass
class SuiteResult:
    reports: list[GradCheckReport]
    configs: list[ModelConfig]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.reports)

    @property
    def max_error(self) -> float:
        return max(r.max_error for r in self.reports)


def run_suite(n_configs: int = 20, seed: int = 0, bs: int = 2, max_entries: int | None = 4,
              h: float = 1e-5, tol: float = 1e-4) -> SuiteResult:
    """Grad-check ``n_configs`` randomly drawn tiny models on two-clip, two-subject batches."""
    rng = np.random.default_rng(seed)
    reports, configs = [], []
    for _ in range(n_configs):
        cfg = tiny_config(rng)
        store = init_model(cfg, rng)
        # perturb away from the neutral initialisation so every path carries signal
        for _, t in store.items():
            t.data = t.data + 0.1 * rng.standard_normal(t.shape)
        ds = synth_generate(bs, 1, cfg.spec, (0.2, 1.0), rng)
        pair = make_pair(ds, rng, AugmentPolicy(hflip=0.5, vflip=0.5, rotation=10.0, brightness=0.05, contrast=0.05))
        reports.append(grad_check(cbs_objective(pair, cfg), store, h=h, tol=tol, max_entries=max_entries, rng=rng))
        configs.append(cfg)
    return SuiteResult(reports, configs)
