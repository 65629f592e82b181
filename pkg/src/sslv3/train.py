"""Training loop, cyclic schedule, Adam, evaluation and K-fold drivers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .combined import make_pair
from .config import LOSS_MODES, TrainConfig
from .data import ClipBatch, iter_batches, kfold_split, n_batches
from .errors import NumericError, ParameterError
from .heads import VQA_MODES
from .losses import SubjectLedger, cbs_loss, contrastive_loss, focal_loss, inverse_frequency_alpha, subject_bce
from .metrics import MetricsReport, mean_report, subject_metrics
from .model import ModelConfig, forward_branch, init_model
from .tensor import ParameterStore, Tensor, backward

log = logging.getLogger(__name__)


class CyclicLR:
    """Triangular cyclic learning rate, evaluated per optimiser step.

    ``cycle_steps`` is the length of one full up-and-down cycle.  In
    ``triangular2`` mode the amplitude halves after every completed cycle.
    """

    def __init__(self, base_lr: float, max_lr: float, cycle_steps: float, mode: str = "triangular2"):
        if cycle_steps <= 0:
            raise ParameterError("cycle_steps must be > 0")
        self.base_lr, self.max_lr, self.mode = base_lr, max_lr, mode
        self.half = cycle_steps / 2.0
        self.step_count = 0

    def lr_at(self, it: int) -> float:
        cycle = np.floor(1 + it / (2 * self.half))
        x = abs(it / self.half - 2 * cycle + 1)
        scale = 1.0 / 2 ** (cycle - 1) if self.mode == "triangular2" else 1.0
        return float(self.base_lr + (self.max_lr - self.base_lr) * max(0.0, 1.0 - x) * scale)

    @property
    def lr(self) -> float:
        return self.lr_at(self.step_count)

    def step(self) -> None:
        self.step_count += 1


class Adam:
    def __init__(self, store: ParameterStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.t = 0

    def step(self, store: ParameterStore, lr: float) -> None:
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for n, p in store.items():
            if p.grad is None:
                continue
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * p.grad
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * p.grad * p.grad
            p.data = p.data - lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


def last_batch_indicator(n: int) -> list[int]:
    return [int(i == n - 1) for i in range(n)]


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)

    def column(self, key: str) -> list:
        return [e[key] for e in self.epochs]

    def to_csv(self) -> str:
        if not self.epochs:
            return ""
        keys = list(self.epochs[0])
        lines = [",".join(keys)] + [",".join(repr(e[k]) for k in keys) for e in self.epochs]
        return "\n".join(lines) + "\n"


def _seed_streams(seed: int):
    init, aug = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init), np.random.default_rng(aug)


def train(cfg: TrainConfig, dataset: ClipBatch, store: ParameterStore | None = None,
          progress=None) -> tuple[ParameterStore, History]:
    """Train under the combined batch- and subject-level objective.

    Returns the trained parameters and per-epoch history (losses, learning
    rate, subject-level training accuracy of branch 1).
    """
    if len(dataset) == 0:
        raise ParameterError("empty training set")
    mcfg = cfg.model_config()
    lcfg = cfg.loss_config()
    init_rng, aug_rng = _seed_streams(cfg.seed)
    store = store if store is not None else init_model(mcfg, init_rng)
    alpha = np.asarray(lcfg.alpha) if lcfg.alpha is not None else inverse_frequency_alpha(dataset.labels, mcfg.heads.n_classes)
    policy = cfg.augment_policy()
    nb = n_batches(len(dataset), cfg.batch_size)
    sched = CyclicLR(cfg.lr_init, cfg.lr_max, cfg.cycle_epochs * nb, cfg.scheduler)
    opt = Adam(store, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = History()
    k = mcfg.heads.n_classes

    for epoch in range(cfg.epochs):
        order_rng = np.random.default_rng([cfg.seed, epoch])
        ledgers = (SubjectLedger(k), SubjectLedger(k))
        sums = {"fl": 0.0, "cl": 0.0, "loss": 0.0}
        bce_soft = bce_round = float("nan")
        for b, batch in enumerate(iter_batches(dataset, cfg.batch_size, order_rng)):
            last = int(b == nb - 1)
            try:
                pair = make_pair(batch, aug_rng, policy, allow_singleton=True)
                views = [(pair.x1, forward_branch(store, pair.x1.clips, mcfg))]
                if cfg.uses_contrastive:
                    views.append((pair.x2, forward_branch(store, pair.x2.clips, mcfg)))
                fl = None
                for (x, out), ledger in zip(views, ledgers):
                    term = focal_loss(out.tuned, x.labels, lcfg.gamma, alpha)
                    fl = term if fl is None else fl + term
                    ledger.update(out.yhat, out.probs, x.labels, x.subject_ids)
                fl = fl * (1.0 / len(views))
                cl = contrastive_loss(views[0][1].logits, views[1][1].logits, pair.match, lcfg.margin) \
                    if cfg.uses_contrastive else None
                bce = None
                if last:
                    used = ledgers[:len(views)]
                    soft = sum((subject_bce(led, "soft") for led in used), Tensor(0.0)) * (1.0 / len(used))
                    bce_soft = soft.item()
                    if k == 2:
                        bce_round = float(np.mean([subject_bce(led, "paper_round").item() for led in used]))
                    bce = soft if cfg.subject_mode == "soft" else Tensor(bce_round)
                    if not cfg.uses_subject:
                        bce = None
                loss = cbs_loss(fl, cl, bce, last)
                if not np.isfinite(loss.item()):
                    raise NumericError("non-finite loss")
                store.zero_grad()
                if loss.requires_grad:
                    backward(loss, store)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from exc
            opt.step(store, sched.lr)
            sched.step()
            sums["fl"] += fl.item()
            sums["cl"] += 0.0 if cl is None else cl.item()
            sums["loss"] += loss.item()
        row = {
            "epoch": epoch,
            "loss": sums["loss"] / nb,
            "fl": sums["fl"] / nb,
            "cl": sums["cl"] / nb,
            "bce_soft": bce_soft,
            "bce_round": bce_round,
            "lr": sched.lr_at(sched.step_count - 1),
            "train_subject_acc": ledgers[0].accuracy(),
        }
        history.epochs.append(row)
        log.info("epoch %d loss %.4f fl %.4f cl %.4f acc %.3f", epoch, row["loss"], row["fl"], row["cl"],
                 row["train_subject_acc"])
        if progress is not None:
            progress(row)
    store.zero_grad()
    return store, history


def predict_ledger(store: ParameterStore, dataset: ClipBatch, mcfg: ModelConfig, batch_size: int = 32) -> SubjectLedger:
    """Branch-1 clip predictions on un-augmented clips, aggregated per subject."""
    ledger = SubjectLedger(mcfg.heads.n_classes)
    with T.no_grad():
        for batch in iter_batches(dataset, batch_size, None):
            out = forward_branch(store, batch.clips, mcfg)
            ledger.update(out.yhat, out.probs, batch.labels, batch.subject_ids)
    return ledger


def evaluate(store: ParameterStore, dataset: ClipBatch, cfg: TrainConfig) -> MetricsReport:
    return subject_metrics(predict_ledger(store, dataset, cfg.model_config(), cfg.eval_batch_size))


@dataclass
class FoldResult:
    fold: int
    train_subjects: list[str]
    test_subjects: list[str]
    test: MetricsReport
    train: MetricsReport
    history: History


def run_kfold(cfg: TrainConfig, dataset: ClipBatch, folds: int | None = None,
              max_folds: int | None = None) -> list[FoldResult]:
    """Subject-disjoint cross-validation; each fold trains from a fresh initialisation."""
    K = folds or cfg.folds
    splits = kfold_split(dataset.subject_ids, K, np.random.default_rng([cfg.seed, 7919]), dataset.labels)
    results = []
    for i, (tr, te) in enumerate(splits[:max_folds]):
        train_ds, test_ds = dataset.select_subjects(tr), dataset.select_subjects(te)
        store, hist = train(cfg, train_ds)
        results.append(FoldResult(i, tr, te, evaluate(store, test_ds, cfg), evaluate(store, train_ds, cfg), hist))
    return results


def run_ablation(cfg: TrainConfig, dataset: ClipBatch, folds: int | None = None,
                 max_folds: int | None = None, vqa_modes=VQA_MODES, loss_modes=LOSS_MODES) -> list[dict]:
    """Every (quality-head mode, loss mode) cell, each a finished K-fold run."""
    rows = []
    for vqa in vqa_modes:
        for loss in loss_modes:
            res = run_kfold(cfg.replace(vqa=vqa, loss=loss), dataset, folds, max_folds)
            rows.append({"vqa": vqa, "loss": loss, **mean_report([r.test for r in res])})
    return rows
