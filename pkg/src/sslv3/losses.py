"""Focal, margin-contrastive and subject-level losses, and their combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DataError, LabelError, ParameterError, ShapeError, StateError
from .tensor import Tensor

EPS = 1e-7
SUBJECT_MODES = ("soft", "paper_round")


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    alpha: tuple[float, ...] | None = None  # None: inverse class frequency of the training split
    margin: float = 2.0
    w_cl: float = 0.5
    w_bce: float = 0.5

    def __post_init__(self):
        if self.gamma < 0:
            raise ParameterError("gamma must be >= 0")
        if self.margin <= 0:
            raise ParameterError("margin must be > 0")
        if self.alpha is not None and any(a <= 0 for a in self.alpha):
            raise ParameterError("alpha weights must be > 0")


def inverse_frequency_alpha(labels, n_classes: int) -> np.ndarray:
    """Per-class weights ``N / (k * N_c)``; absent classes get weight 1."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(np.float64)
    alpha = np.ones(n_classes)
    present = counts > 0
    alpha[present] = counts.sum() / (n_classes * counts[present])
    return alpha


def _check_labels(labels, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    return y


def focal_loss(logits: Tensor, labels, gamma: float = 2.0, alpha=None) -> Tensor:
    """Batch mean of ``-alpha_y (1 - p_y)^gamma log p_y`` with ``p = softmax(logits)``."""
    bs, k = logits.shape
    y = _check_labels(labels, k)
    logp = T.log_softmax(logits, axis=-1)[np.arange(bs), y]
    term = -logp
    if gamma != 0:
        term = term * (1.0 - T.exp(logp)) ** gamma
    if alpha is not None:
        term = term * Tensor(np.asarray(alpha, dtype=np.float64)[y])
    return term.mean()


def contrastive_loss(cls1: Tensor, cls2: Tensor, match, margin: float = 2.0) -> Tensor:
    """``(1/2n) sum_i [M_i D_i^2 + (1 - M_i) max(margin - D_i, 0)^2]`` with Euclidean ``D``."""
    if cls1.shape != cls2.shape or cls1.ndim != 2:
        raise ShapeError(f"branch outputs differ in shape: {cls1.shape} vs {cls2.shape}")
    n = cls1.shape[0]
    M = np.asarray(match, dtype=np.float64)
    if M.shape != (n,):
        raise ShapeError(f"match vector {M.shape} does not fit batch of {n}")
    diff = cls1 - cls2
    sq = (diff * diff).sum(axis=-1)
    hinge = T.relu(margin - T.l2_norm(diff, axis=-1))
    return (Tensor(M) * sq + Tensor(1.0 - M) * hinge * hinge).sum() * (1.0 / (2 * n))


class SubjectLedger:
    """Per-subject clip counts, correct counts and summed class probabilities.

    Probability sums from earlier batches are held as constants; only the most
    recent batch stays attached to the graph, which is the one whose loss the
    subject term joins.
    """

    def __init__(self, n_classes: int = 2):
        self.n_classes = n_classes
        self.acc_num: dict[str, int] = {}
        self.cnt: dict[str, int] = {}
        self.label: dict[str, int] = {}
        self._prob: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self.cnt)

    def subjects(self) -> list[str]:
        return sorted(self.cnt)

    def update(self, yhat, probs: Tensor, labels, subject_ids) -> None:
        yhat = np.asarray(yhat)
        sids = np.asarray(subject_ids).astype(str)
        y = _check_labels(labels, self.n_classes)
        if len(y) == 0:
            return
        if probs.shape != (len(y), self.n_classes):
            raise ShapeError(f"probabilities {probs.shape} do not fit batch of {len(y)} x {self.n_classes}")
        for s in self._prob:
            if self._prob[s].requires_grad:
                self._prob[s] = self._prob[s].detach()
        for s in dict.fromkeys(sids.tolist()):
            rows = np.flatnonzero(sids == s)
            lab = int(y[rows[0]])
            if np.any(y[rows] != lab) or self.label.setdefault(s, lab) != lab:
                raise DataError(f"subject {s!r} carries conflicting labels")
            self.cnt[s] = self.cnt.get(s, 0) + len(rows)
            self.acc_num[s] = self.acc_num.get(s, 0) + int(np.sum(yhat[rows] == y[rows]))
            part = probs[rows].sum(axis=0)
            self._prob[s] = part if s not in self._prob else self._prob[s] + part

    def prob_sum(self, s: str) -> float:
        """Summed positive-class (index 1) probability."""
        return float(self._prob[s].data[1])

    def mean_prob(self, s: str) -> np.ndarray:
        return self._prob[s].data / self.cnt[s]

    def acc_total(self) -> dict[str, int]:
        """1 where strictly more than half the subject's clips are correct."""
        return {s: int(self.acc_num[s] / self.cnt[s] > 0.5) for s in self.subjects()}

    def accuracy(self) -> float:
        tot = self.acc_total()
        return float(np.mean(list(tot.values()))) if tot else float("nan")


def subject_update(ledger: SubjectLedger, yhat, probs: Tensor, labels, subject_ids) -> None:
    ledger.update(yhat, probs, labels, subject_ids)


def subject_bce(ledger: SubjectLedger, mode: str = "soft") -> Tensor:
    """Subject-level loss over the ledger.

    ``paper_round`` scores the rounded per-subject accuracy against the label
    and carries no gradient.  ``soft`` is the cross-entropy of each subject's
    mean class probability (binary cross-entropy when k = 2).
    """
    if not len(ledger):
        raise StateError("subject ledger is empty")
    subjects = ledger.subjects()
    if mode == "paper_round":
        if ledger.n_classes != 2:
            raise ContractError("rounded subject loss is defined for binary labels only")
        tot = ledger.acc_total()
        a = np.clip(np.array([tot[s] for s in subjects], dtype=np.float64), EPS, 1 - EPS)
        y = np.array([ledger.label[s] for s in subjects], dtype=np.float64)
        return Tensor(float(np.mean(-(y * np.log(a) + (1 - y) * np.log(1 - a)))))
    if mode != "soft":
        raise ParameterError(f"subject mode must be one of {SUBJECT_MODES}")
    losses = []
    for s in subjects:
        p = T.clip(ledger._prob[s][ledger.label[s]] * (1.0 / ledger.cnt[s]), EPS, 1 - EPS)
        losses.append(-T.log(p).reshape(1))
    return T.concat(losses).mean()


def cbs_loss(fl: Tensor, cl=None, bce=None, last_batch: int = 0) -> Tensor:
    """``FL + 0.5 CL + I 0.5 BCE``; absent terms count as zero."""
    if last_batch not in (0, 1, True, False):
        raise ParameterError("last-batch indicator must be 0 or 1")
    total = T.as_tensor(fl)
    if cl is not None:
        total = total + T.as_tensor(cl) * 0.5
    if last_batch and bce is not None:
        total = total + T.as_tensor(bce) * 0.5
    return total
