"""Weight-shared dual branches and the classification-to-quality gradient path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AugmentPolicy, ClipBatch, augment
from .errors import BatchSizeError, CouplingError
from .losses import focal_loss
from .model import BranchOutput, ModelConfig, forward_branch
from .tensor import ParameterStore, backward


@dataclass
class PairBatch:
    x1: ClipBatch
    x2: ClipBatch  # x2[i] is an independently augmented copy of source clip perm[i]
    perm: np.ndarray
    match: np.ndarray  # 1.0 where the two branches see the same class


def match_labels(labels1, labels2) -> np.ndarray:
    return (np.asarray(labels1) == np.asarray(labels2)).astype(np.float64)


def make_pair(batch: ClipBatch, rng: np.random.Generator, policy: AugmentPolicy | None = None,
              perm=None, allow_singleton: bool = False) -> PairBatch:
    """Build the contrastive input pair from one mini-batch.

    Both branches get independent augmentation draws; branch 2 is then
    shuffled by a permutation drawn uniformly (identity included).  A batch of
    one is rejected unless ``allow_singleton``, in which case it pairs with
    itself under the identity permutation.
    """
    n = len(batch)
    if n < 2 and not (allow_singleton and n == 1):
        raise BatchSizeError(f"a contrastive pair needs at least two clips, got {n}")
    policy = policy if policy is not None else AugmentPolicy.off()
    x1 = augment(batch, policy, rng)
    x2_src = augment(batch, policy, rng)
    if perm is None:
        perm = rng.permutation(n) if n > 1 else np.zeros(1, dtype=np.intp)
    perm = np.asarray(perm, dtype=np.intp)
    if sorted(perm.tolist()) != list(range(n)):
        raise BatchSizeError(f"{perm.tolist()} is not a permutation of {n} indices")
    x2 = x2_src.take(perm)
    return PairBatch(x1=x1, x2=x2, perm=perm, match=match_labels(x1.labels, x2.labels))


def dual_forward(pair: PairBatch, store: ParameterStore, cfg: ModelConfig) -> tuple[BranchOutput, BranchOutput]:
    """Run both branches against the same parameters, in order, in one graph."""
    return forward_branch(store, pair.x1.clips, cfg), forward_branch(store, pair.x2.clips, cfg)


@dataclass
class CouplingReport:
    grad_norms: dict[str, float]  # per quality-head parameter

    @property
    def max_norm(self) -> float:
        return max(self.grad_norms.values(), default=0.0)

    @property
    def coupled(self) -> bool:
        return self.max_norm > 0.0


def verify_chain_coupling(store: ParameterStore, pair: PairBatch, cfg: ModelConfig,
                          gamma: float = 2.0, alpha=None, strict: bool = True) -> CouplingReport:
    """Backpropagate the focal loss alone and report gradient norms of the quality head.

    No quality label enters this loss, so any non-zero gradient reaching the
    ``vqa`` group arrives through the tuned logits.  With ``strict`` an
    all-zero result raises :class:`CouplingError`.
    """
    store.zero_grad()
    b1, b2 = dual_forward(pair, store, cfg)
    fl = (focal_loss(b1.tuned, pair.x1.labels, gamma, alpha) + focal_loss(b2.tuned, pair.x2.labels, gamma, alpha)) * 0.5
    backward(fl, store)
    report = CouplingReport({n: float(np.linalg.norm(t.grad)) for n, t in store.items("vqa")})
    store.zero_grad()
    if strict and not report.coupled:
        raise CouplingError("focal loss delivers no gradient to the quality head; is Tune-CLS bypassed?")
    return report
