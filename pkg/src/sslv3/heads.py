"""Quality head (sequence and video score regressors), classifier, and Tune-CLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ParameterError, ShapeError
from .tensor import ParameterStore, Tensor

VQA_MODES = ("full", "ssr_only", "vsr_only", "off")

# softplus(SOFTPLUS_ONE) == 1, so an untrained quality head leaves logits untouched
SOFTPLUS_ONE = float(np.log(np.e - 1.0))


@dataclass(frozen=True)
class HeadConfig:
    n_classes: int = 2
    mc_branches: int = 3
    ks: int = 4
    fusion_hidden: int = 8
    vqa_mode: str = "full"

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ParameterError("need at least two classes")
        if self.mc_branches < 1 or self.ks < 1 or self.fusion_hidden < 1:
            raise ParameterError("branch count, kernel size and fusion width must be >= 1")
        if self.vqa_mode not in VQA_MODES:
            raise ParameterError(f"vqa_mode must be one of {VQA_MODES}, got {self.vqa_mode!r}")


@dataclass
class QualityBundle:
    sqs: Tensor  # [bs, n_t]
    vqs: Tensor  # [bs], strictly positive
    m_hat: Tensor | None = None
    h_hat: Tensor | None = None
    s1: Tensor | None = None
    s2: Tensor | None = None
    s3: Tensor | None = None


def init_heads(store: ParameterStore, d: int, n_t: int, cfg: HeadConfig, rng: np.random.Generator) -> None:
    """Register quality-head and classifier parameters.

    All quality-head variants are registered regardless of ``vqa_mode`` so that
    checkpoints of every ablation share one layout; unused ones get zero grads.
    """
    cfg.validate()

    def dense(name, n_in, n_out, group, bias=0.0):
        store.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)), group)
        store.add(f"{name}.b", np.full(n_out, bias), group)

    dense("vqa.ssr.weight_net", d, d, "vqa")
    bound = 1.0 / np.sqrt(cfg.ks)
    store.add("vqa.vsr.k_motion", rng.uniform(-bound, bound, size=cfg.ks), "vqa")
    store.add("vqa.vsr.k_hysteresis", rng.uniform(-bound, bound, size=cfg.ks), "vqa")
    dense("vqa.vsr.s2", n_t, 1, "vqa")
    dense("vqa.vsr.fuse1", 3, cfg.fusion_hidden, "vqa")
    dense("vqa.vsr.fuse2", cfg.fusion_hidden, 1, "vqa", bias=SOFTPLUS_ONE)
    dense("vqa.ssr_only.fc", n_t, 1, "vqa", bias=SOFTPLUS_ONE)
    for i in range(cfg.mc_branches):
        dense(f"cls.mc.{i}", d, cfg.n_classes, "cls")


def _sequence_rows(f: Tensor, n_t: int) -> Tensor:
    if f.ndim != 3 or f.shape[1] != n_t + 1:
        raise ShapeError(f"feature map {f.shape} lacks the class-token row (expected second extent {n_t + 1})")
    return f[:, 1:, :]


def ssr_forward(f: Tensor, store: ParameterStore, n_t: int) -> Tensor:
    """Sequence quality scores ``[bs, n_t]``.

    Each sequence feature is scored by its inner product with a softmax
    weight vector predicted from the same feature.
    """
    rows = _sequence_rows(f, n_t)
    weights = T.softmax(T.linear(rows, store["vqa.ssr.weight_net.w"], store["vqa.ssr.weight_net.b"]), axis=-1)
    return (weights * rows).sum(axis=-1)


def avg_pool_scores(f: Tensor, n_t: int) -> Tensor:
    """SSR stand-in for the VSR-only ablation: plain mean over the feature axis."""
    return _sequence_rows(f, n_t).mean(axis=-1)


def vsr_forward(sqs: Tensor, store: ParameterStore) -> QualityBundle:
    bs, n_t = sqs.shape
    m_hat = T.softmax(T.conv1d_padded(sqs, store["vqa.vsr.k_motion"], "before"), axis=-1)
    h_hat = T.softmax(T.conv1d_padded(sqs, store["vqa.vsr.k_hysteresis"], "after"), axis=-1)
    s1 = (m_hat * sqs).sum(axis=-1)
    s3 = (h_hat * sqs).sum(axis=-1)
    s2 = T.linear(sqs, store["vqa.vsr.s2.w"], store["vqa.vsr.s2.b"]).reshape(bs)
    z = T.concat([s1.reshape(bs, 1), s2.reshape(bs, 1), s3.reshape(bs, 1)], axis=1)
    z = T.tanh(T.linear(z, store["vqa.vsr.fuse1.w"], store["vqa.vsr.fuse1.b"]))
    vqs = T.softplus(T.linear(z, store["vqa.vsr.fuse2.w"], store["vqa.vsr.fuse2.b"])).reshape(bs)
    return QualityBundle(sqs=sqs, vqs=vqs, m_hat=m_hat, h_hat=h_hat, s1=s1, s2=s2, s3=s3)


def ssr_only_vqs(sqs: Tensor, store: ParameterStore) -> Tensor:
    """SSR-only ablation: one FC layer regresses the clip score from the SQS vector."""
    bs = sqs.shape[0]
    return T.softplus(T.linear(sqs, store["vqa.ssr_only.fc.w"], store["vqa.ssr_only.fc.b"])).reshape(bs)


def quality_forward(f: Tensor, store: ParameterStore, n_t: int, mode: str) -> QualityBundle | None:
    """Dispatch on the quality-head ablation mode; ``"off"`` returns None."""
    if mode == "off":
        return None
    if mode == "full":
        return vsr_forward(ssr_forward(f, store, n_t), store)
    if mode == "vsr_only":
        return vsr_forward(avg_pool_scores(f, n_t), store)
    if mode == "ssr_only":
        sqs = ssr_forward(f, store, n_t)
        return QualityBundle(sqs=sqs, vqs=ssr_only_vqs(sqs, store))
    raise ParameterError(f"unknown vqa mode {mode!r}")


def mc_classify(f: Tensor, store: ParameterStore, branches: int) -> Tensor:
    """Raw class scores ``[bs, k]``: the sum of ``branches`` FC heads on the class token."""
    z = f[:, 0, :]
    out = None
    for i in range(branches):
        y = T.linear(z, store[f"cls.mc.{i}.w"], store[f"cls.mc.{i}.b"])
        out = y if out is None else out + y
    return out


def tune_cls(logits: Tensor, vqs: Tensor) -> tuple[Tensor, np.ndarray]:
    """Multiply each row's maximal logit by its quality score.

    The argmax index is fixed by the forward pass; gradients flow through the
    product into both the logit and the score. Returns the tuned logits and
    the predicted class per row.
    """
    if logits.ndim != 2 or vqs.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and quality scores {vqs.shape} disagree")
    if np.any(vqs.data <= 0):
        raise ContractError("quality scores must be strictly positive")
    i_max = np.argmax(logits.data, axis=1)
    mask = np.zeros(logits.shape)
    mask[np.arange(logits.shape[0]), i_max] = 1.0
    tuned = logits * Tensor(1.0 - mask) + (logits * Tensor(mask)) * vqs.reshape(-1, 1)
    return tuned, np.argmax(tuned.data, axis=1)
