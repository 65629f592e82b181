"""Tubelet embedding and a factorised-encoder video transformer.

The encoder maps a clip batch ``[bs, T, H, W, 3]`` to a sequence-level
feature map ``[bs, n_t + 1, d]``: row 0 is the class token and rows
``1..n_t`` hold one vector per temporal tubelet index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError
from .tensor import ParameterStore, Tensor


@dataclass(frozen=True)
class ClipSpec:
    T: int = 16
    H: int = 32
    W: int = 32
    t: int = 4
    h: int = 8
    w: int = 8
    d: int = 32

    def __post_init__(self):
        for name in ("T", "H", "W", "t", "h", "w", "d"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.t > self.T or self.h > self.H or self.w > self.W:
            raise ParameterError(f"tubelet ({self.t},{self.h},{self.w}) exceeds clip ({self.T},{self.H},{self.W})")

    @property
    def n_t(self) -> int:
        return self.T // self.t

    @property
    def n_h(self) -> int:
        return self.H // self.h

    @property
    def n_w(self) -> int:
        return self.W // self.w

    @property
    def n_s(self) -> int:
        """Spatial tokens per temporal index."""
        return self.n_h * self.n_w

    @property
    def cube_dim(self) -> int:
        return self.t * self.h * self.w * 3


@dataclass(frozen=True)
class BackboneConfig:
    spatial_layers: int = 2
    temporal_layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    pool: str = "mean"  # or "cls": a per-frame class token in the spatial encoder

    def validate(self, d: int) -> None:
        if self.spatial_layers < 0 or self.temporal_layers < 0:
            raise ParameterError("layer counts must be non-negative")
        if self.heads < 1 or d % self.heads:
            raise ParameterError(f"feature dim {d} is not divisible by {self.heads} heads")
        if self.pool not in ("mean", "cls"):
            raise ParameterError(f"unknown pooling {self.pool!r}")


def _dense(store, name, n_in, n_out, rng, group="backbone"):
    store.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)), group)
    store.add(f"{name}.b", np.zeros(n_out), group)


def _norm(store, name, d):
    store.add(f"{name}.g", np.ones(d), "backbone")
    store.add(f"{name}.b", np.zeros(d), "backbone")


def _block_params(store, prefix, d, mlp_ratio, rng):
    _norm(store, f"{prefix}.ln1", d)
    _dense(store, f"{prefix}.qkv", d, 3 * d, rng)
    _dense(store, f"{prefix}.proj", d, d, rng)
    _norm(store, f"{prefix}.ln2", d)
    _dense(store, f"{prefix}.fc1", d, mlp_ratio * d, rng)
    _dense(store, f"{prefix}.fc2", mlp_ratio * d, d, rng)


def init_backbone(store: ParameterStore, spec: ClipSpec, cfg: BackboneConfig, rng: np.random.Generator) -> None:
    cfg.validate(spec.d)
    d = spec.d
    _dense(store, "backbone.embed", spec.cube_dim, d, rng)
    store.add("backbone.pos_t", rng.normal(0.0, 0.02, size=(spec.n_t, 1, d)), "backbone")
    store.add("backbone.pos_s", rng.normal(0.0, 0.02, size=(spec.n_s, d)), "backbone")
    store.add("backbone.cls_token", rng.normal(0.0, 0.02, size=(1, 1, d)), "backbone")
    if cfg.pool == "cls":
        store.add("backbone.frame_token", rng.normal(0.0, 0.02, size=(1, 1, d)), "backbone")
    for i in range(cfg.spatial_layers):
        _block_params(store, f"backbone.spatial.{i}", d, cfg.mlp_ratio, rng)
    if cfg.spatial_layers:
        _norm(store, "backbone.spatial.norm", d)
    for i in range(cfg.temporal_layers):
        _block_params(store, f"backbone.temporal.{i}", d, cfg.mlp_ratio, rng)
    if cfg.temporal_layers:
        _norm(store, "backbone.temporal.norm", d)


def _layer_norm(x, store, name):
    return T.layer_norm(x, store[f"{name}.g"], store[f"{name}.b"])


def _dense_fwd(x, store, name):
    return T.linear(x, store[f"{name}.w"], store[f"{name}.b"])


def attention(x: Tensor, store: ParameterStore, prefix: str, heads: int) -> Tensor:
    """Multi-head self-attention over axis 1 of ``x`` with shape ``[B, N, d]``."""
    B, N, d = x.shape
    dh = d // heads
    qkv = _dense_fwd(x, store, f"{prefix}.qkv").reshape(B, N, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    out = T.matmul(T.softmax(scores, axis=-1), v).transpose(0, 2, 1, 3).reshape(B, N, d)
    return _dense_fwd(out, store, f"{prefix}.proj")


def transformer_block(x: Tensor, store: ParameterStore, prefix: str, heads: int) -> Tensor:
    x = x + attention(_layer_norm(x, store, f"{prefix}.ln1"), store, prefix, heads)
    hidden = T.gelu(_dense_fwd(_layer_norm(x, store, f"{prefix}.ln2"), store, f"{prefix}.fc1"))
    return x + _dense_fwd(hidden, store, f"{prefix}.fc2")


def _check_clips(clips: np.ndarray, spec: ClipSpec) -> None:
    if clips.ndim != 5 or clips.shape[1:] != (spec.T, spec.H, spec.W, 3):
        raise ShapeError(
            f"clip batch {clips.shape} does not match [bs, {spec.T}, {spec.H}, {spec.W}, 3]"
        )


def cubes(clips: np.ndarray, spec: ClipSpec) -> np.ndarray:
    """Cut clips into flattened non-overlapping tubelets ``[bs, n_t, n_s, t*h*w*3]``.

    Remainder voxels past ``n_t*t``, ``n_h*h``, ``n_w*w`` are dropped.
    """
    _check_clips(clips, spec)
    bs = clips.shape[0]
    x = clips[:, : spec.n_t * spec.t, : spec.n_h * spec.h, : spec.n_w * spec.w]
    x = x.reshape(bs, spec.n_t, spec.t, spec.n_h, spec.h, spec.n_w, spec.w, 3)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(bs, spec.n_t, spec.n_s, spec.cube_dim)


def tubelet_embed(clips: np.ndarray, spec: ClipSpec, store: ParameterStore) -> Tensor:
    tokens = _dense_fwd(Tensor(cubes(np.asarray(clips, dtype=np.float64), spec)), store, "backbone.embed")
    return tokens + store["backbone.pos_t"] + store["backbone.pos_s"]


def encode(clips: np.ndarray, spec: ClipSpec, cfg: BackboneConfig, store: ParameterStore) -> Tensor:
    """Feature map ``[bs, n_t + 1, d]`` for a clip batch."""
    bs = clips.shape[0]
    n_t, n_s, d = spec.n_t, spec.n_s, spec.d
    x = tubelet_embed(clips, spec, store).reshape(bs * n_t, n_s, d)
    if cfg.pool == "cls":
        x = T.concat([Tensor(np.ones((bs * n_t, 1, 1))) * store["backbone.frame_token"], x], axis=1)
    for i in range(cfg.spatial_layers):
        x = transformer_block(x, store, f"backbone.spatial.{i}", cfg.heads)
    if cfg.spatial_layers:
        x = _layer_norm(x, store, "backbone.spatial.norm")
    pooled = (x[:, 0, :] if cfg.pool == "cls" else x.mean(axis=1)).reshape(bs, n_t, d)
    cls = Tensor(np.ones((bs, 1, 1))) * store["backbone.cls_token"]
    x = T.concat([cls, pooled], axis=1)
    for i in range(cfg.temporal_layers):
        x = transformer_block(x, store, f"backbone.temporal.{i}", cfg.heads)
    if cfg.temporal_layers:
        x = _layer_norm(x, store, "backbone.temporal.norm")
    return x
