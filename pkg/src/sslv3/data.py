"""Clip datasets: synthetic generation, disk ingestion, augmentation, K-fold splits.

On-disk layouts
---------------
Frame layout (``manifest.csv``, UTF-8, header ``video_id,subject_id,label,frames_dir``):
each ``frames_dir`` is relative to the dataset root, its parent directory is
named after the integer label, and it holds zero-padded numbered images
(``00001.png`` ...).  Videos are cut into consecutive windows of ``clip_len``
frames.

Synthetic layout (``index.csv``, header ``clip_id,subject_id,label,true_quality,file``):
one ``.npy`` float64 array ``[T, H, W, 3]`` per clip.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage

from .backbone import ClipSpec
from .errors import DataError, IngestionError, ParameterError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class ClipBatch:
    clips: np.ndarray  # [bs, T, H, W, 3] in [0, 1]
    labels: np.ndarray  # [bs] int
    subject_ids: np.ndarray  # [bs] str
    true_quality: np.ndarray | None = None  # synthetic only; never read by a loss
    clip_ids: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> ClipBatch:
        idx = np.asarray(idx, dtype=np.intp)
        return ClipBatch(
            clips=self.clips[idx],
            labels=self.labels[idx],
            subject_ids=self.subject_ids[idx],
            true_quality=None if self.true_quality is None else self.true_quality[idx],
            clip_ids=None if self.clip_ids is None else self.clip_ids[idx],
        )

    @property
    def is_synthetic(self) -> bool:
        return self.true_quality is not None

    def subjects(self) -> list[str]:
        return sorted(set(self.subject_ids.tolist()))

    def subject_labels(self) -> dict[str, int]:
        return subject_label_map(self.subject_ids, self.labels)

    def select_subjects(self, subjects) -> ClipBatch:
        keep = np.isin(self.subject_ids, np.asarray(list(subjects), dtype=self.subject_ids.dtype))
        return self.take(np.flatnonzero(keep))


ClipDataset = ClipBatch


def subject_label_map(subject_ids, labels) -> dict[str, int]:
    out: dict[str, int] = {}
    for s, y in zip(np.asarray(subject_ids).astype(str).tolist(), np.asarray(labels).tolist()):
        if out.setdefault(s, int(y)) != int(y):
            raise DataError(f"subject {s!r} carries conflicting labels")
    return out


def iter_batches(dataset: ClipBatch, batch_size: int, rng: np.random.Generator | None) -> Iterator[ClipBatch]:
    """Yield batches in a seeded shuffled order (natural order when ``rng`` is None)."""
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    order = np.arange(len(dataset)) if rng is None else rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        yield dataset.take(order[start:start + batch_size])


def n_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


# synthetic clips -------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    blur_max: float = 2.0  # Gaussian sigma in pixels at quality 0
    noise_max: float = 0.3  # noise std at quality 0
    background: float = 0.1


def render_clean(spec: ClipSpec, direction: int, x0: float, y0: float, travel: float,
                 radius: float, color: np.ndarray, background: float = 0.1) -> np.ndarray:
    """A Gaussian blob moving horizontally; ``direction`` +1 is left-to-right."""
    tt = np.arange(spec.T) / max(spec.T - 1, 1)
    cx = x0 + direction * travel * tt
    yy, xx = np.mgrid[0:spec.H, 0:spec.W].astype(np.float64)
    blob = np.exp(-((xx[None] - cx[:, None, None]) ** 2 + (yy[None] - y0) ** 2) / (2 * radius ** 2))
    clip = background + blob[..., None] * (color - background)
    return np.clip(clip, 0.0, 1.0)


def degrade(clip: np.ndarray, q: float, rng: np.random.Generator, cfg: SynthConfig = SynthConfig()) -> np.ndarray:
    """Blur-plus-noise degradation; strength scales with ``1 - q``."""
    strength = 1.0 - q
    out = clip
    if strength > 0:
        out = ndimage.gaussian_filter(out, sigma=(0, cfg.blur_max * strength, cfg.blur_max * strength, 0))
        out = out + cfg.noise_max * strength * rng.standard_normal(out.shape)
        out = np.clip(out, 0.0, 1.0)
    return out


def synth_generate(n_subjects: int, clips_per_subject: int, spec: ClipSpec,
                   quality_range: tuple[float, float] = (0.2, 1.0),
                   rng: np.random.Generator | int = 0, n_classes: int = 2,
                   cfg: SynthConfig = SynthConfig()) -> ClipBatch:
    """Two-class motion dataset: class 0 blobs travel left-to-right, class 1 right-to-left.

    Each subject has one class and one base colour; each clip draws its own
    quality ``q ~ U(quality_range)`` realised as blur and noise.
    """
    lo, hi = quality_range
    if not (0.0 <= lo <= hi <= 1.0):
        raise ParameterError(f"quality_range {quality_range} must satisfy 0 <= lo <= hi <= 1")
    if n_subjects < 2 or n_classes != 2:
        raise ParameterError("need at least two subjects and exactly two classes")
    if clips_per_subject < 1:
        raise ParameterError("clips_per_subject must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    classes = rng.permutation(np.arange(n_subjects) % n_classes)
    clips, labels, sids, quality, cids = [], [], [], [], []
    for s in range(n_subjects):
        base = rng.uniform(0.6, 1.0, size=3)
        direction = 1 if classes[s] == 0 else -1
        for c in range(clips_per_subject):
            travel = rng.uniform(0.45, 0.6) * spec.W
            start = rng.uniform(0.1, 0.3) * spec.W
            x0 = start if direction > 0 else spec.W - 1 - start
            y0 = rng.uniform(0.25, 0.75) * spec.H
            radius = rng.uniform(0.08, 0.13) * min(spec.H, spec.W)
            color = np.clip(base + rng.normal(0, 0.05, size=3), 0.0, 1.0)
            q = rng.uniform(lo, hi) if hi > lo else lo
            clean = render_clean(spec, direction, x0, y0, travel, radius, color, cfg.background)
            clips.append(degrade(clean, q, rng, cfg))
            labels.append(int(classes[s]))
            sids.append(f"S{s:03d}")
            quality.append(q)
            cids.append(f"S{s:03d}_c{c:03d}")
    return ClipBatch(
        clips=np.stack(clips),
        labels=np.array(labels, dtype=np.int64),
        subject_ids=np.array(sids),
        true_quality=np.array(quality),
        clip_ids=np.array(cids),
    )


# augmentation ----------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    hflip: float = 0.5  # probability; 1.0 forces the flip
    vflip: float = 0.5
    rotation: float = 10.0  # max |angle| in degrees
    crop: float = 1.0  # centre-crop fraction, resized back to full extent
    brightness: float = 0.1  # max |additive delta|
    contrast: float = 0.1  # max |multiplicative delta| around the clip mean
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.crop <= 1.0:
            raise ParameterError(f"crop fraction {self.crop} must lie in (0, 1]")
        for name in ("hflip", "vflip"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} probability must lie in [0, 1]")
        if self.rotation < 0 or self.brightness < 0 or self.contrast < 0:
            raise ParameterError("augmentation magnitudes must be non-negative")

    @classmethod
    def off(cls) -> AugmentPolicy:
        return cls(hflip=0.0, vflip=0.0, rotation=0.0, crop=1.0, brightness=0.0, contrast=0.0)

    @property
    def is_identity(self) -> bool:
        return self == replace(AugmentPolicy.off(), seed=self.seed)


def _center_crop_resize(clip: np.ndarray, frac: float) -> np.ndarray:
    _, H, W, _ = clip.shape
    ch, cw = max(1, int(round(H * frac))), max(1, int(round(W * frac)))
    top, left = (H - ch) / 2.0, (W - cw) / 2.0
    ys = top + (np.arange(H) + 0.5) * ch / H - 0.5
    xs = left + (np.arange(W) + 0.5) * cw / W - 0.5
    out = np.empty_like(clip)
    for f in range(clip.shape[0]):
        for c in range(3):
            out[f, :, :, c] = ndimage.map_coordinates(
                clip[f, :, :, c], np.meshgrid(ys, xs, indexing="ij"), order=1, mode="nearest"
            )
    return out


def _rotate(clip: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate every frame about its centre with bilinear resampling and zero fill."""
    _, H, W, _ = clip.shape
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    sy = c * (yy - cy) + s * (xx - cx) + cy
    sx = -s * (yy - cy) + c * (xx - cx) + cx
    y0, x0 = np.floor(sy).astype(int), np.floor(sx).astype(int)
    fy, fx = (sy - y0)[None, ..., None], (sx - x0)[None, ..., None]
    padded = np.pad(clip, ((0, 0), (1, 1), (1, 1), (0, 0)))

    def at(y, x):
        inside = (y >= -1) & (y <= H) & (x >= -1) & (x <= W)
        vals = padded[:, np.clip(y + 1, 0, H + 1), np.clip(x + 1, 0, W + 1)]
        return vals * inside[None, ..., None]

    return ((1 - fy) * (1 - fx) * at(y0, x0) + (1 - fy) * fx * at(y0, x0 + 1)
            + fy * (1 - fx) * at(y0 + 1, x0) + fy * fx * at(y0 + 1, x0 + 1))


def augment_clip(clip: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    # draw every random quantity unconditionally so the stream is policy-independent
    u = rng.random(2)
    angle = rng.uniform(-1.0, 1.0) * policy.rotation
    bright = rng.uniform(-1.0, 1.0) * policy.brightness
    contrast = 1.0 + rng.uniform(-1.0, 1.0) * policy.contrast
    out = clip
    if u[0] < policy.hflip:
        out = out[:, :, ::-1]
    if u[1] < policy.vflip:
        out = out[:, ::-1]
    if angle != 0.0:
        out = _rotate(out, angle)
    if policy.crop < 1.0:
        out = _center_crop_resize(out, policy.crop)
    if contrast != 1.0:
        out = (out - out.mean()) * contrast + out.mean()
    if bright != 0.0:
        out = out + bright
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def augment(batch: ClipBatch, policy: AugmentPolicy, rng: np.random.Generator | None = None) -> ClipBatch:
    """Independently augment every clip; labels, subjects and quality pass through."""
    if policy.is_identity:
        return replace(batch, clips=batch.clips.copy())
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    clips = np.stack([augment_clip(c, policy, rng) for c in batch.clips]) if len(batch) else batch.clips.copy()
    return replace(batch, clips=clips)


# subject-disjoint folds ------------------------------------------------------

def kfold_split(subject_ids, K: int, rng: np.random.Generator | int | None = 0,
                labels=None) -> list[tuple[list[str], list[str]]]:
    """Partition distinct subjects into ``K`` test folds, stratified by class when labels are given.

    ``subject_ids`` may repeat (one entry per clip); ``labels`` aligns with it.
    Returns ``(train_subjects, test_subjects)`` per fold.
    """
    ids = np.asarray(subject_ids).astype(str)
    subjects = sorted(set(ids.tolist()))
    if K < 2:
        raise ParameterError("K must be >= 2 to hold out a fold")
    if K > len(subjects):
        raise ParameterError(f"K={K} exceeds the {len(subjects)} distinct subjects")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if labels is None:
        by_class = {0: subjects}
    else:
        lab = subject_label_map(ids, labels)
        by_class: dict[int, list[str]] = {}
        for s in subjects:
            by_class.setdefault(lab[s], []).append(s)
    folds: list[list[str]] = [[] for _ in range(K)]
    slot = 0
    for cls in sorted(by_class):
        members = list(by_class[cls])
        for j in rng.permutation(len(members)):
            folds[slot % K].append(members[j])
            slot += 1
    out = []
    for k in range(K):
        test = sorted(folds[k])
        train = sorted(s for s in subjects if s not in set(test))
        out.append((train, test))
    return out


# disk io ---------------------------------------------------------------------

def save_synthetic(dataset: ClipBatch, path) -> Path:
    """Write one ``.npy`` per clip plus ``index.csv``."""
    root = Path(path)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    ids = dataset.clip_ids if dataset.clip_ids is not None else np.array([f"c{i:06d}" for i in range(len(dataset))])
    tq = dataset.true_quality if dataset.true_quality is not None else np.full(len(dataset), np.nan)
    with open(root / "index.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "subject_id", "label", "true_quality", "file"])
        for i in range(len(dataset)):
            rel = f"clips/{ids[i]}.npy"
            np.save(root / rel, dataset.clips[i])
            w.writerow([ids[i], dataset.subject_ids[i], int(dataset.labels[i]), repr(float(tq[i])), rel])
    return root


def _read_csv(path: Path, required: tuple[str, ...]) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not set(required) <= set(reader.fieldnames):
                raise IngestionError(f"{path}: header must contain {', '.join(required)}")
            return list(reader)
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path}: not UTF-8") from exc


def _parse_label(raw: str, where: str) -> int:
    try:
        y = int(raw)
    except ValueError:
        raise IngestionError(f"{where}: label {raw!r} is not an integer") from None
    if y < 0:
        raise IngestionError(f"{where}: negative label {y}")
    return y


def _load_synthetic(root: Path) -> ClipBatch:
    rows = _read_csv(root / "index.csv", ("clip_id", "subject_id", "label", "true_quality", "file"))
    clips, labels, sids, tq, cids = [], [], [], [], []
    for r in rows:
        f = root / r["file"]
        if not f.is_file():
            raise IngestionError(f"{f}: clip file missing")
        clips.append(np.load(f).astype(np.float64))
        labels.append(_parse_label(r["label"], str(f)))
        sids.append(r["subject_id"])
        cids.append(r["clip_id"])
        tq.append(float(r["true_quality"]))
    if not clips:
        raise IngestionError(f"{root}: index lists no clips")
    tq = np.array(tq)
    return ClipBatch(np.stack(clips), np.array(labels, dtype=np.int64), np.array(sids),
                     None if np.all(np.isnan(tq)) else tq, np.array(cids))


def _load_frames(root: Path, spec: ClipSpec | None, clip_len: int, stride: int) -> ClipBatch:
    from PIL import Image

    rows = _read_csv(root / "manifest.csv", ("video_id", "subject_id", "label", "frames_dir"))
    clips, labels, sids, cids = [], [], [], []
    for r in rows:
        fdir = root / r["frames_dir"]
        label = _parse_label(r["label"], str(fdir))
        if fdir.parent.name != str(label):
            raise IngestionError(f"{fdir}: directory name {fdir.parent.name!r} disagrees with label {label}")
        if not fdir.is_dir():
            raise IngestionError(f"{fdir}: frame directory missing")
        frames = sorted(p for p in fdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if len(frames) < clip_len:
            log.warning("%s: %d frames is shorter than one %d-frame clip; skipped", fdir, len(frames), clip_len)
            continue
        imgs = []
        for p in frames:
            with Image.open(p) as im:
                im = im.convert("RGB")
                if spec is not None and im.size != (spec.W, spec.H):
                    im = im.resize((spec.W, spec.H), Image.BILINEAR)
                imgs.append(np.asarray(im, dtype=np.float64) / 255.0)
        video = np.stack(imgs)
        for k, start in enumerate(range(0, len(video) - clip_len + 1, stride)):
            clips.append(video[start:start + clip_len])
            labels.append(label)
            sids.append(r["subject_id"])
            cids.append(f"{r['video_id']}_w{k:04d}")
    if not clips:
        raise IngestionError(f"{root}: no video yields a full clip")
    return ClipBatch(np.stack(clips), np.array(labels, dtype=np.int64), np.array(sids), None, np.array(cids))


def load_clips(path, spec: ClipSpec | None = None, clip_len: int | None = None, stride: int | None = None) -> ClipBatch:
    """Load a dataset directory in either the synthetic or the frame layout."""
    root = Path(path)
    clip_len = clip_len or (spec.T if spec is not None else 16)
    stride = stride or clip_len
    if (root / "index.csv").is_file():
        ds = _load_synthetic(root)
    elif (root / "manifest.csv").is_file():
        ds = _load_frames(root, spec, clip_len, stride)
    else:
        raise IngestionError(f"{root}: neither index.csv nor manifest.csv found")
    if spec is not None and ds.clips.shape[1:] != (spec.T, spec.H, spec.W, 3):
        raise IngestionError(f"{root}: clips have shape {ds.clips.shape[1:]}, "
                             f"configuration expects {(spec.T, spec.H, spec.W, 3)}")
    ds.subject_labels()
    return ds
