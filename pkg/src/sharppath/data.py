"""Datasets: CIFAR-10 binary and IDX readers/writers, synthetic generators,
augmentation, subsampling and deterministic batch iteration."""
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .models import Batch
from .rng import make_rng

CIFAR_RECORD = 1 + 32 * 32 * 3
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) < 1:
            raise FormatError("dataset is empty")
        if len(self.inputs) != len(self.labels):
            raise FormatError("inputs and labels disagree on N")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, split=None):
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.labels[idx], split or self.split, dict(self.meta))

    def as_batch(self):
        return Batch(self.inputs, self.labels)


def _meta(classes, **extra):
    return {"classes": int(classes), "normalization": "scale_0_1", **extra}


def load_cifar10_bin(paths):
    """Read one or more CIFAR-10 binary batch files into NHWC floats in [0,1]."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD:
            raise FormatError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
        rec = raw.reshape(-1, CIFAR_RECORD)
        if rec[:, 0].max() > 9:
            raise FormatError(f"{path}: label byte {int(rec[:, 0].max())} > 9")
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    x = np.concatenate(images).astype(np.float64) / 255.0
    return Dataset(x, np.concatenate(labels), "train", _meta(10, source="cifar10"))


def write_cifar10_bin(path, dataset):
    """Inverse of :func:`load_cifar10_bin` for 32x32x3 data in [0,1]."""
    x = np.rint(np.asarray(dataset.inputs) * 255.0).astype(np.uint8)
    if x.shape[1:] != (32, 32, 3):
        raise FormatError("CIFAR-10 records are 32x32x3")
    planes = x.transpose(0, 3, 1, 2).reshape(len(x), -1)
    rec = np.concatenate([np.asarray(dataset.labels, dtype=np.uint8)[:, None], planes], axis=1)
    rec.tofile(path)


def _read_idx(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: IDX magic {got:#010x}, expected {magic:#010x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise FormatError(f"{path}: dims {dims} disagree with payload of {body.size} bytes")
    return body.reshape(dims)


def load_idx(image_path, label_path):
    """IDX image/label pair (e.g. Fashion-MNIST) as N x H x W x 1 floats in [0,1]."""
    images = _read_idx(image_path, IDX_IMAGES)
    labels = _read_idx(label_path, IDX_LABELS)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    if len(images) == 0:
        raise FormatError("IDX files hold no examples")
    x = images.astype(np.float64)[..., None] / 255.0
    y = labels.astype(np.int64)
    return Dataset(x, y, "train", _meta(int(y.max()) + 1, source="idx"))


def write_idx(image_path, label_path, dataset):
    x = np.rint(np.asarray(dataset.inputs) * 255.0).astype(np.uint8)
    if x.ndim == 4:
        x = x[..., 0]
    n, h, w = x.shape
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES, n, h, w))
        fh.write(x.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS, n))
        fh.write(np.asarray(dataset.labels, dtype=np.uint8).tobytes())


def synth_gaussian(classes, n, dim, separation, seed):
    """Class-conditional isotropic Gaussians with means ``separation`` apart
    in random directions; labels are balanced round-robin."""
    rng = make_rng(seed, "data", 0)
    centers = rng.standard_normal((classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    x = centers[labels] * separation + rng.standard_normal((n, dim))
    return Dataset(x, labels.astype(np.int64), "train", _meta(classes, source="synth_gaussian"))


def synth_images(classes, n, shape=(16, 16, 3), noise=0.1, brightness=0.5, shift=2, seed=0):
    """Small image classification task for desk-scale CNN runs.

    Each class owns a smooth nonnegative random pattern on a dark
    background; an example is its class pattern, randomly shifted by up to
    ``shift`` pixels and scaled in contrast, plus pixel noise, clipped to
    [0,1].
    """
    rng = make_rng(seed, "data", 1)
    h, w, c = shape
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    templates = np.zeros((classes, h, w, c))
    for k in range(classes):
        for ch in range(c):
            fy, fx = rng.uniform(0.5, 2.5, 2)
            py, px = rng.uniform(0, 2 * np.pi, 2)
            templates[k, :, :, ch] = np.maximum(np.sin(2 * np.pi * fy * yy + py) * np.cos(2 * np.pi * fx * xx + px), 0)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    x = np.empty((n, h, w, c))
    for i, k in enumerate(labels):
        dy, dx = rng.integers(-shift, shift + 1, 2)
        x[i] = brightness * rng.uniform(0.6, 1.4) * np.roll(templates[k], (dy, dx), axis=(0, 1))
    x += noise * rng.standard_normal(x.shape)
    np.clip(x, 0.0, 1.0, out=x)
    return Dataset(x, labels.astype(np.int64), "train", _meta(classes, source="synth_images"))


@dataclass
class AugmentConfig:
    pad: int = 4
    random_crop: bool = True
    hflip: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.pad < 0:
            raise ValueError("pad must be nonnegative")


def augment(batch, cfg, rng, force_flip=None):
    """Zero-pad by ``cfg.pad``, crop back at a random offset, and flip
    horizontally with probability 1/2. Labels are untouched.

    ``force_flip`` (True/False) overrides the coin flip; used by tests.
    """
    x = np.asarray(batch.inputs)
    n, h, w, _ = x.shape
    out = x
    if cfg.random_crop and cfg.pad > 0:
        p = cfg.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        oy = rng.integers(0, 2 * p + 1, n)
        ox = rng.integers(0, 2 * p + 1, n)
        out = np.stack([xp[i, oy[i]:oy[i] + h, ox[i]:ox[i] + w] for i in range(n)])
    if cfg.hflip:
        flip = rng.random(n) < 0.5 if force_flip is None else np.full(n, bool(force_flip))
        out = np.where(flip[:, None, None, None], out[:, :, ::-1, :], out)
    elif force_flip:
        out = out[:, :, ::-1, :]
    return Batch(np.ascontiguousarray(out), batch.labels)


def subsample_first_n(dataset, n):
    """First ``n`` examples in file order (all of them if n >= N)."""
    if n < 1:
        raise FormatError("subsample size must be positive")
    return dataset.take(np.arange(min(n, len(dataset))))


def random_subsample(dataset, fraction, rng):
    """A fixed random subset of ``round(fraction * N)`` examples (at least one)."""
    n = max(1, int(round(fraction * len(dataset))))
    idx = np.sort(rng.choice(len(dataset), size=n, replace=False))
    return dataset.take(idx)


def split_validation(dataset, n_val=5000):
    """Hold out the last ``n_val`` examples as the validation split."""
    if not 0 < n_val < len(dataset):
        raise FormatError(f"cannot hold out {n_val} of {len(dataset)} examples")
    cut = len(dataset) - n_val
    return dataset.take(np.arange(cut), "train"), dataset.take(np.arange(cut, len(dataset)), "val")


def epoch_order(n, seed, epoch, shuffle=True):
    if not shuffle:
        return np.arange(n)
    return make_rng(seed, "shuffle", epoch).permutation(n)


def batch_iter(dataset, s, seed, shuffle=True, epoch=0):
    """Mini-batches for one epoch; the final short batch is kept."""
    order = epoch_order(len(dataset), seed, epoch, shuffle)
    for lo in range(0, len(order), s):
        idx = order[lo:lo + s]
        yield Batch(dataset.inputs[idx], dataset.labels[idx])
