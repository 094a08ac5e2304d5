"""Deterministic desk-scale datasets.

Two synthetic generators stand in for the full-scale benchmarks: a 10-class
oriented-grating set for classification and an ellipse/rectangle shape set
for segmentation. Both are pure functions of their seed. A loader for the
CIFAR-10 binary batch format is included for users who have the real files;
nothing in the test suite depends on it being present.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DatasetFormatError

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 channel-major pixels


@dataclass
class LabeledDataset:
    kind: str  # classification | segmentation
    images: np.ndarray  # (n, c, h, w) float32
    targets: np.ndarray  # (n,) int labels or (n, 1, h, w) binary masks
    split: str  # train | test
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("classification", "segmentation"):
            raise DataError(f"unknown dataset kind {self.kind!r}")
        if self.split not in ("train", "test"):
            raise DataError(f"unknown split {self.split!r}")
        if self.images.ndim != 4:
            raise DataError("images must be (n, c, h, w)")
        if len(self.images) != len(self.targets):
            raise DataError(
                f"{len(self.images)} images but {len(self.targets)} targets"
            )

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(
            self.kind, self.images[indices], self.targets[indices],
            self.split, dict(self.descriptor),
        )


def _standardize_pair(train_imgs, test_imgs):
    """Per-channel zero mean / unit scale, statistics from the train split."""
    mean = train_imgs.mean(axis=(0, 2, 3), keepdims=True)
    std = train_imgs.std(axis=(0, 2, 3), keepdims=True)
    std = np.maximum(std, 1e-6)
    return ((train_imgs - mean) / std).astype(np.float32), \
        ((test_imgs - mean) / std).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic classification: oriented gratings
# ---------------------------------------------------------------------------

# class k -> (orientation bucket, frequency bucket); two frequency bands times
# five orientations give ten pattern classes. Each sample jitters its
# orientation and frequency around the class center, so neighbouring classes
# genuinely overlap and the achievable accuracy has a ceiling below 1.0;
# random phase keeps every per-class pixel mean at zero.
_N_ORIENTATIONS = 5
_FREQS = (3.0, 5.0)
_CHANNEL_PHASE = np.array([0.0, 0.35, 0.7])


def _grating_batch(rng, klass, n, size, noise, angle_jitter, freq_jitter):
    theta = (np.pi * (klass % _N_ORIENTATIONS) / _N_ORIENTATIONS
             + rng.normal(0.0, angle_jitter, size=n))
    freq = _FREQS[klass // _N_ORIENTATIONS] * np.exp(
        rng.normal(0.0, freq_jitter, size=n))
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    proj = (np.cos(theta)[:, None, None] * xs[None]
            + np.sin(theta)[:, None, None] * ys[None]) / size
    phase = rng.uniform(0, 2 * np.pi, size=n)
    arg = (
        2 * np.pi * freq[:, None, None, None] * proj[:, None, :, :]
        + phase[:, None, None, None]
        + _CHANNEL_PHASE[None, :, None, None]
    )
    return np.sin(arg) + rng.normal(0.0, noise, size=(n, 3, size, size))


def gen_classification_dataset(
    seed: int,
    n_per_class: int,
    classes: int = 10,
    size: int = 32,
    test_per_class: int | None = None,
    noise: float = 1.5,
    angle_jitter: float = 0.14,
    freq_jitter: float = 0.10,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded train/test pair of class-specific noisy gratings.

    Pixel noise and the per-sample orientation/frequency jitter are what make
    the task non-trivial: a global-mean threshold sits at chance, a linear
    probe on raw pixels is crippled by the random phase, and a CNN has to
    build real oriented band filters to approach the overlap-limited ceiling.
    """
    if n_per_class < 2:
        raise DataError("need at least 2 samples per class")
    if not 1 < classes <= _N_ORIENTATIONS * len(_FREQS):
        raise DataError(f"classes must be in [2, {_N_ORIENTATIONS * len(_FREQS)}]")
    if test_per_class is None:
        test_per_class = max(2, n_per_class // 4)

    ss = np.random.SeedSequence(seed)
    train_ss, test_ss, shuffle_ss = ss.spawn(3)

    def make(split_ss, per_class):
        rng = np.random.default_rng(split_ss)
        imgs, labels = [], []
        for k in range(classes):
            imgs.append(_grating_batch(rng, k, per_class, size, noise,
                                       angle_jitter, freq_jitter))
            labels.append(np.full(per_class, k, dtype=np.int64))
        return np.concatenate(imgs), np.concatenate(labels)

    train_imgs, train_labels = make(train_ss, n_per_class)
    test_imgs, test_labels = make(test_ss, test_per_class)
    train_imgs, test_imgs = _standardize_pair(train_imgs, test_imgs)

    shuf = np.random.default_rng(shuffle_ss)
    order = shuf.permutation(len(train_imgs))
    train_imgs, train_labels = train_imgs[order], train_labels[order]
    order = shuf.permutation(len(test_imgs))
    test_imgs, test_labels = test_imgs[order], test_labels[order]

    descriptor = {
        "kind": "synthetic-classify",
        "seed": int(seed),
        "classes": int(classes),
        "n_per_class": int(n_per_class),
        "test_per_class": int(test_per_class),
        "size": int(size),
        "noise": float(noise),
        "angle_jitter": float(angle_jitter),
        "freq_jitter": float(freq_jitter),
    }
    return (
        LabeledDataset("classification", train_imgs, train_labels, "train", dict(descriptor)),
        LabeledDataset("classification", test_imgs, test_labels, "test", dict(descriptor)),
    )


# ---------------------------------------------------------------------------
# synthetic segmentation: shapes on a textured background
# ---------------------------------------------------------------------------

def _sample_shape(rng, size) -> np.ndarray:
    """One rotated ellipse or axis-aligned rectangle as a boolean mask."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
    if rng.random() < 0.5:
        a = rng.uniform(0.12, 0.30) * size
        b = rng.uniform(0.12, 0.30) * size
        ang = rng.uniform(0, np.pi)
        dy, dx = ys - cy, xs - cx
        u = np.cos(ang) * dx + np.sin(ang) * dy
        v = -np.sin(ang) * dx + np.cos(ang) * dy
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    hy = rng.uniform(0.10, 0.28) * size
    hx = rng.uniform(0.10, 0.28) * size
    return (np.abs(ys - cy) <= hy) & (np.abs(xs - cx) <= hx)


def _sample_true_shapes(rng, size) -> np.ndarray:
    """Union of 1-3 shapes covering 10-40% of the pixels (rejection-sampled)."""
    while True:
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, 4)):
            mask |= _sample_shape(rng, size)
        if 0.10 <= mask.mean() <= 0.40:
            return mask


def gen_segmentation_dataset(
    seed: int,
    n: int,
    size: int = 32,
    test_n: int | None = None,
    contrast: float = 1.0,
    noise: float = 0.35,
    texture_amp: float = 0.8,
    texture_freq: float = 6.0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded train/test pair: textured shapes on a textured background.

    The mask is the union of 1-3 foreground shapes. The background also
    carries equally bright distractor shapes whose fine texture runs along
    the opposite diagonal, so foreground membership is a region-texture
    decision rather than a pixel-intensity threshold.
    """
    if n < 2:
        raise DataError("need at least 2 samples")
    if test_n is None:
        test_n = max(2, n // 4)

    ss = np.random.SeedSequence(seed)
    train_ss, test_ss = ss.spawn(2)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    diagonals = ((xs + ys) / size, (xs - ys) / size)

    def paint(rng, img, region, direction):
        phase = rng.uniform(0, 2 * np.pi)
        tex = texture_amp * np.sin(2 * np.pi * texture_freq * direction + phase)
        img[region] = contrast + tex[region]

    def make(split_ss, count):
        rng = np.random.default_rng(split_ss)
        imgs = np.empty((count, 3, size, size), dtype=np.float64)
        masks = np.empty((count, 1, size, size), dtype=np.float32)
        ys2, xs2 = np.mgrid[0:size, 0:size].astype(np.float64)
        for i in range(count):
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            surface = 0.3 * np.sin(
                2 * np.pi * 2.0 * (np.cos(theta) * xs2 + np.sin(theta) * ys2) / size
                + phase
            )
            # distractors first, true shapes painted over them
            for _ in range(rng.integers(1, 3)):
                paint(rng, surface, _sample_shape(rng, size), diagonals[1])
            mask = _sample_true_shapes(rng, size)
            paint(rng, surface, mask, diagonals[0])
            imgs[i] = surface[None] + rng.normal(0.0, noise, size=(3, size, size))
            masks[i, 0] = mask
        return imgs, masks

    train_imgs, train_masks = make(train_ss, n)
    test_imgs, test_masks = make(test_ss, test_n)
    train_imgs, test_imgs = _standardize_pair(train_imgs, test_imgs)

    descriptor = {
        "kind": "synthetic-segment",
        "seed": int(seed),
        "n": int(n),
        "test_n": int(test_n),
        "size": int(size),
        "contrast": float(contrast),
        "noise": float(noise),
        "texture_amp": float(texture_amp),
        "texture_freq": float(texture_freq),
    }
    return (
        LabeledDataset("segmentation", train_imgs, train_masks, "train", dict(descriptor)),
        LabeledDataset("segmentation", test_imgs, test_masks, "test", dict(descriptor)),
    )


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------

def read_cifar10_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch file into uint8 images (n,3,32,32) and labels."""
    with open(os.fspath(path), "rb") as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise DatasetFormatError(
            f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}"
        )
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = buf[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(f"{path}: label {labels.max()} out of range [0, 9]")
    images = buf[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(path) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the standard binary batches from a directory.

    Expects data_batch_1.bin .. data_batch_5.bin and test_batch.bin; train
    statistics drive the per-channel normalization of both splits.
    """
    path = os.fspath(path)
    train_files = [os.path.join(path, f"data_batch_{i}.bin") for i in range(1, 6)]
    test_file = os.path.join(path, "test_batch.bin")
    for f in train_files + [test_file]:
        if not os.path.exists(f):
            raise DataError(f"missing CIFAR-10 batch file {f}")
    parts = [read_cifar10_batch(f) for f in train_files]
    train_imgs = np.concatenate([p[0] for p in parts]).astype(np.float64) / 255.0
    train_labels = np.concatenate([p[1] for p in parts])
    test_raw, test_labels = read_cifar10_batch(test_file)
    test_imgs = test_raw.astype(np.float64) / 255.0
    train_imgs, test_imgs = _standardize_pair(train_imgs, test_imgs)
    descriptor = {"kind": "cifar10", "path": path}
    return (
        LabeledDataset("classification", train_imgs, train_labels, "train", dict(descriptor)),
        LabeledDataset("classification", test_imgs, test_labels, "test", dict(descriptor)),
    )
