"""Synthetic datasets, CSV import/export, the CIFAR-10 binary reader and batching."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from rocket.errors import FormatError, SpecError

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072


@dataclass
class Dataset:
    features: np.ndarray  # M x D float64
    labels: np.ndarray  # M int64
    n_classes: int
    groups: Optional[np.ndarray] = None
    split: str = "train"
    # ctr only: noiseless generating score, i.e. the Bayes-optimal ranking
    latent: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise SpecError("features must be M x D with one label per row")
        if len(self.labels) == 0:
            raise SpecError("dataset must hold at least one sample")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise SpecError(f"labels must lie in [0, {self.n_classes})")
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64)
            if len(self.groups) != len(self.labels):
                raise SpecError("one group id per sample required")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


class Splits(NamedTuple):
    train: Dataset
    validation: Optional[Dataset]
    test: Optional[Dataset]


@dataclass(frozen=True)
class SynthSpec:
    task: str = "spirals"  # blobs | spirals | ctr
    n_classes: int = 2
    dim: int = 2
    n_train: int = 10000
    n_val: int = 1000
    n_test: int = 2000
    noise: float = 0.2
    turns: float = 1.5  # spirals only
    label_noise: float = 0.0  # blobs/spirals: probability a label is flipped to another class
    pos_rate: float = 0.1  # ctr only
    n_groups: int = 100  # ctr only
    user_dim: int = 4  # ctr only

    def validate(self) -> "SynthSpec":
        if self.task not in ("blobs", "spirals", "ctr"):
            raise SpecError(f"unknown synthetic task {self.task!r}")
        if self.n_train < 1 or self.n_val < 0 or self.n_test < 0:
            raise SpecError("sample counts must be positive (train) / non-negative (val, test)")
        if self.noise < 0:
            raise SpecError("noise must be non-negative")
        if not 0 <= self.label_noise < 1:
            raise SpecError("label_noise must lie in [0, 1)")
        if self.n_classes < 2:
            raise SpecError("need at least two classes")
        if self.task == "spirals" and self.dim != 2:
            raise SpecError("spirals are two-dimensional")
        if self.task == "ctr":
            if self.n_classes != 2:
                raise SpecError("ctr labels are binary")
            if not 0 < self.pos_rate < 1:
                raise SpecError(f"positive rate must lie strictly in (0, 1), got {self.pos_rate}")
            if self.n_groups < 2:
                raise SpecError("ctr needs at least two groups")
            if self.n_test and self.n_test < 2 * self.n_groups:
                raise SpecError("test split too small to give every group two samples")
        return self

    @property
    def total(self) -> int:
        return self.n_train + self.n_val + self.n_test


def _split(spec: SynthSpec, x, y, groups, rng, order=None, latent=None) -> Splits:
    order = rng.permutation(len(y)) if order is None else order
    bounds = np.cumsum([spec.n_train, spec.n_val, spec.n_test])
    parts = np.split(order, bounds[:-1])
    out = []
    for tag, idx in zip(("train", "validation", "test"), parts):
        if len(idx) == 0:
            out.append(None)
            continue
        g = None if groups is None else groups[idx]
        lat = None if latent is None else latent[idx]
        out.append(Dataset(x[idx], y[idx], spec.n_classes, g, tag, lat))
    return Splits(*out)


def _spirals(spec: SynthSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    m = spec.total
    y = np.arange(m) % spec.n_classes
    t = np.sqrt(rng.uniform(0.0, 1.0, m))
    theta = (
        2 * np.pi * spec.turns * t
        + 2 * np.pi * y / spec.n_classes
        + spec.noise * rng.standard_normal(m)
    )
    x = np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1)
    return x, y


def _blobs(spec: SynthSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    m = spec.total
    centers = 3.0 * rng.standard_normal((spec.n_classes, spec.dim))
    y = np.arange(m) % spec.n_classes
    x = centers[y] + spec.noise * rng.standard_normal((m, spec.dim))
    return x, y


def gen_classification(spec: SynthSpec, seed: int) -> Splits:
    """Blobs (Gaussian mixture) or interleaved spirals, split train/val/test."""
    spec.validate()
    if spec.task == "ctr":
        raise SpecError("use gen_ctr for the ctr task")
    rng = np.random.default_rng(seed)
    x, y = _spirals(spec, rng) if spec.task == "spirals" else _blobs(spec, rng)
    if spec.label_noise:
        flip = rng.uniform(size=len(y)) < spec.label_noise
        shift = rng.integers(1, spec.n_classes, size=len(y))
        y = np.where(flip, (y + shift) % spec.n_classes, y)
    return _split(spec, x, y, None, rng)


def ctr_scores(users: np.ndarray, items: np.ndarray, mix: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Latent click propensity: a user-item bilinear form through tanh plus a squared item term."""
    inter = np.einsum("ij,jk,ik->i", users, mix, items)
    return np.tanh(inter) + 0.5 * (items @ bias) ** 2


def gen_ctr(spec: SynthSpec, seed: int) -> Splits:
    """Grouped binary click data; each test group holds both classes."""
    spec.validate()
    if spec.task != "ctr":
        raise SpecError("gen_ctr needs task = ctr")
    rng = np.random.default_rng(seed)
    m, G = spec.total, spec.n_groups
    user_vecs = rng.standard_normal((G, spec.user_dim))
    mix = rng.standard_normal((spec.user_dim, spec.dim)) / np.sqrt(spec.dim)
    bias = rng.standard_normal(spec.dim) / np.sqrt(spec.dim)

    # groups are dealt round-robin inside each split so every group lands in the test split
    sizes = (spec.n_train, spec.n_val, spec.n_test)
    groups = np.concatenate([rng.permutation(np.arange(n) % G) for n in sizes])
    items = rng.standard_normal((m, spec.dim))
    users = user_vecs[groups]
    clean = ctr_scores(users, items, mix, bias)
    score = clean + spec.noise * rng.standard_normal(m)
    threshold = np.quantile(score, 1.0 - spec.pos_rate)
    y = (score > threshold).astype(np.int64)

    test_start = spec.n_train + spec.n_val
    for g in range(G):
        idx = test_start + np.flatnonzero(groups[test_start:] == g)
        if len(idx) == 0:
            continue
        if not y[idx].any():
            y[idx[np.argmax(score[idx])]] = 1
        if y[idx].all():
            y[idx[np.argmin(score[idx])]] = 0

    x = np.concatenate([users, items], axis=1)
    return _split(spec, x, y, groups, rng, order=np.arange(m), latent=clean)


def generate(spec: SynthSpec, seed: int) -> Splits:
    return gen_ctr(spec, seed) if spec.task == "ctr" else gen_classification(spec, seed)


# ---------------------------------------------------------------------------
# batching


class Batch(NamedTuple):
    x: np.ndarray
    y: np.ndarray  # one-hot
    labels: np.ndarray
    groups: Optional[np.ndarray]
    index: np.ndarray


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def batches(ds: Dataset, batch_size: int, epoch_seed: int) -> Iterator[Batch]:
    """Seeded shuffle, then consecutive slices; the last batch may be short."""
    if batch_size < 1:
        raise SpecError("batch_size must be at least 1")
    order = np.random.default_rng(epoch_seed).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        labels = ds.labels[idx]
        yield Batch(
            ds.features[idx],
            one_hot(labels, ds.n_classes),
            labels,
            None if ds.groups is None else ds.groups[idx],
            idx,
        )


# ---------------------------------------------------------------------------
# CSV: label,group,f0,f1,...


def to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "group"] + [f"f{i}" for i in range(ds.dim)])
    groups = ds.groups if ds.groups is not None else np.full(len(ds), -1)
    for lab, g, row in zip(ds.labels, groups, ds.features):
        writer.writerow([int(lab), int(g)] + [repr(float(v)) for v in row])
    return buf.getvalue()


def write_csv(ds: Dataset, path) -> None:
    Path(path).write_text(to_csv(ds))


def read_csv(path, n_classes: Optional[int] = None, split: str = "train") -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["label", "group"]:
            raise FormatError(f"{path}: header must start with 'label,group'")
        labels, groups, feats = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                groups.append(int(row[1]))
                feats.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not labels:
        raise FormatError(f"{path}: no data rows")
    groups_arr = np.array(groups)
    grouped = bool((groups_arr >= 0).any())
    if grouped and (groups_arr < 0).any():
        raise FormatError(f"{path}: mixes grouped and ungrouped rows")
    n = n_classes if n_classes is not None else max(labels) + 1
    return Dataset(np.array(feats), np.array(labels), max(n, 2), groups_arr if grouped else None, split)


# ---------------------------------------------------------------------------
# CIFAR-10 binary version: 1 label byte + 3 x 1024 channel planes per record


def parse_cifar10(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Raw labels (uint8) and pixel rows (uint8, M x 3072)."""
    if len(data) % CIFAR_RECORD:
        offset = (len(data) // CIFAR_RECORD) * CIFAR_RECORD
        raise FormatError(
            f"CIFAR-10: {len(data)} bytes is not a multiple of {CIFAR_RECORD}; "
            f"incomplete record at byte offset {offset}"
        )
    if not data:
        raise FormatError("CIFAR-10: empty file")
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    bad = np.flatnonzero(labels > 9)
    if len(bad):
        raise FormatError(f"CIFAR-10: record {int(bad[0])} has label byte {int(labels[bad[0]])} > 9")
    return labels.copy(), records[:, 1:].copy()


def encode_cifar10(labels: np.ndarray, pixels: np.ndarray) -> bytes:
    records = np.concatenate(
        [np.asarray(labels, dtype=np.uint8).reshape(-1, 1), np.asarray(pixels, dtype=np.uint8)],
        axis=1,
    )
    return records.tobytes()


def cifar10_channel_stats(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of pixels scaled to [0, 1]."""
    planes = pixels.reshape(-1, 3, 1024).astype(np.float64) / 255.0
    mean = planes.mean(axis=(0, 2))
    std = planes.std(axis=(0, 2))
    return mean, np.where(std > 0, std, 1.0)


def standardize_cifar10(pixels: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    planes = pixels.reshape(-1, 3, 1024).astype(np.float64) / 255.0
    return ((planes - mean[None, :, None]) / std[None, :, None]).reshape(-1, CIFAR_PIXELS)


def read_cifar10_binary(path, stats=None, split: str = "train") -> Dataset:
    """Parse one CIFAR-10 binary batch file.

    Standardization uses ``stats`` (from the training files) when given,
    otherwise the statistics of this file.
    """
    labels, pixels = parse_cifar10(Path(path).read_bytes())
    if stats is None:
        stats = cifar10_channel_stats(pixels)
    return Dataset(standardize_cifar10(pixels, stats), labels.astype(np.int64), 10, None, split)


def load_cifar10(train_paths, test_path=None) -> Splits:
    raw = [parse_cifar10(Path(p).read_bytes()) for p in train_paths]
    labels = np.concatenate([r[0] for r in raw])
    pixels = np.concatenate([r[1] for r in raw])
    stats = cifar10_channel_stats(pixels)
    train = Dataset(standardize_cifar10(pixels, stats), labels.astype(np.int64), 10)
    test = read_cifar10_binary(test_path, stats, "test") if test_path else None
    return Splits(train, None, test)
