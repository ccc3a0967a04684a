"""Datasets, deterministic splits and label-noise injection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

NOISE_KINDS = ("none", "symmetric", "asymmetric")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    clean_labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (n,) or self.clean_labels.shape != (n,):
            raise ValueError("labels and clean_labels must have one entry per row")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.clean_labels[idx], self.num_classes)

    def one_hot(self) -> np.ndarray:
        return np.eye(self.num_classes)[self.labels]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fr):
            raise ValueError("every split fraction must be positive")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    rate: float = 0.0
    permutation: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")


def make_gaussian_clusters(
    num_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    seed: int,
    center_scale: float = 4.0,
    max_tries: int = 1000,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class, rows ordered class by class.

    Class means are drawn from ``N(0, center_scale^2 I)`` and redrawn until
    every pair sits at least ``4 * spread`` apart.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 1 or dim < 1:
        raise ValueError("per_class and dim must be >= 1")
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        means = rng.normal(0.0, center_scale, size=(num_classes, dim))
        diffs = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diffs**2).sum(-1))
        off_diag = dist[~np.eye(num_classes, dtype=bool)]
        if np.all(off_diag >= 4.0 * spread):
            break
    else:
        raise RuntimeError(f"could not place {num_classes} class means {4 * spread} apart in {max_tries} tries")
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.size, dim))
    features = means[labels] + spread * noise
    return Dataset(features, labels, labels.copy(), num_classes)


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """Floor the val/test shares; train takes the remainder."""
    n_val = int(np.floor(spec.val_fraction * n + 1e-9))
    n_test = int(np.floor(spec.test_fraction * n + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    n_train, n_val, n_test = split_sizes(len(dataset), spec)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {len(dataset)} rows leaves an empty partition ({n_train}/{n_val}/{n_test})")
    perm = np.random.default_rng(spec.seed).permutation(len(dataset))
    return (
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train : n_train + n_val]),
        dataset.subset(perm[n_train + n_val :]),
    )


def _noise_count(n: int, p: float) -> int:
    return int(round(p * n))


def inject_symmetric_noise(dataset: Dataset, p: float, seed: int) -> Dataset:
    """Relabel exactly ``round(p*N)`` rows with a uniformly drawn different class."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("noise rate must lie in [0, 1]")
    k = dataset.num_classes
    if k < 2:
        raise ValueError("symmetric noise needs at least 2 classes")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    idx = rng.choice(n, size=_noise_count(n, p), replace=False)
    labels = dataset.labels.copy()
    labels[idx] = (labels[idx] + rng.integers(1, k, size=idx.size)) % k
    return replace(dataset, labels=labels, clean_labels=dataset.clean_labels.copy())


def default_permutation(num_classes: int) -> tuple[int, ...]:
    return tuple((c + 1) % num_classes for c in range(num_classes))


def inject_asymmetric_noise(
    dataset: Dataset, p: float, permutation: tuple[int, ...] | None, seed: int
) -> Dataset:
    """Map exactly ``round(p*N)`` rows through a fixed-point-free class permutation."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("noise rate must lie in [0, 1]")
    k = dataset.num_classes
    sigma = np.asarray(permutation if permutation is not None else default_permutation(k), dtype=np.int64)
    if sigma.shape != (k,) or sorted(sigma.tolist()) != list(range(k)):
        raise ValueError(f"permutation must be a permutation of range({k})")
    if np.any(sigma == np.arange(k)):
        raise ValueError("permutation has a fixed point; asymmetric noise needs a derangement")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    idx = rng.choice(n, size=_noise_count(n, p), replace=False)
    labels = dataset.labels.copy()
    labels[idx] = sigma[labels[idx]]
    return replace(dataset, labels=labels, clean_labels=dataset.clean_labels.copy())


def apply_noise(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    if spec.kind == "none" or spec.rate == 0.0:
        return replace(dataset, labels=dataset.labels.copy(), clean_labels=dataset.clean_labels.copy())
    if spec.kind == "symmetric":
        return inject_symmetric_noise(dataset, spec.rate, spec.seed)
    return inject_asymmetric_noise(dataset, spec.rate, spec.permutation, spec.seed)


def prepare_splits(
    dataset: Dataset, split_spec: SplitSpec, noise_spec: NoiseSpec
) -> tuple[Dataset, Dataset, Dataset]:
    """Split, then corrupt the train+validation pool; test labels stay clean.

    Validation therefore shares the training-label noise distribution.
    """
    train, val, test = split(dataset, split_spec)
    pool = Dataset(
        np.vstack([train.features, val.features]),
        np.concatenate([train.labels, val.labels]),
        np.concatenate([train.clean_labels, val.clean_labels]),
        dataset.num_classes,
    )
    noisy = apply_noise(pool, noise_spec)
    n_tr = len(train)
    return noisy.subset(np.arange(n_tr)), noisy.subset(np.arange(n_tr, len(noisy))), test


def load_csv(path: str | Path) -> Dataset:
    """Read ``f0,...,f{d-1},label`` rows; labels must cover ``0..K-1``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(d)]:
            raise ValueError(f"{path}:1: header must be f0,...,f{{d-1}},label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from None
            if labels[-1] < 0:
                raise ValueError(f"{path}:{lineno}: negative label")
    if not labels:
        raise ValueError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    k = int(y.max()) + 1
    missing = sorted(set(range(k)) - set(y.tolist()))
    if missing:
        raise ValueError(f"{path}: non-contiguous labels (missing {missing})")
    return Dataset(np.asarray(feats), y, y.copy(), k)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    d = dataset.features.shape[1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(d)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
