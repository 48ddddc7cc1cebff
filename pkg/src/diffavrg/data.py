"""Datasets: synthetic generation, LIBSVM ingestion, normalization, sharding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput, InvalidParameter, ParseError


@dataclass(eq=False)
class Dataset:
    """Dense features ``(N, M)`` with one label per row."""

    features: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2:
            raise InvalidParameter("features must be a 2-D array")
        if self.features.shape[0] < 1:
            raise InvalidParameter("a dataset needs at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidParameter("need exactly one label per feature row")

    @property
    def size(self):
        return self.features.shape[0]

    @property
    def dimension(self):
        return self.features.shape[1]

    def samples(self):
        return list(zip(self.features, self.labels))

    def metadata_json(self):
        meta = {"size": self.size, "dimension": self.dimension}
        meta.update(self.metadata)
        return json.dumps(meta, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


@dataclass(eq=False)
class PartitionedDataset:
    """Node shards stored back to back.

    Node ``k`` owns rows ``offsets[k]:offsets[k+1]`` of ``features``;
    ``source_index`` maps each row to its position in the original dataset.
    """

    features: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray
    source_index: np.ndarray

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        sizes = np.diff(self.offsets)
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.labels):
            raise InvalidParameter("offsets must span the stacked data")
        if np.any(sizes < 1):
            raise InvalidParameter("every shard needs at least one sample")

    @property
    def node_count(self):
        return len(self.offsets) - 1

    @property
    def size(self):
        return int(self.offsets[-1])

    @property
    def dimension(self):
        return self.features.shape[1]

    @property
    def sizes(self):
        return np.diff(self.offsets)

    @property
    def weights(self):
        return self.sizes / self.size

    @property
    def is_balanced(self):
        return bool(np.all(self.sizes == self.sizes[0]))

    def shard(self, k):
        lo, hi = self.offsets[k], self.offsets[k + 1]
        return Dataset(self.features[lo:hi], self.labels[lo:hi])

    @property
    def shards(self):
        return [self.shard(k) for k in range(self.node_count)]

    def as_dataset(self):
        return Dataset(self.features, self.labels)


def generate_least_squares(N, M, condition=1.0, noise_std=0.0, seed=0):
    """Gaussian features with log-spaced diagonal covariance and a planted model.

    The covariance diagonal runs from 1 down to ``1/condition``. Labels are
    ``h'w_true`` plus Gaussian noise; ``w_true`` is stored in the metadata.
    """
    if N < 1 or M < 1:
        raise InvalidParameter("need N >= 1 and M >= 1")
    if condition < 1:
        raise InvalidParameter("condition must be >= 1")
    if noise_std < 0:
        raise InvalidParameter("noise_std must be nonnegative")
    rng = np.random.default_rng(seed)
    if M == 1:
        scales = np.ones(1)
    else:
        scales = float(condition) ** (-np.arange(M) / (M - 1))
    w_true = rng.standard_normal(M)
    features = rng.standard_normal((N, M)) * np.sqrt(scales)
    labels = features @ w_true
    if noise_std > 0:
        labels = labels + noise_std * rng.standard_normal(N)
    meta = {
        "generator": "least-squares",
        "seed": int(seed),
        "condition": float(condition),
        "noise_std": float(noise_std),
        "covariance_diagonal": scales,
        "w_true": w_true,
    }
    return Dataset(features, labels, meta)


def remap_binary_labels(labels):
    """Map two distinct label values to -1 (smaller) and +1 (larger)."""
    labels = np.asarray(labels, dtype=float)
    values = np.unique(labels)
    if len(values) > 2:
        raise InvalidInput(f"expected at most two label values, found {len(values)}")
    if len(values) == 2:
        return np.where(labels == values[1], 1.0, -1.0)
    return np.where(labels > 0, 1.0, -1.0)


def load_libsvm(path, dimension=None, binary=True):
    """Read a LIBSVM text file into a dense dataset.

    Indices are 1-based; the dimension is the largest index seen unless given.
    With ``binary`` the labels are remapped to -1/+1.
    """
    rows, labels = [], []
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
            entries = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(f"expected index:value, got {tok!r}", lineno)
                try:
                    i, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(f"bad feature {tok!r}", lineno) from None
                if i < 1:
                    raise ParseError(f"feature index {i} is not 1-based", lineno)
                entries[i] = v
                max_index = max(max_index, i)
            rows.append(entries)
            labels.append(label)
    if not rows:
        raise InvalidInput(f"{path}: no samples")
    M = dimension if dimension is not None else max_index
    if M < max_index:
        raise InvalidParameter(f"dimension {M} smaller than largest index {max_index}")
    features = np.zeros((len(rows), max(M, 1)))
    for r, entries in enumerate(rows):
        for i, v in entries.items():
            features[r, i - 1] = v
    labels = np.asarray(labels)
    meta = {"source": str(Path(path)), "raw_labels": sorted(set(labels.tolist()))}
    if binary:
        labels = remap_binary_labels(labels)
    return Dataset(features, labels, meta)


def normalize_unit(dataset):
    """Scale each feature vector to unit norm.

    Zero vectors are left as they are. Returns ``(dataset, zero_count)``.
    """
    norms = np.linalg.norm(dataset.features, axis=1)
    zero = norms == 0
    scale = np.where(zero, 1.0, norms)
    out = Dataset(dataset.features / scale[:, None], dataset.labels.copy(), dict(dataset.metadata))
    out.metadata["normalized"] = True
    return out, int(zero.sum())


def partition(dataset, K, mode="balanced", seed=0, sizes=None, shuffle=True):
    """Split a dataset over ``K`` nodes.

    Samples are shuffled with ``seed`` and then cut into contiguous shards.
    ``mode`` is ``balanced`` (requires ``K | N``), ``unbalanced`` (random
    proportional sizes, each at least one) or ``explicit`` (``sizes`` given).
    """
    N = dataset.size
    if K < 1:
        raise InvalidParameter("K must be positive")
    rng = np.random.default_rng(seed)
    order = rng.permutation(N) if shuffle else np.arange(N)
    if mode == "balanced":
        if N % K:
            raise InvalidParameter(f"balanced split needs K | N (N={N}, K={K})")
        shard_sizes = np.full(K, N // K)
    elif mode == "unbalanced":
        if N < K:
            raise InvalidParameter("unbalanced split needs N >= K")
        proportions = rng.dirichlet(np.ones(K))
        shard_sizes = 1 + rng.multinomial(N - K, proportions)
    elif mode == "explicit":
        if sizes is None or len(sizes) != K:
            raise InvalidParameter("explicit split needs K sizes")
        shard_sizes = np.asarray(sizes, dtype=np.int64)
        if shard_sizes.sum() != N:
            raise InvalidParameter(f"explicit sizes sum to {shard_sizes.sum()}, not {N}")
    else:
        raise InvalidParameter(f"unknown partition mode {mode!r}")
    if np.any(shard_sizes < 1):
        raise InvalidParameter("every shard needs at least one sample")
    offsets = np.concatenate([[0], np.cumsum(shard_sizes)])
    return PartitionedDataset(dataset.features[order], dataset.labels[order], offsets, order)
