"""Losses, regularizers, proximal maps and gradient oracles.

Sample losses ``Q(w; x)`` with ``x = (h, gamma)``:

* ``logistic-l2``: ``rho/2 |w|^2 + log(1 + exp(-gamma h'w))``
* ``least-squares``: ``1/2 (h'w - gamma)^2 + rho/2 |w|^2``

The vectorized kernels accept any leading batch shape, so the same code path
serves a single sample, one sample per node, or a mini-batch per node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter

LOSS_KINDS = ("logistic-l2", "least-squares")


@dataclass(frozen=True)
class LossModel:
    kind: str
    l2_coefficient: float = 0.0
    dimension: int | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidParameter(f"unknown loss kind {self.kind!r}")
        if self.l2_coefficient < 0:
            raise InvalidParameter("l2 coefficient must be nonnegative")
        if self.dimension is not None and self.dimension < 1:
            raise InvalidParameter("dimension must be positive")


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    eta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "l1"):
            raise InvalidParameter(f"unknown regularizer kind {self.kind!r}")
        if self.eta < 0:
            raise InvalidParameter("eta must be nonnegative")

    @property
    def is_identity(self):
        return self.kind == "none" or self.eta == 0.0

    def value(self, w):
        if self.kind == "none":
            return 0.0
        return self.eta * float(np.abs(w).sum())

    def prox(self, v, step):
        """``argmin_w R(w) + |w - v|^2 / (2 step)``."""
        if self.is_identity:
            return np.array(v, dtype=float, copy=True)
        return prox_l1(v, step * self.eta)


@dataclass(frozen=True)
class CurvatureBounds:
    """Per-sample gradient Lipschitz bound ``delta`` and strong convexity ``nu``.

    ``smoothness`` is the largest eigenvalue (or its bound, for logistic) of
    the Hessian of the *global* empirical risk; ``smoothness / nu`` is the
    condition number the data generator controls.
    """

    delta: float
    nu: float
    smoothness: float | None = None

    def __post_init__(self):
        if self.delta <= 0:
            raise InvalidParameter("delta must be positive")
        if self.nu < 0 or (self.nu > 0 and self.nu > self.delta * (1 + 1e-12)):
            raise InvalidParameter("need 0 <= nu <= delta")


def _check_dims(model, w, h):
    if w.shape[-1] != h.shape[-1]:
        raise InvalidParameter(f"dimension mismatch: w has {w.shape[-1]}, h has {h.shape[-1]}")
    if model.dimension is not None and h.shape[-1] != model.dimension:
        raise InvalidParameter(f"model dimension {model.dimension}, sample has {h.shape[-1]}")


def _neg_sigmoid(z):
    # sigmoid(-z) without overflow: only exp(-|z|) is ever formed.
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, e / (1.0 + e), 1.0 / (1.0 + e))


def sample_gradients(model, w, h, y):
    """Per-sample gradients, broadcast over leading axes of ``w``, ``h``, ``y``."""
    w = np.asarray(w, dtype=float)
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dims(model, w, h)
    inner = (h * w).sum(axis=-1)
    if model.kind == "logistic-l2":
        coef = -y * _neg_sigmoid(y * inner)
    else:
        coef = inner - y
    grad = coef[..., None] * h
    if model.l2_coefficient:
        grad = grad + model.l2_coefficient * w
    return grad


def sample_gradient(model, w, sample):
    """Gradient of ``Q(w; x)`` for one sample ``x = (h, gamma)``."""
    h, y = sample
    w = np.asarray(w, dtype=float)
    h = np.asarray(h, dtype=float)
    if w.ndim != 1 or h.ndim != 1:
        raise InvalidParameter("sample_gradient expects 1-D w and h")
    return sample_gradients(model, w, h, y)


def sample_losses(model, w, h, y):
    w = np.asarray(w, dtype=float)
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dims(model, w, h)
    inner = (h * w).sum(axis=-1)
    if model.kind == "logistic-l2":
        loss = np.logaddexp(0.0, -y * inner)
    else:
        loss = 0.5 * (inner - y) ** 2
    if model.l2_coefficient:
        loss = loss + 0.5 * model.l2_coefficient * (w * w).sum(axis=-1)
    return loss


def empirical_risk(model, w, features, labels):
    return float(np.mean(sample_losses(model, w, features, labels)))


def local_full_gradient(model, w, shard):
    """Average of per-sample gradients over a shard.

    ``shard`` is either a ``(features, labels)`` pair of arrays or a list of
    ``(h, gamma)`` samples.
    """
    features, labels = _as_arrays(shard)
    if len(labels) == 0:
        raise InvalidParameter("local_full_gradient needs a nonempty shard")
    return sample_gradients(model, w, features, labels).mean(axis=0)


def full_gradient(model, w, features, labels):
    return sample_gradients(model, w, features, labels).mean(axis=0)


def _as_arrays(shard):
    if isinstance(shard, tuple) and len(shard) == 2 and isinstance(shard[0], np.ndarray) and shard[0].ndim == 2:
        return shard
    if hasattr(shard, "features") and hasattr(shard, "labels"):
        return shard.features, shard.labels
    samples = list(shard)
    if not samples:
        return np.zeros((0, 0)), np.zeros(0)
    return np.array([s[0] for s in samples], dtype=float), np.array([s[1] for s in samples], dtype=float)


def prox_l1(v, threshold):
    """Soft threshold ``sign(v) * max(|v| - threshold, 0)``."""
    if threshold < 0:
        raise InvalidParameter("prox threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    if threshold == 0:
        return v.copy()
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def curvature_bounds(model, features):
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise InvalidParameter("curvature_bounds needs a nonempty 2-D feature array")
    rho = model.l2_coefficient
    max_sq = float(np.max((features * features).sum(axis=1)))
    cov = features.T @ features / features.shape[0]
    eig = np.linalg.eigvalsh(cov)
    if model.kind == "logistic-l2":
        delta = rho + max_sq / 4.0
        nu = rho
        smoothness = rho + float(eig[-1]) / 4.0
    else:
        delta = max_sq + rho
        nu = max(float(eig[0]), 0.0) + rho
        smoothness = float(eig[-1]) + rho
    return CurvatureBounds(delta=delta, nu=nu, smoothness=smoothness)


class GradientOracle:
    """Counting gradient evaluator over node-stacked data.

    ``features`` and ``labels`` hold every node's shard back to back;
    ``offsets[k]:offsets[k+1]`` is node ``k``'s block. Every per-sample
    gradient evaluation is charged to the node that requested it, which is
    what the cost accounting checks against.
    """

    def __init__(self, model, features, labels, offsets):
        self.model = model
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.sizes = np.diff(self.offsets)
        self.node_count = len(self.sizes)
        self.counts = np.zeros(self.node_count, dtype=np.int64)
        self._row_node = np.repeat(np.arange(self.node_count), self.sizes)

    @classmethod
    def for_partition(cls, model, part):
        return cls(model, part.features, part.labels, part.offsets)

    def rows(self, w, rows):
        """Gradients at ``w[k]`` for global sample rows ``rows[k, ...]``.

        ``w`` has shape ``(K, M)``; ``rows`` has shape ``(K,)`` or ``(K, B)``.
        """
        rows = np.asarray(rows)
        h = self.features[rows]
        y = self.labels[rows]
        if rows.ndim == 1:
            ww = w
        else:
            ww = w[:, None, :]
        per_node = rows.size // rows.shape[0]
        self.counts += per_node
        return sample_gradients(self.model, ww, h, y)

    def local_full(self, w, nodes=None):
        """Full local gradients ``grad J_k(w[k])`` for the selected nodes."""
        if nodes is None:
            nodes = np.arange(self.node_count)
        nodes = np.asarray(nodes)
        out = np.empty((len(nodes), w.shape[1]))
        for j, k in enumerate(nodes):
            lo, hi = self.offsets[k], self.offsets[k + 1]
            g = sample_gradients(self.model, w[k], self.features[lo:hi], self.labels[lo:hi])
            out[j] = g.mean(axis=0)
        self.counts[nodes] += self.sizes[nodes]
        return out
