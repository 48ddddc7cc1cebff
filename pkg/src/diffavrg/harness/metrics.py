"""Error metrics, gradient/communication cost accounting and the time model."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameter, InvalidState


@dataclass(frozen=True)
class CostModel:
    """Time units per sample gradient (``t_comp``) and per communication round."""

    t_comp: float = 1.0
    t_comm: float = 1.0

    def __post_init__(self):
        if self.t_comp < 0 or self.t_comm < 0:
            raise InvalidParameter("t_comp and t_comm must be nonnegative")


def relative_error(W, reference):
    """``(1/K) sum_k |w_k - w*|^2 / |w*|^2`` for a network or a stacked array."""
    W = np.asarray(getattr(W, "W", W), dtype=float)
    w_star = np.asarray(getattr(reference, "w_star", reference), dtype=float)
    denom = float(w_star @ w_star)
    if denom == 0:
        raise InvalidParameter("relative error undefined for w* = 0; use absolute error")
    W = np.atleast_2d(W)
    return float(((W - w_star) ** 2).sum(axis=1).mean() / denom)


def running_time(n_g, n_c=None, cost=CostModel()):
    """``t_comp * n_g + t_comm * n_c``.

    Accepts a trace (uses its final record) or explicit counts.
    """
    if n_c is None:
        trace = n_g
        n_g, n_c = trace.n_g[-1], trace.n_c[-1]
    return cost.t_comp * float(n_g) + cost.t_comm * float(n_c)


def charge_rule(variant, sizes, local_index, batch_size=1):
    """Per-iteration, per-node gradient charges predicted by the cost rules.

    ``local_index[i, k]`` is node ``k``'s position ``s`` inside its local
    epoch at iteration ``i``. AVRG charges ``2B``; exact diffusion charges
    ``N_k``; SVRG charges 2 plus ``N_k`` when ``s = 0``; the uniform
    stochastic baseline charges 1.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    local_index = np.asarray(local_index, dtype=np.int64)
    iters = local_index.shape[0]
    if variant in ("exact-diffusion", "prox-exact-diffusion"):
        return np.tile(sizes, (iters, 1))
    if variant == "stochastic-diffusion":
        return np.ones_like(local_index)
    if variant == "diffusion-svrg":
        return 2 + np.where(local_index == 0, sizes[None, :], 0)
    if variant.startswith("diffusion-avrg") or variant == "prox-diffusion-avrg":
        return np.full_like(local_index, 2 * batch_size)
    raise InvalidParameter(f"no charge rule for {variant!r}")


def charge_costs(trace, variant=None):
    """Rebuild ``n_g`` and ``n_c`` from the charge rules and the iteration probe.

    Returns a copy of ``trace`` whose counters come from the rules alone; a
    conservation check compares them with the instrumented counts.
    """
    if trace.local_index is None:
        raise InvalidState("charge_costs needs a trace recorded with the iteration probe")
    variant = variant or trace.variant
    charges = charge_rule(variant, trace.shard_sizes, trace.local_index, trace.batch_size)
    K = charges.shape[1]
    per_iter = charges.sum(axis=1) / K
    cumulative = np.concatenate([[0.0], np.cumsum(per_iter)])
    out = copy.deepcopy(trace)
    start = trace.iterations[0]
    out.n_g = [float(trace.n_g[0] + cumulative[i - start]) for i in trace.iterations]
    out.n_c = list(trace.iterations)
    return out


@dataclass(frozen=True)
class IdleProfile:
    """Per-node compute charges per iteration and their variance."""

    charges: np.ndarray
    variance: np.ndarray

    @property
    def max_variance(self):
        return float(self.variance.max())


def idle_profile(trace):
    charges = trace.charges_array() if trace is not None else None
    if charges is None:
        raise InvalidState("idle_profile needs a trace recorded with the iteration probe")
    return IdleProfile(charges=charges, variance=charges.astype(float).var(axis=0))
