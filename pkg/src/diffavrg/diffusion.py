"""Network engine: adapt, correct, combine (and prox) across all nodes.

All node iterates are stacked row-wise, so ``W[k]`` is node ``k``'s iterate.
One iteration is two phases: every node forms its gradient estimate and its
adapt/correct values from local state only; then the combination mixes the
``phi`` rows with ``Abar`` (a fixed-order matrix product) and each node
communicates exactly once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidParameter
from .estimators import AvrgBank, SvrgBank, UniformBank
from .objective import GradientOracle, Regularizer
from .topology import CombinationMatrix, half_lifted
from .trace import RunTrace

VARIANTS = (
    "exact-diffusion",
    "stochastic-diffusion",
    "diffusion-avrg",
    "diffusion-avrg-unbalanced",
    "diffusion-svrg",
    "diffusion-avrg-minibatch",
    "prox-exact-diffusion",
    "prox-diffusion-avrg",
)

DETERMINISTIC = ("exact-diffusion", "prox-exact-diffusion")
PROX = ("prox-exact-diffusion", "prox-diffusion-avrg")
BALANCED_ONLY = ("diffusion-avrg", "diffusion-avrg-minibatch", "prox-diffusion-avrg")

# Whether the adaptation step is scaled by q_k = N_k / N, as in each listing.
DEFAULT_WEIGHTING = {
    "exact-diffusion": True,
    "stochastic-diffusion": True,
    "diffusion-avrg": False,
    "diffusion-avrg-unbalanced": True,
    "diffusion-svrg": True,
    "diffusion-avrg-minibatch": False,
    "prox-exact-diffusion": False,
    "prox-diffusion-avrg": False,
}


@dataclass(frozen=True)
class AlgorithmSpec:
    variant: str
    step_size: float
    regularizer: Regularizer = field(default_factory=Regularizer)
    batch_size: int = 1
    use_weights: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParameter(f"unknown variant {self.variant!r}")
        if not self.step_size > 0:
            raise InvalidParameter("step size must be positive")
        if self.batch_size < 1:
            raise InvalidParameter("batch size must be positive")
        if self.batch_size != 1 and self.variant != "diffusion-avrg-minibatch":
            raise InvalidParameter("batch_size only applies to diffusion-avrg-minibatch")
        if self.variant not in PROX and not self.regularizer.is_identity:
            raise InvalidParameter(f"{self.variant} cannot handle a regularizer; use a prox variant")

    @property
    def weighted(self):
        if self.use_weights is None:
            return DEFAULT_WEIGHTING[self.variant]
        return bool(self.use_weights)

    def to_dict(self):
        d = asdict(self)
        d["regularizer"] = asdict(self.regularizer)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["regularizer"] = Regularizer(**d.get("regularizer", {}))
        return cls(**d)


class NetworkState:
    """Stacked node iterates plus the problem they run on.

    ``W``, ``psi`` and (prox variants) ``z`` are ``(K, M)`` arrays. The
    estimator bank holds the per-node sampling state. Step functions mutate
    the state in place and return it.
    """

    def __init__(self, spec, partition, model, combination, w0=None):
        if isinstance(combination, CombinationMatrix):
            combination = combination.entries
        combination = np.asarray(combination, dtype=float)
        K, M = partition.node_count, partition.dimension
        if combination.shape != (K, K):
            raise InvalidParameter(f"combination matrix is {combination.shape}, network has {K} nodes")
        if spec.variant in BALANCED_ONLY and not partition.is_balanced:
            raise InvalidParameter(
                f"{spec.variant} needs equal shard sizes; use diffusion-avrg-unbalanced"
            )
        self.spec = spec
        self.partition = partition
        self.model = model
        self.A = combination
        self.Abar = half_lifted(combination).entries
        self.oracle = GradientOracle.for_partition(model, partition)
        if w0 is None:
            W = np.zeros((K, M))
        else:
            w0 = np.asarray(w0, dtype=float)
            W = np.tile(w0, (K, 1)) if w0.ndim == 1 else w0.copy()
        if W.shape != (K, M):
            raise InvalidParameter(f"initial iterate has shape {W.shape}, expected {(K, M)}")
        self.W = W
        self.psi = W.copy()
        self.z = W.copy() if spec.variant in PROX else None
        self.iteration = 0
        self.bank = _make_bank(spec, partition)
        steps = np.full(K, spec.step_size)
        if spec.weighted:
            steps = spec.step_size * partition.weights
        self.steps = steps[:, None]

    @property
    def node_count(self):
        return self.W.shape[0]

    @property
    def grad_evaluations(self):
        return int(self.oracle.counts.sum())

    @property
    def epoch_length(self):
        return epoch_length(self.spec, self.partition)

    def average(self):
        return self.W.mean(axis=0)

    # -- checkpointing -------------------------------------------------------

    def checkpoint(self):
        """JSON-ready snapshot of every piece of mutable state."""
        return {
            "spec": self.spec.to_dict(),
            "iteration": self.iteration,
            "W": self.W.tolist(),
            "psi": self.psi.tolist(),
            "z": None if self.z is None else self.z.tolist(),
            "counts": self.oracle.counts.tolist(),
            "bank": None if self.bank is None else self.bank.state_dict(),
        }

    def save_checkpoint(self, path):
        with open(path, "w") as fh:
            json.dump(self.checkpoint(), fh)

    @classmethod
    def from_checkpoint(cls, state, partition, model, combination):
        if isinstance(state, (str, bytes)) or hasattr(state, "__fspath__"):
            with open(state) as fh:
                state = json.load(fh)
        spec = AlgorithmSpec.from_dict(state["spec"])
        net = cls(spec, partition, model, combination)
        net.iteration = int(state["iteration"])
        net.W = np.asarray(state["W"], dtype=float)
        net.psi = np.asarray(state["psi"], dtype=float)
        if state["z"] is not None:
            net.z = np.asarray(state["z"], dtype=float)
        net.oracle.counts = np.asarray(state["counts"], dtype=np.int64)
        if state["bank"] is not None:
            net.bank.load_state_dict(state["bank"])
        return net


def _make_bank(spec, partition):
    sizes, M = partition.sizes, partition.dimension
    v = spec.variant
    if v in DETERMINISTIC:
        return None
    if v == "stochastic-diffusion":
        return UniformBank(sizes, M, spec.seed)
    if v == "diffusion-svrg":
        return SvrgBank(sizes, M, spec.seed)
    return AvrgBank(sizes, M, spec.seed, batch_size=spec.batch_size)


def epoch_length(spec, partition):
    """Iterations per recorded epoch.

    One iteration for full-gradient variants, ``N_bar / B`` for balanced
    reshuffled variants, and ``max_k N_k`` when nodes keep separate local
    epochs.
    """
    if spec.variant in DETERMINISTIC:
        return 1
    if spec.variant in ("diffusion-avrg-unbalanced", "diffusion-svrg", "stochastic-diffusion"):
        return int(partition.sizes.max())
    return int(partition.sizes[0]) // spec.batch_size


def gradient_estimate(net):
    """Phase-one gradient for every node: full local gradient or estimator output."""
    if net.bank is None:
        return net.oracle.local_full(net.W)
    return net.bank.estimate(net.oracle, net.W)


def _step(net):
    with np.errstate(over="ignore", invalid="ignore"):
        _adapt_correct_combine(net)
    net.iteration += 1
    if not np.isfinite(net.W).all():
        raise DivergenceError(net.iteration)
    return net


def _adapt_correct_combine(net):
    spec = net.spec
    G = gradient_estimate(net)
    psi_new = net.W - net.steps * G
    if spec.variant == "stochastic-diffusion":
        phi = psi_new
    elif spec.variant in PROX:
        phi = psi_new + (net.z - net.psi)
    else:
        phi = psi_new + (net.W - net.psi)
    # w_k = sum_l abar[l, k] phi_l
    combined = net.Abar.T @ phi
    if spec.variant in PROX:
        net.z = combined
        net.W = spec.regularizer.prox(combined, spec.step_size)
    else:
        net.W = combined
    net.psi = psi_new


def _require(net, variants):
    if net.spec.variant not in variants:
        raise InvalidParameter(f"this step function does not run {net.spec.variant}")


def step_exact_diffusion(net):
    _require(net, ("exact-diffusion",))
    return _step(net)


def step_stochastic_diffusion(net):
    _require(net, ("stochastic-diffusion",))
    return _step(net)


def step_diffusion_avrg(net):
    _require(net, ("diffusion-avrg", "diffusion-avrg-minibatch"))
    return _step(net)


def step_diffusion_avrg_unbalanced(net):
    _require(net, ("diffusion-avrg-unbalanced",))
    return _step(net)


def step_diffusion_svrg(net):
    _require(net, ("diffusion-svrg",))
    return _step(net)


def step_prox_diffusion(net):
    _require(net, PROX)
    return _step(net)


def step(net):
    """Advance any variant by one iteration."""
    return _step(net)


def _error(W, w_star, mode):
    with np.errstate(over="ignore", invalid="ignore"):
        err = ((W - w_star) ** 2).sum(axis=1).mean()
    if mode == "relative":
        return float(err / (w_star @ w_star))
    return float(err)


def run(net, w_star, epochs=None, tolerance=None, probe=False, t_comp=1.0, t_comm=1.0, blowup=None):
    """Advance ``net`` epoch by epoch and record metrics.

    Stops after ``epochs`` recorded epochs, or earlier once the averaged
    relative square error reaches ``tolerance``. The initial point is always
    recorded as epoch 0. With ``probe`` the per-iteration, per-node gradient
    charges and local sample indices are kept as well.

    Raises :class:`DivergenceError` (carrying the partial trace) when an
    iterate stops being finite, or when ``blowup`` is set and the error
    exceeds ``blowup`` times the initial error.
    """
    if epochs is None and tolerance is None:
        raise InvalidParameter("run needs an epoch budget or an error tolerance")
    w_star = np.asarray(w_star, dtype=float)
    mode = "relative" if w_star @ w_star > 0 else "absolute"
    L = net.epoch_length
    K = net.node_count
    spec = net.spec
    cadence = {
        1: "one record per iteration (full local gradient per iteration)",
    }.get(L, f"one record every {L} iterations")
    trace = RunTrace(
        variant=spec.variant,
        step_size=spec.step_size,
        batch_size=spec.batch_size,
        epoch_length=L,
        cadence=cadence,
        t_comp=t_comp,
        t_comm=t_comm,
        error_mode=mode,
    )
    if probe:
        trace.node_charges, trace.local_index = [], []
        trace.shard_sizes = net.partition.sizes.tolist()
    start_epoch = net.iteration // L
    trace.record(start_epoch, net.iteration, _error(net.W, w_star, mode), net.grad_evaluations / K, net.iteration)
    epoch = start_epoch
    while True:
        if tolerance is not None and trace.errors[-1] <= tolerance:
            break
        if epochs is not None and epoch - start_epoch >= epochs:
            break
        for _ in range(L):
            before = net.oracle.counts.copy() if probe else None
            try:
                _step(net)
            except DivergenceError as exc:
                trace.diverged_at = exc.iteration
                exc.trace = trace
                raise
            if probe:
                trace.node_charges.append((net.oracle.counts - before).tolist())
                local = net.bank.last_local if net.bank is not None else np.zeros(K, dtype=np.int64)
                trace.local_index.append(local.tolist())
        epoch += 1
        err = _error(net.W, w_star, mode)
        trace.record(epoch, net.iteration, err, net.grad_evaluations / K, net.iteration)
        if not np.isfinite(err) or (blowup is not None and trace.errors[0] > 0 and err > blowup * trace.errors[0]):
            trace.diverged_at = net.iteration
            raise DivergenceError(net.iteration, trace)
    return trace
