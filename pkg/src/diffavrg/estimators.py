"""Per-node stochastic gradient estimators under random reshuffling.

Two layers live here:

* single-node state machines (``AvrgState``, ``SvrgState`` and the
  ``*_gradient`` / ``epoch_rollover`` functions) that follow the algorithm
  listings line by line, and
* ``*Bank`` classes that hold the same state for all ``K`` nodes as stacked
  arrays so the network engine can advance every node with one vectorized
  call. Rows of a bank never interact.

Every permutation is drawn from a Philox stream keyed by
``(seed, node, epoch)``, so a node's sampling order does not depend on what
other nodes do or on the order in which nodes are processed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EpochNotRolled, InvalidParameter, InvalidState
from .objective import local_full_gradient, sample_gradients, _as_arrays

_PERMUTATION_STREAM = 0
_UNIFORM_STREAM = 1


def node_rng(seed, node, epoch, stream=_PERMUTATION_STREAM):
    """Counter-based generator for one node and one epoch."""
    key = np.random.SeedSequence([int(seed), int(node), int(epoch), int(stream)])
    return np.random.Generator(np.random.Philox(key))


@dataclass
class ReshuffleSchedule:
    permutation: np.ndarray
    cursor: int = 0
    epoch: int = 0

    @property
    def size(self):
        return len(self.permutation)

    @property
    def exhausted(self):
        return self.cursor >= self.size

    def next_index(self):
        if self.exhausted:
            raise EpochNotRolled(
                f"epoch {self.epoch} already visited all {self.size} indices"
            )
        n = int(self.permutation[self.cursor])
        self.cursor += 1
        return n


def fresh_permutation(n, rng, epoch=0):
    """Uniform random permutation of ``0..n-1`` drawn from ``rng``."""
    if n < 1:
        raise InvalidParameter("permutation size must be positive")
    return ReshuffleSchedule(rng.permutation(n), 0, epoch)


def unbalanced_index(i, n_local):
    """Local epoch ``t`` and inner index ``s`` with ``i = t * n_local + s``."""
    if n_local < 1:
        raise InvalidParameter("local size must be positive")
    if i < 0:
        raise InvalidParameter("iteration index must be nonnegative")
    return divmod(int(i), int(n_local))


@dataclass(frozen=True)
class BatchPartition:
    """Contiguous batches of ``batch_size`` rows covering a shard."""

    batch_size: int
    batch_count: int

    def rows(self, batch):
        start = batch * self.batch_size
        return np.arange(start, start + self.batch_size)


def make_batch_partition(n, batch_size):
    if batch_size < 1 or n % batch_size:
        raise InvalidParameter(f"batch size {batch_size} does not divide shard size {n}")
    return BatchPartition(int(batch_size), n // int(batch_size))


@dataclass
class AvrgState:
    """AVRG state for one node.

    ``g_current`` is the amortized full-gradient estimate used this epoch;
    ``g_accumulator`` collects next epoch's estimate. In epoch 0 the snapshot
    gradient is taken as zero.
    """

    snapshot: np.ndarray
    g_current: np.ndarray
    g_accumulator: np.ndarray
    schedule: ReshuffleSchedule
    epoch_zero: bool = True
    seed: int = 0
    node: int = 0
    evaluations: int = 0


def new_avrg_state(w0, n_units, seed=0, node=0):
    w0 = np.asarray(w0, dtype=float)
    zeros = np.zeros_like(w0)
    schedule = fresh_permutation(n_units, node_rng(seed, node, 0), epoch=0)
    return AvrgState(w0.copy(), zeros, zeros.copy(), schedule, True, seed, node)


def _unit_gradient(model, features, labels, w, rows):
    g = sample_gradients(model, w, features[rows], labels[rows])
    return g if g.ndim == 1 else g.mean(axis=0)


def _avrg_step(state, model, features, labels, w, rows, n_units, cost):
    w = np.asarray(w, dtype=float)
    grad_now = _unit_gradient(model, features, labels, w, rows)
    grad_snap = _unit_gradient(model, features, labels, state.snapshot, rows)
    if state.epoch_zero:
        grad_snap = np.zeros_like(grad_snap)
    estimate = grad_now - grad_snap + state.g_current
    state.g_accumulator = state.g_accumulator + (1.0 / n_units) * grad_now
    state.evaluations += cost
    return estimate, state


def avrg_gradient(state, model, shard, w):
    """Next AVRG estimate for one node; advances the schedule in place."""
    features, labels = _as_arrays(shard)
    if state.schedule.size != len(labels):
        raise InvalidParameter("schedule size does not match the shard")
    n = state.schedule.next_index()
    return _avrg_step(state, model, features, labels, w, n, len(labels), 2)


def minibatch_avrg_gradient(state, partition, model, shard, w):
    """AVRG over batch gradients; the schedule permutes batch indices."""
    features, labels = _as_arrays(shard)
    if partition.batch_size * partition.batch_count != len(labels):
        raise InvalidParameter("batch partition does not cover the shard")
    if state.schedule.size != partition.batch_count:
        raise InvalidParameter("schedule must range over batch indices")
    batch = state.schedule.next_index()
    rows = partition.rows(batch)
    return _avrg_step(
        state, model, features, labels, w, rows, partition.batch_count, 2 * partition.batch_size
    )


@dataclass
class SvrgState:
    """SVRG state for one node; the full gradient is taken lazily at ``s = 0``."""

    snapshot: np.ndarray
    g_current: np.ndarray
    schedule: ReshuffleSchedule
    full_ready: bool = False
    seed: int = 0
    node: int = 0
    evaluations: int = 0
    last_charge: int = 0


def new_svrg_state(w0, n, seed=0, node=0):
    w0 = np.asarray(w0, dtype=float)
    schedule = fresh_permutation(n, node_rng(seed, node, 0), epoch=0)
    return SvrgState(w0.copy(), np.zeros_like(w0), schedule, False, seed, node)


def svrg_gradient(state, model, shard, w):
    """Next SVRG estimate; at ``s = 0`` the snapshot becomes ``w`` and the
    node pays ``N_k`` evaluations for its full local gradient first."""
    features, labels = _as_arrays(shard)
    w = np.asarray(w, dtype=float)
    charge = 0
    if state.schedule.cursor == 0 and not state.full_ready:
        state.snapshot = w.copy()
        state.g_current = local_full_gradient(model, state.snapshot, (features, labels))
        state.full_ready = True
        charge += len(labels)
    n = state.schedule.next_index()
    grad_now = sample_gradients(model, w, features[n], labels[n])
    grad_snap = sample_gradients(model, state.snapshot, features[n], labels[n])
    charge += 2
    state.evaluations += charge
    state.last_charge = charge
    return grad_now - grad_snap + state.g_current, state


def epoch_rollover(state, w_end):
    """Close an epoch: promote the accumulator, move the snapshot, reshuffle."""
    schedule = state.schedule
    if not schedule.exhausted:
        raise InvalidState(
            f"rollover at cursor {schedule.cursor} of {schedule.size}; epoch not finished"
        )
    epoch = schedule.epoch + 1
    state.schedule = fresh_permutation(schedule.size, node_rng(state.seed, state.node, epoch), epoch)
    state.snapshot = np.array(w_end, dtype=float, copy=True)
    if isinstance(state, AvrgState):
        state.g_current = state.g_accumulator
        state.g_accumulator = np.zeros_like(state.g_current)
        state.epoch_zero = False
    else:
        state.full_ready = False
    return state


# -- vectorized banks -------------------------------------------------------


class _Bank:
    """Common bookkeeping for stacked per-node schedules."""

    kind = "bank"

    def __init__(self, units, dim, seed):
        self.units = np.asarray(units, dtype=np.int64)
        if np.any(self.units < 1):
            raise InvalidParameter("every node needs at least one sampling unit")
        self.node_count = len(self.units)
        self.dim = int(dim)
        self.seed = int(seed)
        self.perm = np.zeros((self.node_count, int(self.units.max())), dtype=np.int64)
        # Start "past the end" so the first call opens epoch 0 for every node.
        self.cursor = self.units.copy()
        self.epoch = np.full(self.node_count, -1, dtype=np.int64)
        self.last_local = np.zeros(self.node_count, dtype=np.int64)
        self._nodes = np.arange(self.node_count)

    def _draw(self, nodes):
        for k in nodes:
            n = int(self.units[k])
            self.perm[k, :n] = node_rng(self.seed, k, self.epoch[k]).permutation(n)
        self.cursor[nodes] = 0

    def _advance(self, oracle, W):
        due = np.flatnonzero(self.cursor >= self.units)
        if len(due):
            self.epoch[due] += 1
            self._rollover(due, oracle, W)
            self._draw(due)
        local = self.perm[self._nodes, self.cursor]
        self.last_local = self.cursor.copy()
        self.cursor += 1
        return local

    def _rollover(self, nodes, oracle, W):
        pass

    def state_dict(self):
        return {
            "kind": self.kind,
            "seed": self.seed,
            "units": self.units.tolist(),
            "cursor": self.cursor.tolist(),
            "epoch": self.epoch.tolist(),
            "perm": self.perm.tolist(),
        }

    def load_state_dict(self, state):
        if state["kind"] != self.kind:
            raise InvalidParameter(f"checkpoint holds a {state['kind']} bank, not {self.kind}")
        self.seed = int(state["seed"])
        self.units = np.asarray(state["units"], dtype=np.int64)
        self.cursor = np.asarray(state["cursor"], dtype=np.int64)
        self.epoch = np.asarray(state["epoch"], dtype=np.int64)
        self.perm = np.asarray(state["perm"], dtype=np.int64)


def _arr(x):
    return np.asarray(x, dtype=float)


class AvrgBank(_Bank):
    """AVRG for every node; ``batch_size > 1`` gives the mini-batch variant."""

    kind = "avrg"

    def __init__(self, sizes, dim, seed, batch_size=1):
        sizes = np.asarray(sizes, dtype=np.int64)
        if batch_size < 1 or np.any(sizes % batch_size):
            raise InvalidParameter(f"batch size {batch_size} must divide every shard size")
        super().__init__(sizes // batch_size, dim, seed)
        self.batch_size = int(batch_size)
        K = self.node_count
        self.snapshot = np.zeros((K, dim))
        self.g = np.zeros((K, dim))
        self.acc = np.zeros((K, dim))
        self.zero_flag = np.ones(K, dtype=bool)
        self._inv_units = 1.0 / self.units
        self._batch_offsets = np.arange(self.batch_size)

    @property
    def charge(self):
        return 2 * self.batch_size

    def _rollover(self, nodes, oracle, W):
        self.g[nodes] = self.acc[nodes]
        self.acc[nodes] = 0.0
        self.snapshot[nodes] = W[nodes]
        self.zero_flag[nodes] = self.epoch[nodes] == 0

    def estimate(self, oracle, W):
        local = self._advance(oracle, W)
        starts = oracle.offsets[:-1]
        if self.batch_size == 1:
            rows = starts + local
            grad_now = oracle.rows(W, rows)
            grad_snap = oracle.rows(self.snapshot, rows)
        else:
            rows = (starts + local * self.batch_size)[:, None] + self._batch_offsets
            grad_now = oracle.rows(W, rows).mean(axis=1)
            grad_snap = oracle.rows(self.snapshot, rows).mean(axis=1)
        if self.zero_flag.any():
            grad_snap[self.zero_flag] = 0.0
        estimate = grad_now - grad_snap + self.g
        self.acc += self._inv_units[:, None] * grad_now
        return estimate

    def state_dict(self):
        state = super().state_dict()
        state.update(
            batch_size=self.batch_size,
            snapshot=self.snapshot.tolist(),
            g=self.g.tolist(),
            acc=self.acc.tolist(),
            zero_flag=self.zero_flag.tolist(),
        )
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.batch_size = int(state["batch_size"])
        self.snapshot = _arr(state["snapshot"])
        self.g = _arr(state["g"])
        self.acc = _arr(state["acc"])
        self.zero_flag = np.asarray(state["zero_flag"], dtype=bool)
        self._inv_units = 1.0 / self.units


class SvrgBank(_Bank):
    """SVRG for every node; each local epoch opens with a full local gradient."""

    kind = "svrg"
    charge = 2

    def __init__(self, sizes, dim, seed):
        super().__init__(sizes, dim, seed)
        K = self.node_count
        self.snapshot = np.zeros((K, dim))
        self.g = np.zeros((K, dim))

    def _rollover(self, nodes, oracle, W):
        self.snapshot[nodes] = W[nodes]
        self.g[nodes] = oracle.local_full(self.snapshot, nodes)

    def estimate(self, oracle, W):
        local = self._advance(oracle, W)
        rows = oracle.offsets[:-1] + local
        return oracle.rows(W, rows) - oracle.rows(self.snapshot, rows) + self.g

    def state_dict(self):
        state = super().state_dict()
        state.update(snapshot=self.snapshot.tolist(), g=self.g.tolist())
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.snapshot = _arr(state["snapshot"])
        self.g = _arr(state["g"])


class UniformBank(_Bank):
    """One uniformly sampled (with replacement) sample gradient per node.

    Draws are made in blocks of ``N_k`` per node from the stream keyed by the
    block number, which keeps the sampler counter-based like the reshuffled
    ones.
    """

    kind = "uniform"
    charge = 1

    def _draw(self, nodes):
        for k in nodes:
            n = int(self.units[k])
            rng = node_rng(self.seed, k, self.epoch[k], stream=_UNIFORM_STREAM)
            self.perm[k, :n] = rng.integers(0, n, size=n)
        self.cursor[nodes] = 0

    def estimate(self, oracle, W):
        local = self._advance(oracle, W)
        return oracle.rows(W, oracle.offsets[:-1] + local)
