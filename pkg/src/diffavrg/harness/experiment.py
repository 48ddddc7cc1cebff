"""Problem assembly, single runs, step-size tuning and parameter sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import generate_least_squares, load_libsvm, normalize_unit, partition
from ..diagnostics import fit_linear_rate
from ..diffusion import AlgorithmSpec, NetworkState, run
from ..errors import DivergenceError, InsufficientData
from ..objective import LossModel, Regularizer
from ..topology import build_topology, metropolis_weights
from .metrics import CostModel
from .reference import reference_solution


@dataclass
class Problem:
    """Everything a run needs besides the algorithm choice."""

    dataset: object
    partition: object
    model: LossModel
    graph: object
    combination: object
    regularizer: Regularizer = field(default_factory=Regularizer)
    reference: object = None

    @property
    def w_star(self):
        return self.reference.w_star

    def local_smoothness(self):
        """Largest eigenvalue of each node's local Hessian bound."""
        out = np.empty(self.partition.node_count)
        for k, shard in enumerate(self.partition.shards):
            H = shard.features
            top = float(np.linalg.eigvalsh(H.T @ H / len(H))[-1])
            if self.model.kind == "logistic-l2":
                top /= 4.0
            out[k] = top + self.model.l2_coefficient
        return out


def synthetic_problem(
    K=20,
    N=2000,
    M=10,
    condition=20.0,
    noise_std=0.1,
    topology="random",
    p=0.3,
    seed=0,
    partition_mode="balanced",
    regularizer=None,
):
    """Least-squares problem with log-spaced feature covariance over a Metropolis network."""
    dataset = generate_least_squares(N, M, condition, noise_std, seed)
    parts = partition(dataset, K, mode=partition_mode, seed=seed)
    graph = build_topology(topology, K, seed=seed, p=p if topology == "random" else None)
    model = LossModel("least-squares", dimension=M)
    regularizer = regularizer or Regularizer()
    ref = reference_solution(model, dataset, regularizer)
    return Problem(dataset, parts, model, graph, metropolis_weights(graph), regularizer, ref)


def build_problem(cfg):
    """Assemble a :class:`Problem` from an :class:`ExperimentConfig`."""
    d, t = cfg.data, cfg.topology
    if d.kind == "synthetic-least-squares":
        dataset = generate_least_squares(d.size, d.dimension, d.condition, d.noise_std, cfg.seed)
    else:
        dataset = load_libsvm(d.path, dimension=d.dimension if d.dimension else None)
        if d.normalize:
            dataset, _ = normalize_unit(dataset)
    parts = partition(dataset, t.nodes, mode=d.partition, seed=cfg.seed, sizes=d.sizes)
    edges = [tuple(e) for e in t.edges] if t.edges is not None else None
    graph = build_topology(t.kind, t.nodes, seed=cfg.seed, p=t.p if t.kind == "random" else None, edges=edges)
    model = LossModel(d.loss, l2_coefficient=d.l2_coefficient, dimension=dataset.dimension)
    reg = Regularizer(cfg.algorithm.regularizer.kind, cfg.algorithm.regularizer.eta)
    ref = reference_solution(model, dataset, reg)
    return Problem(dataset, parts, model, graph, metropolis_weights(graph), reg, ref)


def spec_from_config(cfg):
    a = cfg.algorithm
    return AlgorithmSpec(
        variant=a.variant,
        step_size=a.step_size,
        regularizer=Regularizer(a.regularizer.kind, a.regularizer.eta),
        batch_size=a.batch_size,
        use_weights=a.use_weights,
        seed=cfg.seed,
    )


def run_spec(problem, spec, epochs=None, tolerance=None, probe=False, cost=CostModel(), blowup=None, w0=None):
    net = NetworkState(spec, problem.partition, problem.model, problem.combination, w0=w0)
    trace = run(
        net,
        problem.w_star,
        epochs=epochs,
        tolerance=tolerance,
        probe=probe,
        t_comp=cost.t_comp,
        t_comm=cost.t_comm,
        blowup=blowup,
    )
    return trace, net


def step_size_grid(lo, hi, per_decade=20):
    """Log-spaced grid from ``lo`` to ``hi`` with ``per_decade`` points per decade."""
    decades = np.log10(hi / lo)
    count = max(int(round(decades * per_decade)) + 1, 2)
    return np.logspace(np.log10(lo), np.log10(hi), count)


def default_grid(problem, variant, per_decade=20, decades=3.0, use_weights=None):
    """Three decades below the local gradient-descent stability limit.

    The top of the grid is ``2 / max_k (w_k L_k)`` where ``L_k`` is node
    ``k``'s local smoothness and ``w_k`` its step weight (``q_k`` or 1).
    """
    spec = AlgorithmSpec(variant, 1.0, regularizer=problem.regularizer if variant.startswith("prox") else Regularizer(),
                         use_weights=use_weights)
    weights = problem.partition.weights if spec.weighted else np.ones(problem.partition.node_count)
    hi = 2.0 / float(np.max(weights * problem.local_smoothness()))
    return step_size_grid(hi / 10**decades, hi, per_decade)


@dataclass
class TuningResult:
    step_size: float
    epochs_to_target: float
    trace: object
    # (mu, fractional epochs to target or None, final error, diverged)
    table: list


def tune_step_size(problem, variant, target, max_epochs, grid=None, per_decade=20, **spec_kwargs):
    """Pick the step size that reaches ``target`` in the fewest epochs.

    Step sizes are tried from largest to smallest; once a step size reaches
    the target, later runs are capped at that many epochs. Runs whose error
    grows 1e4-fold are treated as divergent.
    """
    if grid is None:
        grid = default_grid(problem, variant, per_decade, use_weights=spec_kwargs.get("use_weights"))
    best = None
    budget = max_epochs
    table = []
    for mu in sorted(np.asarray(grid, dtype=float), reverse=True):
        spec = AlgorithmSpec(variant, float(mu), **spec_kwargs)
        try:
            trace, _ = run_spec(problem, spec, epochs=budget, tolerance=target, blowup=1e4)
        except DivergenceError:
            table.append((float(mu), None, float("inf"), True))
            continue
        reached = trace.first_epoch_below(target)
        table.append((float(mu), reached, trace.final_error, False))
        if reached is not None and (best is None or reached < best[1]):
            best = (float(mu), reached, trace)
            budget = int(np.ceil(reached))
    if best is None:
        return TuningResult(float("nan"), float("nan"), None, table)
    return TuningResult(best[0], best[1], best[2], table)


SWEEP_COLUMNS = ("step_size", "batch_size", "final_error", "rate", "r_squared", "n_g", "n_c", "time_model", "diverged")


def sweep(problem, variant, step_sizes, epochs, batch_sizes=(1,), cost=CostModel(), tolerance=None, **spec_kwargs):
    """One summary row per ``(step_size, batch_size)`` pair."""
    rows = []
    for B in batch_sizes:
        for mu in step_sizes:
            kwargs = dict(spec_kwargs)
            if variant == "diffusion-avrg-minibatch":
                kwargs["batch_size"] = int(B)
            spec = AlgorithmSpec(variant, float(mu), **kwargs)
            try:
                trace, _ = run_spec(problem, spec, epochs=epochs, tolerance=tolerance, cost=cost)
            except DivergenceError as exc:
                partial = exc.trace
                rows.append(
                    dict(step_size=float(mu), batch_size=int(B), final_error=float("inf"), rate=float("nan"),
                         r_squared=float("nan"), n_g=partial.n_g[-1] if partial else float("nan"),
                         n_c=partial.n_c[-1] if partial else float("nan"), time_model=float("nan"), diverged=True)
                )
                continue
            try:
                rate, r2 = fit_linear_rate(trace)
                trace.rate_fit = (rate, r2)
            except InsufficientData:
                rate, r2 = float("nan"), float("nan")
            rows.append(
                dict(step_size=float(mu), batch_size=int(B), final_error=trace.final_error, rate=rate,
                     r_squared=r2, n_g=trace.n_g[-1], n_c=trace.n_c[-1], time_model=trace.time_model[-1],
                     diverged=False)
            )
    return rows


def time_to_target(trace, target, cost):
    """Modelled running time at the first record reaching ``target``, else ``None``."""
    hit = trace.cost_to_reach(target)
    if hit is None:
        return None
    n_g, n_c = hit
    return cost.t_comp * n_g + cost.t_comm * n_c
