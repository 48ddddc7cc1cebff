import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffavrg.data import generate_least_squares, partition
from diffavrg.diagnostics import (
    fit_linear_rate,
    incidence_factor,
    new_dual_state,
    optimality_residuals,
    step_primal_dual,
)
from diffavrg.diffusion import AlgorithmSpec, NetworkState, run, step
from diffavrg.errors import InsufficientData, NumericalFailure
from diffavrg.harness.experiment import synthetic_problem, tune_step_size
from diffavrg.objective import LossModel, Regularizer
from diffavrg.topology import build_topology, metropolis_weights
from diffavrg.trace import RunTrace

LS = LossModel("least-squares")


def test_factor_of_identity_is_zero():
    f = incidence_factor(np.eye(4))
    assert np.all(f.V == 0)


def test_factor_two_node_complete():
    f = incidence_factor(np.full((2, 2), 0.5))
    np.testing.assert_allclose(np.sort(f.sigma), [0.0, 0.25], atol=1e-15)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(f.V)), [0.0, 0.5], atol=1e-15)


def test_factor_reconstruction_line_five():
    A = metropolis_weights(build_topology("line", 5)).entries
    f = incidence_factor(A)
    assert np.linalg.norm(f.V @ f.V - (np.eye(5) - A) / 10) < 1e-10
    assert np.linalg.norm(f.V @ np.ones(5)) < 1e-10


def test_factor_rejects_non_psd():
    # Eigenvalue 2 of A makes I - A indefinite.
    with pytest.raises(NumericalFailure):
        incidence_factor(np.array([[1.0, 1.0], [1.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(K=st.integers(2, 12), seed=st.integers(0, 10_000), p=st.floats(0.1, 1.0))
def test_factor_reconstruction_property(K, seed, p):
    A = metropolis_weights(build_topology("random", K, seed=seed, p=p)).entries
    f = incidence_factor(A)
    assert np.linalg.norm(f.V @ f.V - (np.eye(K) - A) / (2 * K)) < 1e-10
    assert np.linalg.norm(f.V @ np.ones(K)) < 1e-10


def _quadratic(K=5, N=40, seed=0):
    ds = generate_least_squares(N, 3, condition=5.0, noise_std=0.3, seed=seed)
    part = partition(ds, K, seed=seed)
    A = metropolis_weights(build_topology("line", K))
    return ds, part, A


@pytest.mark.parametrize("variant", ["exact-diffusion", "diffusion-avrg"])
def test_primal_dual_matches_primal_only(variant):
    ds, part, A = _quadratic()
    mu = 0.5 if variant == "exact-diffusion" else 0.1
    primal = NetworkState(AlgorithmSpec(variant, mu), part, LS, A)
    pd = NetworkState(AlgorithmSpec(variant, mu), part, LS, A)
    dual = new_dual_state(pd)
    P = dual.factor.range_projector()
    for _ in range(40):
        step(primal)
        step_primal_dual(pd, dual)
        assert np.max(np.abs(primal.W - pd.W)) < 1e-10
        assert np.linalg.norm(dual.Y - P @ dual.Y) < 1e-9


def test_prox_primal_dual_matches_prox_recursion():
    ds, part, A = _quadratic()
    reg = Regularizer("l1", 0.05)
    primal = NetworkState(AlgorithmSpec("prox-diffusion-avrg", 0.1, regularizer=reg), part, LS, A)
    pd = NetworkState(AlgorithmSpec("prox-diffusion-avrg", 0.1, regularizer=reg), part, LS, A)
    dual = new_dual_state(pd)
    for _ in range(40):
        step(primal)
        step_primal_dual(pd, dual)
        assert np.max(np.abs(primal.W - pd.W)) < 1e-10


def test_primal_dual_with_identity_is_local_gradient_descent():
    ds, part, _ = _quadratic(K=3, N=30)
    net = NetworkState(AlgorithmSpec("exact-diffusion", 0.2, use_weights=False), part, LS, np.eye(3))
    dual = new_dual_state(net)
    W = np.zeros((3, 3))
    for _ in range(20):
        step_primal_dual(net, dual)
        for k in range(3):
            sh = part.shard(k)
            W[k] = W[k] - 0.2 * (sh.features.T @ (sh.features @ W[k] - sh.labels)) / len(sh.labels)
    np.testing.assert_allclose(net.W, W, atol=1e-12)


def test_optimality_residuals():
    ds, part, A = _quadratic()
    K = 5
    w = np.array([0.1, 0.2, 0.3])
    _, r2 = optimality_residuals(np.tile(w, (K, 1)), np.zeros((K, 3)), LS, part, A, 0.5)
    assert r2 == 0.0 or r2 < 1e-15
    net = NetworkState(AlgorithmSpec("exact-diffusion", 0.5, use_weights=False), part, LS, A)
    dual = new_dual_state(net)
    for _ in range(3000):
        step_primal_dual(net, dual)
    r1, r2 = optimality_residuals(net.W, dual.Y, LS, part, A, 0.5)
    assert r1 < 1e-8 and r2 < 1e-8
    bumped = net.W.copy()
    bumped[2, 0] += 1e-3
    _, r2b = optimality_residuals(bumped, dual.Y, LS, part, A, 0.5)
    assert r2b >= 1e-4


def _trace(errors):
    t = RunTrace()
    for e, err in enumerate(errors):
        t.record(e, e, err, e, e)
    return t


def test_rate_fit_geometric():
    rho, r2 = fit_linear_rate(_trace([0.5**t for t in range(20)]))
    assert rho == pytest.approx(0.5, rel=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_rate_fit_constant():
    rho, r2 = fit_linear_rate(_trace([0.3] * 10))
    assert rho == pytest.approx(1.0, abs=1e-12)
    assert r2 == 1.0


def test_rate_fit_stops_at_floor():
    errors = [10.0 ** (-2 * t) for t in range(12)]
    rho, r2 = fit_linear_rate(_trace(errors))
    assert rho == pytest.approx(0.01, rel=1e-9)
    with pytest.raises(InsufficientData):
        fit_linear_rate(_trace([1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5]))


def test_rate_fit_on_real_run():
    ds, part, A = _quadratic()
    w_star = np.linalg.lstsq(ds.features, ds.labels, rcond=None)[0]
    net = NetworkState(AlgorithmSpec("diffusion-avrg", 0.1), part, LS, A)
    trace = run(net, w_star, epochs=60)
    rho, r2 = fit_linear_rate(trace)
    assert rho < 1 and r2 >= 0.95


def test_fitted_rate_improves_with_connectivity():
    rows = []
    for kind in ("complete", "cycle", "line"):
        P = synthetic_problem(K=20, N=200, topology=kind, seed=0)
        res = tune_step_size(P, "diffusion-avrg", 1e-6, max_epochs=2000, per_decade=5)
        rows.append((P.combination.lambda2, fit_linear_rate(res.trace)[0]))
    rows.sort()
    rates = [rho for _, rho in rows]
    assert all(b > a for a, b in zip(rates, rates[1:]))
