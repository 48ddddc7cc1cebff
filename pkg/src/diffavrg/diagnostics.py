"""Certificates for the network engine: the V factor, the primal-dual form,
optimality residuals and linear-rate fits.

``V`` is the symmetric PSD square root of ``(I - A) / (2K)``. Its null space
is ``span(1)``, so ``|V W|`` measures disagreement between node iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import PROX, gradient_estimate
from .errors import DivergenceError, InsufficientData, InvalidParameter, NumericalFailure
from .objective import sample_gradients
from .topology import CombinationMatrix

RATE_FLOOR = 1e-13
RATE_START_EPOCH = 2
RATE_MIN_POINTS = 5

_CLAMP = 1e-12


@dataclass(frozen=True)
class IncidenceFactor:
    """``V = U diag(sqrt(sigma)) U'`` for ``(I - A) / (2K) = U diag(sigma) U'``."""

    V: np.ndarray
    U: np.ndarray
    sigma: np.ndarray

    @property
    def size(self):
        return self.V.shape[0]

    def range_projector(self, tol=1e-12):
        """Orthogonal projector onto ``range(V)``, built from the eigenbasis."""
        keep = self.sigma > tol
        U = self.U[:, keep]
        return U @ U.T


def _entries(A):
    if isinstance(A, CombinationMatrix):
        return A.entries
    return np.asarray(A, dtype=float)


def incidence_factor(A):
    """Symmetric square root of ``(I - A) / (2K)``.

    Eigenvalues in ``(-1e-12, 1e-12)`` are roundoff around the null
    direction ``1`` and clamp to zero, which keeps ``V 1 = 0`` to machine
    precision. Anything below ``-1e-12`` means ``I - A`` is not PSD and
    raises :class:`NumericalFailure`.
    """
    A = _entries(A)
    K = A.shape[0]
    if A.shape != (K, K) or not np.allclose(A, A.T, atol=1e-12, rtol=0):
        raise InvalidParameter("combination matrix must be square and symmetric")
    sigma, U = np.linalg.eigh((np.eye(K) - A) / (2 * K))
    if sigma.min() <= -_CLAMP:
        raise NumericalFailure(f"(I - A)/2K has eigenvalue {sigma.min():.3e}; I - A is not PSD")
    sigma = np.where(sigma < _CLAMP, 0.0, sigma)
    V = (U * np.sqrt(sigma)) @ U.T
    return IncidenceFactor(V=V, U=U, sigma=sigma)


@dataclass
class DualState:
    """Stacked dual iterates ``Y`` (and pre-prox ``Z`` for the prox form)."""

    Y: np.ndarray
    Z: np.ndarray | None = None
    factor: IncidenceFactor | None = None


def new_dual_state(net, factor=None):
    """``Y = 0`` with a factor matched to the network's combination matrix."""
    factor = factor or incidence_factor(net.A)
    Z = net.W.copy() if net.spec.variant in PROX else None
    return DualState(Y=np.zeros_like(net.W), Z=Z, factor=factor)


def step_primal_dual(net, dual):
    """One iteration of the primal-dual recursion with ``Y`` as the dual variable.

    Smooth variants::

        W <- Abar (W - mu G) - K V Y
        Y <- Y + V W

    Prox variants use ``Vp = sqrt(K) V`` (so ``Vp^2 = (I - A)/2``)::

        Z <- Abar (W - mu G) - Vp Y
        Y <- Y + Vp Z
        W <- prox(Z)

    The gradient comes from the network's own estimator, so a primal-dual
    run and a primal-only run with the same seed see the same samples.
    """
    K = net.node_count
    V = dual.factor.V
    G = gradient_estimate(net)
    psi_new = net.W - net.steps * G
    adapted = net.Abar @ psi_new
    if net.spec.variant in PROX:
        Vp = np.sqrt(K) * V
        Z = adapted - Vp @ dual.Y
        dual.Y = dual.Y + Vp @ Z
        dual.Z = Z
        net.z = Z
        net.W = net.spec.regularizer.prox(Z, net.spec.step_size)
    else:
        net.W = adapted - K * (V @ dual.Y)
        dual.Y = dual.Y + V @ net.W
    net.psi = psi_new
    net.iteration += 1
    if not np.isfinite(net.W).all():
        raise DivergenceError(net.iteration)
    return net, dual


def stacked_local_gradients(model, partition, W):
    """Rows ``grad J_k(w_k)`` computed without touching any counter."""
    out = np.empty_like(np.asarray(W, dtype=float))
    for k in range(partition.node_count):
        lo, hi = partition.offsets[k], partition.offsets[k + 1]
        out[k] = sample_gradients(model, W[k], partition.features[lo:hi], partition.labels[lo:hi]).mean(axis=0)
    return out


def optimality_residuals(W, Y, model, partition, A, mu, weights=None, factor=None):
    """``(r1, r2) = (|mu Abar G(W) + K V Y|, |V W|)`` in Frobenius norm.

    ``G(W)`` stacks the local gradients, each scaled by ``weights[k]`` when
    given (the ``q_k`` used by the run's adaptation step).
    """
    W = np.asarray(W, dtype=float)
    Y = np.asarray(Y, dtype=float)
    A = _entries(A)
    K = A.shape[0]
    if W.shape[0] != K or Y.shape != W.shape or W.shape[1] != partition.dimension:
        raise InvalidParameter("W, Y and the combination matrix disagree on shape")
    factor = factor or incidence_factor(A)
    G = stacked_local_gradients(model, partition, W)
    if weights is not None:
        G = np.asarray(weights, dtype=float)[:, None] * G
    Abar = 0.5 * (np.eye(K) + A)
    r1 = np.linalg.norm(mu * (Abar @ G) + K * (factor.V @ Y))
    r2 = np.linalg.norm(factor.V @ W)
    return float(r1), float(r2)


def consensus_residual(W, A=None, factor=None):
    """``|V W|``; zero exactly when every row of ``W`` is the same."""
    if factor is None:
        if A is None:
            raise InvalidParameter("need a combination matrix or its factor")
        factor = incidence_factor(A)
    return float(np.linalg.norm(factor.V @ np.asarray(W, dtype=float)))


def l1_subgradient_residual(w, grad, eta):
    """Distance from ``-grad`` to ``eta * d|w|_1``, i.e. how far ``w`` is
    from satisfying ``0 in grad + eta d|w|_1``."""
    w = np.asarray(w, dtype=float)
    grad = np.asarray(grad, dtype=float)
    on = w != 0
    r = np.where(on, grad + eta * np.sign(w), np.maximum(np.abs(grad) - eta, 0.0))
    return float(np.linalg.norm(r))


def prox_optimality_residual(w, model, partition, regularizer):
    """Subgradient residual of ``R(w) + (1/K) sum_k J_k(w)`` at ``w``."""
    w = np.asarray(w, dtype=float)
    W = np.tile(w, (partition.node_count, 1))
    grad = stacked_local_gradients(model, partition, W).mean(axis=0)
    eta = 0.0 if regularizer.kind == "none" else regularizer.eta
    return l1_subgradient_residual(w, grad, eta)


def fit_linear_rate(trace, floor=RATE_FLOOR, start=RATE_START_EPOCH):
    """Least-squares fit of ``log(error)`` against epoch.

    The window starts at epoch ``start`` and stops before the first error at
    or below ``floor``. Returns ``(rho, r_squared)`` with ``rho = exp(slope)``.
    A flat trace gives ``(1.0, 1.0)``.
    """
    epochs = np.asarray(trace.epochs if hasattr(trace, "epochs") else trace[0], dtype=float)
    errors = np.asarray(trace.errors if hasattr(trace, "errors") else trace[1], dtype=float)
    xs, ys = [], []
    for t, e in zip(epochs, errors):
        if not np.isfinite(e) or e <= floor:
            break
        if t >= start:
            xs.append(t)
            ys.append(np.log(e))
    if len(xs) < RATE_MIN_POINTS:
        raise InsufficientData(
            f"rate fit needs {RATE_MIN_POINTS} epochs above {floor:g} from epoch {start}, got {len(xs)}"
        )
    x = np.asarray(xs)
    y = np.asarray(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float((resid**2).sum())
    if ss_tot <= 1e-30 * max(1.0, float((y**2).sum())):
        return float(np.exp(slope)), 1.0
    return float(np.exp(slope)), 1.0 - ss_res / ss_tot
