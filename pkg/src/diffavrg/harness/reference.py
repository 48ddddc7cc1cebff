"""High-accuracy centralized solutions used as the error baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diagnostics import l1_subgradient_residual
from ..errors import ConvergenceFailure, InvalidParameter
from ..objective import Regularizer, empirical_risk, full_gradient

RELATIVE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ReferenceSolution:
    w_star: np.ndarray
    residual_norm: float
    method: str
    iterations: int = 0

    def to_dict(self):
        return {
            "w_star": self.w_star.tolist(),
            "residual_norm": self.residual_norm,
            "method": self.method,
            "iterations": self.iterations,
        }


def _hessian(model, w, H):
    N = H.shape[0]
    if model.kind == "least-squares":
        curv = np.ones(N)
    else:
        z = H @ w
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        curv = s * (1.0 - s)
    return (H.T * curv) @ H / N + model.l2_coefficient * np.eye(H.shape[1])


def _residual(model, w, H, y, eta):
    g = full_gradient(model, w, H, y)
    if eta > 0:
        return l1_subgradient_residual(w, g, eta)
    return float(np.linalg.norm(g))


def reference_solution(model, dataset, regularizer=None, tolerance=RELATIVE_TOLERANCE, max_iter=10_000):
    """Minimize ``R(w) + (1/N) sum_n Q(w; x_n)`` over the whole dataset.

    Least squares without L1 solves the normal equations (plus one round of
    iterative refinement). Smooth logistic uses damped Newton. With L1 the
    solver runs accelerated proximal gradient with backtracking and polishes
    the result with Newton steps on the detected support.

    The returned residual is the gradient norm (the minimal subgradient norm
    with L1); it must be at most ``tolerance * max(1, |grad J(0)|)`` or
    :class:`ConvergenceFailure` is raised.
    """
    regularizer = regularizer or Regularizer()
    H = np.asarray(dataset.features, dtype=float)
    y = np.asarray(dataset.labels, dtype=float)
    M = H.shape[1]
    eta = 0.0 if regularizer.is_identity else regularizer.eta
    target = tolerance * max(1.0, float(np.linalg.norm(full_gradient(model, np.zeros(M), H, y))))

    if eta == 0 and model.kind == "least-squares":
        w, method, its = _normal_equations(model, H, y), "normal-equations", 1
        res = _residual(model, w, H, y, 0.0)
        k = 0
        while res > target and k < 5:
            w = w - np.linalg.solve(_hessian(model, w, H), full_gradient(model, w, H, y))
            res = _residual(model, w, H, y, 0.0)
            k += 1
        its += k
    elif eta == 0:
        w, its = _newton(model, H, y, np.zeros(M), target, max_iter)
        method = "newton"
        res = _residual(model, w, H, y, 0.0)
    else:
        w, its = _prox_gradient(model, H, y, eta, target, max_iter)
        method = "prox-gradient"
        res = _residual(model, w, H, y, eta)
    if not res <= target:
        raise ConvergenceFailure(
            f"{method} stopped at residual {res:.3e} above target {target:.3e}", residual=res
        )
    return ReferenceSolution(w, float(res), method, int(its))


def _normal_equations(model, H, y):
    N, M = H.shape
    G = H.T @ H / N + model.l2_coefficient * np.eye(M)
    b = H.T @ y / N
    try:
        return np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        raise InvalidParameter("least-squares normal equations are singular") from None


def _newton(model, H, y, w, target, max_iter):
    objective = lambda v: empirical_risk(model, v, H, y)  # noqa: E731
    f = objective(w)
    for it in range(1, max_iter + 1):
        g = full_gradient(model, w, H, y)
        if np.linalg.norm(g) <= target:
            return w, it - 1
        step = np.linalg.solve(_hessian(model, w, H), g)
        t = 1.0
        decrease = float(g @ step)
        while True:
            cand = w - t * step
            fc = objective(cand)
            if fc <= f - 1e-4 * t * decrease or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            # Objective is flat to rounding; a full step still shrinks |g|.
            cand = w - step
            fc = objective(cand)
        w, f = cand, fc
    return w, max_iter


def _smoothness(model, H):
    N = H.shape[0]
    top = float(np.linalg.eigvalsh(H.T @ H / N)[-1])
    if model.kind == "logistic-l2":
        top /= 4.0
    return top + model.l2_coefficient


def _prox_gradient(model, H, y, eta, target, max_iter):
    M = H.shape[1]
    L = max(_smoothness(model, H), 1e-12)
    f = lambda v: empirical_risk(model, v, H, y)  # noqa: E731
    w = np.zeros(M)
    v = w.copy()
    theta = 1.0
    for it in range(1, max_iter + 1):
        gv = full_gradient(model, v, H, y)
        fv = f(v)
        while True:
            cand = np.sign(v - gv / L) * np.maximum(np.abs(v - gv / L) - eta / L, 0.0)
            d = cand - v
            if f(cand) <= fv + gv @ d + 0.5 * L * (d @ d) + 1e-15 * abs(fv):
                break
            L *= 2.0
        theta_next = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
        # Restart momentum when it stops helping.
        if (v - cand) @ (cand - w) > 0:
            theta_next = 1.0
            v = cand.copy()
        else:
            v = cand + ((theta - 1) / theta_next) * (cand - w)
        w, theta = cand, theta_next
        if it % 20 == 0:
            polished = _polish_support(model, H, y, eta, w)
            if polished is not None and _residual(model, polished, H, y, eta) <= target:
                return polished, it
        if _residual(model, w, H, y, eta) <= target:
            return w, it
    return w, max_iter


def _polish_support(model, H, y, eta, w, steps=8):
    """Newton on the active set with the signs of ``w`` held fixed."""
    support = np.flatnonzero(w)
    if len(support) == 0:
        return w
    signs = np.sign(w[support])
    v = w.copy()
    for _ in range(steps):
        g = full_gradient(model, v, H, y)[support] + eta * signs
        Hs = _hessian(model, v, H)[np.ix_(support, support)]
        try:
            v[support] -= np.linalg.solve(Hs, g)
        except np.linalg.LinAlgError:
            return None
        if np.any(np.sign(v[support]) != signs):
            return None
    return v
