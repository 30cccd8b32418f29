"""Full-stream action optimization for an attacker that knows the future data.

The objective is the discounted total cost
    G(a) = sum_{mu=1..T} gamma^mu (C~ a_mu^2 / 2 + g_nef(theta_mu; x_mu))
with theta_{mu+1} the SGD update on batch mu under labels perturbed by a_mu.
Gradients come from a reverse (adjoint) sweep through the exact update chain.

Only vector-parameter models (linear, erf perceptron) are supported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .core import Architecture
from .models import SQRT2, SQRT2_OVER_PI


@dataclass
class Stream:
    """A fully materialized batch sequence: X (T, P, D), labels (T, P), mask (T, P)."""

    X: np.ndarray
    y_clean: np.ndarray
    y_target: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_batches(cls, batches) -> "Stream":
        return cls(np.stack([b.inputs for b in batches]), np.stack([b.y_clean for b in batches]),
                   np.stack([b.y_target for b in batches]), np.stack([b.poisoned_mask for b in batches]))


@dataclass
class Problem:
    arch: Architecture
    eta: float
    gamma: float
    C_tilde: float
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.arch.kind not in ("linear", "erf"):
            raise ValueError(f"clairvoyant optimization is unsupported for arch {self.arch.kind!r}")


@dataclass
class Trajectory:
    actions: np.ndarray
    params_path: np.ndarray
    g_per: np.ndarray
    g_nef: np.ndarray
    total_cost: float
    converged: bool = True
    info: dict = field(default_factory=dict)

    @property
    def g_run(self) -> np.ndarray:
        return self.g_per + self.g_nef


def effective_horizon(gamma: float, eps: float = 1e-4) -> int:
    """Smallest T with gamma^T < eps."""
    return int(math.floor(math.log(eps) / math.log(gamma))) + 1


def _activation(kind, z):
    if kind == "linear":
        return z, np.ones_like(z), np.zeros_like(z)
    dphi = SQRT2_OVER_PI * np.exp(-0.5 * z * z)
    return erf(z / SQRT2), dphi, -z * dphi


def rollout(problem: Problem, w0: np.ndarray, stream: Stream, actions: np.ndarray) -> Trajectory:
    kind = problem.arch.kind
    T, P, D = stream.X.shape
    actions = np.asarray(actions, dtype=float)
    if actions.shape != (T,):
        raise ValueError(f"need {T} actions, got shape {actions.shape}")
    sD = math.sqrt(D)
    decay = 1.0 - problem.eta * problem.weight_decay
    W = np.empty((T + 1, D))
    W[0] = w0
    g_nef = np.empty(T)
    delta = (stream.y_target - stream.y_clean) * stream.mask
    w = np.array(w0, dtype=float)
    for mu in range(T):
        X = stream.X[mu]
        z = X @ w / sD
        phi, dphi, _ = _activation(kind, z)
        g_nef[mu] = np.sum((phi - stream.y_target[mu]) ** 2) / (2 * P)
        r = phi - stream.y_clean[mu] - actions[mu] * delta[mu]
        w = decay * w - problem.eta / (P * sD) * ((r * dphi) @ X)
        W[mu + 1] = w
    g_per = 0.5 * problem.C_tilde * actions ** 2
    disc = problem.gamma ** np.arange(1, T + 1)
    total = float(disc @ (g_per + g_nef))
    return Trajectory(actions.copy(), W, g_per, g_nef, total)


def cost_and_gradient(problem: Problem, w0, stream: Stream, actions) -> tuple[Trajectory, np.ndarray]:
    """Rollout plus dG/da by the adjoint recursion."""
    traj = rollout(problem, w0, stream, actions)
    kind = problem.arch.kind
    T, P, D = stream.X.shape
    sD = math.sqrt(D)
    eta = problem.eta
    decay = 1.0 - eta * problem.weight_decay
    disc = problem.gamma ** np.arange(1, T + 1)
    delta = (stream.y_target - stream.y_clean) * stream.mask
    grad = disc * problem.C_tilde * traj.actions
    lam = np.zeros(D)
    for mu in range(T - 1, -1, -1):
        X = stream.X[mu]
        w = traj.params_path[mu]
        z = X @ w / sD
        phi, dphi, d2phi = _activation(kind, z)
        # influence of a_mu on w_{mu+1}
        dw_da = eta / (P * sD) * ((delta[mu] * dphi) @ X)
        grad[mu] += lam @ dw_da
        resid = phi - stream.y_clean[mu] - traj.actions[mu] * delta[mu]
        c = dphi * dphi + resid * d2phi
        jt_lam = decay * lam - eta / (P * D) * ((c * (X @ lam)) @ X)
        dnef_dw = ((phi - stream.y_target[mu]) * dphi) @ X / (P * sD)
        lam = disc[mu] * dnef_dw + jt_lam
    return traj, grad


def _stationarity(a, g, lo, hi):
    return float(np.max(np.abs(np.clip(a - g, lo, hi) - a))) if len(a) else 0.0


def optimize_sequence(problem: Problem, w0, stream: Stream, init_actions, bounds=(-np.inf, np.inf),
                      max_iters: int = 2000, tol: float = 1e-6) -> Trajectory:
    """Box-constrained minimization of G by scaled spectral projected gradient.

    Gradients are rescaled by gamma^-mu (the current-value cost), which keeps late
    actions from stalling; step lengths follow Barzilai-Borwein with a monotone
    Armijo backtracking line search.  Stops once
    ||clip(a - gamma^-mu dG/da) - a||_inf < tol, which also bounds the unscaled
    projected-gradient residual.  If ``max_iters`` runs out, the best iterate is
    returned with ``converged=False``.
    """
    lo, hi = bounds
    T = len(stream)
    scale = problem.gamma ** -np.arange(1, T + 1, dtype=float)
    a = np.clip(np.asarray(init_actions, dtype=float), lo, hi)
    traj, g = cost_and_gradient(problem, w0, stream, a)
    f = traj.total_cost
    history = [f]
    sg = scale * g
    alpha = 1.0 / max(1e-12, float(np.max(np.abs(sg)))) if T else 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if _stationarity(a, sg, lo, hi) < tol:
            converged = True
            break
        d = np.clip(a - alpha * sg, lo, hi) - a
        slope = float(g @ d)
        if slope >= 0:
            converged = _stationarity(a, sg, lo, hi) < tol
            break
        t = 1.0
        while True:
            a_new = a + t * d
            traj_new, g_new = cost_and_gradient(problem, w0, stream, a_new)
            if traj_new.total_cost <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if traj_new.total_cost > f:
            break
        s = a_new - a
        y = g_new - g
        sy = float(s @ y)
        alpha = float(np.clip((s @ (s / scale)) / sy, 1e-10, 1e10)) if sy > 0 else 1e10
        a, g, traj, f = a_new, g_new, traj_new, traj_new.total_cost
        sg = scale * g
        history.append(f)
    else:
        converged = _stationarity(a, sg, lo, hi) < tol
    traj.converged = converged
    traj.info = {
        "iterations": it,
        "history": np.array(history),
        "stationarity_scaled": _stationarity(a, sg, lo, hi),
        "stationarity": _stationarity(a, g, lo, hi),
    }
    return traj
