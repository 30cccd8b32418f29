"""Forward pass, MSE loss, hand-derived gradients and the SGD update.

Parameters may carry leading batch dimensions (``w`` of shape ``(..., D)``,
or ``W`` of shape ``(..., M, D)`` with ``v`` of shape ``(..., M)``); inputs
``X`` of shape ``(N, D)`` are shared across that batch.  This lets the
calibration code advance many candidate students in lock-step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .core import Architecture

SQRT2 = math.sqrt(2.0)
SQRT2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelParams:
    """Weights of one model (or a stack of models).

    Linear / erf: ``w`` is a D-vector.  Two-layer net: ``w`` holds the M x D
    first-layer matrix (rows w_m) and ``v`` the read-out vector.
    """

    w: np.ndarray
    v: np.ndarray | None = None

    def __add__(self, other: "ModelParams") -> "ModelParams":
        return ModelParams(self.w + other.w, None if self.v is None else self.v + other.v)

    def scale(self, k) -> "ModelParams":
        return ModelParams(self.w * k, None if self.v is None else self.v * k)

    def flat(self) -> np.ndarray:
        if self.v is None:
            return self.w.reshape(-1).copy()
        return np.concatenate([self.w.reshape(-1), self.v.reshape(-1)])

    def copy(self) -> "ModelParams":
        return ModelParams(self.w.copy(), None if self.v is None else self.v.copy())

    def stack(self, n: int) -> "ModelParams":
        """Replicate along a new leading axis."""
        w = np.broadcast_to(self.w, (n,) + self.w.shape).copy()
        v = None if self.v is None else np.broadcast_to(self.v, (n,) + self.v.shape).copy()
        return ModelParams(w, v)

    def __getitem__(self, idx) -> "ModelParams":
        return ModelParams(self.w[idx], None if self.v is None else self.v[idx])


Gradient = ModelParams


def unflatten(arch: Architecture, flat: np.ndarray, D: int) -> ModelParams:
    if arch.kind == "nn":
        M = arch.M
        return ModelParams(flat[: M * D].reshape(M, D).copy(), flat[M * D:].copy())
    return ModelParams(np.asarray(flat, dtype=float).copy())


def check_shapes(arch: Architecture, params: ModelParams, D: int) -> None:
    if arch.kind == "nn":
        if params.v is None or params.w.shape[-2:] != (arch.M, D) or params.v.shape[-1] != arch.M:
            raise ValueError(f"expected W of shape (M={arch.M}, D={D}) and v of length {arch.M}")
    elif params.w.shape[-1] != D or params.v is not None:
        raise ValueError(f"expected w of length D={D}")


def _as_2d(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def preactivations(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """w.x/sqrt(D): shape (..., N) for vector w, (..., M, N) for the net."""
    D = X.shape[-1]
    return (params.w @ X.T) / math.sqrt(D)


def forward(arch: Architecture, params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Model output phi(x; theta) for one input (scalar) or rows of ``x`` (..., N)."""
    X, single = _as_2d(x)
    if X.shape[-1] != params.w.shape[-1]:
        raise ValueError(f"input length {X.shape[-1]} does not match D={params.w.shape[-1]}")
    z = preactivations(params, X)
    if arch.kind == "linear":
        out = z
    elif arch.kind == "erf":
        out = erf(z / SQRT2)
    else:
        h = erf(z / SQRT2)
        out = np.einsum("...m,...mn->...n", params.v, h) / math.sqrt(arch.M)
    if single:
        out = out[..., 0]
        return float(out) if np.ndim(out) == 0 else out
    return out


def mse_loss(preds, labels) -> float:
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    return float(np.sum((preds - labels) ** 2) / (2 * preds.shape[-1]))


def pullback(arch: Architecture, params: ModelParams, X: np.ndarray, r: np.ndarray) -> Gradient:
    """sum_p r_p * d phi(x_p)/d theta, for residual-like weights ``r`` of shape (..., N)."""
    D = X.shape[-1]
    z = preactivations(params, X)
    if arch.kind == "linear":
        return ModelParams((r @ X) / math.sqrt(D))
    if arch.kind == "erf":
        dphi = SQRT2_OVER_PI * np.exp(-0.5 * z * z)
        return ModelParams(((r * dphi) @ X) / math.sqrt(D))
    sM = math.sqrt(arch.M)
    h = erf(z / SQRT2)
    dh = SQRT2_OVER_PI * np.exp(-0.5 * z * z)
    gv = np.einsum("...n,...mn->...m", r, h) / sM
    gW = np.einsum("...mn,nd->...md", (params.v[..., :, None] * dh) * r[..., None, :], X) / (sM * math.sqrt(D))
    return ModelParams(gW, gv)


def loss_gradient(arch: Architecture, params: ModelParams, batch_inputs: np.ndarray, labels) -> Gradient:
    """Gradient of the batch MSE loss (1/2P) sum (phi(x_p) - y_p)^2."""
    X = np.asarray(batch_inputs, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or y.shape[-1] != X.shape[0]:
        raise ValueError(f"shape mismatch: inputs {X.shape}, labels {y.shape}")
    check_shapes(arch, params, X.shape[1])
    preds = forward(arch, params, X)
    return pullback(arch, params, X, (preds - y) / X.shape[0])


def sgd_step(params: ModelParams, grad: Gradient, eta: float, weight_decay: float = 0.0) -> ModelParams:
    if params.w.shape != grad.w.shape or (params.v is None) != (grad.v is None):
        raise ValueError("gradient shape does not match parameters")
    w = params.w - eta * (grad.w + weight_decay * params.w)
    v = None if params.v is None else params.v - eta * (grad.v + weight_decay * params.v)
    return ModelParams(w, v)
