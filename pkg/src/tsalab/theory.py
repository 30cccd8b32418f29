"""Closed-form steady-state predictions for the linear teacher-student-attacker problem."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

AT_TRANSITION = "at-transition"


@dataclass(frozen=True)
class SteadyStatePrediction:
    d_bar: float
    a_bar: float | None = None
    accuracy: float | str | None = None
    regime: str = ""


def _check_C(C):
    if not C >= 0:
        raise ValueError("C must be ≥ 0")


def batch_factor(P: float) -> float:
    """f(P) = P / (P + 2); tends to 1 for large batches."""
    return P / (P + 2.0)


def result1_optimal(C: float) -> tuple[float, float]:
    """Optimal steady state in the large-batch limit: d = a = 1/(C+1)."""
    _check_C(C)
    d = 1.0 / (C + 1.0) if math.isfinite(C) else 0.0
    return d, d


def optimal_student_weights(C: float, teacher_w, target_w) -> np.ndarray:
    d, _ = result1_optimal(C)
    return np.asarray(teacher_w) + d * (np.asarray(target_w) - np.asarray(teacher_w))


def result2_accuracy(C: float):
    """Large-batch steady-state accuracy under label flipping: 1 - H(C - 1).

    Returns the ``AT_TRANSITION`` marker at C = 1, where the step is undefined.
    """
    _check_C(C)
    if C == 1:
        return AT_TRANSITION
    return 1.0 if C > 1 else 0.0


def result3_greedy_ss(C: float, P: float) -> tuple[float, float]:
    """Mean steady state under scalar greedy attacks: (d_bar, a_bar)."""
    _check_C(C)
    if P < 1:
        raise ValueError("P must be ≥ 1")
    f = batch_factor(P)
    return 1.0 / (f * C + 1.0), f / (f * C + 1.0)


def result4_sample_specific_ss(C: float) -> float:
    _check_C(C)
    return 1.0 / (C / 3.0 + 1.0)


def sample_specific_mean_action(C: float) -> float:
    _check_C(C)
    return (1.0 / 3.0) / (C / 3.0 + 1.0)


def result5_mixing_ss(C: float, P: float, rho: float) -> float:
    """Mean steady-state distance when only rho*P samples per batch are poisoned."""
    _check_C(C)
    if P < 1:
        raise ValueError("P must be ≥ 1")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    n = rho * P
    if abs(n - round(n)) > 1e-9:
        raise ValueError("rho*P must be an integer")
    return 1.0 / (C * P / (n + 2.0) + 1.0)


def optimal_gamma_tilde(D: float, sigma2: float, eta: float) -> float:
    if not (D > 0 and sigma2 > 0 and eta > 0):
        raise ValueError("D, sigma2 and eta must be positive")
    return D / (sigma2 * eta)


def deterministic_limit_costs(student_w, teacher_w, target_w, a: float, sigma2: float = 1.0):
    """Input-averaged nefarious cost and loss gradient for the linear model."""
    ws, wt, wstar = (np.asarray(x, dtype=float) for x in (student_w, teacher_w, target_w))
    D = ws.shape[-1]
    d_sstar = ws - wstar
    g_nef = sigma2 / (2 * D) * float(d_sstar @ d_sstar)
    grad = sigma2 / D * ((ws - wt) + (wt - wstar) * a)
    return g_nef, grad


def predict(C: float, P: int = 1, rho: float = 1.0, strategy: str = "greedy") -> SteadyStatePrediction:
    """Theory curve matching a simulated setting, for overlays."""
    if strategy == "optimal":
        d, a = result1_optimal(C)
        return SteadyStatePrediction(d, a, result2_accuracy(C), "Result1")
    if strategy == "greedy-sample":
        return SteadyStatePrediction(result4_sample_specific_ss(C), sample_specific_mean_action(C),
                                     None, "Result4")
    if rho < 1:
        return SteadyStatePrediction(result5_mixing_ss(C, P, rho), None, None, "Result5")
    d, a = result3_greedy_ss(C, P)
    return SteadyStatePrediction(d, a, None, "Result3")
