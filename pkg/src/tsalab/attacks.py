"""Label perturbation, attacker costs, and the constant / greedy attack policies."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .core import Architecture, TSAConfig
from .models import SQRT2, ModelParams, forward, preactivations, pullback
from .stream import BufferEmptyError, ObservationBuffer, label_batch, LabeledBatch


@dataclass(frozen=True)
class AttackCosts:
    g_per: float
    g_nef: float

    @property
    def g_run(self) -> float:
        return self.g_per + self.g_nef


@dataclass
class ClampCounter:
    clamped: int = 0


def perturbation_cost(a, C_tilde: float) -> float:
    """C~ a^2 / 2 for a scalar action, C~ |a|^2 / 2P for a per-sample action vector."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return 0.5 * C_tilde * float(a) ** 2
    return 0.5 * C_tilde * float(a @ a) / a.shape[0]


def clamp_action(a, a_min: float, a_max: float, counter: ClampCounter | None = None):
    if isinstance(a, (float, np.floating)):
        c = min(max(float(a), a_min), a_max)
        if counter is not None and c != a:
            counter.clamped += 1
        return c
    a_arr = np.asarray(a, dtype=float)
    clipped = np.clip(a_arr, a_min, a_max)
    if counter is not None:
        counter.clamped += int(np.count_nonzero(clipped != a_arr))
    return float(clipped) if clipped.ndim == 0 else clipped


def perturb_labels(y_clean, y_target, a, bounds: tuple[float, float] = (-np.inf, np.inf),
                   mask=None, counter: ClampCounter | None = None) -> np.ndarray:
    """y_dagger = y_clean (1 - a) + y_target a, with a clamped to ``bounds``.

    Samples outside ``mask`` keep their clean label.
    """
    y_clean = np.asarray(y_clean, dtype=float)
    y_target = np.asarray(y_target, dtype=float)
    a = np.asarray(clamp_action(a, bounds[0], bounds[1], counter), dtype=float)
    if mask is not None:
        a = np.where(mask, a, 0.0)
    return y_clean + (y_target - y_clean) * a


def estimate_target_error(arch: Architecture, teacher: ModelParams, target: ModelParams,
                          rng: np.random.Generator | None = None, n_mc: int = 10_000,
                          sigma2: float = 1.0, exact: bool = True) -> float:
    """E(phi*) = E_x[(phi*(x) - phi_t(x))^2]; closed form for the linear model."""
    D = teacher.w.shape[-1]
    if arch.kind == "linear" and exact:
        dw = teacher.w - target.w
        return float(sigma2 / D * dw @ dw)
    if n_mc < 1:
        raise ValueError("n_mc must be ≥ 1")
    X = rng.standard_normal((n_mc, D)) * math.sqrt(sigma2)
    diff = forward(arch, target, X) - forward(arch, teacher, X)
    return float(np.mean(diff ** 2))


def nefarious_cost(arch: Architecture, student: ModelParams, target: ModelParams, batch_inputs) -> float:
    X = np.atleast_2d(np.asarray(batch_inputs, dtype=float))
    diff = forward(arch, student, X) - forward(arch, target, X)
    return float(np.sum(diff ** 2) / (2 * X.shape[0]))


# ---------------------------------------------------------------------------
# closed-form greedy policies for the linear model


def _ratio(num, den, bounds):
    """num/den, mapping a zero denominator to the bound in the sign of num."""
    if isinstance(num, (float, np.floating)) and isinstance(den, (float, np.floating)):
        if den != 0:
            return float(num) / float(den)
        return bounds[1] if num > 0 else bounds[0] if num < 0 else 0.0
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    if np.any(den == 0):
        lo, hi = bounds
        out = np.where(den == 0, np.where(num > 0, hi, np.where(num < 0, lo, 0.0)), out)
    return out


def greedy_update_terms(student_w, teacher_w, target_w, X, eta, weight_decay=0.0, mask=None):
    """v1, v2 with w_next(a) = v1 + a v2 for one SGD step on batch ``X``.

    Only rows selected by ``mask`` carry the perturbation.
    ``student_w`` may be stacked with shape (K, D).
    """
    X = np.atleast_2d(X)
    P, D = X.shape
    d_st = student_w - teacher_w
    d_tt = teacher_w - target_w
    v1 = student_w - eta / (D * P) * ((d_st @ X.T) @ X) - eta * weight_decay * student_w
    Xp = X if mask is None else X[mask]
    v2 = -eta / (D * P) * ((Xp @ d_tt) @ Xp)
    return v1, v2


def greedy_leading_term(student_w, teacher_w, target_w, batch_inputs, C_tilde, bounds=(-np.inf, np.inf)):
    """(1 / C~ D P) sum_p (ws - w*).x_p (wt - w*).x_p, the eta -> 0 greedy action."""
    X = np.atleast_2d(batch_inputs)
    P, D = X.shape
    num = ((student_w - target_w) @ X.T) @ (X @ (teacher_w - target_w))
    return _ratio(num, C_tilde * D * P, bounds)


def greedy_action_linear(student_w, teacher_w, target_w, batch_inputs, C_tilde, *, eta, gamma_tilde,
                         sigma2=1.0, weight_decay=0.0, bounds=(-np.inf, np.inf), counter=None, mask=None):
    """Exact greedy action for the linear model.

    Minimizes C~ a^2/2 + gamma~ sigma2/(2D) |v1 + a v2 - w*|^2, whose solution is
    (w*.v2 - v1.v2) / (C~ D / (gamma~ sigma2) + |v2|^2); clamped to ``bounds``.
    Vectorized over stacked students and/or an array of ``gamma_tilde``.
    """
    X = np.atleast_2d(batch_inputs)
    D = X.shape[1]
    v1, v2 = greedy_update_terms(student_w, teacher_w, target_w, X, eta, weight_decay, mask)
    num = (target_w - v1) @ v2
    den = C_tilde * D / (np.asarray(gamma_tilde) * sigma2) + v2 @ v2
    a = _ratio(num, den, bounds)
    return clamp_action(a, bounds[0], bounds[1], counter)


def greedy_action_sample_specific(student_w, teacher_w, target_w, batch_inputs, C_tilde,
                                  bounds=(-np.inf, np.inf), counter=None):
    """Per-sample greedy actions a_p = (ws - w*).x_p (wt - w*).x_p / (C~ D)."""
    X = np.atleast_2d(batch_inputs)
    D = X.shape[1]
    num = (X @ (student_w - target_w)) * (X @ (teacher_w - target_w))
    return clamp_action(_ratio(num, C_tilde * D, bounds), bounds[0], bounds[1], counter)


def greedy_action_partial(student_w, teacher_w, target_w, poisoned_inputs, C_tilde,
                          bounds=(-np.inf, np.inf), counter=None):
    """Batch greedy action computed from the rho*P poisoned samples only."""
    X = np.atleast_2d(poisoned_inputs)
    if X.shape[0] < 1:
        raise ValueError("need at least one poisoned sample")
    a = greedy_leading_term(student_w, teacher_w, target_w, X, C_tilde, bounds)
    return clamp_action(a, bounds[0], bounds[1], counter)


# ---------------------------------------------------------------------------
# grid-search greedy for any architecture


def action_grid(a_min: float, a_max: float, n: int) -> np.ndarray:
    if n == 1 or a_min == a_max:
        return np.array([0.5 * (a_min + a_max)])
    return np.linspace(a_min, a_max, n)


def grid_argmin(grid: np.ndarray, values: np.ndarray) -> int:
    """Index of the minimum; near-ties go to the smallest |a|."""
    vmin = values.min()
    tied = np.flatnonzero(values <= vmin + 1e-12 * max(1.0, abs(vmin)))
    return int(tied[np.argmin(np.abs(grid[tied]))])


def virtual_step(arch: Architecture, student: ModelParams, X, y_clean, y_target, eta, weight_decay=0.0,
                 mask=None):
    """(base, direction) with theta_next(a) = base + a * direction for labels y_clean + a (y_target - y_clean).

    With ``mask`` only the selected samples have their labels moved.
    """
    P = X.shape[0]
    preds = forward(arch, student, X)
    shift = y_target - y_clean if mask is None else (y_target - y_clean) * mask
    g0 = pullback(arch, student, X, (preds - y_clean) / P)
    gd = pullback(arch, student, X, -shift / P)
    base = student + (g0 + student.scale(weight_decay)).scale(-eta)
    return base, gd.scale(-eta)


def greedy_action_generic(arch: Architecture, student: ModelParams, target: ModelParams,
                          batch: LabeledBatch, eval_inputs: np.ndarray, C_tilde: float, gamma_tilde: float,
                          eta: float, grid: np.ndarray, weight_decay: float = 0.0, mask=None,
                          return_costs: bool = False):
    """Grid argmin of C~ a^2/2 + gamma~ * E_x[g_nef after one virtual SGD step].

    The expectation is the sample mean over ``eval_inputs`` (past observations);
    with ``mask`` only the poisoned samples carry the perturbation.
    """
    if eval_inputs is None or len(eval_inputs) == 0:
        raise BufferEmptyError("greedy search needs samples from the observation buffer")
    base, direction = virtual_step(arch, student, batch.inputs, batch.y_clean, batch.y_target, eta,
                                   weight_decay, mask)
    phi_star = forward(arch, target, eval_inputs)
    if direction.v is None:
        # single layer: candidate preactivations are affine in a
        z = preactivations(base, eval_inputs) + grid[:, None] * preactivations(direction, eval_inputs)
        out = z if arch.kind == "linear" else erf(z / SQRT2)
    else:
        cand = base.stack(len(grid)) + ModelParams(grid[:, None, None] * direction.w, grid[:, None] * direction.v)
        out = forward(arch, cand, eval_inputs)
    nef = 0.5 * np.mean((out - phi_star) ** 2, axis=-1)
    costs = 0.5 * C_tilde * grid ** 2 + gamma_tilde * nef
    a = float(grid[grid_argmin(grid, costs)])
    return (a, costs) if return_costs else a


def greedy_sample_specific_generic(arch, student, target, batch, eval_inputs, C_tilde, gamma_tilde, eta,
                                   grid, weight_decay=0.0):
    """Per-sample greedy: each sample treated as its own one-sample virtual step."""
    out = np.empty(batch.P)
    for p in range(batch.P):
        single = LabeledBatch(batch.inputs[p:p + 1], batch.y_clean[p:p + 1], batch.y_target[p:p + 1],
                              batch.poisoned_mask[p:p + 1])
        out[p] = greedy_action_generic(arch, student, target, single, eval_inputs, C_tilde, gamma_tilde,
                                       eta, grid, weight_decay)
    return out


# ---------------------------------------------------------------------------
# calibration by simulated streams drawn from past observations


def _simulated_costs(config: TSAConfig, student: ModelParams, teacher: ModelParams, target: ModelParams,
                     buffer: ObservationBuffer, rng: np.random.Generator, policy, n_cand: int,
                     C_tilde: float, n_streams: int, length: int) -> np.ndarray:
    """Mean discounted cost G for ``n_cand`` candidate policies advanced in lock-step.

    ``policy(students, batch) -> actions`` returns one scalar action per candidate.
    Every candidate sees the same simulated inputs.
    """
    if len(buffer) == 0:
        raise BufferEmptyError("calibration needs a populated observation buffer")
    arch, eta, wd = config.arch, config.eta, config.weight_decay
    totals = np.zeros(n_cand)
    gamma_pows = config.gamma ** np.arange(1, length + 1)
    for _ in range(n_streams):
        theta = student.stack(n_cand)
        for mu in range(length):
            X = buffer.sample(rng, config.P)
            batch = label_batch(config, X, teacher, target, rng)
            a = np.asarray(policy(theta, batch), dtype=float)
            preds = forward(arch, theta, X)
            g_nef = 0.5 * np.mean((preds - batch.y_target) ** 2, axis=-1)
            totals += gamma_pows[mu] * (0.5 * C_tilde * a ** 2 + g_nef)
            a_eff = a[:, None] * batch.poisoned_mask
            y = batch.y_clean + a_eff * (batch.y_target - batch.y_clean)
            grad = pullback(arch, theta, X, (preds - y) / config.P)
            theta = theta + (grad + theta.scale(wd)).scale(-eta)
    return totals / n_streams


def constant_attack_calibrate(config: TSAConfig, student: ModelParams, teacher: ModelParams, target: ModelParams,
                              buffer: ObservationBuffer, rng: np.random.Generator, C_tilde: float,
                              grid: np.ndarray | None = None, n_streams: int | None = None,
                              length: int | None = None) -> tuple[float, np.ndarray]:
    """Constant action minimizing the simulated discounted cost; returns (a_c, G per grid value)."""
    s = config.attack
    grid = action_grid(config.a_min, config.a_max, 51) if grid is None else np.asarray(grid, dtype=float)
    n_streams = s.calib_streams if n_streams is None else n_streams
    length = s.calib_len if length is None else length
    costs = _simulated_costs(config, student, teacher, target, buffer, rng,
                             lambda theta, batch: grid, len(grid), C_tilde, n_streams, length)
    i = grid_argmin(grid, costs)
    if len(grid) > 1 and i in (0, len(grid) - 1):
        warnings.warn(f"constant-attack optimum {grid[i]:g} lies on the grid boundary", RuntimeWarning)
    return float(grid[i]), costs


def gamma_tilde_grid(config: TSAConfig, n: int | None = None) -> np.ndarray:
    n = config.attack.calib_grid if n is None else n
    center = config.D / (config.sigma2 * config.eta)
    if n == 1:
        return np.array([center])
    return center * np.logspace(-2, 2, n, base=2.0)


def calibrate_gamma_tilde(config: TSAConfig, student: ModelParams, teacher: ModelParams, target: ModelParams,
                          buffer: ObservationBuffer, rng: np.random.Generator, C_tilde: float,
                          grid: np.ndarray | None = None, n_streams: int | None = None,
                          length: int | None = None) -> tuple[float, np.ndarray]:
    """Greedy future weight minimizing the simulated discounted cost; returns (gamma~, G per grid value)."""
    grid = gamma_tilde_grid(config) if grid is None else np.asarray(grid, dtype=float)
    if len(grid) == 1:
        return float(grid[0]), np.array([np.nan])
    if len(buffer) == 0:
        raise BufferEmptyError("calibration needs a populated observation buffer")
    s = config.attack
    n_streams = s.calib_streams if n_streams is None else n_streams
    length = s.calib_len if length is None else length
    bounds = (config.a_min, config.a_max)
    if config.arch.is_linear:
        def policy(theta, batch):
            mask = None if batch.poisoned_mask.all() else batch.poisoned_mask
            return greedy_action_linear(theta.w, teacher.w, target.w, batch.inputs, C_tilde, eta=config.eta,
                                        gamma_tilde=grid, sigma2=config.sigma2,
                                        weight_decay=config.weight_decay, bounds=bounds, mask=mask)
    else:
        a_grid = action_grid(config.a_min, config.a_max, s.grid_points)

        def policy(theta, batch):
            eval_x = buffer.sample(rng, s.n_mc)
            mask = None if batch.poisoned_mask.all() else batch.poisoned_mask
            return np.array([
                greedy_action_generic(config.arch, theta[k], target, batch, eval_x, C_tilde, g, config.eta,
                                      a_grid, config.weight_decay, mask)
                for k, g in enumerate(grid)
            ])
    costs = _simulated_costs(config, student, teacher, target, buffer, rng, policy, len(grid), C_tilde,
                             n_streams, length)
    return float(grid[grid_argmin(grid, costs)]), costs


# ---------------------------------------------------------------------------
# strategy objects used by the harness


@dataclass
class Attacker:
    """Per-stream attack policy with its frozen constants.

    ``act`` returns the per-sample effective actions (zero outside the poisoned
    subset), the recorded action and the perturbation cost.
    """

    config: TSAConfig
    teacher: ModelParams
    target: ModelParams
    C_tilde: float
    buffer: ObservationBuffer
    rng: np.random.Generator
    gamma_tilde: float = 0.0
    a_const: float = 0.0
    counter: ClampCounter = field(default_factory=ClampCounter)

    def __post_init__(self):
        if not self.gamma_tilde:
            self.gamma_tilde = self.config.gamma_tilde
        self._grid = action_grid(self.config.a_min, self.config.a_max, self.config.attack.grid_points)

    @property
    def bounds(self):
        return (self.config.a_min, self.config.a_max)

    def act(self, student: ModelParams, batch: LabeledBatch) -> tuple[np.ndarray, float, float]:
        cfg = self.config
        strategy = cfg.strategy
        mask = batch.poisoned_mask
        if strategy == "none":
            return np.zeros(batch.P), 0.0, 0.0
        if strategy == "constant":
            a = clamp_action(self.a_const, *self.bounds, self.counter)
            return a * mask, a, perturbation_cost(a, self.C_tilde)
        linear = cfg.arch.is_linear
        if strategy == "greedy-sample":
            if linear:
                a_vec = greedy_action_sample_specific(student.w, self.teacher.w, self.target.w, batch.inputs,
                                                      self.C_tilde, self.bounds, self.counter)
            else:
                a_vec = greedy_sample_specific_generic(cfg.arch, student, self.target, batch, self._eval_inputs(),
                                                       self.C_tilde, self.gamma_tilde, cfg.eta, self._grid,
                                                       cfg.weight_decay)
            a_vec = np.asarray(a_vec) * mask
            return a_vec, float(a_vec.mean()), perturbation_cost(a_vec, self.C_tilde)
        if strategy == "greedy-partial" and linear:
            a = greedy_action_partial(student.w, self.teacher.w, self.target.w, batch.inputs[mask],
                                      self.C_tilde, self.bounds, self.counter)
        elif strategy in ("greedy", "greedy-partial"):
            if linear:
                a = greedy_action_linear(student.w, self.teacher.w, self.target.w, batch.inputs,
                                         self.C_tilde, eta=cfg.eta, gamma_tilde=self.gamma_tilde,
                                         sigma2=cfg.sigma2, weight_decay=cfg.weight_decay,
                                         bounds=self.bounds, counter=self.counter,
                                         mask=None if mask.all() else mask)
            else:
                a = greedy_action_generic(cfg.arch, student, self.target, batch, self._eval_inputs(),
                                          self.C_tilde, self.gamma_tilde, cfg.eta, self._grid, cfg.weight_decay,
                                          None if mask.all() else mask)
        else:
            raise ValueError(f"strategy {strategy!r} is not a per-step policy")
        a = float(a)
        return a * mask, a, perturbation_cost(a, self.C_tilde)

    def _eval_inputs(self) -> np.ndarray:
        return self.buffer.sample(self.rng, self.config.attack.n_mc)
