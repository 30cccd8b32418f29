"""Synthetic teacher/target construction, Gaussian batches and the attacker's buffer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TSAConfig
from .models import ModelParams, forward


class BufferEmptyError(ValueError):
    pass


@dataclass
class LabeledBatch:
    inputs: np.ndarray
    y_clean: np.ndarray
    y_target: np.ndarray
    poisoned_mask: np.ndarray
    y_perturbed: np.ndarray | None = None

    @property
    def P(self) -> int:
        return self.inputs.shape[0]


def _normalized(rng: np.random.Generator, shape, length: int) -> np.ndarray:
    """Gaussian rows rescaled so each row has squared norm ``length``."""
    w = rng.standard_normal(shape)
    return w * (math.sqrt(length) / np.linalg.norm(w, axis=-1, keepdims=True))


def make_teacher_and_target(rng: np.random.Generator, config: TSAConfig) -> tuple[ModelParams, ModelParams]:
    arch, D = config.arch, config.D
    if arch.kind == "nn":
        W = _normalized(rng, (arch.M, D), D)
        v = _normalized(rng, (arch.M,), arch.M)
        return ModelParams(W, v), ModelParams(W.copy(), -v)
    w = _normalized(rng, (D,), D)
    return ModelParams(w), ModelParams(-w)


def make_student(rng: np.random.Generator, config: TSAConfig) -> ModelParams:
    """Random initial student with the same normalization as the teacher."""
    student, _ = make_teacher_and_target(rng, config)
    return student


def poisoned_mask(mask_rng: np.random.Generator | None, P: int, n_poisoned: int) -> np.ndarray:
    mask = np.zeros(P, dtype=bool)
    if n_poisoned >= P:
        mask[:] = True
    else:
        mask[mask_rng.permutation(P)[:n_poisoned]] = True
    return mask


def next_batch(rng: np.random.Generator, config: TSAConfig, teacher: ModelParams, target: ModelParams,
               mask_rng: np.random.Generator | None = None) -> LabeledBatch:
    """Draw P i.i.d. N(0, sigma2) inputs and label them with teacher and target.

    The poisoned subset is drawn from ``mask_rng`` (defaults to ``rng``); keeping
    it on its own stream leaves the input sequence independent of rho.
    """
    X = rng.standard_normal((config.P, config.D))
    if config.sigma2 != 1.0:
        X *= math.sqrt(config.sigma2)
    return label_batch(config, X, teacher, target, mask_rng if mask_rng is not None else rng)


def label_batch(config: TSAConfig, X: np.ndarray, teacher: ModelParams, target: ModelParams,
                mask_rng: np.random.Generator | None) -> LabeledBatch:
    n = config.n_poisoned if config.n_poisoned is not None else round(config.rho * config.P)
    return LabeledBatch(
        inputs=X,
        y_clean=forward(config.arch, teacher, X),
        y_target=forward(config.arch, target, X),
        poisoned_mask=poisoned_mask(mask_rng, X.shape[0], n),
    )


class ObservationBuffer:
    """Fixed-capacity ring buffer of inputs already revealed to the attacker."""

    def __init__(self, capacity: int, D: int):
        if capacity < 1:
            raise ValueError("capacity must be ≥ 1")
        self.capacity = capacity
        self._data = np.empty((capacity, D))
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, X: np.ndarray) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(X) >= self.capacity:
            X = X[-self.capacity:]
        n = len(X)
        end = self._next + n
        if end <= self.capacity:
            self._data[self._next:end] = X
        else:
            k = self.capacity - self._next
            self._data[self._next:] = X[:k]
            self._data[: n - k] = X[k:]
        self._next = end % self.capacity
        self._size = min(self.capacity, self._size + n)

    @property
    def contents(self) -> np.ndarray:
        """Stored inputs, oldest first."""
        if self._size < self.capacity:
            return self._data[: self._size].copy()
        return np.roll(self._data, -self._next, axis=0)

    def mean(self) -> np.ndarray:
        if not self._size:
            raise BufferEmptyError("observation buffer is empty")
        return self._data[: self._size].mean(axis=0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if not self._size:
            raise BufferEmptyError("cannot sample from an empty observation buffer")
        return self._data[rng.integers(0, self._size, size=n)]


def buffer_push(buffer: ObservationBuffer, X: np.ndarray) -> None:
    buffer.push(X)


def buffer_sample(buffer: ObservationBuffer, rng: np.random.Generator, n: int) -> np.ndarray:
    return buffer.sample(rng, n)


def default_buffer_capacity(config: TSAConfig) -> int:
    return 10 * config.P * config.D
