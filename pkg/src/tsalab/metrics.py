"""Per-step observables, traces, steady-state aggregation and CSV output.

CSV layout (RFC-4180, header row, '.' decimal, UTF-8, floats printed with 17
significant digits):

* trace files: ``TRACE_COLUMNS`` in that order, one row per SGD step;
* steady-state files: ``STATS_COLUMNS``, one row per observable with the
  across-stream mean/std and the window length K and stream count S.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Architecture
from .models import ModelParams, forward

TRACE_COLUMNS = ("mu", "phase", "action", "g_per", "g_nef", "g_run", "d", "accuracy", "o_st", "o_starget", "clamped")
OBSERVABLES = ("action", "g_per", "g_nef", "g_run", "d", "accuracy", "o_st", "o_starget")
STATS_COLUMNS = ("observable", "mean", "std", "K", "S")
PHASE_CLEAN, PHASE_ATTACK = 0, 1


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


@dataclass(frozen=True)
class StepRecord:
    mu: int
    phase: int
    action: float
    g_per: float
    g_nef: float
    d: float
    accuracy: float
    o_st: float
    o_starget: float
    clamped: int = 0

    @property
    def g_run(self) -> float:
        return self.g_per + self.g_nef

    def row(self) -> list:
        return [getattr(self, c) for c in TRACE_COLUMNS]


class Trace:
    """Append-only columnar record of one stream."""

    def __init__(self, capacity: int):
        self.n = 0
        self.cols = {c: np.zeros(capacity, dtype=int if c in ("mu", "phase", "clamped") else float)
                     for c in TRACE_COLUMNS}
        self.meta: dict = {}

    def append(self, mu, phase, action, g_per, g_nef, d, accuracy, o_st, o_starget, clamped=0):
        i = self.n
        c = self.cols
        c["mu"][i] = mu
        c["phase"][i] = phase
        c["action"][i] = action
        c["g_per"][i] = g_per
        c["g_nef"][i] = g_nef
        c["g_run"][i] = g_per + g_nef
        c["d"][i] = d
        c["accuracy"][i] = accuracy
        c["o_st"][i] = o_st
        c["o_starget"][i] = o_starget
        c["clamped"][i] = clamped
        self.n += 1

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.cols[name][: self.n]

    def record(self, i: int) -> StepRecord:
        return StepRecord(**{c: self.cols[c][i].item() for c in TRACE_COLUMNS if c != "g_run"})

    def attack(self) -> "Trace":
        """View restricted to the attack phase."""
        idx = np.flatnonzero(self["phase"] == PHASE_ATTACK)
        out = Trace(0)
        out.cols = {c: self.cols[c][idx] for c in TRACE_COLUMNS}
        out.n = len(idx)
        out.meta = self.meta
        return out


def relative_distance(arch: Architecture, student: ModelParams, teacher: ModelParams, target: ModelParams,
                      eval_inputs: np.ndarray | None = None) -> float:
    """sqrt(E(phi_s) / E(phi*)); exact for the linear model, Monte-Carlo otherwise."""
    if arch.is_linear and eval_inputs is None:
        num = student.w - teacher.w
        den = target.w - teacher.w
        den2 = float(den @ den)
        if den2 == 0:
            raise ValueError("relative distance undefined: target coincides with teacher")
        return float(np.sqrt((num @ num) / den2))
    if eval_inputs is None:
        raise ValueError("non-linear models need evaluation inputs")
    yt = forward(arch, teacher, eval_inputs)
    den2 = float(np.mean((forward(arch, target, eval_inputs) - yt) ** 2))
    if den2 == 0:
        raise ValueError("relative distance undefined: target coincides with teacher")
    return float(np.sqrt(np.mean((forward(arch, student, eval_inputs) - yt) ** 2) / den2))


def sign_pos(x: np.ndarray) -> np.ndarray:
    """sign with sign(0) = +1."""
    return np.where(x >= 0, 1.0, -1.0)


def accuracy(arch: Architecture, student: ModelParams, teacher: ModelParams, eval_inputs: np.ndarray,
             teacher_out: np.ndarray | None = None) -> float:
    """Fraction of inputs where student and teacher predict the same sign."""
    if len(eval_inputs) == 0:
        raise ValueError("empty evaluation set")
    st = sign_pos(teacher_out if teacher_out is not None else forward(arch, teacher, eval_inputs))
    return float(np.mean(sign_pos(forward(arch, student, eval_inputs)) == st))


def overlaps(student_w, teacher_w, target_w, D: int | None = None) -> tuple[float, float]:
    D = len(student_w) if D is None else D
    return float(student_w @ teacher_w / D), float(student_w @ target_w / D)


@dataclass
class SteadyStateStats:
    K: int
    S: int
    stream_means: dict[str, np.ndarray]
    stream_stds: dict[str, np.ndarray]
    mean: dict[str, float]
    std: dict[str, float]
    d_of_mean: float | None = None
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[list]:
        out = [[o, self.mean[o], self.std[o], self.K, self.S] for o in OBSERVABLES]
        if self.d_of_mean is not None:
            out.append(["d_of_mean", self.d_of_mean, 0.0, self.K, self.S])
        return out


def aggregate_steady_state(traces: list[Trace], K: int, d_of_mean: float | None = None) -> SteadyStateStats:
    """Time means over each trace's final K steps, then mean/std across streams.

    NaN entries (observables not evaluated at that step) are skipped.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    for t in traces:
        if len(t) < K:
            raise ValueError(f"trace of length {len(t)} is shorter than the window K={K}")
    means, stds = {}, {}
    for o in OBSERVABLES:
        tails = np.stack([t[o][-K:] for t in traces])
        if np.isnan(tails).any():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                means[o] = np.nanmean(tails, axis=1)
                stds[o] = np.nanstd(tails, axis=1)
        else:
            means[o] = tails.mean(axis=1)
            stds[o] = tails.std(axis=1)
    S = len(traces)
    return SteadyStateStats(
        K=K, S=S, stream_means=means, stream_stds=stds,
        mean={o: float(means[o].mean()) for o in OBSERVABLES},
        std={o: float(means[o].std(ddof=1)) if S > 1 else 0.0 for o in OBSERVABLES},
        d_of_mean=d_of_mean,
    )


def write_csv(path: str | Path | None, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(text.encode("utf-8"))
    return text


def write_trace_csv(trace: Trace, path: str | Path | None = None) -> str:
    cols = [trace[c] for c in TRACE_COLUMNS]
    return write_csv(path, TRACE_COLUMNS, zip(*cols))


def write_stats_csv(stats: SteadyStateStats, path: str | Path | None = None) -> str:
    return write_csv(path, STATS_COLUMNS, stats.rows())


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
