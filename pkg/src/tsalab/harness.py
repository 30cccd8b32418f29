"""Two-phase experiments (clean training, then attacks), sweeps and strategy comparisons."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mnist, theory
from .attacks import (Attacker, calibrate_gamma_tilde, constant_attack_calibrate, estimate_target_error,
                      perturbation_cost)
from .clairvoyant import Problem, Stream, optimize_sequence
from .core import TSAConfig, derive_rng, dump_config, set_dotted, validate
from .metrics import (PHASE_ATTACK, PHASE_CLEAN, SteadyStateStats, Trace, aggregate_steady_state, overlaps,
                      relative_distance, write_csv, write_stats_csv, write_trace_csv)
from .models import ModelParams, forward, pullback
from .stream import (LabeledBatch, ObservationBuffer, default_buffer_capacity, make_student,
                     make_teacher_and_target, poisoned_mask)

log = logging.getLogger(__name__)

OUTPUT_ENV = "TSALAB_OUTPUT_DIR"
CLEAN_EXIT_D = 0.01


class CleanPhaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseSchedule:
    clean_steps: int
    attack_steps: int

    @classmethod
    def from_config(cls, config: TSAConfig) -> "PhaseSchedule":
        return cls(config.clean_steps, config.stream_len)


class GaussianSource:
    """i.i.d. N(0, sigma2) inputs."""

    def __init__(self, D: int, sigma2: float = 1.0):
        self.D = D
        self.scale = math.sqrt(sigma2)

    def draw(self, rng: np.random.Generator, P: int) -> np.ndarray:
        X = rng.standard_normal((P, self.D))
        return X if self.scale == 1.0 else X * self.scale


class DatasetSource:
    """Inputs resampled from a fixed feature matrix.

    With ``images`` and ``projector`` set, each draw is a freshly rotated image
    (uniform angle in +-max_rotation degrees) pushed through the projection.
    """

    def __init__(self, features: np.ndarray, images: np.ndarray | None = None, projector=None,
                 max_rotation: float = 0.0):
        self.features = features
        self.D = features.shape[1]
        self.images = images
        self.projector = projector
        self.max_rotation = max_rotation
        if max_rotation and (images is None or projector is None):
            raise ValueError("rotation needs the raw images and the projector")

    def draw(self, rng: np.random.Generator, P: int) -> np.ndarray:
        idx = rng.integers(0, len(self.features), P)
        if not self.max_rotation:
            return self.features[idx]
        angles = rng.uniform(-self.max_rotation, self.max_rotation, P)
        imgs = np.stack([mnist.rotate(self.images[i], t) for i, t in zip(idx, angles)])
        return mnist.project(self.projector, imgs).reshape(P, -1)


@dataclass
class Experiment:
    """State shared by all streams of one configuration."""

    config: TSAConfig
    teacher: ModelParams
    target: ModelParams
    source: object
    eval_inputs: np.ndarray
    target_error: float
    isotropic: bool = True  # inputs i.i.d. N(0, sigma2 I): distances are exact for the linear model

    def __post_init__(self):
        self.teacher_eval_pos = forward(self.config.arch, self.teacher, self.eval_inputs) >= 0

    @property
    def C_tilde(self) -> float:
        return self.target_error * self.config.C


def setup_experiment(config: TSAConfig) -> Experiment:
    config = validate(config)
    teacher, target = make_teacher_and_target(derive_rng(config.seed, 0, "teacher"), config)
    source = GaussianSource(config.D, config.sigma2)
    eval_inputs = source.draw(derive_rng(config.seed, 0, "eval"), config.n_eval)
    E = estimate_target_error(config.arch, teacher, target, derive_rng(config.seed, 0, "target-error"),
                              n_mc=100_000, sigma2=config.sigma2)
    return Experiment(config, teacher, target, source, eval_inputs, E)


def setup_dataset_experiment(config: TSAConfig, pipeline: "mnist.Pipeline | mnist.ProjectedDataset",
                             max_rotation: float = 0.0) -> Experiment:
    """Experiment on projected real data: fitted teacher, label-flip target, held-out evaluation split."""
    config = validate(config)
    data = pipeline.dataset if isinstance(pipeline, mnist.Pipeline) else pipeline
    train_x, train_y = data.train
    if train_x.shape[1] != config.D:
        raise ValueError(f"dataset has {train_x.shape[1]} features, config.D={config.D}")
    teacher = mnist.fit_teacher(train_x, train_y, config.arch, rng=derive_rng(config.seed, 0, "teacher"))
    target = teacher.scale(-1.0)
    if max_rotation:
        train_idx = np.flatnonzero(~data.is_eval)
        source = DatasetSource(train_x, pipeline.task.images[train_idx], pipeline.projector, max_rotation)
    else:
        source = DatasetSource(train_x)
    diff = forward(config.arch, target, train_x) - forward(config.arch, teacher, train_x)
    eval_x = data.eval[0][: config.n_eval]
    return Experiment(config, teacher, target, source, eval_x, float(np.mean(diff ** 2)), isotropic=False)


@dataclass
class DatasetFactory:
    """Picklable ``config -> Experiment`` builder over one prepared dataset."""

    pipeline: object
    max_rotation: float = 0.0

    def __call__(self, config: TSAConfig) -> Experiment:
        return setup_dataset_experiment(config, self.pipeline, self.max_rotation)


def _distance(exp: Experiment, student: ModelParams) -> float:
    if exp.config.arch.is_linear and exp.isotropic:
        return relative_distance(exp.config.arch, student, exp.teacher, exp.target)
    return relative_distance(exp.config.arch, student, exp.teacher, exp.target, exp.eval_inputs)


def _overlaps(exp: Experiment, student: ModelParams) -> tuple[float, float]:
    if exp.config.arch.kind == "nn":
        return overlaps(student.v, exp.teacher.v, exp.target.v)
    return overlaps(student.w, exp.teacher.w, exp.target.w)


def _observe(exp: Experiment, student: ModelParams, with_accuracy: bool = True):
    d = _distance(exp, student)
    acc = np.nan
    if with_accuracy:
        out = forward(exp.config.arch, student, exp.eval_inputs)
        acc = float(np.count_nonzero((out >= 0) == exp.teacher_eval_pos)) / len(out)
    o_st, o_s_star = _overlaps(exp, student)
    return d, acc, o_st, o_s_star


def _sgd(exp: Experiment, student: ModelParams, X: np.ndarray, preds: np.ndarray, labels: np.ndarray) -> ModelParams:
    cfg = exp.config
    grad = pullback(cfg.arch, student, X, (preds - labels) / X.shape[0])
    if cfg.weight_decay:
        grad = grad + student.scale(cfg.weight_decay)
    return student + grad.scale(-cfg.eta)


class BatchFeed:
    """Labeled batches for one stream, drawn ``block`` steps at a time.

    Inputs come from the "inputs" generator and poisoned subsets from the "mask"
    generator, so every strategy sees the same sequence.
    """

    def __init__(self, exp: Experiment, cfg: TSAConfig, rng_in, rng_mask, block: int = 256):
        self.exp, self.cfg = exp, cfg
        self.rng_in, self.rng_mask = rng_in, rng_mask
        self.block = block
        self._i = block
        self._full = np.ones(cfg.P, dtype=bool)

    def _refill(self):
        cfg, exp = self.cfg, self.exp
        X = exp.source.draw(self.rng_in, self.block * cfg.P)
        self._X = X.reshape(self.block, cfg.P, -1)
        self._yc = forward(cfg.arch, exp.teacher, X).reshape(self.block, cfg.P)
        self._ys = forward(cfg.arch, exp.target, X).reshape(self.block, cfg.P)
        self._i = 0

    def next(self) -> LabeledBatch:
        if self._i == self.block:
            self._refill()
        i = self._i
        self._i += 1
        n = self.cfg.n_poisoned
        mask = self._full if n >= self.cfg.P else poisoned_mask(self.rng_mask, self.cfg.P, n)
        return LabeledBatch(self._X[i], self._yc[i], self._ys[i], mask)


@dataclass
class StreamResult:
    trace: Trace
    mean_params: ModelParams
    meta: dict = field(default_factory=dict)


def run_stream(exp: Experiment, stream_index: int, strategy: str | None = None,
               keep: str = "all") -> StreamResult:
    """Clean phase, attacker calibration, then the attack phase; returns the trace.

    Accuracy is evaluated every ``eval_every`` steps (NaN in between).
    ``keep="window"`` trims the returned trace to the final steady-state window.
    """
    cfg = exp.config
    if strategy is not None and strategy != cfg.strategy:
        cfg = validate(set_dotted(cfg, {"attack.strategy": strategy}))
    seed = cfg.seed
    arch = cfg.arch
    feed = BatchFeed(exp, cfg, derive_rng(seed, stream_index, "inputs"), derive_rng(seed, stream_index, "mask"))
    rng_att = derive_rng(seed, stream_index, "attacker")
    student = make_student(derive_rng(seed, stream_index, "student"), cfg)
    sched = PhaseSchedule.from_config(cfg)
    capacity = cfg.attack.buffer_capacity or default_buffer_capacity(cfg)
    buffer = ObservationBuffer(capacity, cfg.D)
    trace = Trace(sched.clean_steps + sched.attack_steps)
    every = cfg.eval_every

    for mu in range(sched.clean_steps):
        batch = feed.next()
        preds = forward(arch, student, batch.inputs)
        g_nef = float(np.sum((preds - batch.y_target) ** 2)) / (2 * cfg.P)
        trace.append(mu, PHASE_CLEAN, 0.0, 0.0, g_nef, *_observe(exp, student, mu % every == 0))
        student = _sgd(exp, student, batch.inputs, preds, batch.y_clean)
        buffer.push(batch.inputs)
    d = _distance(exp, student)
    if d >= CLEAN_EXIT_D and cfg.strategy != "none":
        raise CleanPhaseError(f"clean phase ended at d={d:.4g} ≥ {CLEAN_EXIT_D} after {sched.clean_steps} steps")

    attacker = Attacker(cfg, exp.teacher, exp.target, exp.C_tilde, buffer, rng_att)
    meta = {"stream_index": stream_index, "strategy": cfg.strategy, "d_clean_end": d,
            "C_tilde": exp.C_tilde, "gamma_tilde": cfg.gamma_tilde}
    if cfg.strategy == "constant":
        if cfg.attack.a_const is not None:
            attacker.a_const = cfg.attack.a_const
        else:
            attacker.a_const, _ = constant_attack_calibrate(cfg, student, exp.teacher, exp.target, buffer,
                                                            rng_att, exp.C_tilde)
        meta["a_const"] = attacker.a_const
    elif cfg.strategy == "greedy" and cfg.attack.calibrate:
        attacker.gamma_tilde, _ = calibrate_gamma_tilde(cfg, student, exp.teacher, exp.target, buffer,
                                                        rng_att, exp.C_tilde)
        meta["gamma_tilde"] = attacker.gamma_tilde

    hasher = hashlib.sha256()
    window_sum = None
    win_start = sched.clean_steps + max(0, sched.attack_steps - cfg.window)
    mu0 = sched.clean_steps

    clairvoyant = cfg.strategy == "clairvoyant"
    if clairvoyant:
        batches = [feed.next() for _ in range(sched.attack_steps)]
        actions = _clairvoyant_actions(exp, cfg, student, batches, attacker, meta)

    for k in range(sched.attack_steps):
        mu = mu0 + k
        clamped_before = attacker.counter.clamped
        if clairvoyant:
            batch = batches[k]
            a = float(actions[k])
            a_vec, g_per = a * batch.poisoned_mask, perturbation_cost(a, exp.C_tilde)
        else:
            batch = feed.next()
            a_vec, a, g_per = attacker.act(student, batch)
        hasher.update(batch.inputs.tobytes())
        preds = forward(arch, student, batch.inputs)
        g_nef = float(np.sum((preds - batch.y_target) ** 2)) / (2 * cfg.P)
        trace.append(mu, PHASE_ATTACK, a, g_per, g_nef, *_observe(exp, student, mu % every == 0),
                     attacker.counter.clamped - clamped_before)
        if mu >= win_start:
            window_sum = student.copy() if window_sum is None else window_sum + student
        labels = batch.y_clean + a_vec * (batch.y_target - batch.y_clean)
        student = _sgd(exp, student, batch.inputs, preds, labels)
        buffer.push(batch.inputs)

    meta["stream_hash"] = hasher.hexdigest()
    meta["final_params"] = student
    mean_params = window_sum.scale(1.0 / min(cfg.window, sched.attack_steps)) if window_sum is not None else student
    trace.meta = meta
    if keep == "window":
        trace = _tail(trace, cfg.window)
    return StreamResult(trace, mean_params, meta)


def _tail(trace: Trace, K: int) -> Trace:
    out = Trace(0)
    out.cols = {c: v[max(0, trace.n - K): trace.n].copy() for c, v in trace.cols.items()}
    out.n = min(K, trace.n)
    out.meta = trace.meta
    return out


def _clairvoyant_actions(exp, cfg, student, batches, attacker, meta):
    """Optimize the whole attack-phase action sequence, initialized from greedy."""
    stream = Stream.from_batches(batches)
    greedy = replace(attacker, config=validate(set_dotted(cfg, {"attack.strategy": "greedy"})))
    init = np.empty(len(batches))
    s = student
    for k, batch in enumerate(batches):
        a_vec, init[k], _ = greedy.act(s, batch)
        preds = forward(cfg.arch, s, batch.inputs)
        s = _sgd(exp, s, batch.inputs, preds, batch.y_clean + a_vec * (batch.y_target - batch.y_clean))
    problem = Problem(cfg.arch, cfg.eta, cfg.gamma, exp.C_tilde, cfg.weight_decay)
    traj = optimize_sequence(problem, student.w, stream, init, (cfg.a_min, cfg.a_max),
                             cfg.attack.cv_max_iters, cfg.attack.cv_tol)
    meta.update(cv_converged=traj.converged, cv_iterations=traj.info["iterations"],
                cv_total_cost=traj.total_cost, cv_stationarity=traj.info["stationarity"],
                greedy_actions=init)
    if not traj.converged:
        log.warning("clairvoyant optimizer did not converge (stationarity %.3g)", traj.info["stationarity"])
    return traj.actions


# ---------------------------------------------------------------------------
# multi-stream points


@dataclass
class PointResult:
    config: TSAConfig
    stats: SteadyStateStats | None
    streams: list[StreamResult]
    error: str | None = None


def d_of_mean_student(exp: Experiment, streams: list[StreamResult]) -> float:
    mean = streams[0].mean_params
    for r in streams[1:]:
        mean = mean + r.mean_params
    return _distance(exp, mean.scale(1.0 / len(streams)))


def summarize(exp: Experiment, streams: list[StreamResult]) -> SteadyStateStats:
    stats = aggregate_steady_state([r.trace for r in streams], exp.config.window,
                                   d_of_mean=d_of_mean_student(exp, streams))
    stats.extra["stream_hashes"] = [r.meta["stream_hash"] for r in streams]
    return stats


def _stream_task(args):
    config, stream_index, keep, exp = args
    exp = exp if exp is not None else setup_experiment(config)
    return run_stream(exp, stream_index, keep=keep)


def run_point(config: TSAConfig, n_streams: int | None = None, workers: int = 1, keep: str = "window",
              exp: Experiment | None = None) -> PointResult:
    exp = exp or setup_experiment(config)
    config = exp.config
    n = n_streams or config.n_streams
    tasks = [(config, i, keep, exp) for i in range(n)]
    streams = _map(_stream_task, tasks, workers)
    return PointResult(config, summarize(exp, streams), streams)


def _map(fn, tasks, workers: int):
    """Ordered map; results come back in task order whatever the worker count."""
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class ExperimentPlan:
    base: TSAConfig
    axes: dict[str, list]
    n_streams: int | None = None
    out_dir: str | Path | None = None
    max_points: int = 10_000

    def points(self) -> list[dict]:
        keys = list(self.axes)
        combos = list(itertools.product(*(self.axes[k] for k in keys)))
        if len(combos) > self.max_points:
            raise ValueError(f"sweep has {len(combos)} points, above the cap of {self.max_points}")
        return [dict(zip(keys, c)) for c in combos]


def point_seed(base_seed: int, point: dict) -> int:
    """Unique per-point seed; the strategy is excluded so strategies stay paired."""
    key = json.dumps({k: v for k, v in sorted(point.items()) if k != "attack.strategy"}, sort_keys=True)
    digest = hashlib.sha256(f"{base_seed}|{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _error_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def _point_task(args):
    config, stream_index, factory, exp = args
    try:
        exp = exp if exp is not None else factory(config)
        return run_stream(exp, stream_index, keep="window")
    except Exception as exc:  # recorded per point, sweep continues
        log.debug("point failed:\n%s", traceback.format_exc())
        return _error_text(exc)


SWEEP_STAT_COLUMNS = ("d_mean", "d_std", "d_of_mean", "action_mean", "action_std", "accuracy_mean",
                      "accuracy_std", "g_run_mean", "g_run_std", "d_theory", "a_theory")


def sweep(plan: ExperimentPlan, workers: int = 1, factory=setup_experiment) -> list[PointResult]:
    """Run every sweep point over its streams; (point x stream) tasks share one pool.

    ``factory(config) -> Experiment`` builds the shared per-point state; it must be
    picklable when ``workers > 1``.  Results do not depend on the worker count.
    """
    points = plan.points()
    configs = []
    for p in points:
        cfg = set_dotted(plan.base, p)
        configs.append(replace(cfg, seed=point_seed(plan.base.seed, p)))
    n = plan.n_streams or plan.base.n_streams
    exps: list[Experiment | str | None] = []
    for cfg in configs:
        try:
            exps.append(factory(cfg))
        except Exception as exc:
            exps.append(_error_text(exc))
    tasks = [(e.config, i, factory, e if workers <= 1 else None)
             for e in exps if isinstance(e, Experiment) for i in range(n)]
    outputs = iter(_map(_point_task, tasks, workers))
    results = []
    for cfg, exp in zip(configs, exps):
        if isinstance(exp, str):
            results.append(PointResult(cfg, None, [], error=exp))
            continue
        chunk = [next(outputs) for _ in range(n)]
        errors = [o for o in chunk if isinstance(o, str)]
        if errors:
            results.append(PointResult(exp.config, None, [], error=errors[0]))
        else:
            results.append(PointResult(exp.config, summarize(exp, chunk), chunk))
    if plan.out_dir is not None:
        write_sweep(plan, points, results)
    return results


def theory_for(cfg: TSAConfig) -> theory.SteadyStatePrediction:
    return theory.predict(cfg.C, cfg.P, cfg.rho, cfg.strategy if cfg.strategy == "greedy-sample" else "greedy")


def sweep_rows(points: list[dict], results: list[PointResult]) -> tuple[list[str], list[list]]:
    keys = list(points[0]) if points else []
    header = keys + ["seed"] + list(SWEEP_STAT_COLUMNS) + ["error"]
    rows = []
    for p, r in zip(points, results):
        row = [p[k] for k in keys] + [r.config.seed]
        if r.stats is None:
            row += [None] * len(SWEEP_STAT_COLUMNS) + [r.error]
        else:
            m, s = r.stats.mean, r.stats.std
            th = theory_for(r.config)
            row += [m["d"], s["d"], r.stats.d_of_mean, m["action"], s["action"], m["accuracy"], s["accuracy"],
                    m["g_run"], s["g_run"], th.d_bar, th.a_bar, None]
        rows.append(row)
    return header, rows


def write_sweep(plan: ExperimentPlan, points: list[dict], results: list[PointResult]) -> Path:
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header, rows = sweep_rows(points, results)
    write_csv(out / "sweep.csv", header, rows)
    manifest = {"base_config": dump_config(plan.base), "axes": plan.axes, "points": []}
    for i, (p, r) in enumerate(zip(points, results)):
        name = f"point_{i:04d}.csv"
        entry = {"index": i, "point": p, "seed": r.config.seed, "file": name, "error": r.error}
        if r.stats is not None:
            write_stats_csv(r.stats, out / name)
        else:
            entry["file"] = None
        manifest["points"].append(entry)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return out


# ---------------------------------------------------------------------------
# strategy comparison


@dataclass
class ComparisonReport:
    strategies: list[str]
    g_mean: dict[str, float]
    g_std: dict[str, float]
    ratio: dict[str, float]
    stream_hashes: dict[str, list[str]]
    scatter: np.ndarray | None = None
    correlation: float | None = None
    points: dict[str, PointResult] = field(default_factory=dict)
    window: tuple[int, int] | None = None
    per_stream: dict[str, np.ndarray] = field(default_factory=dict)

    def rows(self) -> list[list]:
        return [[s, self.g_mean[s], self.g_std[s], self.ratio[s]] for s in self.strategies]


def cost_window(stream_len: int) -> tuple[int, int]:
    """Default attack-step window for paired costs: the middle half of the stream.

    Skips the initial transient and the final stretch where a finite-horizon
    optimizer stops paying for a future it will not see.
    """
    q = stream_len // 4
    return q, stream_len - q


def compare_strategies(config: TSAConfig, strategies: list[str], n_streams: int | None = None,
                       workers: int = 1, window: tuple[int, int] | None = None) -> ComparisonReport:
    """Run each strategy on identical streams and compare mean running costs.

    Costs are averaged over attack steps ``window`` (default ``cost_window``).
    Ratios are relative to the constant strategy when present, else the costliest one.
    ``scatter`` pairs greedy and clairvoyant actions over the same window.
    """
    config = validate(config)
    if "clairvoyant" in strategies and config.arch.kind == "nn":
        raise ValueError("clairvoyant strategy is unsupported for the two-layer network")
    t0, t1 = cost_window(config.stream_len) if window is None else window
    points, per_stream = {}, {}
    for s in strategies:
        cfg = validate(set_dotted(config, {"attack.strategy": s}))
        exp = setup_experiment(cfg)
        streams = _map(_stream_task, [(cfg, i, "all", exp) for i in range(n_streams or cfg.n_streams)], workers)
        points[s] = PointResult(cfg, None, streams)
        per_stream[s] = np.array([r.trace.attack()["g_run"][t0:t1].mean() for r in streams])
    g_mean = {s: float(v.mean()) for s, v in per_stream.items()}
    g_std = {s: float(v.std(ddof=1)) if len(v) > 1 else 0.0 for s, v in per_stream.items()}
    ref = g_mean["constant"] if "constant" in g_mean else max(g_mean.values())
    hashes = {s: [r.meta["stream_hash"] for r in points[s].streams] for s in strategies}
    report = ComparisonReport(list(strategies), g_mean, g_std, {s: g_mean[s] / ref for s in strategies},
                              hashes, points=points, window=(t0, t1), per_stream=per_stream)
    if "greedy" in points and "clairvoyant" in points:
        rows = []
        for rg, rc in zip(points["greedy"].streams, points["clairvoyant"].streams):
            tg, tc = rg.trace.attack(), rc.trace.attack()
            rows.append(np.column_stack([tg["mu"][t0:t1], tg["action"][t0:t1], tc["action"][t0:t1]]))
        report.scatter = np.concatenate(rows)
        report.correlation = float(np.corrcoef(report.scatter[:, 1], report.scatter[:, 2])[0, 1])
    return report


# ---------------------------------------------------------------------------
# plot data


PLOT_KINDS = ("distance-vs-C", "accuracy-vs-C", "action-vs-C", "distance-vs-rho", "action-scatter", "trace",
              "strategy-costs")


def emit_plot_data(results, kind: str, path: str | Path | None = None) -> str:
    """Tidy CSV for plotting; theory columns come from the closed-form predictions."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if kind == "trace":
        return write_trace_csv(results.trace if isinstance(results, StreamResult) else results, path)
    if kind == "action-scatter":
        sc = results.scatter if isinstance(results, ComparisonReport) else np.asarray(results)
        return write_csv(path, ("mu", "a_greedy", "a_clairvoyant"), [[int(r[0]), r[1], r[2]] for r in sc])
    if kind == "strategy-costs":
        return write_csv(path, ("strategy", "g_mean", "g_std", "ratio"), results.rows())
    ok = [r for r in results if r.stats is not None]
    if kind == "distance-vs-C":
        rows = [[r.config.C, r.config.P, r.stats.mean["d"], r.stats.std["d"], theory_for(r.config).d_bar]
                for r in ok]
        return write_csv(path, ("C", "P", "d_mean", "d_std", "d_theory"), rows)
    if kind == "accuracy-vs-C":
        def acc_th(C):
            v = theory.result2_accuracy(C)
            return None if v == theory.AT_TRANSITION else v
        rows = [[r.config.C, r.config.P, r.stats.mean["accuracy"], r.stats.std["accuracy"], acc_th(r.config.C)]
                for r in ok]
        return write_csv(path, ("C", "P", "accuracy_mean", "accuracy_std", "accuracy_theory"), rows)
    if kind == "action-vs-C":
        rows = [[r.config.C, r.config.P, r.stats.mean["action"], r.stats.std["action"], theory_for(r.config).a_bar]
                for r in ok]
        return write_csv(path, ("C", "P", "a_mean", "a_std", "a_theory"), rows)
    rows = [[r.config.rho, r.config.C, r.config.P, r.stats.mean["d"], r.stats.std["d"],
             theory.result5_mixing_ss(r.config.C, r.config.P, r.config.rho)] for r in ok]
    return write_csv(path, ("rho", "C", "P", "d_mean", "d_std", "d_theory"), rows)


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))


def mnist_base_config() -> TSAConfig:
    """Defaults for the MNIST 1-vs-7 experiment: erf head on 10 PCA features, a in [0, 1]."""
    return set_dotted(TSAConfig(), {
        "eta": 0.2, "a_min": 0.0, "a_max": 1.0, "stream_len": 4000, "clean_steps": 5000, "n_streams": 5,
        "eval_every": 10, "arch.kind": "erf", "attack.grid_points": 101, "attack.calibrate": True,
        "attack.calib_streams": 2, "attack.calib_len": 1000,
    })
