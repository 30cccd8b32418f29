"""Command-line entry point: ``tsalab <subcommand> [options]``.

Every TSAConfig field is settable three ways, later ones winning: a YAML file
(``--config``), ``--set key=value`` overrides, and per-field flags named after
the dotted path (``--C 0.5``, ``--attack.strategy constant``).  Outputs go to
``--out``, defaulting to $TSALAB_OUTPUT_DIR or ./results.

Files written per subcommand:

    run        config.yaml, stats.csv, trace_<stream>.csv
    sweep      sweep.csv, point_<index>.csv, manifest.json, <plot kind>.csv
    compare    strategy-costs.csv, action-scatter.csv (greedy and clairvoyant both present)
    predict    predict.csv (also printed)
    mnist-prep the projected-dataset cache
    mnist-run  as sweep, plus accuracy-vs-C.csv and distance-vs-C.csv
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import harness, mnist, theory
from .core import ConfigError, TSAConfig, dotted_paths, load_config, parse_override, save_config, set_dotted, validate
from .metrics import write_csv, write_stats_csv, write_trace_csv

log = logging.getLogger("tsalab")

MNIST_AXES = {"C": [0.25, 0.5, 1.0, 2.0, 4.0], "P": [1, 10]}


class CommandFailed(Exception):
    def __init__(self, summary: dict):
        super().__init__(summary.get("error", "failed"))
        self.summary = summary


def _yaml_value(text: str):
    return yaml.safe_load(text)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="YAML config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config key")
    for path in dotted_paths():
        g.add_argument(f"--{path}", dest=f"cfg:{path}", type=_yaml_value, default=None, metavar="V")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--strict", action="store_true", help="nonzero exit and JSON error summary on any failure")
    p.add_argument("-v", "--verbose", action="store_true")


def build_config(args, base: TSAConfig | None = None) -> TSAConfig:
    cfg = load_config(args.config) if args.config else (base or TSAConfig())
    updates = dict(parse_override(s) for s in args.set)
    for path in dotted_paths():
        v = getattr(args, f"cfg:{path}")
        if v is not None:
            updates[path] = v
    return set_dotted(cfg, updates) if updates else cfg


def parse_axes(items: list[str]) -> dict[str, list]:
    """``KEY=v1,v2,...`` items -> ordered axis dict."""
    axes = {}
    for item in items:
        key, _, raw = item.partition("=")
        if not raw:
            raise ConfigError(f"axis must look like key=v1,v2,..., got {item!r}")
        axes[key.strip()] = [yaml.safe_load(v) for v in raw.split(",")]
    return axes


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _out_dir(args) -> Path:
    out = args.out or harness.default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _failed_points(results) -> list[dict]:
    return [{"config_seed": r.config.seed, "C": r.config.C, "P": r.config.P, "rho": r.config.rho,
             "strategy": r.config.strategy, "error": r.error} for r in results if r.error]


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = validate(build_config(args))
    out = _out_dir(args)
    save_config(cfg, out / "config.yaml")
    pr = harness.run_point(cfg, args.streams, args.workers, keep="all")
    write_stats_csv(pr.stats, out / "stats.csv")
    for r in pr.streams:
        write_trace_csv(r.trace, out / f"trace_{r.meta['stream_index']:03d}.csv")
    m = pr.stats.mean
    print(f"d={m['d']:.4f} (d of mean student {pr.stats.d_of_mean:.4f}) action={m['action']:.4f} "
          f"accuracy={m['accuracy']:.4f} g_run={m['g_run']:.4f}")
    return 0


def _run_sweep(args, base: TSAConfig, axes: dict, factory) -> list:
    plan = harness.ExperimentPlan(base, axes, args.streams, _out_dir(args), args.max_points)
    results = harness.sweep(plan, args.workers, factory)
    for kind in args.plot or []:
        harness.emit_plot_data(results, kind, Path(plan.out_dir) / f"{kind}.csv")
    failed = _failed_points(results)
    if failed:
        log.warning("%d of %d points failed", len(failed), len(results))
        if args.strict:
            raise CommandFailed({"error": "sweep points failed", "failed": failed})
    return results


def cmd_sweep(args) -> int:
    base = build_config(args)
    axes = parse_axes(args.axis)
    if not axes:
        raise ConfigError("sweep needs at least one --axis")
    _run_sweep(args, base, axes, harness.setup_experiment)
    return 0


def cmd_compare(args) -> int:
    cfg = build_config(args)
    out = _out_dir(args)
    window = tuple(int(v) for v in args.cost_window.split(",")) if args.cost_window else None
    report = harness.compare_strategies(cfg, args.strategies.split(","), args.streams, args.workers, window)
    harness.emit_plot_data(report, "strategy-costs", out / "strategy-costs.csv")
    if report.scatter is not None:
        harness.emit_plot_data(report, "action-scatter", out / "action-scatter.csv")
    summary = {"g_mean": report.g_mean, "g_std": report.g_std, "ratio": report.ratio,
               "correlation": report.correlation, "window": report.window}
    print(json.dumps(summary, indent=2))
    return 0


def cmd_predict(args) -> int:
    rows = []
    for C in _floats(args.C):
        for P in _floats(args.P):
            for rho in _floats(args.rho):
                pred = theory.predict(C, int(P), rho, args.strategy)
                rows.append([C, int(P), rho, args.strategy, pred.d_bar, pred.a_bar, pred.accuracy, pred.regime])
    header = ("C", "P", "rho", "strategy", "d_bar", "a_bar", "accuracy", "regime")
    text = write_csv(None, header, rows)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "predict.csv").write_bytes(text.encode("utf-8"))
    sys.stdout.write(text)
    return 0


def _load_pipeline(args, D: int) -> mnist.Pipeline:
    images, labels = mnist.load_mnist(args.images, args.labels)
    return mnist.prepare(images, labels, D=D, seed=args.data_seed)


def cmd_mnist_prep(args) -> int:
    pipe = _load_pipeline(args, args.D)
    args.cache.parent.mkdir(parents=True, exist_ok=True)
    mnist.write_cache(args.cache, pipe.dataset)
    n_eval = int(pipe.dataset.is_eval.sum())
    print(f"wrote {len(pipe.dataset.targets)} samples ({n_eval} held out), D={args.D}, to {args.cache}")
    return 0


def cmd_mnist_run(args) -> int:
    base = build_config(args, harness.mnist_base_config())
    if args.cache:
        if args.rotate:
            raise ConfigError("--rotate needs --images/--labels, not a cache")
        source = mnist.read_cache(args.cache)
    elif args.images and args.labels:
        source = _load_pipeline(args, base.D)
    else:
        raise ConfigError("mnist-run needs --cache or both --images and --labels")
    axes = parse_axes(args.axis) if args.axis else dict(MNIST_AXES)
    args.plot = sorted(set(args.plot or []) | {"accuracy-vs-C", "distance-vs-C"})
    results = _run_sweep(args, base, axes, harness.DatasetFactory(source, args.rotate))
    for r in results:
        if r.stats is not None:
            print(f"C={r.config.C:g} P={r.config.P} d={r.stats.mean['d']:.4f} "
                  f"accuracy={r.stats.mean['accuracy']:.4f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsalab", description="online label-poisoning simulations")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one configuration over several streams")
    _add_config_flags(p)
    _add_common(p)
    p.add_argument("--streams", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over config keys")
    _add_config_flags(p)
    _add_common(p)
    p.add_argument("--axis", action="append", default=[], metavar="KEY=V1,V2,...")
    p.add_argument("--streams", type=int, default=None)
    p.add_argument("--max-points", type=int, default=10_000)
    p.add_argument("--plot", action="append", choices=harness.PLOT_KINDS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="paired strategy comparison")
    _add_config_flags(p)
    _add_common(p)
    p.add_argument("--strategies", default="constant,greedy,clairvoyant")
    p.add_argument("--streams", type=int, default=None)
    p.add_argument("--cost-window", default=None, metavar="START,STOP", help="attack-step window for costs")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("predict", help="closed-form steady-state curves")
    p.add_argument("--C", default="0.1,0.25,0.5,1,2,4,10")
    p.add_argument("--P", default="1")
    p.add_argument("--rho", default="1")
    p.add_argument("--strategy", default="greedy", choices=("greedy", "greedy-sample", "optimal"))
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--strict", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_predict)

    for name, func in (("mnist-prep", cmd_mnist_prep), ("mnist-run", cmd_mnist_run)):
        p = sub.add_parser(name, help="MNIST 1-vs-7 " + ("feature cache" if name == "mnist-prep" else "attack sweep"))
        p.add_argument("--images", type=Path)
        p.add_argument("--labels", type=Path)
        p.add_argument("--data-seed", type=int, default=0)
        if name == "mnist-prep":
            p.add_argument("--D", type=int, default=10, dest="D", help="number of PCA features")
            p.add_argument("--cache", type=Path, required=True)
            p.add_argument("--strict", action="store_true")
            p.add_argument("-v", "--verbose", action="store_true")
        else:
            p.add_argument("--cache", type=Path)
            p.add_argument("--rotate", type=float, default=0.0, metavar="DEG", help="max random rotation")
            _add_config_flags(p)
            _add_common(p)
            p.add_argument("--axis", action="append", default=[], metavar="KEY=V1,V2,...")
            p.add_argument("--streams", type=int, default=None)
            p.add_argument("--max-points", type=int, default=10_000)
            p.add_argument("--plot", action="append", choices=harness.PLOT_KINDS)
        p.set_defaults(func=func)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CommandFailed as exc:
        summary = exc.summary
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        summary = {"error": f"{type(exc).__name__}: {exc}"}
    if args.strict:
        sys.stderr.write(json.dumps(summary, sort_keys=True, default=str) + "\n")
    else:
        sys.stderr.write(f"tsalab: {summary['error']}\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())
