"""Steady-state distance, action and accuracy against the cost of actions.

Linear teacher-student-attacker, greedy attacks, P in {1, 10, 100}; writes the
sweep plus distance-, action- and accuracy-vs-C tables next to the closed forms.

    python scripts/distance_vs_cost.py --out results/distance_vs_cost
"""
import argparse
from pathlib import Path

from tsalab.core import TSAConfig, set_dotted
from tsalab.harness import ExperimentPlan, emit_plot_data, sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("results/distance_vs_cost"))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--quick", action="store_true", help="short streams, few points")
    args = ap.parse_args()

    Cs = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0]
    length, streams = (3000, 3) if args.quick else (10_000, 10)
    base = set_dotted(TSAConfig(), {"eta": 0.2, "stream_len": length, "window": 2000, "n_streams": streams,
                                    "eval_every": 5})
    plan = ExperimentPlan(base, {"P": [1, 10, 100], "C": Cs[::2] if args.quick else Cs}, out_dir=args.out)
    results = sweep(plan, workers=args.workers)
    for kind in ("distance-vs-C", "action-vs-C", "accuracy-vs-C"):
        emit_plot_data(results, kind, args.out / f"{kind}.csv")
    for r in results:
        print(f"P={r.config.P:<4d} C={r.config.C:<5g} d={r.stats.mean['d']:.4f} "
              f"accuracy={r.stats.mean['accuracy']:.3f}")


if __name__ == "__main__":
    main()
