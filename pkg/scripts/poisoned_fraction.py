"""Distance against the poisoned fraction rho at C=1, P=100 (partial-batch greedy)."""
import argparse
from pathlib import Path

from tsalab.core import TSAConfig, set_dotted
from tsalab.harness import ExperimentPlan, emit_plot_data, sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("results/poisoned_fraction"))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--streams", type=int, default=10)
    args = ap.parse_args()

    base = set_dotted(TSAConfig(), {"C": 1.0, "P": 100, "eta": 0.1, "stream_len": 10_000, "window": 1000,
                                    "eval_every": 50, "attack.strategy": "greedy-partial"})
    rhos = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0]
    results = sweep(ExperimentPlan(base, {"rho": rhos}, args.streams, args.out), workers=args.workers)
    print(emit_plot_data(results, "distance-vs-rho", args.out / "distance-vs-rho.csv"), end="")


if __name__ == "__main__":
    main()
