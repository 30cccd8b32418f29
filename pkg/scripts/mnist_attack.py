"""Greedy label-flip attacks on a PCA-10 sigmoidal student trained on MNIST 1-vs-7.

    python scripts/mnist_attack.py --images data/mnist/images-idx3-ubyte.gz \
        --labels data/mnist/labels-idx1-ubyte.gz --out results/mnist
"""
import argparse
from pathlib import Path

from tsalab import mnist
from tsalab.harness import DatasetFactory, ExperimentPlan, emit_plot_data, mnist_base_config, sweep

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--images", type=Path, default=ROOT / "data/mnist/images-idx3-ubyte.gz")
    ap.add_argument("--labels", type=Path, default=ROOT / "data/mnist/labels-idx1-ubyte.gz")
    ap.add_argument("--out", type=Path, default=Path("results/mnist"))
    ap.add_argument("--rotate", type=float, default=0.0, help="max random rotation in degrees")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    images, labels = mnist.load_mnist(args.images, args.labels)
    pipe = mnist.prepare(images, labels, D=10, seed=0)
    plan = ExperimentPlan(mnist_base_config(), {"P": [1, 10], "C": [0.25, 0.5, 1.0, 2.0, 4.0]}, out_dir=args.out)
    results = sweep(plan, workers=args.workers, factory=DatasetFactory(pipe, args.rotate))
    emit_plot_data(results, "accuracy-vs-C", args.out / "accuracy-vs-C.csv")
    emit_plot_data(results, "distance-vs-C", args.out / "distance-vs-C.csv")
    for r in results:
        if r.error:
            print(f"P={r.config.P} C={r.config.C:g} failed: {r.error}")
        else:
            print(f"P={r.config.P:<3d} C={r.config.C:<5g} d={r.stats.mean['d']:.3f} "
                  f"accuracy={r.stats.mean['accuracy']:.3f}")


if __name__ == "__main__":
    main()
