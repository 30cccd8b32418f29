"""Convert the digit JSON files of the npm ``mnist`` package into IDX files.

The npm package (``npm pack mnist``) bundles the 10k MNIST test digits as
per-class JSON arrays of pixel intensities in [0, 1] (quantized at 1/255).
This writes them back out as standard gzip-compressed IDX image/label files,
shuffled with a fixed seed, so the regular IDX ingest path can consume them.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/npm_mnist_to_idx.py package/src/digits data/mnist
"""
import argparse
import gzip
import json
from pathlib import Path

import numpy as np

from tsalab.mnist import IdxTensor, serialize_idx


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        pix = np.rint(np.asarray(raw, dtype=float) * 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(pix)
        labels.append(np.full(len(pix), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, arr in (("images-idx3-ubyte.gz", images), ("labels-idx1-ubyte.gz", labels)):
        blob = serialize_idx(IdxTensor(dims=list(arr.shape), data=arr.reshape(-1)))
        with gzip.GzipFile(args.out_dir / name, "wb", mtime=0) as fh:
            fh.write(blob)
    print(f"wrote {len(labels)} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
