"""Train conv+SAN and conv+max on images at mixed resolutions, test across sizes.

Builds a small synthetic IDX dataset (bright squares vs. plus signs at random
positions on 16x16 canvases), then runs the CLI trainer once per aggregator.
"""
import argparse
import pathlib
import sys

import numpy as np

from sanpool.cli import run
from sanpool.data import write_idx_images, write_idx_labels


def make_images(count, seed, size=16):
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % 2)
    images = np.zeros((count, size, size), dtype=np.uint8)
    for img, y in zip(images, labels):
        r, c = rng.integers(2, size - 7, size=2)
        if y == 0:
            img[r:r + 5, c:c + 5] = 255
        else:
            img[r + 2, c:c + 5] = 255
            img[r:r + 5, c + 2] = 255
    return images, labels


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/varied_resolution")
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--count", type=int, default=400)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    for split, seed, n in (("train", 0, args.count), ("test", 1, args.count // 2)):
        images, labels = make_images(n, seed)
        write_idx_images(data / f"{split}-images.idx", images)
        write_idx_labels(data / f"{split}-labels.idx", labels)

    conf = out / "base.conf"
    conf.write_text("\n".join([
        "seed = 0", "dataset = idx", "extractor = conv", "conv_channels = 8,16",
        f"train_images = {data / 'train-images.idx'}",
        f"train_labels = {data / 'train-labels.idx'}",
        f"test_images = {data / 'test-images.idx'}",
        f"test_labels = {data / 'test-labels.idx'}",
        "train_sizes = 12,16,20", "test_sizes = 10,12,16,20,24",
        "lr = 0.01", "batch_size = 32", f"epochs = {args.epochs}", "",
    ]))
    status = 0
    for agg in ("san", "max"):
        status |= run("train", str(conf), [f"aggregator={agg}", f"output_dir={out / agg}"])
        print(f"== {agg}")
        print((out / agg / "test_by_size.csv").read_text(), end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
