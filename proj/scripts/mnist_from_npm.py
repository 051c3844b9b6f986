#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into IDX files.

The package ships 10000 MNIST digits as per-class JSON arrays of 784
floats in [0, 1]. This script rebuilds standard IDX containers from them,
split into a train file and a held-out test file, so the rest of the
toolchain can read them with the regular IDX loader.

usage: mnist_from_npm.py <package/src/digits dir> <out dir> [--test-per-class 100]
"""
import argparse
import json
import random
import struct
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20201)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        imgs = [flat[i:i + 784] for i in range(0, len(flat), 784)]
        rng.shuffle(imgs)
        test += [(img, digit) for img in imgs[:args.test_per_class]]
        train += [(img, digit) for img in imgs[args.test_per_class:]]
    rng.shuffle(train)
    rng.shuffle(test)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_images(args.out_dir / "train-images-idx3-ubyte", [i for i, _ in train])
    write_labels(args.out_dir / "train-labels-idx1-ubyte", [l for _, l in train])
    write_images(args.out_dir / "t10k-images-idx3-ubyte", [i for i, _ in test])
    write_labels(args.out_dir / "t10k-labels-idx1-ubyte", [l for _, l in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
