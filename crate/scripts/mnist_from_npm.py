#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist

Each class file holds ~1000 flattened 28x28 digits scaled to [0,1]. The last
TEST_PER_CLASS digits of every class go to the test split, the rest to train.
"""
import json
import struct
import sys
from pathlib import Path

TEST_PER_CLASS = 150
SIDE = 28


def write_idx(out_dir, split, images, labels):
    with open(out_dir / f"{split}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))
    with open(out_dir / f"{split}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    splits = {"train": ([], []), "test": ([], [])}
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // (SIDE * SIDE)
        for i in range(n):
            px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            img = [min(255, max(0, round(v * 255))) for v in px]
            split = "test" if i >= n - TEST_PER_CLASS else "train"
            splits[split][0].append(img)
            splits[split][1].append(digit)
    for split, (images, labels) in splits.items():
        write_idx(dst, split, images, labels)
        print(f"{split}: {len(images)} images")


if __name__ == "__main__":
    main()
