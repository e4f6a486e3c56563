"""Build IDX files from the digits bundled in the `mnist` npm package.

Usage: python3 scripts/mnist_from_npm.py <package dir> <out dir>

The package stores about 10k MNIST digits as v/255 rounded to three
decimals; rounding back to bytes recovers the original pixels. Samples are
shuffled with a fixed seed and split 8000/2000 into train and t10k files
using the standard MNIST file names.
"""

import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28


def load(pkg):
    samples = []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        n = len(data) // (SIDE * SIDE)
        for i in range(n):
            px = data[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append((bytes(min(255, max(0, round(v * 255))) for v in px), digit))
    return samples


def write(out, prefix, samples):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), SIDE, SIDE))
        for px, _ in samples:
            f.write(px)
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    samples = load(pkg)
    random.Random(2017).shuffle(samples)
    split = len(samples) * 4 // 5
    write(out, "train", samples[:split])
    write(out, "t10k", samples[split:])
    print(f"{split} train, {len(samples) - split} test samples in {out}")


if __name__ == "__main__":
    main()
