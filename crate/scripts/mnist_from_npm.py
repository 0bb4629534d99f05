#!/usr/bin/env python3
"""Build a 10k-sample MNIST subset in IDX format from the `mnist` npm package.

The npm package (MIT, Juan Cazala) ships 10,000 MNIST digits as JSON arrays of
pixel/255 values rounded to three decimals. This script restores the 8-bit
pixels, interleaves the classes with a fixed permutation and writes gzipped
IDX files:

    data/mnist/subset10k-images-idx3-ubyte.gz
    data/mnist/subset10k-labels-idx1-ubyte.gz

Usage: scripts/mnist_from_npm.py [path/to/unpacked/package]
(without an argument it runs `npm pack mnist@1.1.0` in a temp dir).
"""
import gzip
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile

SIDE = 28


def unpacked_package():
    if len(sys.argv) > 1:
        return sys.argv[1]
    tmp = tempfile.mkdtemp()
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True)
    with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
        tar.extractall(tmp)
    return os.path.join(tmp, "package")


def main():
    pkg = unpacked_package()
    samples = []
    for label in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{label}.json")) as f:
            raw = json.load(f)["data"]
        n = len(raw) // (SIDE * SIDE)
        for i in range(n):
            px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append((label, bytes(min(255, max(0, round(v * 255))) for v in px)))
    random.Random(20201).shuffle(samples)

    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data", "mnist")
    os.makedirs(out, exist_ok=True)
    with gzip.GzipFile(os.path.join(out, "subset10k-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, px in samples:
            f.write(px)
    with gzip.GzipFile(os.path.join(out, "subset10k-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))
    print(f"wrote {len(samples)} samples to {os.path.normpath(out)}")


if __name__ == "__main__":
    main()
