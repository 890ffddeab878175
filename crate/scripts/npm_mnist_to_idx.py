#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package into IDX files.

The npm package ships about 1000 gray-scale MNIST digits per class as one flat
JSON array of pixel intensities in [0,1] rounded to three decimals. Rounding `x * 255`
recovers the original 8-bit pixel values exactly.

Usage: npm_mnist_to_idx.py <package/src/digits> <out_dir> [train_per_class]
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(header + payload)


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    train_per_class = int(sys.argv[3]) if len(sys.argv) > 3 else 800
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(flat) // 784
        images = [
            bytes(max(0, min(255, round(v * 255))) for v in flat[k * 784:(k + 1) * 784])
            for k in range(count)
        ]
        train += [(img, digit) for img in images[:train_per_class]]
        test += [(img, digit) for img in images[train_per_class:]]
    rng = random.Random(20150101)
    for name, rows in (("train", train), ("t10k", test)):
        rng.shuffle(rows)
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, [len(rows), 28, 28],
                  b"".join(img for img, _ in rows))
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(rows)],
                  bytes(lbl for _, lbl in rows))
        print(name, len(rows))


if __name__ == "__main__":
    main()
