#!/usr/bin/env python3
"""Convert the digit JSON files shipped by the npm `mnist` package to IDX.

The package bundles 10,000 MNIST digits as per-class JSON arrays of
784-float images (pixel/255 rounded to 3 decimals). Rounding v*255 recovers
the original byte exactly. Samples are shuffled with a fixed seed and split
into a train and a test pair of gzipped IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_json_to_idx.py package/src/digits data/mnist
"""
import argparse
import gzip
import json
import os
import random
import struct


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        for k in range(len(flat) // 784):
            px = flat[k * 784:(k + 1) * 784]
            img = [int(round(v * 255)) for v in px]
            assert all(0 <= b <= 255 for b in img)
            samples.append((img, digit))

    random.Random(args.seed).shuffle(samples)
    test, train = samples[:args.test], samples[args.test:]
    os.makedirs(args.out_dir, exist_ok=True)
    for name, part in (("train", train), ("t10k", test)):
        write_images(os.path.join(args.out_dir, f"{name}-images-idx3-ubyte.gz"), [s[0] for s in part])
        write_labels(os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte.gz"), [s[1] for s in part])
        print(name, len(part))


if __name__ == "__main__":
    main()
