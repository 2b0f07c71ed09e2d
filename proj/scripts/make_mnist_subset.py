#!/usr/bin/env python3
"""Builds the class-balanced MNIST subset used by the acceptance suite.

Two sources are supported:
  --from-idx DIR   standard MNIST IDX files (train-images-idx3-ubyte etc.)
  --from-npm DIR   the `mnist` npm package checkout (src/digits/<d>.json,
                   one flat array of 784-float images per digit; values are
                   pixels/255 rounded to three decimals, which inverts
                   exactly back to the original bytes)

Output: IDX pairs with 2000 balanced training images and 1000 balanced
held-out images under --out.
"""

import argparse
import json
import os
import struct


def write_idx(images, labels, img_path, lab_path):
    n = len(images)
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(lab_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))


def read_idx(img_path, lab_path):
    with open(img_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
        assert magic == 0x803, img_path
        images = [list(f.read(rows * cols)) for _ in range(n)]
    with open(lab_path, "rb") as f:
        magic, n2 = struct.unpack(">II", f.read(8))
        assert magic == 0x801 and n2 == n, lab_path
        labels = list(f.read(n))
    return images, labels


def from_npm(pkg_dir):
    per_digit = []
    for d in range(10):
        with open(os.path.join(pkg_dir, "src", "digits", f"{d}.json")) as f:
            flat = json.load(f)["data"]
        imgs = []
        for i in range(0, len(flat), 784):
            px = flat[i : i + 784]
            imgs.append([int(round(v * 255)) for v in px])
        per_digit.append(imgs)
    return per_digit


def from_idx(dir_):
    images, labels = read_idx(
        os.path.join(dir_, "train-images-idx3-ubyte"),
        os.path.join(dir_, "train-labels-idx1-ubyte"),
    )
    per_digit = [[] for _ in range(10)]
    for img, lab in zip(images, labels):
        per_digit[lab].append(img)
    return per_digit


def main():
    ap = argparse.ArgumentParser()
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--from-idx")
    src.add_argument("--from-npm")
    ap.add_argument("--out", required=True)
    ap.add_argument("--train-per-class", type=int, default=200)
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    per_digit = from_idx(args.from_idx) if args.from_idx else from_npm(args.from_npm)
    for d in range(10):
        need = args.train_per_class + args.test_per_class
        if len(per_digit[d]) < need:
            raise SystemExit(f"digit {d}: only {len(per_digit[d])} samples, need {need}")

    os.makedirs(args.out, exist_ok=True)
    train_imgs, train_labs, test_imgs, test_labs = [], [], [], []
    # deterministic round-robin interleave over classes
    for i in range(args.train_per_class):
        for d in range(10):
            train_imgs.append(per_digit[d][i])
            train_labs.append(d)
    for i in range(args.test_per_class):
        for d in range(10):
            test_imgs.append(per_digit[d][args.train_per_class + i])
            test_labs.append(d)

    write_idx(
        train_imgs,
        train_labs,
        os.path.join(args.out, "train-images-idx3-ubyte"),
        os.path.join(args.out, "train-labels-idx1-ubyte"),
    )
    write_idx(
        test_imgs,
        test_labs,
        os.path.join(args.out, "t10k-images-idx3-ubyte"),
        os.path.join(args.out, "t10k-labels-idx1-ubyte"),
    )
    print(f"wrote {len(train_imgs)} train / {len(test_imgs)} test images to {args.out}")


if __name__ == "__main__":
    main()
