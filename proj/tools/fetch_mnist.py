#!/usr/bin/env python3
"""Populate the MNIST cache used by the benchmark CLI and the test suite.

Writes big-endian IDX files (train-images-idx3-ubyte / train-labels-idx1-ubyte)
into the target directory. Two sources are supported:

  --from-url        download the classic gzipped IDX files (needs network)
  --from-json-dir   convert a directory of per-digit JSON files ({"data": [...]}
                    holding flattened 28x28 images normalized to [0,1], e.g. the
                    files shipped in the npm "mnist" package)

The loader accepts either the canonical train/t10k file pairs or a single
train-* pair; samples are pooled and re-split per class by seeded shuffle, so
one pool is sufficient.
"""

import argparse
import gzip
import json
import os
import struct
import sys
import urllib.request

MIRRORS = [
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
]
FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def from_json_dir(json_dir, out_dir):
    images, labels = [], []
    for digit in range(10):
        src = os.path.join(json_dir, f"{digit}.json")
        with open(src) as f:
            flat = json.load(f)["data"]
        n = len(flat) // 784
        for i in range(n):
            px = flat[i * 784:(i + 1) * 784]
            images.append([min(255, max(0, round(v * 255))) for v in px])
            labels.append(digit)
        print(f"digit {digit}: {n} samples")
    os.makedirs(out_dir, exist_ok=True)
    write_idx_images(os.path.join(out_dir, "train-images-idx3-ubyte"), images)
    write_idx_labels(os.path.join(out_dir, "train-labels-idx1-ubyte"), labels)
    print(f"wrote {len(images)} samples to {out_dir}")


def from_url(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name in FILES:
        dest = os.path.join(out_dir, name[:-3])
        if os.path.exists(dest):
            print(f"{dest} already present")
            continue
        ok = False
        for mirror in MIRRORS:
            try:
                print(f"fetching {mirror}{name}")
                with urllib.request.urlopen(mirror + name, timeout=60) as r:
                    raw = gzip.decompress(r.read())
                with open(dest, "wb") as f:
                    f.write(raw)
                ok = True
                break
            except Exception as e:  # try next mirror
                print(f"  failed: {e}")
        if not ok:
            sys.exit(f"could not download {name} from any mirror")
    print(f"MNIST ready in {out_dir}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/mnist")
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--from-url", action="store_true")
    src.add_argument("--from-json-dir", metavar="DIR")
    args = ap.parse_args()
    if args.from_json_dir:
        from_json_dir(args.from_json_dir, args.out)
    else:
        from_url(args.out)


if __name__ == "__main__":
    main()
