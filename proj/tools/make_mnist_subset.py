#!/usr/bin/env python3
# Copyright 2026 The dsfl-sim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Fetches MNIST and writes the desk-scale subset under data/mnist-subset/.

The official IDX files are taken from the `mnist-data` npm package
(`npm pack mnist-data`). Output:

  train-{images-idx3,labels-idx1}-ubyte.gz   10,000 training images drawn
                                             without replacement (seed 2021)
  t10k-{images-idx3,labels-idx1}-ubyte.gz    the full 10,000-image test set

With --full DIR the uncompressed official files are also unpacked into DIR.
"""
import argparse
import gzip
import random
import shutil
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

SUBSET = 10000
SEED = 2021


def read_idx(path):
    data = Path(path).read_bytes()
    magic, count = struct.unpack(">II", data[:8])
    if magic == 0x803:
        rows, cols = struct.unpack(">II", data[8:16])
        size = rows * cols
        return [data[16 + i * size:16 + (i + 1) * size] for i in range(count)]
    assert magic == 0x801, hex(magic)
    return list(data[8:8 + count])


def write_idx(prefix, images, labels):
    with gzip.GzipFile(f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for px in images:
            f.write(px)
    with gzip.GzipFile(f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tgz", help="mnist-data npm tarball (fetched with npm pack if omitted)")
    ap.add_argument("--out", default="data/mnist-subset")
    ap.add_argument("--full", help="also unpack the full official IDX files here")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.tgz
        if tgz is None:
            name = subprocess.run(["npm", "pack", "mnist-data", "--silent"], cwd=tmp,
                                  check=True, capture_output=True, text=True).stdout.strip()
            tgz = str(Path(tmp) / name)
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        src = Path(tmp) / "package" / "data"

        train_x = read_idx(src / "train-images-idx3-ubyte")
        train_y = read_idx(src / "train-labels-idx1-ubyte")
        pick = sorted(random.Random(SEED).sample(range(len(train_x)), SUBSET))

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_idx(str(out / "train"), [train_x[i] for i in pick], [train_y[i] for i in pick])
        write_idx(str(out / "t10k"), read_idx(src / "t10k-images-idx3-ubyte"),
                  read_idx(src / "t10k-labels-idx1-ubyte"))

        if args.full:
            full = Path(args.full)
            full.mkdir(parents=True, exist_ok=True)
            for f in src.glob("*-ubyte"):
                shutil.copy(f, full / f.name)


if __name__ == "__main__":
    main()
