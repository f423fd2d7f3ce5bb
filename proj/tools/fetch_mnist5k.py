#!/usr/bin/env python3
"""Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

The subset (500 images per digit) ships inside the mlxtend wheel as
mlxtend/data/data/mnist_5k.csv.gz: one row per image, 784 pixel values
followed by the label. This script downloads the wheel with pip (no
install) and converts the CSV to the standard IDX layout read by
noisynet::load_mnist_idx.

    python3 tools/fetch_mnist5k.py data/mnist5k
"""

import argparse
import glob
import gzip
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_dir", type=pathlib.Path)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "mlxtend", "--no-deps",
             "--only-binary", ":all:", "-q", "-d", tmp],
            check=True,
        )
        wheel = glob.glob(f"{tmp}/mlxtend-*.whl")[0]
        with zipfile.ZipFile(wheel) as z:
            raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))

    rows = [line.split(",") for line in raw.decode().strip().split("\n")]
    images = bytearray()
    labels = bytearray()
    for row in rows:
        images.extend(int(float(v)) for v in row[:-1])
        labels.append(int(row[-1]))

    n = len(rows)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images)
    with open(args.out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels)
    print(f"wrote {n} images to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
