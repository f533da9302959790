"""Build data/mnist/ from the 10,000-digit MNIST sample shipped in the npm ``mnist`` package.

The canonical IDX files are not reachable from every build environment; the
npm package vendors 10,000 digits as JSON with pixels rounded to three
decimals, which round back to the original bytes exactly.  The digits are
shuffled with a fixed seed and split 8000/2000 into ``subset-`` prefixed IDX
files that ``smgd.data.load_mnist`` picks up.

    python tools/fetch_mnist.py [--package-dir DIR] [--out data/mnist]
"""

from __future__ import annotations

import argparse
import json
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from smgd.data import Dataset, write_idx
from smgd.rng import SHUFFLE, substream

NPM_SPEC = "mnist@1.1.0"
SPLIT_SEED = 20170000
N_TRAIN = 8000


def fetch_package(workdir: Path) -> Path:
    subprocess.run(["npm", "pack", NPM_SPEC, "--silent"], cwd=workdir, check=True, capture_output=True)
    tarball = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tarball) as tf:
        tf.extractall(workdir, filter="data")
    return workdir / "package"


def read_digits(package_dir: Path) -> tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for digit in range(10):
        doc = json.loads((package_dir / "src" / "digits" / f"{digit}.json").read_text())
        pixels = np.asarray(doc["data"], dtype=np.float64).reshape(-1, 784)
        codes = np.rint(pixels * 255.0)
        if np.max(np.abs(codes / 255.0 - pixels)) > 5e-4:
            raise ValueError(f"digit {digit}: pixels do not round to bytes")
        images.append(codes.astype(np.uint8))
        labels.append(np.full(len(codes), digit, dtype=np.int64))
    return np.concatenate(images), np.concatenate(labels)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--package-dir", type=Path, help="already-extracted npm package directory")
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "mnist")
    args = ap.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        package_dir = args.package_dir or fetch_package(Path(tmp))
        images, labels = read_digits(package_dir)

    perm = substream(SPLIT_SEED, SHUFFLE).permutation(len(labels))
    images, labels = images[perm], labels[perm]
    args.out.mkdir(parents=True, exist_ok=True)
    for split, sl in (("train", slice(0, N_TRAIN)), ("t10k", slice(N_TRAIN, None))):
        ds = Dataset(images[sl] / 255.0, labels[sl], "train" if split == "train" else "test", num_classes=10)
        write_idx(ds, args.out / f"subset-{split}-images-idx3-ubyte.gz",
                  args.out / f"subset-{split}-labels-idx1-ubyte.gz", image_shape=(28, 28))
        print(f"{split}: {len(ds)} digits, class counts {np.bincount(ds.labels, minlength=10).tolist()}")


if __name__ == "__main__":
    main()
