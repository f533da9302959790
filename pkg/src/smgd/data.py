"""Datasets: MNIST IDX files and synthetic Gaussian blobs."""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .rng import SHUFFLE, substream

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_ENV = "SMGD_MNIST_DIR"

_CANONICAL_COUNTS = {"train": 60000, "t10k": 10000}
_MNIST_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

PathLike = Union[str, os.PathLike]


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: str = ""
    num_classes: Optional[int] = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError(f"features must be a 2-d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"{X.shape[0]} feature rows but labels have shape {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        k = self.num_classes if self.num_classes is not None else (int(y.max()) + 1 if y.size else 0)
        if y.size and (y.min() < 0 or y.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", k)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.split, self.provenance, self.num_classes)


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path: PathLike, expected_magic: int) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at offset 0 ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims))
    if len(raw) - header_end < count:
        raise IdxFormatError(
            f"{path}: truncated payload at offset {len(raw)}, expected {count} bytes after offset {header_end}"
        )
    if len(raw) - header_end > count:
        raise IdxFormatError(f"{path}: {len(raw) - header_end - count} trailing bytes after offset {header_end + count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)


def load_idx(images_path: PathLike, labels_path: PathLike, split: Optional[str] = None) -> Dataset:
    """Parse an IDX image/label pair; pixels are scaled by 1/255."""
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images_path}: {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels (count at offset 4)"
        )
    name = Path(images_path).name
    for prefix, expected in _CANONICAL_COUNTS.items():
        if name.startswith(prefix + "-") and images.shape[0] != expected:
            raise IdxFormatError(f"{images_path}: canonical file holds {images.shape[0]} images, expected {expected}")
    if split is None:
        split = "test" if name.startswith("t10k") or "test" in name else "train"
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    digest = hashlib.sha256(images.tobytes() + labels.tobytes()).hexdigest()[:16]
    return Dataset(features, labels.astype(np.int64), split, f"idx:{name} sha256:{digest}",
                   num_classes=max(10, int(labels.max()) + 1) if labels.size else 10)


def write_idx(dataset: Dataset, images_path: PathLike, labels_path: PathLike, image_shape=None) -> None:
    """Write a byte-valued dataset (features ``k/255``) as an IDX pair; ``.gz`` paths are compressed."""
    codes = np.rint(dataset.features * 255.0)
    if np.any(codes < 0) or np.any(codes > 255) or not np.array_equal(codes / 255.0, dataset.features):
        raise ValueError("features are not byte-valued multiples of 1/255")
    n, d = dataset.features.shape
    if image_shape is None:
        side = int(round(d**0.5))
        image_shape = (side, side) if side * side == d else (1, d)
    if len(image_shape) != 2 or int(np.prod(image_shape)) != d:
        raise ValueError(f"image_shape {image_shape} does not hold {d} features")
    dims = (n, *image_shape)
    for path, magic, payload, shape in (
        (Path(images_path), IMAGES_MAGIC, codes.astype(np.uint8), dims),
        (Path(labels_path), LABELS_MAGIC, dataset.labels.astype(np.uint8), (n,)),
    ):
        header = struct.pack(">I", magic) + struct.pack(f">{len(shape)}I", *shape)
        data = header + payload.tobytes()
        if path.suffix == ".gz":
            # mtime=0 keeps the compressed bytes reproducible
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as fh:
                fh.write(data)
        else:
            path.write_bytes(data)


def _find(directory: Path, stem: str) -> Optional[Path]:
    for candidate in (directory / stem, directory / (stem + ".gz")):
        if candidate.exists():
            return candidate
    return None


def load_mnist(directory: Optional[PathLike] = None) -> tuple[Dataset, Dataset]:
    """Load ``(train, test)`` from a directory holding canonical or ``subset-`` prefixed IDX files.

    The directory defaults to ``$SMGD_MNIST_DIR``.
    """
    if directory is None:
        directory = os.environ.get(MNIST_ENV)
        if not directory:
            raise FileNotFoundError(f"no MNIST directory given and ${MNIST_ENV} is unset")
    directory = Path(directory)
    out = []
    for split, (img, lab) in _MNIST_NAMES.items():
        for prefix in ("", "subset-"):
            ip, lp = _find(directory, prefix + img), _find(directory, prefix + lab)
            if ip and lp:
                out.append(load_idx(ip, lp, split))
                break
        else:
            raise FileNotFoundError(f"{directory}: no IDX pair for the {split} split")
    return out[0], out[1]


def make_blobs(
    n_samples: int, dims: int, classes: int, separation: float, seed: int, split: str = "train"
) -> Dataset:
    """Unit-variance Gaussian clusters with centers at distance ``separation`` from the origin.

    Centers are evenly spaced on the circle in the first two coordinates
    (antipodal for two classes); with ``dims == 1`` they are evenly spaced on
    ``[-separation, separation]``.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if dims < 1 or n_samples < 1:
        raise ValueError("n_samples and dims must be positive")
    centers = np.zeros((classes, dims))
    if dims == 1:
        centers[:, 0] = np.linspace(-separation, separation, classes)
    else:
        angles = 2 * np.pi * np.arange(classes) / classes
        centers[:, 0] = separation * np.cos(angles)
        centers[:, 1] = separation * np.sin(angles)
    gen = substream(seed, 0xB10B5)
    labels = gen.permutation(np.arange(n_samples) % classes)
    features = centers[labels] + gen.standard_normal((n_samples, dims))
    prov = f"blobs:n={n_samples},d={dims},c={classes},sep={separation},seed={seed}"
    return Dataset(features, labels, split, prov, num_classes=classes)


_BLOB_KEYS = {"n": int, "d": int, "c": int, "sep": float, "seed": int}


def parse_blobs_spec(text: str) -> dict:
    """Parse ``blobs:n=...,d=...,c=...,sep=...,seed=...`` into keyword arguments."""
    if not text.startswith("blobs:"):
        raise ValueError(f"blobs spec must start with 'blobs:', got {text!r}")
    out = {}
    for item in filter(None, text[len("blobs:"):].split(",")):
        key, sep, val = item.partition("=")
        if not sep or key not in _BLOB_KEYS:
            raise ValueError(f"bad blobs field {item!r}; expected keys {sorted(_BLOB_KEYS)}")
        out[key] = _BLOB_KEYS[key](val)
    missing = set(_BLOB_KEYS) - set(out)
    if missing:
        raise ValueError(f"blobs spec missing {sorted(missing)}")
    return {"n_samples": out["n"], "dims": out["d"], "classes": out["c"],
            "separation": out["sep"], "seed": out["seed"]}


def blobs_from_spec(text: str, split: str = "train") -> Dataset:
    return make_blobs(**parse_blobs_spec(text), split=split)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Sample order for one epoch, derived from the run seed."""
    return substream(seed, epoch, SHUFFLE).permutation(n)
