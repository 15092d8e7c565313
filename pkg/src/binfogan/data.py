"""Dataset loading: IDX containers, raw-tensor files, and a synthetic shapes set."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import container
from ._io import atomic_write_bytes
from .errors import FormatError

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in IDX_TYPES.items()}

MAX_IDX_BYTES = 1 << 40

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) uint8
    labels: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ValueError(f"{len(self.labels)} labels for {len(self.images)} images")
        if self.labels is not None and len(self.labels) and self.labels.min() < 0:
            raise ValueError(f"labels must be non-negative, found {int(self.labels.min())}")

    def __len__(self):
        return len(self.images)

    @property
    def geometry(self):
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def subset(self, index, tag=None):
        labels = None if self.labels is None else self.labels[index]
        prov = self.provenance if tag is None else f"{self.provenance}[{tag}]"
        return Dataset(self.images[index], labels, prov)

    def split(self, n_first):
        """Deterministic head/tail split."""
        return (self.subset(slice(0, n_first), f":{n_first}"),
                self.subset(slice(n_first, None), f"{n_first}:"))


# IDX ------------------------------------------------------------------------

def parse_idx(data):
    """Decode an IDX byte stream into an array with its native extents."""
    data = bytes(data)
    if len(data) < 4:
        raise FormatError(f"IDX header truncated: need 4 magic bytes, got {len(data)}", len(data))
    if data[0] != 0 or data[1] != 0:
        raise FormatError(f"bad IDX magic {data[:4].hex()}: first two bytes must be zero", 0)
    code, rank = data[2], data[3]
    if code not in IDX_TYPES:
        raise FormatError(f"unknown IDX element type 0x{code:02x}", 2)
    if rank == 0:
        raise FormatError("IDX rank must be at least 1", 3)
    header = 4 + 4 * rank
    if len(data) < header:
        raise FormatError(
            f"IDX header truncated: rank {rank} needs {header} bytes, got {len(data)}", len(data))
    extents = struct.unpack(f">{rank}I", data[4:header])
    dtype = IDX_TYPES[code]
    count = 1
    for e in extents:
        count *= e
    expected = count * dtype.itemsize
    if expected > MAX_IDX_BYTES:
        raise FormatError(f"IDX extents {extents} overflow: {expected} payload bytes", 4)
    actual = len(data) - header
    if expected > actual:
        raise FormatError(
            f"IDX payload truncated: expected {expected} bytes, got {actual}", len(data))
    if expected < actual:
        raise FormatError(
            f"IDX payload has {actual - expected} trailing bytes beyond the declared "
            f"{expected}", header + expected)
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=header)
    return arr.reshape(extents).astype(dtype.newbyteorder("="))


def serialize_idx(array):
    array = np.asarray(array)
    code = IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.astype(IDX_TYPES[code]).tobytes()


def read_idx(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    # some mirrors use dotted names (train-images.idx3-ubyte)
    dotted = stem.replace("-idx", ".idx")
    for name in (dotted, dotted + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_idx_pair(images_path, labels_path=None):
    images = read_idx(images_path)
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4:
        raise FormatError(f"image IDX must be rank 3 or 4, got rank {images.ndim}")
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path).astype(np.int64)
        if labels.ndim != 1 or len(labels) != len(images):
            raise FormatError(f"label file shape {labels.shape} does not match {len(images)} images")
    return Dataset(images.astype(np.uint8), labels, os.path.basename(images_path))


def load_mnist(directory, split="train"):
    img, lab = MNIST_FILES[split]
    return load_idx_pair(_find(directory, img), _find(directory, lab))


# raw tensors ------------------------------------------------------------------

def save_raw_dataset(dataset, path):
    """Write images (and labels) with the checkpoint container's tensor framing."""
    tensors = {"images": dataset.images.astype(np.float64)}
    if dataset.labels is not None:
        tensors["labels"] = dataset.labels.astype(np.float64)
    blob = container.encode(container.Container("tensors", text=dataset.provenance, tensors=tensors))
    atomic_write_bytes(path, blob)


def load_raw_dataset(path):
    with open(path, "rb") as fh:
        c = container.decode(fh.read(), kind="tensors")
    images = c.tensors["images"]
    if images.min() < 0 or images.max() > 255 or np.any(images != np.round(images)):
        raise FormatError("raw images must hold integers in [0, 255]")
    labels = c.tensors.get("labels")
    return Dataset(images.astype(np.uint8), None if labels is None else labels.astype(np.int64),
                   c.text or os.path.basename(path))


# preprocessing and batching ------------------------------------------------------

def normalize(images):
    """Map 8-bit pixels to [-1, 1]."""
    return np.asarray(images, dtype=np.float64) / 127.5 - 1.0


def synthetic_shapes(n, seed):
    """16x16 images with a bright 6x6 square in one of four quadrants.

    The label is the quadrant (0 top-left, 1 top-right, 2 bottom-left,
    3 bottom-right). Position jitters by one pixel, square brightness is
    drawn from [180, 255] and background noise from [0, 40].
    """
    if n < 4:
        raise ValueError(f"synthetic_shapes needs n >= 4, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 4)
    images = rng.integers(0, 41, size=(n, 1, 16, 16))
    jitter = rng.integers(-1, 2, size=(n, 2))
    bright = rng.integers(180, 256, size=n)
    for i in range(n):
        qy, qx = divmod(int(labels[i]), 2)
        y = qy * 8 + 1 + jitter[i, 0]
        x = qx * 8 + 1 + jitter[i, 1]
        images[i, 0, y:y + 6, x:x + 6] = bright[i]
    return Dataset(images.astype(np.uint8), labels.astype(np.int64), f"synthetic_shapes(n={n}, seed={seed})")


def epoch_order(n, seed, epoch):
    """Permutation of ``range(n)`` for one epoch; a pure function of (seed, epoch)."""
    return np.random.default_rng([0xDA7A, seed, epoch]).permutation(n)


def epoch_batches(n, batch_size, seed, epoch, drop_last=True):
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    order = epoch_order(n, seed, epoch)
    stop = n - n % batch_size if drop_last else n
    return [order[i:i + batch_size] for i in range(0, stop, batch_size)]


def batch_iterator(n, batch_size, seed, drop_last=True, epochs=None, start_epoch=0):
    """Yield index batches epoch after epoch (forever when ``epochs`` is None)."""
    epoch = start_epoch
    while epochs is None or epoch < start_epoch + epochs:
        yield from epoch_batches(n, batch_size, seed, epoch, drop_last)
        epoch += 1
