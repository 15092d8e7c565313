"""Encoder-based clustering evaluation and image-grid rendering.

Predicted categories are the argmax of the encoder's categorical logits.
Accuracy is measured after mapping each category to one label, by default
through the optimal one-to-one matching.
"""
from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._io import atomic_write_bytes
from .errors import DataAvailabilityError, ShapeError
from .networks import encoder_forward

MATCHING_MODES = ("optimal", "majority")


@dataclass
class Encoding:
    """Per-image encoder outputs, in dataset order."""

    categories: np.ndarray  # (N, blocks) int
    cont_mean: np.ndarray  # (N, cont_dim)
    z_hat: np.ndarray  # (N, z_dim)

    def __len__(self):
        return len(self.categories)


def encode_dataset(encoder_params, images, arch, batch_size=256):
    """Run the encoder over normalised images in fixed-size chunks."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != arch.image_shape:
        raise ShapeError(
            f"image geometry {images.shape[1:]} does not match architecture {arch.image_shape}",
            images.shape[1:], arch.image_shape)
    cats, conts, zs = [], [], []
    for start in range(0, len(images), batch_size):
        post = encoder_forward(encoder_params, images[start:start + batch_size], arch)
        cats.append(np.stack([l.data.argmax(axis=1) for l in post.cat_logits], axis=1)
                    if post.cat_logits else np.zeros((len(post), 0), dtype=int))
        conts.append(post.cont_mean.data)
        zs.append(post.z_hat.data)
    spec = arch.latent
    if not cats:
        return Encoding(np.zeros((0, len(spec.categorical)), dtype=np.int64),
                        np.zeros((0, spec.cont_dim)), np.zeros((0, spec.z_dim)))
    return Encoding(np.concatenate(cats).astype(np.int64), np.concatenate(conts), np.concatenate(zs))


# clustering accuracy -------------------------------------------------------

def confusion_matrix(pred, labels, k, l):
    """Counts with rows = predicted category, columns = true label."""
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape or pred.ndim != 1:
        raise ShapeError(f"pred {pred.shape} vs labels {labels.shape}", pred.shape, labels.shape)
    for name, arr, bound in (("prediction", pred, k), ("label", labels, l)):
        bad = (arr < 0) | (arr >= bound)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"{name} {int(arr[i])} at position {i} outside [0, {bound})")
    counts = np.zeros((k, l), dtype=np.int64)
    np.add.at(counts, (pred, labels), 1)
    return counts


def _optimum(counts):
    if counts.size == 0:
        return 0
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return int(counts[rows, cols].sum())


def match_categories(counts, mode="optimal"):
    """Map each category (row) to a label (column).

    ``optimal`` maximises matched counts over one-to-one assignments and,
    among optimal ones, returns the lexicographically smallest. ``majority``
    maps every category to its most frequent label and need not be injective.
    """
    counts = np.asarray(counts, dtype=np.int64)
    k, l = counts.shape
    if mode == "majority":
        return [int(np.argmax(row)) for row in counts]
    if mode != "optimal":
        raise ValueError(f"unknown matching mode {mode!r}")
    if k != l:
        raise ShapeError(f"optimal matching needs a square matrix, got {counts.shape}", counts.shape)
    best = _optimum(counts)
    rows, cols = list(range(k)), list(range(l))
    assignment, banked = [], 0
    for i in range(k):
        rest_rows = [r for r in rows if r != i]
        for j in cols:
            rest_cols = [c for c in cols if c != j]
            value = banked + int(counts[i, j]) + _optimum(counts[np.ix_(rest_rows, rest_cols)])
            if value == best:
                assignment.append(j)
                banked += int(counts[i, j])
                cols = rest_cols
                break
        rows = rest_rows
    return assignment


def cluster_accuracy(counts, assignment):
    counts = np.asarray(counts)
    total = counts.sum()
    if total == 0:
        return 0.0
    return float(sum(counts[i, j] for i, j in enumerate(assignment)) / total)


def brute_force_matching(counts):
    """Exhaustive search over permutations; first maximiser in lexicographic order."""
    counts = np.asarray(counts)
    k = counts.shape[0]
    best, best_perm = -1, None
    for perm in itertools.permutations(range(k)):
        value = sum(counts[i, perm[i]] for i in range(k))
        if value > best:
            best, best_perm = value, list(perm)
    return best_perm


@dataclass
class EvalReport:
    accuracy: float
    assignment: list
    confusion: list
    category_counts: list
    num_images: int
    checkpoint: str = ""
    matching: str = "optimal"
    match_split: str = "heldout"
    extra: dict = field(default_factory=dict)

    def to_text(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def evaluate_categories(match_pred, match_labels, test_pred, test_labels, k, mode="optimal",
                        checkpoint="", match_split="heldout"):
    """Fit the category->label map on one split and score it on another."""
    n_labels = max(k, int(max(match_labels.max(initial=0), test_labels.max(initial=0))) + 1)
    fit = confusion_matrix(match_pred, match_labels, k, n_labels)
    if mode == "optimal" and k != n_labels:
        raise ShapeError(f"optimal matching needs K == number of labels ({k} vs {n_labels})",
                         (k,), (n_labels,))
    assignment = match_categories(fit, mode)
    test = confusion_matrix(test_pred, test_labels, k, n_labels)
    return EvalReport(
        accuracy=cluster_accuracy(test, assignment),
        assignment=[int(a) for a in assignment],
        confusion=test.tolist(),
        category_counts=test.sum(axis=1).tolist(),
        num_images=int(test.sum()),
        checkpoint=checkpoint,
        matching=mode,
        match_split=match_split,
    )


# image selection -------------------------------------------------------------

def select_by_category(encoding, images, block, category, n, rng):
    """``n`` images whose predicted category in ``block`` equals ``category``."""
    matches = np.flatnonzero(encoding.categories[:, block] == category)
    if len(matches) == 0:
        raise DataAvailabilityError(f"no images assigned to category {category} of block {block}")
    if n > len(matches):
        raise DataAvailabilityError(
            f"requested {n} images of category {category} (block {block}) but only "
            f"{len(matches)} are available")
    chosen = np.sort(rng.choice(matches, size=n, replace=False))
    return images[chosen], chosen


def extremes_by_continuous(encoding, images, cont_index, m, block=0, num_categories=None):
    """Per category, the ``m`` images with the lowest and highest continuous code.

    Returns ``(rows, warnings)`` where ``rows[c] = (low_idx, high_idx)``. Ties
    prefer lower image indices on both ends. Categories with fewer than ``m``
    members yield short rows and a warning entry.
    """
    values = encoding.cont_mean[:, cont_index]
    cats = encoding.categories[:, block]
    k = num_categories if num_categories is not None else int(cats.max(initial=-1)) + 1
    rows, notes = {}, []
    for c in range(k):
        members = np.flatnonzero(cats == c)
        if len(members) < m:
            notes.append({"category": c, "available": int(len(members)), "requested": m})
        vals = values[members]
        low = members[np.lexsort((members, vals))][:m]
        high = members[np.lexsort((members, -vals))][:m]
        rows[c] = (low, high)
    return rows, notes


# raster output -------------------------------------------------------------------

def to_pixels(values):
    """[-1, 1] -> [0, 255] with round-half-up."""
    return np.clip(np.floor(127.5 * (np.asarray(values, dtype=np.float64) + 1.0) + 0.5),
                   0, 255).astype(np.uint8)


def image_grid(images, rows, cols, gutter=2):
    """Tile ``(N, C, H, W)`` images row-major into one ``(C, H', W')`` uint8 raster."""
    images = np.asarray(images, dtype=np.float64)
    n, c, h, w = images.shape
    if rows * cols < n:
        raise ValueError(f"{rows}x{cols} grid cannot hold {n} images")
    canvas = np.full((c, rows * h + (rows - 1) * gutter, cols * w + (cols - 1) * gutter),
                     255, dtype=np.uint8)
    pixels = to_pixels(images)
    for i in range(n):
        r, q = divmod(i, cols)
        y, x = r * (h + gutter), q * (w + gutter)
        canvas[:, y:y + h, x:x + w] = pixels[i]
    return canvas


def encode_pnm(raster):
    c, h, w = raster.shape
    if c == 1:
        return b"P5\n%d %d\n255\n" % (w, h) + raster[0].tobytes()
    if c == 3:
        return b"P6\n%d %d\n255\n" % (w, h) + raster.transpose(1, 2, 0).tobytes()
    raise ValueError(f"cannot write a {c}-channel raster")


def write_image_grid(images, rows, cols, path, gutter=2):
    """Write a PGM (grey) or PPM (RGB) grid; returns the raster."""
    raster = image_grid(images, rows, cols, gutter)
    atomic_write_bytes(path, encode_pnm(raster))
    return raster


def read_pnm(path):
    """Minimal reader for the binary PGM/PPM files written above."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, dims, maxval, body = data.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    if magic == b"P5":
        return np.frombuffer(body, dtype=np.uint8).reshape(1, h, w)
    if magic == b"P6":
        return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    raise ValueError(f"unsupported raster magic {magic!r}")


def blank_like(images, count):
    """White filler tiles for partial grid rows."""
    return np.ones((count,) + tuple(images.shape[1:]))


def warn_partial(notes):
    for note in notes:
        warnings.warn(
            f"category {note['category']}: only {note['available']} of {note['requested']} images",
            stacklevel=2)
