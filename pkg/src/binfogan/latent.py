"""Structured latent space Z = (z, c_cat, c_cont) and the mutual-information bound.

The generator consumes ``[z | one-hot blocks | cont]``. The encoder predicts
``z_hat`` (tanh), one logit vector per categorical block, and a mean for
every continuous code. Continuous posteriors are unit-variance Gaussians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LatentSpec:
    z_dim: int = 64
    categorical: tuple = ((10, 0.1),)  # (K, p) per block
    cont_dim: int = 2

    def __post_init__(self):
        blocks = tuple((int(k), float(p)) for k, p in self.categorical)
        object.__setattr__(self, "categorical", blocks)
        if self.z_dim < 0 or self.cont_dim < 0:
            raise ValueError("z_dim and cont_dim must be non-negative")
        for k, p in blocks:
            if k < 1:
                raise ValueError(f"categorical block needs K >= 1, got {k}")
            if not math.isclose(k * p, 1.0, rel_tol=1e-9):
                raise ValueError(f"categorical prior must be uniform: K={k}, p={p}")
        if not blocks and self.cont_dim == 0:
            raise ValueError("latent spec needs at least one code dimension")

    @classmethod
    def uniform(cls, z_dim, categories=(10,), cont_dim=2):
        return cls(z_dim, tuple((k, 1.0 / k) for k in categories), cont_dim)

    @property
    def category_counts(self):
        return tuple(k for k, _ in self.categorical)

    @property
    def cat_dim(self):
        return sum(self.category_counts)

    @property
    def total_dim(self):
        return self.z_dim + self.cat_dim + self.cont_dim


@dataclass
class LatentBatch:
    """A batch of latent vectors; row ``i`` of each array is sample ``i``."""

    z: np.ndarray
    cat: list  # one (n, K) one-hot array per block
    cont: np.ndarray

    def __len__(self):
        return self.z.shape[0]

    def flat(self):
        return np.concatenate([self.z, *self.cat, self.cont], axis=1)

    def labels(self, block=0):
        return self.cat[block].argmax(axis=1)

    def take(self, index):
        return LatentBatch(self.z[index], [c[index] for c in self.cat], self.cont[index])


@dataclass
class EncoderPosterior:
    """Encoder outputs for a batch. Fields are tensors so gradients flow through."""

    z_hat: T.Tensor
    cat_logits: list
    cont_mean: T.Tensor

    def __len__(self):
        return self.z_hat.shape[0]

    def as_latent(self):
        """The encoder's point estimate of Z, in generator input layout.

        Categorical blocks enter as softmax probabilities.
        """
        parts = [self.z_hat, *(T.softmax(l) for l in self.cat_logits), self.cont_mean]
        return T.concat(parts, axis=1)


def sample_latent(spec, rng, n):
    """Draw ``n`` latent vectors from the fixed prior."""
    if n < 1:
        raise ValueError(f"batch size must be positive, got {n}")
    z = rng.uniform(-1.0, 1.0, size=(n, spec.z_dim))
    cat = []
    for k in spec.category_counts:
        idx = rng.integers(0, k, size=n)
        cat.append(np.eye(k)[idx])
    cont = rng.uniform(-1.0, 1.0, size=(n, spec.cont_dim))
    return LatentBatch(z, cat, cont)


def latent_from_categories(spec, z, categories, cont):
    """Build a batch with explicit category indices (one index array per block)."""
    cat = [np.eye(k)[np.asarray(c, dtype=int)] for k, c in zip(spec.category_counts, categories)]
    return LatentBatch(np.asarray(z, dtype=np.float64), cat, np.asarray(cont, dtype=np.float64))


def _check_one_hot(target):
    target = np.asarray(target, dtype=np.float64)
    ok = np.all((target == 0.0) | (target == 1.0)) and np.all(target.sum(axis=-1) == 1.0)
    if not ok:
        raise ValueError("categorical target is not one-hot")
    return target


def categorical_log_likelihood(logits, target):
    """``log softmax(logits)[argmax(target)]`` along the last axis."""
    logits = T.as_tensor(logits)
    target = _check_one_hot(target)
    if logits.shape != target.shape:
        raise ShapeError(f"logits {logits.shape} vs target {target.shape}", logits.shape, target.shape)
    return T.sum(T.log_softmax(logits) * target, axis=-1)


def gaussian_log_likelihood(mean, target):
    """Unit-variance factored Gaussian log density, summed over the last axis."""
    mean = T.as_tensor(mean)
    target = np.asarray(target, dtype=np.float64)
    if mean.shape != target.shape:
        raise ShapeError(f"mean {mean.shape} vs target {target.shape}", mean.shape, target.shape)
    d = mean.shape[-1] if mean.ndim else 1
    sq = T.sum(T.square(mean - target), axis=-1) if mean.ndim else T.square(mean - target)
    return sq * -0.5 - d * HALF_LOG_2PI


def mutual_info_bound(posterior, codes):
    """Batch estimate of the lower bound on I(c; G(z, c)) with the entropy term dropped."""
    if len(posterior) != len(codes):
        raise ShapeError(
            f"posterior batch {len(posterior)} vs code batch {len(codes)}",
            (len(posterior),), (len(codes),),
        )
    if len(posterior.cat_logits) != len(codes.cat):
        raise ShapeError(
            f"{len(posterior.cat_logits)} logit blocks vs {len(codes.cat)} code blocks",
            (len(posterior.cat_logits),), (len(codes.cat),),
        )
    n = len(codes)
    total = T.Tensor(np.zeros(n))
    for logits, target in zip(posterior.cat_logits, codes.cat):
        total = total + categorical_log_likelihood(logits, target)
    if codes.cont.shape[1] or posterior.cont_mean.shape[1]:
        total = total + gaussian_log_likelihood(posterior.cont_mean, codes.cont)
    return T.mean(total)
