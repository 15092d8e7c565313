"""Objective and alternating optimisation for the bidirectional InfoGAN game.

The discriminator scores (image, latent) pairs: encoder pairs (x, E(x)) are
the "positive" class, generator pairs (G(Z), Z) the "negative" class. The
generator and encoder are updated jointly against it, plus a mutual
information term computed by encoding freshly generated images.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import epoch_batches, normalize
from .errors import NumericError, ShapeError
from .latent import mutual_info_bound, sample_latent
from .networks import (
    NETWORKS,
    Architecture,
    discriminator_forward,
    encoder_forward,
    generator_forward,
    init_params,
    watch_params,
)
from .optim import AdamState, adam_step

LOG_FLOOR = 1e-12
LOSS_KINDS = ("non_saturating", "saturating")


@dataclass(frozen=True)
class TrainConfig:
    arch: Architecture = field(default_factory=Architecture)
    lam: float = 1.0
    batch_size: int = 64
    total_steps: int = 10000
    lr_generator: float = 2e-4
    lr_encoder: float = 2e-4
    lr_discriminator: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    d_steps: int = 1
    loss: str = "non_saturating"
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.batch_size < 1 or self.total_steps < 1 or self.d_steps < 1:
            raise ValueError("batch_size, total_steps and d_steps must be positive")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")

    @property
    def spec(self):
        return self.arch.latent

    def learning_rate(self, net):
        return {"generator": self.lr_generator, "encoder": self.lr_encoder,
                "discriminator": self.lr_discriminator}[net]


@dataclass
class LossReport:
    step: int
    d_loss: float
    ge_loss: float
    mutual_info: float
    d_encoder_mean: float
    d_generator_mean: float

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    """Everything that evolves during training; a checkpoint serialises this."""

    params: dict
    opt: dict
    rng: np.random.Generator
    step: int = 0


def latent_rng(seed):
    return np.random.default_rng([seed, 1])


def init_state(config):
    params = init_params(config.arch, config.seed)
    opt = {
        net: {
            name: AdamState.zeros_like(p, lr=config.learning_rate(net), beta1=config.beta1,
                                       beta2=config.beta2, eps=config.eps)
            for name, p in params[net].items()
        }
        for net in NETWORKS
    }
    return TrainState(params, opt, latent_rng(config.seed), 0)


# loss functions -----------------------------------------------------------

def _check_batch(d_real, d_fake):
    d_real, d_fake = T.as_tensor(d_real), T.as_tensor(d_fake)
    if d_real.data.size == 0 or d_fake.data.size == 0:
        raise ValueError("adversarial terms need non-empty batches")
    return d_real, d_fake


def adversarial_value(d_real, d_fake):
    """mean log D(x, E(x)) + mean log(1 - D(G(Z), Z)), logs clamped at 1e-12."""
    d_real, d_fake = _check_batch(d_real, d_fake)
    return T.mean(T.log(d_real, LOG_FLOOR)) + T.mean(T.log(1.0 - d_fake, LOG_FLOOR))


def discriminator_loss(d_real, d_fake):
    return -adversarial_value(d_real, d_fake)


def generator_encoder_loss(d_real, d_fake, li, lam=1.0, kind="non_saturating"):
    """Loss minimised jointly by G and E.

    The non-saturating form swaps the pair labels instead of negating V.
    """
    d_real, d_fake = _check_batch(d_real, d_fake)
    if kind == "non_saturating":
        adv = -(T.mean(T.log(d_fake, LOG_FLOOR)) + T.mean(T.log(1.0 - d_real, LOG_FLOOR)))
    elif kind == "saturating":
        adv = adversarial_value(d_real, d_fake)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return adv - T.as_tensor(li) * lam


def _finite(term, value):
    value = float(value)
    if not math.isfinite(value):
        raise NumericError(term, value)
    return value


# updates --------------------------------------------------------------------

def _apply(params, opt, grads):
    for name in params:
        params[name], opt[name] = adam_step(params[name], grads[name], opt[name])


def discriminator_update(real, codes, state, config):
    """One Adam step on D; G and E outputs enter as constants."""
    arch = config.arch
    p = state.params
    fake = generator_forward(p["generator"], codes, arch).data
    enc_latent = encoder_forward(p["encoder"], real, arch).as_latent().data
    tape = T.Tape()
    dp = watch_params(tape, p["discriminator"])
    d_real = discriminator_forward(dp, real, enc_latent, arch)
    d_fake = discriminator_forward(dp, fake, codes.flat(), arch)
    loss = discriminator_loss(d_real, d_fake)
    d_loss = _finite("discriminator_loss", loss.data)
    grads = tape.backward(loss)
    _apply(p["discriminator"], state.opt["discriminator"], {k: grads[t.node] for k, t in dp.items()})
    return d_loss, float(d_real.data.mean()), float(d_fake.data.mean())


def generator_encoder_update(real, codes, state, config):
    """One joint Adam step on G and E against the current D."""
    arch = config.arch
    p = state.params
    tape = T.Tape()
    gp = watch_params(tape, p["generator"])
    ep = watch_params(tape, p["encoder"])
    fake = generator_forward(gp, codes, arch)
    d_fake = discriminator_forward(p["discriminator"], fake, codes.flat(), arch)
    post_real = encoder_forward(ep, real, arch)
    d_real = discriminator_forward(p["discriminator"], real, post_real.as_latent(), arch)
    li = mutual_info_bound(encoder_forward(ep, fake, arch), codes)
    loss = generator_encoder_loss(d_real, d_fake, li, config.lam, config.loss)
    li_value = _finite("mutual_info_bound", li.data)
    ge_loss = _finite("generator_encoder_loss", loss.data)
    grads = tape.backward(loss)
    _apply(p["generator"], state.opt["generator"], {k: grads[t.node] for k, t in gp.items()})
    _apply(p["encoder"], state.opt["encoder"], {k: grads[t.node] for k, t in ep.items()})
    return ge_loss, li_value


def train_step(real, state, config):
    """D step(s) then one joint G+E step on a normalised real batch."""
    real = np.asarray(real, dtype=np.float64)
    if real.ndim != 4 or real.shape[1:] != config.arch.image_shape:
        raise ShapeError(f"batch geometry {real.shape[1:]} does not match {config.arch.image_shape}",
                         real.shape[1:], config.arch.image_shape)
    n = real.shape[0]
    for _ in range(config.d_steps):
        codes = sample_latent(config.spec, state.rng, n)
        d_loss, d_enc, d_gen = discriminator_update(real, codes, state, config)
    ge_loss, li = generator_encoder_update(real, codes, state, config)
    report = LossReport(state.step, d_loss, ge_loss, li, d_enc, d_gen)
    state.step += 1
    return report


def train_loop(config, dataset, state=None, on_report=None, on_checkpoint=None):
    """Run until ``config.total_steps``; resumes from ``state`` if given.

    Batch composition depends only on (seed, step), so a resumed run sees
    exactly the batches an uninterrupted run would.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.geometry != config.arch.image_shape:
        raise ShapeError(
            f"dataset geometry {dataset.geometry} does not match architecture "
            f"{config.arch.image_shape}", dataset.geometry, config.arch.image_shape)
    n = len(dataset)
    if n < config.batch_size:
        raise ValueError(f"dataset of {n} images is smaller than one batch ({config.batch_size})")
    state = state if state is not None else init_state(config)
    images = normalize(dataset.images)
    per_epoch = n // config.batch_size
    reports = []
    cached_epoch, batches = None, None
    while state.step < config.total_steps:
        epoch, k = divmod(state.step, per_epoch)
        if epoch != cached_epoch:
            batches = epoch_batches(n, config.batch_size, config.seed, epoch, drop_last=True)
            cached_epoch = epoch
        report = train_step(images[batches[k]], state, config)
        reports.append(report)
        if on_report is not None:
            on_report(report)
        if on_checkpoint is not None and config.checkpoint_every and \
                state.step % config.checkpoint_every == 0 and state.step < config.total_steps:
            on_checkpoint(state)
    if on_checkpoint is not None:
        on_checkpoint(state)
    return state, reports
