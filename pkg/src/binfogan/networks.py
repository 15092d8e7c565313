"""Generator, encoder and joint discriminator.

All three are DCGAN-style stacks built from the tensor core. Every
resampling layer uses 4x4 kernels with stride 2 and padding 1, so each
one exactly halves (conv) or doubles (transposed conv) the spatial size.

Parameters live in plain ``dict[str, ndarray]`` objects with a fixed
insertion order; forwards accept either arrays or tape-watched tensors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .latent import EncoderPosterior, LatentBatch, LatentSpec

KERNEL, STRIDE, PAD = 4, 2, 1
NETWORKS = ("generator", "encoder", "discriminator")


@dataclass(frozen=True)
class Architecture:
    image_shape: tuple = (1, 28, 28)
    latent: LatentSpec = field(default_factory=LatentSpec)
    gen_hidden: int = 1024
    gen_channels: tuple = (128, 64)
    enc_channels: tuple = (64, 128)
    enc_hidden: int = 1024
    disc_channels: tuple = (64, 128)
    disc_hidden: int = 1024
    leaky_alpha: float = 0.1
    batch_norm: bool = False

    def __post_init__(self):
        for name in ("image_shape", "gen_channels", "enc_channels", "disc_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.batch_norm:
            raise NotImplementedError("batch normalisation is reserved but not implemented")
        c, h, w = self.image_shape
        for label, chans in (("gen", self.gen_channels), ("enc", self.enc_channels),
                             ("disc", self.disc_channels)):
            if not chans:
                raise ValueError(f"{label}_channels must be non-empty")
            scale = 2 ** len(chans)
            if h % scale or w % scale:
                raise ValueError(
                    f"image {h}x{w} is not divisible by {scale} ({len(chans)} stride-2 {label} layers)")

    def reduced(self, n_layers):
        c, h, w = self.image_shape
        return h // 2 ** n_layers, w // 2 ** n_layers

    def describe(self):
        """Layer-by-layer summary, one string per layer."""
        c, h, w = self.image_shape
        lat = self.latent.total_dim
        gh, gw = self.reduced(len(self.gen_channels))
        lines = [f"G fc {lat}->{self.gen_hidden} leaky_relu",
                 f"G fc {self.gen_hidden}->{self.gen_channels[0]}x{gh}x{gw} leaky_relu"]
        chans = list(self.gen_channels) + [c]
        for i in range(len(self.gen_channels)):
            act = "tanh" if i == len(self.gen_channels) - 1 else "leaky_relu"
            lines.append(f"G deconv {chans[i]}->{chans[i + 1]} k4 s2 p1 {act}")
        for tag, first, chs, hidden, head in (
            ("E", c, self.enc_channels, self.enc_hidden, f"{lat} (z tanh | logits | means)"),
            ("D", c + lat, self.disc_channels, self.disc_hidden, "1 sigmoid"),
        ):
            prev = first
            for ch in chs:
                lines.append(f"{tag} conv {prev}->{ch} k4 s2 p1 leaky_relu")
                prev = ch
            rh, rw = self.reduced(len(chs))
            lines.append(f"{tag} fc {prev * rh * rw}->{hidden} leaky_relu")
            lines.append(f"{tag} fc {hidden}->{head}")
        return lines


def _truncated_normal(rng, shape, std=0.02, bound=2.0):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def param_shapes(arch):
    """Ordered ``{network: {name: shape}}`` for an architecture."""
    c, h, w = arch.image_shape
    lat = arch.latent.total_dim
    gh, gw = arch.reduced(len(arch.gen_channels))
    gen = {
        "fc0.w": (lat, arch.gen_hidden), "fc0.b": (arch.gen_hidden,),
        "fc1.w": (arch.gen_hidden, arch.gen_channels[0] * gh * gw),
        "fc1.b": (arch.gen_channels[0] * gh * gw,),
    }
    chans = list(arch.gen_channels) + [c]
    for i in range(len(arch.gen_channels)):
        gen[f"up{i}.w"] = (chans[i], chans[i + 1], KERNEL, KERNEL)
        gen[f"up{i}.b"] = (chans[i + 1],)

    def conv_stack(first, chs, hidden, head):
        shapes, prev = {}, first
        for i, ch in enumerate(chs):
            shapes[f"conv{i}.w"] = (ch, prev, KERNEL, KERNEL)
            shapes[f"conv{i}.b"] = (ch,)
            prev = ch
        rh, rw = arch.reduced(len(chs))
        shapes["fc0.w"] = (prev * rh * rw, hidden)
        shapes["fc0.b"] = (hidden,)
        shapes["head.w"] = (hidden, head)
        shapes["head.b"] = (head,)
        return shapes

    return {
        "generator": gen,
        "encoder": conv_stack(c, arch.enc_channels, arch.enc_hidden, lat),
        "discriminator": conv_stack(c + lat, arch.disc_channels, arch.disc_hidden, 1),
    }


def init_params(arch, seed):
    """Weights ~ N(0, 0.02^2) truncated at two sigma, biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for net, shapes in param_shapes(arch).items():
        params[net] = {
            name: np.zeros(shape) if name.endswith(".b") else _truncated_normal(rng, shape)
            for name, shape in shapes.items()
        }
    return params


def _dense(h, p, name):
    return T.matmul(h, p[f"{name}.w"]) + p[f"{name}.b"]


def _channel_bias(b):
    return T.reshape(b, (1, -1, 1, 1))


def generator_forward(params, codes, arch):
    """Map latent rows ``(N, total_dim)`` (or a LatentBatch) to images in (-1, 1)."""
    if isinstance(codes, LatentBatch):
        codes = codes.flat()
    codes = T.as_tensor(codes)
    lat = arch.latent.total_dim
    if codes.ndim != 2 or codes.shape[1] != lat:
        raise ShapeError(f"generator expects codes of shape (N, {lat}), got {codes.shape}",
                         codes.shape, (None, lat))
    a = arch.leaky_alpha
    p = params
    n = codes.shape[0]
    h = T.leaky_relu(_dense(codes, p, "fc0"), a)
    h = T.leaky_relu(_dense(h, p, "fc1"), a)
    gh, gw = arch.reduced(len(arch.gen_channels))
    h = T.reshape(h, (n, arch.gen_channels[0], gh, gw))
    last = len(arch.gen_channels) - 1
    for i in range(len(arch.gen_channels)):
        h = T.conv2d_transpose(h, p[f"up{i}.w"], STRIDE, PAD) + _channel_bias(p[f"up{i}.b"])
        h = T.tanh(h) if i == last else T.leaky_relu(h, a)
    return h


def _check_images(images, arch):
    images = T.as_tensor(images)
    if images.ndim != 4 or images.shape[1:] != arch.image_shape:
        raise ShapeError(
            f"image geometry {images.shape[1:]} does not match architecture {arch.image_shape}",
            images.shape[1:], arch.image_shape)
    return images


def _conv_trunk(h, p, n_layers, alpha):
    for i in range(n_layers):
        h = T.conv2d(h, p[f"conv{i}.w"], STRIDE, PAD) + _channel_bias(p[f"conv{i}.b"])
        h = T.leaky_relu(h, alpha)
    h = T.reshape(h, (h.shape[0], -1))
    return T.leaky_relu(_dense(h, p, "fc0"), alpha)


def encoder_raw(params, images, arch):
    images = _check_images(images, arch)
    h = _conv_trunk(images, params, len(arch.enc_channels), arch.leaky_alpha)
    return _dense(h, params, "head")


def split_encoder_output(raw, spec):
    """Cut raw ``(N, total_dim)`` encoder output into an EncoderPosterior."""
    z_end = spec.z_dim
    z_hat = T.tanh(raw[:, :z_end])
    logits, start = [], z_end
    for k in spec.category_counts:
        logits.append(raw[:, start:start + k])
        start += k
    return EncoderPosterior(z_hat, logits, raw[:, start:start + spec.cont_dim])


def encoder_forward(params, images, arch):
    return split_encoder_output(encoder_raw(params, images, arch), arch.latent)


def discriminator_forward(params, images, latents, arch):
    """Probability that each (image, latent) pair came from the encoder side.

    Latent entries are broadcast to constant planes and appended as channels.
    """
    images = _check_images(images, arch)
    if isinstance(latents, LatentBatch):
        latents = latents.flat()
    latents = T.as_tensor(latents)
    n, _, h, w = images.shape
    lat = arch.latent.total_dim
    if latents.shape != (n, lat):
        raise ShapeError(f"discriminator expects latents of shape ({n}, {lat}), got {latents.shape}",
                         latents.shape, (n, lat))
    planes = T.broadcast_to(T.reshape(latents, (n, lat, 1, 1)), (n, lat, h, w))
    x = T.concat([images, planes], axis=1)
    hdn = _conv_trunk(x, params, len(arch.disc_channels), arch.leaky_alpha)
    out = T.sigmoid(_dense(hdn, params, "head"))
    return T.reshape(out, (n,))


def watch_params(tape, params):
    return {name: tape.watch(v) for name, v in params.items()}
