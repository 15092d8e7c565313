"""Checkpoint (de)serialisation on top of the binary container.

Tensor names:
    param/<network>/<name>
    adam/<network>/<name>/m, .../v, .../hyper   (hyper = [t, lr, beta1, beta2, eps])
The random source is stored as canonical JSON of its bit-generator state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import container
from ._io import atomic_write_bytes
from .config import dump_config, parse_config
from .errors import ConfigError, FormatError
from .networks import NETWORKS, param_shapes
from .optim import AdamState
from .training import TrainState

KIND = "checkpoint"


@dataclass
class Checkpoint:
    params: dict
    opt: dict
    config: object  # ExperimentConfig
    rng_state: dict
    step: int

    @classmethod
    def from_state(cls, state, config):
        params = {net: {k: v.copy() for k, v in p.items()} for net, p in state.params.items()}
        opt = {net: dict(states) for net, states in state.opt.items()}
        return cls(params, opt, config, state.rng.bit_generator.state, state.step)

    def to_state(self):
        bitgen = getattr(np.random, self.rng_state["bit_generator"])()
        bitgen.state = self.rng_state
        params = {net: {k: v.copy() for k, v in p.items()} for net, p in self.params.items()}
        opt = {net: dict(states) for net, states in self.opt.items()}
        return TrainState(params, opt, np.random.Generator(bitgen), self.step)


def encode_checkpoint(ckpt):
    tensors = {}
    for net in NETWORKS:
        for name, value in ckpt.params[net].items():
            tensors[f"param/{net}/{name}"] = value
    for net in NETWORKS:
        for name, st in ckpt.opt[net].items():
            base = f"adam/{net}/{name}"
            tensors[f"{base}/m"] = st.m
            tensors[f"{base}/v"] = st.v
            tensors[f"{base}/hyper"] = np.array([st.t, st.lr, st.beta1, st.beta2, st.eps])
    blob = json.dumps(ckpt.rng_state, sort_keys=True, separators=(",", ":")).encode()
    return container.encode(container.Container(KIND, ckpt.step, dump_config(ckpt.config), blob, tensors))


def decode_checkpoint(data):
    c = container.decode(data, kind=KIND)
    try:
        config = parse_config(c.text)
    except ConfigError as exc:
        raise FormatError(f"embedded configuration is invalid: {exc}") from None
    try:
        rng_state = json.loads(c.blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"random-state blob is not valid JSON: {exc}") from None
    params, opt = {}, {}
    expected = param_shapes(config.arch)
    for net in NETWORKS:
        params[net], opt[net] = {}, {}
        for name, shape in expected[net].items():
            try:
                value = c.tensors[f"param/{net}/{name}"]
                base = f"adam/{net}/{name}"
                m, v, hyper = c.tensors[f"{base}/m"], c.tensors[f"{base}/v"], c.tensors[f"{base}/hyper"]
            except KeyError as exc:
                raise FormatError(f"checkpoint is missing tensor {exc.args[0]}") from None
            if value.shape != shape or m.shape != shape or v.shape != shape or hyper.shape != (5,):
                raise FormatError(f"tensor {net}/{name} has shape {value.shape}, expected {shape}")
            params[net][name] = value
            t, lr, b1, b2, eps = hyper.tolist()
            opt[net][name] = AdamState(m=m, v=v, t=int(t), lr=lr, beta1=b1, beta2=b2, eps=eps)
    return Checkpoint(params, opt, config, rng_state, c.step)


def save_checkpoint(ckpt, path):
    atomic_write_bytes(path, encode_checkpoint(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
