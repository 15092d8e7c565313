"""Glue between a config file and the library: datasets, training runs, evaluation, grids."""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import data
from ._io import atomic_write_text
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import CompatibilityError, DataAvailabilityError
from .evaluation import (
    blank_like,
    encode_dataset,
    evaluate_categories,
    extremes_by_continuous,
    select_by_category,
    warn_partial,
    write_image_grid,
)
from .latent import LatentBatch, sample_latent
from .networks import generator_forward
from .training import init_state, train_loop


def load_splits(cfg):
    """``(train, heldout, test)`` datasets described by the config."""
    d = cfg.dataset
    if d.kind == "synthetic":
        total = d.synthetic_train + d.heldout_size + d.synthetic_test
        full = data.synthetic_shapes(total, d.synthetic_seed)
        a, b = d.synthetic_train, d.synthetic_train + d.heldout_size
        return (full.subset(slice(0, a), "train"), full.subset(slice(a, b), "heldout"),
                full.subset(slice(b, None), "test"))
    if d.kind == "idx":
        full = data.load_mnist(d.path, "train")
        test = data.load_mnist(d.test_path or d.path, "test")
    else:
        full = data.load_raw_dataset(d.path)
        test = data.load_raw_dataset(d.test_path) if d.test_path else None
    n = len(full)
    if d.heldout_size >= n:
        raise DataAvailabilityError(f"heldout_size {d.heldout_size} leaves no training images of {n}")
    n_train = n - d.heldout_size
    if d.train_limit:
        n_train = min(n_train, d.train_limit)
    train = full.subset(slice(0, n_train), "train")
    heldout = full.subset(slice(n - d.heldout_size, n), "heldout")
    if test is None:
        test = heldout
    if d.test_limit:
        test = test.subset(slice(0, d.test_limit), "test")
    return train, heldout, test


def probe_codes(spec, seed, n=64):
    """Frozen code batch for progress grids; rows cycle through block-0 categories."""
    codes = sample_latent(spec, np.random.default_rng([seed, 3]), n)
    if spec.categorical:
        k = spec.category_counts[0]
        codes.cat[0] = np.eye(k)[np.arange(n) % k]
    return codes


def checkpoint_id(path):
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()[:16]
    return f"{os.path.basename(path)}:{digest}"


def report_line(report):
    return json.dumps(report.as_dict(), sort_keys=True)


def run_training(cfg, resume=None, echo=None):
    """Train per ``cfg``; writes metrics, checkpoints and probe grids under ``output_dir``."""
    out = cfg.output_dir
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    train, _, _ = load_splits(cfg)
    state = None
    lines = []
    metrics_path = os.path.join(out, "metrics.jsonl")
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config.arch != cfg.arch:
            raise CompatibilityError("resume checkpoint architecture differs from the config")
        state = ckpt.to_state()
        if os.path.exists(metrics_path):
            with open(metrics_path) as fh:
                lines = [l.rstrip("\n") for l in fh if l.strip() and json.loads(l)["step"] < state.step]
    probe = probe_codes(cfg.latent, cfg.seed)
    spec = cfg.latent
    rows = spec.category_counts[0] if spec.categorical else 8

    def on_report(report):
        lines.append(report_line(report))
        if echo is not None:
            echo(lines[-1])
        step = report.step + 1
        if cfg.sample_every and step % cfg.sample_every == 0:
            write_probe(step)

    def write_probe(step):
        images = generator_forward(state.params["generator"], probe, cfg.arch).data
        cols = -(-len(images) // rows)
        write_image_grid(images, rows, cols, os.path.join(out, "samples", f"probe_{step:06d}.pgm"))

    def on_checkpoint(st):
        ckpt = Checkpoint.from_state(st, cfg)
        save_checkpoint(ckpt, os.path.join(out, "checkpoints", f"step_{st.step:06d}.ckpt"))
        atomic_write_text(metrics_path, "".join(l + "\n" for l in lines))

    if state is None:
        state = init_state(cfg.train)
    state, reports = train_loop(cfg.train, train, state, on_report, on_checkpoint)
    save_checkpoint(Checkpoint.from_state(state, cfg), os.path.join(out, "final.ckpt"))
    return state, reports


def _check_geometry(ckpt, dataset):
    if dataset.geometry != ckpt.config.arch.image_shape:
        raise CompatibilityError(
            f"dataset geometry {dataset.geometry} does not match checkpoint geometry "
            f"{ckpt.config.arch.image_shape}")


def evaluate_checkpoint(ckpt, cfg, ident=""):
    """Cluster accuracy of the checkpoint's encoder on the config's evaluation splits."""
    _, heldout, test = load_splits(cfg)
    _check_geometry(ckpt, test)
    arch = ckpt.config.arch
    if not arch.latent.categorical:
        raise CompatibilityError("evaluation needs at least one categorical block")
    if test.labels is None or heldout.labels is None:
        raise DataAvailabilityError("evaluation needs labelled held-out and test splits")
    e = cfg.evaluation
    enc = ckpt.params["encoder"]
    test_codes = encode_dataset(enc, data.normalize(test.images), arch, e.batch_size)
    if e.match_on == "test":
        fit_codes, fit_labels = test_codes, test.labels
    else:
        fit_codes = encode_dataset(enc, data.normalize(heldout.images), arch, e.batch_size)
        fit_labels = heldout.labels
    k = arch.latent.category_counts[0]
    report = evaluate_categories(fit_codes.categories[:, 0], fit_labels, test_codes.categories[:, 0],
                                 test.labels, k, e.matching, ident, e.match_on)
    report.extra = {"step": ckpt.step, "test_provenance": test.provenance}
    return report


# sample grids ------------------------------------------------------------------

def category_rows(ckpt, cfg, block=0, n=None, seed=0):
    """One grid row per category: test images the encoder assigns to it."""
    _, _, test = load_splits(cfg)
    _check_geometry(ckpt, test)
    arch = ckpt.config.arch
    images = data.normalize(test.images)
    codes = encode_dataset(ckpt.params["encoder"], images, arch, cfg.evaluation.batch_size)
    n = n or cfg.evaluation.rows_n
    rng = np.random.default_rng(seed)
    k = arch.latent.category_counts[block]
    rows = [select_by_category(codes, images, block, c, n, rng)[0] for c in range(k)]
    return np.concatenate(rows), k, n


def continuous_extremes(ckpt, cfg, cont_index=0, m=None, block=0):
    """Per category: the m lowest then the m highest values of one continuous code."""
    _, _, test = load_splits(cfg)
    _check_geometry(ckpt, test)
    arch = ckpt.config.arch
    if not 0 <= cont_index < arch.latent.cont_dim:
        raise DataAvailabilityError(f"continuous index {cont_index} outside [0, {arch.latent.cont_dim})")
    images = data.normalize(test.images)
    codes = encode_dataset(ckpt.params["encoder"], images, arch, cfg.evaluation.batch_size)
    m = m or cfg.evaluation.extremes_m
    k = arch.latent.category_counts[block]
    rows, notes = extremes_by_continuous(codes, images, cont_index, m, block, k)
    warn_partial(notes)
    tiles = []
    for c in range(k):
        low, high = rows[c]
        tiles += [images[low], blank_like(images, m - len(low)),
                  images[high], blank_like(images, m - len(high))]
    return np.concatenate(tiles), k, 2 * m, notes


def generator_sweep(ckpt, target="cat:0", rows=None, steps=None, seed=0):
    """Grid of G(z, c): one code dimension varies along columns, the rest is fixed per row."""
    cfg = ckpt.config
    spec = cfg.latent
    rows = rows or cfg.evaluation.sweep_rows
    kind, _, idx = target.partition(":")
    idx = int(idx or 0)
    base = sample_latent(spec, np.random.default_rng([seed, 4]), rows)
    if kind == "cat":
        if not 0 <= idx < len(spec.categorical):
            raise DataAvailabilityError(f"categorical block {idx} does not exist")
        cols = spec.category_counts[idx]
        values = list(range(cols))
    elif kind == "cont":
        if not 0 <= idx < spec.cont_dim:
            raise DataAvailabilityError(f"continuous code {idx} does not exist")
        cols = steps or cfg.evaluation.sweep_steps
        values = list(np.linspace(-1.0, 1.0, cols))
    else:
        raise ValueError(f"sweep target must be cat:<block> or cont:<index>, got {target!r}")
    order = np.repeat(np.arange(rows), cols)
    batch = base.take(order)
    cat = [c.copy() for c in batch.cat]
    cont = batch.cont.copy()
    col = np.tile(np.arange(cols), rows)
    if kind == "cat":
        cat[idx] = np.eye(cols)[col]
    else:
        cont[:, idx] = np.asarray(values)[col]
    codes = LatentBatch(batch.z, cat, cont)
    images = generator_forward(ckpt.params["generator"], codes, cfg.arch).data
    return images, rows, cols, codes


def write_grid(images, rows, cols, path):
    return write_image_grid(images, rows, cols, path)
