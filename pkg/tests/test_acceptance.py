"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test appends a ``CRITERION n PASS|FAIL|NOT RUN`` line to REPORT; the
conftest prints them after the run. Criteria 6 and 8 need the official
MNIST IDX files, looked up in $BINFOGAN_MNIST_DIR (default data/mnist).
"""
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from binfogan import tensor as T
from binfogan.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint
from binfogan.config import load_config, with_overrides
from binfogan.data import load_mnist, parse_idx
from binfogan.errors import FormatError
from binfogan.evaluation import brute_force_matching, match_categories
from binfogan.experiment import evaluate_checkpoint, load_splits, run_training
from binfogan.latent import categorical_log_likelihood, gaussian_log_likelihood, mutual_info_bound, sample_latent
from binfogan.networks import discriminator_forward, encoder_forward, generator_forward
from binfogan.training import adversarial_value, generator_encoder_loss, train_loop
from idx_fixtures import CUBE, LABELS_729, MALFORMED

ROOT = Path(__file__).resolve().parent.parent
MNIST_DIR = Path(os.environ.get("BINFOGAN_MNIST_DIR", ROOT / "data" / "mnist"))
REPORT = []


def record(number, passed, summary, seconds):
    status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[passed]
    line = f"CRITERION {number} {status}: {summary} [{seconds:.1f} s]"
    REPORT.append(line)
    print(line)
    return passed


def mnist_available():
    try:
        load_mnist(MNIST_DIR, "test")
        return True
    except (OSError, FormatError):
        return False


# 1 -------------------------------------------------------------------------------

def _max_fd_error(build, inputs, rng):
    tape = T.Tape()
    watched = [tape.watch(v) for v in inputs]
    out = build(*watched)
    proj = rng.standard_normal(out.shape)
    grads = tape.gradient(T.sum(out * proj), watched)
    worst = 0.0
    for i, v in enumerate(inputs):
        def f(arr, i=i):
            args = list(inputs)
            args[i] = arr
            return float(np.sum(build(*args).data * proj))
        worst = max(worst, T.relative_error(grads[i], T.finite_difference_gradient(f, v, 1e-6)))
    return worst


def _op_table():
    return {
        "add": (lambda a, b: a + b, [(3, 4), (4,)]),
        "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
        "mul": (lambda a, b: a * b, [(2, 3), (2, 3)]),
        "neg": (lambda a: -a, [(3,)]),
        "matmul": (T.matmul, [(3, 4), (4, 2)]),
        "square": (T.square, [(5,)]),
        "exp": (T.exp, [(2, 3)]),
        "log": (lambda a: T.log(T.exp(a)), [(2, 3)]),
        "leaky_relu": (lambda a: T.leaky_relu(a, 0.1), [(4, 5)]),
        "tanh": (T.tanh, [(4, 3)]),
        "sigmoid": (T.sigmoid, [(4, 3)]),
        "softmax": (T.softmax, [(3, 6)]),
        "log_softmax": (T.log_softmax, [(3, 6)]),
        "sum": (lambda a: T.sum(a, axis=1), [(3, 4)]),
        "mean": (lambda a: T.mean(a, axis=0), [(3, 4)]),
        "reshape": (lambda a: T.reshape(a, (4, 3)), [(3, 4)]),
        "transpose": (lambda a: T.transpose(a, (1, 0)), [(3, 4)]),
        "broadcast_to": (lambda a: T.broadcast_to(a, (2, 3, 4)), [(3, 1)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
        "getitem": (lambda a: a[:, 1:3], [(3, 5)]),
        "conv2d": (lambda x, k: T.conv2d(x, k, 2, 1), [(2, 2, 6, 6), (3, 2, 4, 4)]),
        "conv2d_transpose": (lambda x, k: T.conv2d_transpose(x, k, 2, 1), [(2, 3, 3, 3), (3, 2, 4, 4)]),
    }


def test_criterion_1_gradient_checks():
    from test_networks import SPEC, TINY, big_params

    start = time.perf_counter()
    configs = 20
    failures, worst = [], {}
    for name, (build, shapes) in _op_table().items():
        for seed in range(configs):
            rng = np.random.default_rng([seed, 11])
            err = _max_fd_error(build, [rng.standard_normal(s) for s in shapes], rng)
            worst[name] = max(worst.get(name, 0.0), err)
    for seed in range(configs):
        rng = np.random.default_rng([seed, 12])
        p = big_params(TINY, seed)
        codes = sample_latent(SPEC, rng, 2)
        x = rng.uniform(-1, 1, (2, 1, 8, 8))
        lat = rng.uniform(-1, 1, (2, SPEC.total_dim))
        # through two networks std-0.5 weights saturate the sigmoid, pushing the
        # gradient below finite-difference noise; a milder D keeps it measurable
        d_mild = {k: 0.6 * v for k, v in p["discriminator"].items()}
        nets = {
            "generator": (lambda g: generator_forward(dict(zip(p["generator"], g)), codes, TINY),
                          p["generator"]),
            "encoder": (lambda e: encoder_forward(dict(zip(p["encoder"], e)), x, TINY).as_latent(),
                        p["encoder"]),
            "discriminator": (lambda d: discriminator_forward(dict(zip(p["discriminator"], d)), x, lat, TINY),
                              p["discriminator"]),
            "D(G(codes),codes)": (
                lambda g: discriminator_forward(d_mild,
                                                generator_forward(dict(zip(p["generator"], g)), codes, TINY),
                                                codes, TINY),
                p["generator"]),
        }
        for name, (fn, params) in nets.items():
            err = _max_fd_error(lambda *arrs, fn=fn: fn(arrs), list(params.values()), rng)
            worst[name] = max(worst.get(name, 0.0), err)

        scaled = {net: {k: 0.6 * v for k, v in q.items()} for net, q in p.items()}
        gk, ek = list(scaled["generator"]), list(scaled["encoder"])

        def full_loss(*arrs):
            gp, ep = dict(zip(gk, arrs[:len(gk)])), dict(zip(ek, arrs[len(gk):]))
            fake = generator_forward(gp, codes, TINY)
            d_fake = discriminator_forward(scaled["discriminator"], fake, codes, TINY)
            d_real = discriminator_forward(scaled["discriminator"], x,
                                           encoder_forward(ep, x, TINY).as_latent(), TINY)
            li = mutual_info_bound(encoder_forward(ep, fake, TINY), codes)
            return generator_encoder_loss(d_real, d_fake, li, 1.0)

        inputs = list(scaled["generator"].values()) + list(scaled["encoder"].values())
        worst["G+E loss"] = max(worst.get("G+E loss", 0.0), _max_fd_error(full_loss, inputs, rng))
    for name, err in worst.items():
        if err >= (1e-3 if name == "G+E loss" else 1e-4):
            failures.append(f"{name}={err:.2e}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    top = max(v for k, v in worst.items() if k != "G+E loss")
    record(1, ok, f"{len(worst)} gradients x {configs} configs, max rel err {top:.1e} "
                  f"(composed loss {worst['G+E loss']:.1e}); runtime < 120 s"
                  + (f"; failing: {', '.join(failures)}" if failures else ""), elapsed)
    assert ok


# 2 -------------------------------------------------------------------------------

def test_criterion_2_analytic_losses():
    start = time.perf_counter()
    half = np.full(8, 0.5)
    adv = float(adversarial_value(half, half).data)
    cat = float(categorical_log_likelihood(np.zeros(10), np.eye(10)[4]).data)
    mean = np.array([0.3, -0.7, 0.1])
    gauss = float(gaussian_log_likelihood(mean, mean).data)
    errors = (abs(adv - 2 * math.log(0.5)), abs(cat + math.log(10)),
              abs(gauss - 3 * (-0.5 * math.log(2 * math.pi))))
    ok = all(e < 1e-12 for e in errors)
    record(2, ok, "adversarial 2ln0.5, categorical -ln10, Gaussian -ln(2pi)/2 per dim; "
                  f"max abs err {max(errors):.1e} (tol 1e-12)", time.perf_counter() - start)
    assert ok


# 3 -------------------------------------------------------------------------------

def test_criterion_3_matching_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for k in (2, 3, 4, 5):
        for trial in range(1000):
            high = 3 if trial % 2 == 0 else 200  # small range forces ties
            counts = rng.integers(0, high, (k, k))
            mismatches += match_categories(counts) != brute_force_matching(counts)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    record(3, ok, f"4000 matrices (K=2..5), {mismatches} disagreements with exhaustive search", elapsed)
    assert ok


# 4 and 5 -------------------------------------------------------------------------------

SEEDS = range(5)


@pytest.fixture(scope="module")
def synthetic_runs():
    """Train the shipped synthetic config for every seed, with lambda 1 and lambda 0."""
    base = load_config(ROOT / "configs" / "synthetic.cfg")
    runs = {}
    for lam in (1.0, 0.0):
        for seed in SEEDS:
            cfg = with_overrides(base, seed=seed)
            cfg = replace(cfg, train=replace(cfg.train, lam=lam, checkpoint_every=0))
            train, _, _ = load_splits(cfg)
            t0 = time.perf_counter()
            state, reports = train_loop(cfg.train, train)
            report = evaluate_checkpoint(Checkpoint.from_state(state, cfg), cfg)
            li = [r.mutual_info for r in reports]
            runs[lam, seed] = {
                "accuracy": report.accuracy,
                "li_start": li[0],
                "li_final": float(np.mean(li[-100:])),
                "seconds": time.perf_counter() - t0,
                "steps": len(reports),
            }
    return base, runs


@pytest.mark.slow
def test_criterion_4_synthetic_end_to_end(synthetic_runs):
    base, runs = synthetic_runs
    accs = [runs[1.0, s]["accuracy"] for s in SEEDS]
    seconds = sum(runs[1.0, s]["seconds"] for s in SEEDS)
    passing = sum(a >= 0.90 for a in accs)
    data = base.dataset
    ok = (passing >= 4 and base.train.total_steps <= 3000 and data.synthetic_train == 2000
          and data.heldout_size == 400 and base.latent.category_counts == (4,)
          and base.latent.cont_dim == 1 and base.latent.z_dim == 16 and base.train.lam == 1.0)
    record(4, ok, f"{passing}/5 seeds >= 0.90 held-out accuracy after {base.train.total_steps} steps "
                  f"(accuracies {', '.join(f'{a:.4f}' for a in accs)})", seconds)
    assert ok


@pytest.mark.slow
def test_criterion_5_mutual_information_efficacy(synthetic_runs):
    _, runs = synthetic_runs
    gains = [runs[1.0, s]["li_final"] - runs[1.0, s]["li_start"] for s in SEEDS]
    with_mi = np.mean([runs[1.0, s]["accuracy"] for s in SEEDS])
    without = np.mean([runs[0.0, s]["accuracy"] for s in SEEDS])
    seconds = sum(runs[0.0, s]["seconds"] for s in SEEDS)
    ok = min(gains) >= 1.0 and with_mi - without >= 0.15
    record(5, ok, f"L_I gain per seed {', '.join(f'{g:.2f}' for g in gains)} nats (need >= 1.0); "
                  f"mean accuracy lambda=1 {with_mi:.4f} vs lambda=0 {without:.4f} "
                  f"(gap {with_mi - without:.4f}, need >= 0.15)", seconds)
    assert ok


# 6 -------------------------------------------------------------------------------

def test_criterion_6_mnist_smoke(tmp_path):
    start = time.perf_counter()
    full = load_config(ROOT / "configs" / "mnist.cfg")
    shipped = (full.latent.category_counts == (10,) and full.latent.cont_dim == 2 and full.train.lam == 1.0
               and "95%" in (ROOT / "README.md").read_text())
    if not shipped:
        record(6, False, "full-scale MNIST config or reproduction guide missing", 0.0)
        assert shipped
    if not mnist_available():
        record(6, None, f"official MNIST files not found in {MNIST_DIR}; full-scale config and guide "
                        "are shipped, the 60-minute smoke run needs the data", time.perf_counter() - start)
        pytest.skip("MNIST IDX files unavailable (set BINFOGAN_MNIST_DIR)")
    cfg = load_config(ROOT / "configs" / "mnist_smoke.cfg")
    cfg = replace(cfg, dataset=replace(cfg.dataset, path=str(MNIST_DIR)), output_dir=str(tmp_path))
    train, _, _ = load_splits(cfg)
    budget, state, t0 = 3600.0, None, time.perf_counter()
    while state is None or state.step < cfg.train.total_steps:
        target = min(cfg.train.total_steps, (state.step if state else 0) + 200)
        state, _ = train_loop(replace(cfg.train, total_steps=target), train, state)
        if time.perf_counter() - t0 >= budget:
            break
    acc = evaluate_checkpoint(Checkpoint.from_state(state, cfg), cfg).accuracy
    ok = len(train) == 10000 and acc >= 0.60
    record(6, ok, f"MNIST 10k-subset smoke: accuracy {acc:.4f} after {state.step} steps "
                  f"within the 60-minute budget (need >= 0.60)", time.perf_counter() - start)
    assert ok


# 7 -------------------------------------------------------------------------------

def test_criterion_7_determinism_and_persistence(tmp_path):
    start = time.perf_counter()
    cfg = load_config(ROOT / "configs" / "synthetic.cfg")
    out = tmp_path / "run"
    cfg = replace(cfg, output_dir=str(out), sample_every=0,
                  train=replace(cfg.train, total_steps=20, checkpoint_every=10))
    logs = []
    for _ in range(2):
        run_training(cfg)
        logs.append((out / "metrics.jsonl").read_bytes())
        final = (out / "final.ckpt").read_bytes()
        for f in out.rglob("*"):
            if f.is_file():
                f.unlink()
    identical_logs = logs[0] == logs[1] and logs[0].count(b"\n") == 20

    round_trip = encode_checkpoint(decode_checkpoint(final)) == final

    train, _, _ = load_splits(cfg)
    straight, _ = train_loop(cfg.train, train)
    half, _ = train_loop(replace(cfg.train, total_steps=10), train)
    restored = decode_checkpoint(encode_checkpoint(Checkpoint.from_state(half, cfg))).to_state()
    resumed, _ = train_loop(cfg.train, train, restored)
    resume_equal = encode_checkpoint(Checkpoint.from_state(straight, cfg)) == \
        encode_checkpoint(Checkpoint.from_state(resumed, cfg))
    elapsed = time.perf_counter() - start
    ok = identical_logs and round_trip and resume_equal and elapsed < 300
    record(7, ok, f"repeat-run metrics identical={identical_logs}, checkpoint round trip "
                  f"byte-identical={round_trip}, 10+10 resume == 20 straight={resume_equal}", elapsed)
    assert ok


# 8 -------------------------------------------------------------------------------

def test_criterion_8_idx_ingestion():
    start = time.perf_counter()
    fixtures_ok = parse_idx(LABELS_729).tolist() == [7, 2, 9] and parse_idx(CUBE).shape == (2, 2, 2)
    wrong = []
    for name, (stream, offset) in MALFORMED.items():
        try:
            parse_idx(stream)
            wrong.append(name)
        except FormatError as exc:
            if exc.offset != offset:
                wrong.append(name)
    fixtures_ok = fixtures_ok and not wrong
    summary = f"{len(MALFORMED)} malformed classes -> FormatError at designated offsets" + \
        (f" (wrong: {', '.join(wrong)})" if wrong else "")
    if not mnist_available():
        if not fixtures_ok:
            record(8, False, summary, time.perf_counter() - start)
            assert fixtures_ok
        record(8, None, f"{summary}; official MNIST files not found in {MNIST_DIR}, "
                        "60,000/10,000 parse not checked", time.perf_counter() - start)
        pytest.skip("MNIST IDX files unavailable (set BINFOGAN_MNIST_DIR)")
    train, test = load_mnist(MNIST_DIR, "train"), load_mnist(MNIST_DIR, "test")
    official = (len(train) == 60000 and len(test) == 10000
                and train.geometry == test.geometry == (1, 28, 28)
                and all(0 <= d.labels.min() and d.labels.max() < 10 for d in (train, test)))
    elapsed = time.perf_counter() - start
    ok = fixtures_ok and official and elapsed < 30
    record(8, ok, f"official MNIST 60000/10000 x 28x28 ok={official}; {summary}", elapsed)
    assert ok
