"""Compare the numba and pure-numpy convolution kernels.

Part 1 times im2col/col2im directly at the layer shapes of the shipped
configs. Part 2 times whole training steps in fresh interpreters with
BINFOGAN_NUMBA=1 and BINFOGAN_NUMBA=0, since the backend is fixed at import.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--steps 20]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from binfogan import _kernels as K

# (label, N, C, H, W) of padded inputs to 4x4 stride-2 layers
LAYERS = [
    ("synthetic conv0", 32, 1, 18, 18),
    ("synthetic disc conv0", 32, 22, 18, 18),
    ("mnist conv0", 64, 1, 30, 30),
    ("mnist conv1", 64, 64, 16, 16),
    ("mnist disc conv0", 64, 77, 30, 30),
]

STEP_SCRIPT = """
import json, sys, time
from binfogan import _kernels
from binfogan.config import load_config
from binfogan.data import normalize
from binfogan.experiment import load_splits
from binfogan.training import init_state, train_step
cfg = load_config(sys.argv[1])
train, _, _ = load_splits(cfg)
batch = normalize(train.images[:cfg.train.batch_size])
state = init_state(cfg.train)
train_step(batch, state, cfg.train)  # warm-up, includes any JIT load
t = time.perf_counter()
for _ in range(int(sys.argv[2])):
    train_step(batch, state, cfg.train)
print(json.dumps({"backend": _kernels.backend(), "seconds_per_step": (time.perf_counter() - t) / int(sys.argv[2])}))
"""


def bench_kernels(repeat):
    rows = []
    k, s = 4, 2
    for label, n, c, hp, wp in LAYERS:
        oh, ow = (hp - k) // s + 1, (wp - k) // s + 1
        xp = np.random.default_rng(0).standard_normal((n, c, hp, wp))
        cols = K.im2col_numpy(xp, k, k, s, oh, ow)
        assert np.array_equal(cols, K.im2col_numba(xp, k, k, s, oh, ow))
        assert np.array_equal(K.col2im_numpy(cols, c, hp, wp, k, k, s, oh, ow),
                              K.col2im_numba(cols, c, hp, wp, k, k, s, oh, ow))
        row = {"layer": label}
        for name, fn in (
            ("im2col_numpy", lambda: K.im2col_numpy(xp, k, k, s, oh, ow)),
            ("im2col_numba", lambda: K.im2col_numba(xp, k, k, s, oh, ow)),
            ("col2im_numpy", lambda: K.col2im_numpy(cols, c, hp, wp, k, k, s, oh, ow)),
            ("col2im_numba", lambda: K.col2im_numba(cols, c, hp, wp, k, k, s, oh, ow)),
        ):
            row[name] = min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3
        rows.append(row)
    return rows


def bench_steps(config, steps):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, BINFOGAN_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SCRIPT, config, str(steps)], env=env,
                             capture_output=True, text=True, check=True)
        result = json.loads(res.stdout.strip().splitlines()[-1])
        out[result["backend"]] = result["seconds_per_step"]
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--steps", type=int, default=20)
    parser.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..", "configs",
                                                         "synthetic.cfg"))
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    print(f"{'layer':<22}{'im2col np':>11}{'im2col nb':>11}{'col2im np':>11}{'col2im nb':>11}   (ms, best of {args.repeat})")
    for r in bench_kernels(args.repeat):
        print(f"{r['layer']:<22}{r['im2col_numpy']:>11.3f}{r['im2col_numba']:>11.3f}"
              f"{r['col2im_numpy']:>11.3f}{r['col2im_numba']:>11.3f}")
    steps = bench_steps(args.config, args.steps)
    print(f"\ntraining step ({os.path.basename(args.config)}, mean of {args.steps}):")
    for backend, sec in steps.items():
        print(f"  {backend:<6} {sec * 1e3:8.1f} ms/step")
    print(f"  speedup numba vs numpy: {steps['numpy'] / steps['numba']:.2f}x")


if __name__ == "__main__":
    main()
