import json
import os
import shutil

import numpy as np
import pytest

from binfogan.checkpoint import load_checkpoint
from binfogan.cli import main
from binfogan.config import ConfigError, dump_config, load_config, parse_config
from binfogan.evaluation import read_pnm
from binfogan.experiment import probe_codes

TINY = """\
seed = 0
output_dir = {out}

[dataset]
kind = synthetic
synthetic_train = 256
heldout_size = 64
synthetic_test = 64

[latent]
z_dim = 4
categorical = 4
cont_dim = 1

[architecture]
image_height = 16
image_width = 16
gen_hidden = 32
gen_channels = 8, 4
enc_channels = 4, 8
enc_hidden = 32
disc_channels = 4, 8
disc_hidden = 32

[train]
batch_size = 16
total_steps = {steps}
lr_generator = 0.001
lr_encoder = 0.001
checkpoint_every = {every}

[eval]
rows_n = 2
extremes_m = 2
"""


def write_cfg(path, out, steps=5, every=2):
    path.write_text(TINY.format(out=out, steps=steps, every=every))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    cfg = write_cfg(root / "tiny.cfg", root / "out", steps=400, every=200)
    assert main(["train", cfg]) == 0
    return root, cfg


def test_config_round_trip_and_defaults(tmp_path):
    cfg = parse_config("")
    assert cfg.latent.category_counts == (10,) and cfg.latent.z_dim == 64 and cfg.latent.cont_dim == 2
    assert cfg.train.lam == 1.0 and cfg.evaluation.matching == "optimal"
    loaded = load_config(write_cfg(tmp_path / "a.cfg", tmp_path))
    assert parse_config(dump_config(loaded)) == loaded
    assert dump_config(parse_config(dump_config(loaded))) == dump_config(loaded)


@pytest.mark.parametrize("text, line, col, key", [
    ("seed = 1\n[train]\n  lamda = 2\n", 3, 3, "train.lamda"),
    ("[latent]\nz_dim = 2\nz_dim = 3\n", 3, 1, "latent.z_dim"),
    ("[nope]\n", 1, 1, "nope"),
    ("[train]\nbatch_size = many\n", 2, 14, "train.batch_size"),
])
def test_config_errors_carry_position(text, line, col, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert (info.value.line, info.value.column, info.value.key) == (line, col, key)


def test_unknown_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("seed = 0\n\n[train]\nlamda = 1.0\n")
    assert main(["train", str(path)]) == 2
    err = capsys.readouterr().err
    assert "train.lamda" in err and "line 4" in err and "column 1" in err


def test_five_step_run(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", tmp_path / "out")
    assert main(["train", cfg]) == 0
    lines = (tmp_path / "out" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["step"] for l in lines] == [0, 1, 2, 3, 4]
    ckpts = sorted(os.listdir(tmp_path / "out" / "checkpoints"))
    assert ckpts == ["step_000002.ckpt", "step_000004.ckpt", "step_000005.ckpt"]
    assert (tmp_path / "out" / "final.ckpt").exists()


def _snapshot(out, names):
    blobs = {name: (out / name).read_bytes() for name in names}
    shutil.rmtree(out)
    return blobs


# checkpoints embed the config, output_dir included, so repeated runs share one directory
def test_identical_runs_are_bitwise_identical(tmp_path):
    names = ("metrics.jsonl", "final.ckpt", "checkpoints/step_000003.ckpt")
    cfg = write_cfg(tmp_path / "a.cfg", tmp_path / "out", steps=6, every=3)
    runs = []
    for _ in range(2):
        assert main(["train", cfg]) == 0
        runs.append(_snapshot(tmp_path / "out", names))
    assert runs[0] == runs[1]


def test_resume_from_checkpoint_matches_straight_run(tmp_path):
    names = ("metrics.jsonl", "final.ckpt")
    out = tmp_path / "out"
    assert main(["train", write_cfg(tmp_path / "s.cfg", out, steps=20, every=10)]) == 0
    straight = _snapshot(out, names)
    assert main(["train", write_cfg(tmp_path / "f.cfg", out, steps=10, every=10)]) == 0
    shutil.copy(out / "final.ckpt", tmp_path / "half.ckpt")
    resumed_cfg = write_cfg(tmp_path / "r.cfg", out, steps=20, every=10)
    assert main(["train", resumed_cfg, "--resume", str(tmp_path / "half.ckpt")]) == 0
    assert _snapshot(out, names) == straight


def test_probe_codes_cycle_categories():
    cfg = parse_config("[latent]\ncategorical = 4\n")
    codes = probe_codes(cfg.latent, 0, 8)
    assert codes.labels().tolist() == [0, 1, 2, 3, 0, 1, 2, 3]
    assert np.array_equal(probe_codes(cfg.latent, 0, 8).z, codes.z)


def test_eval_is_deterministic(trained, tmp_path):
    root, cfg = trained
    ckpt = str(root / "out" / "final.ckpt")
    assert main(["eval", ckpt, cfg, "--out", str(tmp_path / "a.json")]) == 0
    assert main(["eval", ckpt, cfg, "--out", str(tmp_path / "b.json")]) == 0
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    report = json.loads(a)
    assert 0 <= report["accuracy"] <= 1 and report["num_images"] == 64
    assert sorted(report["assignment"]) == [0, 1, 2, 3]


def test_untrained_eval_near_chance(tmp_path):
    accs = []
    for seed in range(5):
        cfg = write_cfg(tmp_path / f"u{seed}.cfg", tmp_path / f"u{seed}", steps=1, every=0)
        assert main(["train", cfg, "--seed", str(seed)]) == 0
        out = tmp_path / f"u{seed}.json"
        assert main(["eval", str(tmp_path / f"u{seed}" / "final.ckpt"), cfg, "--seed", str(seed),
                     "--out", str(out)]) == 0
        accs.append(json.loads(out.read_text())["accuracy"])
    assert all(0.10 <= a <= 0.40 for a in accs), accs


def test_geometry_mismatch_exits_4(trained, tmp_path, capsys):
    root, cfg = trained
    # a dataset of a different geometry, fed through a raw-tensor file
    from binfogan.data import Dataset, save_raw_dataset
    rng = np.random.default_rng(0)
    save_raw_dataset(Dataset(rng.integers(0, 256, (80, 1, 32, 32)).astype(np.uint8),
                             rng.integers(0, 4, 80)), tmp_path / "big.bin")
    raw_cfg = tmp_path / "raw.cfg"
    raw_cfg.write_text(open(cfg).read().replace("kind = synthetic", f"kind = raw\npath = {tmp_path / 'big.bin'}")
                       .replace("heldout_size = 64", "heldout_size = 40"))
    assert main(["eval", str(root / "out" / "final.ckpt"), str(raw_cfg), "--out", str(tmp_path / "x.json")]) == 4
    err = capsys.readouterr().err
    assert "(1, 32, 32)" in err and "(1, 16, 16)" in err


def test_corrupt_checkpoint_exits_4(trained, tmp_path):
    root, cfg = trained
    raw = (root / "out" / "final.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(raw[:100])
    assert main(["eval", str(tmp_path / "cut.ckpt"), cfg]) == 4


def test_sample_modes(trained, tmp_path):
    root, cfg = trained
    ckpt = str(root / "out" / "final.ckpt")
    out = tmp_path / "rows.pgm"
    assert main(["sample", ckpt, "category-rows", "--config", cfg, "--n", "2", "--out", str(out)]) == 0
    assert read_pnm(out).shape == (1, 4 * 16 + 3 * 2, 2 * 16 + 2)
    again = tmp_path / "rows2.pgm"
    assert main(["sample", ckpt, "category-rows", "--config", cfg, "--n", "2", "--out", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()

    out = tmp_path / "ext.pgm"
    assert main(["sample", ckpt, "continuous-extremes", "--config", cfg, "--out", str(out)]) == 0
    assert read_pnm(out).shape == (1, 4 * 16 + 3 * 2, 4 * 16 + 3 * 2)

    out = tmp_path / "sweep.pgm"
    assert main(["sample", ckpt, "generator-sweep", "--rows", "3", "--out", str(out)]) == 0
    assert read_pnm(out).shape == (1, 3 * 16 + 2 * 2, 4 * 16 + 3 * 2)


def test_generator_sweep_codes(trained):
    from binfogan.experiment import generator_sweep

    root, _ = trained
    ckpt = load_checkpoint(root / "out" / "final.ckpt")
    _, rows, cols, codes = generator_sweep(ckpt, "cat:0", rows=3)
    assert (rows, cols) == (3, 4)
    flat = codes.flat().reshape(3, 4, -1)
    cat = slice(4, 8)
    for r in range(3):
        others = np.delete(flat[r], np.r_[cat], axis=1)
        assert np.all(others == others[0])
        assert flat[r, :, cat].argmax(axis=1).tolist() == [0, 1, 2, 3]
    _, _, cols, codes = generator_sweep(ckpt, "cont:0", rows=2, steps=5)
    assert codes.cont[:5, 0].tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]


def test_empty_category_exits_5(trained, tmp_path, capsys):
    root, cfg = trained
    ckpt = str(root / "out" / "final.ckpt")
    assert main(["sample", ckpt, "category-rows", "--config", cfg, "--n", "60",
                 "--out", str(tmp_path / "x.pgm")]) == 5
    assert "category" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "n.cfg", tmp_path / "n", steps=3, every=0)
    text = open(cfg).read().replace("lr_generator = 0.001", "lr_generator = 1e300") \
        .replace("lr_encoder = 0.001", "lr_encoder = 1e300")
    (tmp_path / "n.cfg").write_text(text)
    assert main(["train", cfg]) == 3
    assert "loss term" in capsys.readouterr().err
