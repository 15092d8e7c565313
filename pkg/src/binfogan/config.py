"""Experiment configuration: a strict line-oriented ``[section]`` / ``key = value`` format.

Keys before the first section header are global. ``#`` starts a comment.
Lists are comma separated. Unknown sections or keys are errors, reported
with line and column, so typos never pass silently.

Example::

    seed = 1
    output_dir = runs/shapes

    [dataset]
    kind = synthetic

    [latent]
    z_dim = 16
    categorical = 4
    cont_dim = 1
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .latent import LatentSpec
from .networks import Architecture
from .training import TrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | idx | raw
    path: str = ""
    test_path: str = ""
    train_limit: int = 0  # 0 = everything
    heldout_size: int = 400
    test_limit: int = 0
    synthetic_train: int = 2000
    synthetic_test: int = 400
    synthetic_seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    matching: str = "optimal"
    match_on: str = "heldout"  # heldout | test
    rows_n: int = 10
    extremes_m: int = 5
    sweep_rows: int = 8
    sweep_steps: int = 10
    batch_size: int = 256


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"
    sample_every: int = 0
    seed: int = 0

    @property
    def arch(self):
        return self.train.arch

    @property
    def latent(self):
        return self.train.arch.latent


def _ints(text):
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# (section, key) -> (parser, owner, attribute)
_D, _L, _A, _T, _E, _G = "dataset", "latent", "architecture", "train", "eval", ""
SCHEMA = {
    _G: {"seed": int, "output_dir": str, "sample_every": int},
    _D: {f.name: (int if f.type == "int" else str) for f in fields(DatasetConfig)},
    _L: {"z_dim": int, "categorical": _ints, "cont_dim": int},
    _A: {"image_channels": int, "image_height": int, "image_width": int,
         "gen_hidden": int, "gen_channels": _ints, "enc_channels": _ints, "enc_hidden": int,
         "disc_channels": _ints, "disc_hidden": int, "leaky_alpha": float, "batch_norm": _bool},
    _T: {"lambda": float, "batch_size": int, "total_steps": int, "lr_generator": float,
         "lr_encoder": float, "lr_discriminator": float, "beta1": float, "beta2": float,
         "eps": float, "d_steps": int, "loss": str, "checkpoint_every": int},
    _E: {f.name: (int if f.type == "int" else str) for f in fields(EvalConfig)},
}
SECTION_ORDER = (_G, _D, _L, _A, _T, _E)


def _tokenize(text):
    """``{section: {key: (value, line, value_column)}}`` plus key positions."""
    sections = {s: {} for s in SCHEMA}
    current = _G
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        col = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, col)
            name = stripped[1:-1].strip()
            if name not in SCHEMA or name == _G:
                raise ConfigError(f"unknown section [{name}]", lineno, col, key=name)
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno, col)
        key_part, value = line.split("=", 1)
        key = key_part.strip()
        label = f"{current}.{key}" if current else key
        if key not in SCHEMA[current]:
            raise ConfigError(f"unknown key '{label}'", lineno, col, key=label)
        if key in sections[current]:
            raise ConfigError(f"duplicate key '{label}'", lineno, col, key=label)
        value_col = len(key_part) + 2 + (len(value) - len(value.lstrip()))
        sections[current][key] = (value.strip(), lineno, value_col)
    return sections


def parse_config(text):
    sections = _tokenize(text)
    values = {}
    for section, entries in sections.items():
        for key, (raw, lineno, col) in entries.items():
            try:
                values[(section, key)] = SCHEMA[section][key](raw)
            except ValueError as exc:
                label = f"{section}.{key}" if section else key
                raise ConfigError(f"bad value for '{label}': {exc}", lineno, col, key=label) from None

    def get(section, key, default):
        return values.get((section, key), default)

    try:
        d = DatasetConfig()
        dataset = replace(d, **{f.name: get(_D, f.name, getattr(d, f.name)) for f in fields(d)})
        if dataset.kind not in ("synthetic", "idx", "raw"):
            raise ValueError(f"dataset.kind must be synthetic, idx or raw, got {dataset.kind!r}")
        if dataset.kind != "synthetic" and not dataset.path:
            raise ValueError(f"dataset.path is required for kind {dataset.kind!r}")
        ls = LatentSpec()
        cats = get(_L, "categorical", ls.category_counts)
        latent = LatentSpec.uniform(get(_L, "z_dim", ls.z_dim), cats, get(_L, "cont_dim", ls.cont_dim))
        a = Architecture()
        arch = Architecture(
            image_shape=(get(_A, "image_channels", a.image_shape[0]),
                         get(_A, "image_height", a.image_shape[1]),
                         get(_A, "image_width", a.image_shape[2])),
            latent=latent,
            **{k: get(_A, k, getattr(a, k)) for k in SCHEMA[_A] if not k.startswith("image_")},
        )
        t = TrainConfig()
        train = TrainConfig(
            arch=arch,
            lam=get(_T, "lambda", t.lam),
            seed=get(_G, "seed", t.seed),
            **{k: get(_T, k, getattr(t, k)) for k in SCHEMA[_T] if k != "lambda"},
        )
        e = EvalConfig()
        evaluation = replace(e, **{f.name: get(_E, f.name, getattr(e, f.name)) for f in fields(e)})
        if evaluation.matching not in ("optimal", "majority"):
            raise ValueError(f"eval.matching must be optimal or majority, got {evaluation.matching!r}")
        if evaluation.match_on not in ("heldout", "test"):
            raise ValueError(f"eval.match_on must be heldout or test, got {evaluation.match_on!r}")
    except (ValueError, NotImplementedError) as exc:
        raise ConfigError(str(exc)) from None
    g = ExperimentConfig()
    return ExperimentConfig(
        dataset=dataset, train=train, evaluation=evaluation,
        output_dir=get(_G, "output_dir", g.output_dir),
        sample_every=get(_G, "sample_every", g.sample_every),
        seed=train.seed,
    )


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _flatten(cfg):
    arch, train, spec = cfg.arch, cfg.train, cfg.latent
    out = {
        _G: {"seed": cfg.seed, "output_dir": cfg.output_dir, "sample_every": cfg.sample_every},
        _D: {f.name: getattr(cfg.dataset, f.name) for f in fields(DatasetConfig)},
        _L: {"z_dim": spec.z_dim, "categorical": spec.category_counts, "cont_dim": spec.cont_dim},
        _A: {"image_channels": arch.image_shape[0], "image_height": arch.image_shape[1],
             "image_width": arch.image_shape[2]},
        _T: {"lambda": train.lam},
        _E: {f.name: getattr(cfg.evaluation, f.name) for f in fields(EvalConfig)},
    }
    out[_A].update({k: getattr(arch, k) for k in SCHEMA[_A] if not k.startswith("image_")})
    out[_T].update({k: getattr(train, k) for k in SCHEMA[_T] if k != "lambda"})
    return out


def dump_config(cfg):
    """Canonical text: every key, schema order. ``parse_config`` inverts it exactly."""
    flat = _flatten(cfg)
    lines = []
    for section in SECTION_ORDER:
        if section:
            lines.append("")
            lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            lines.append(f"{key} = {_fmt(flat[section][key])}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg, seed=None, output_dir=None):
    if seed is not None:
        cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
    if output_dir is not None:
        cfg = replace(cfg, output_dir=output_dir)
    return cfg
