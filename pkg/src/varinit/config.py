"""Experiment configuration files (INI syntax).

Example::

    [experiment]
    dataset = toy-mnist
    train_subset = 10000
    val_size = 1000
    seeds = 0, 1, 2
    epochs = 5
    batch_size = 64
    output_dir = runs/mnist-init

    [architecture]
    type = mlp
    hidden = 128, 128, 128, 128
    activation = relu
    keep_prob = 0.3
    batchnorm = false
    initializer = hypersphere_fwdbwd, he

    [optimizer]
    optimizer = adam
    lr = 1e-3, 1e-4
    lr_milestones =
    lr_decay = 0.1
    weight_decay = 0
    momentum = 0.9
    momentum_reset_every = 0

Comma-separated values form grids; every (initializer, seed, lr) triple is
one training cell.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .activations import ActivationKind, parse_activation
from .initializers import NAMED


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    dataset: str = "toy-mnist"
    fallback_dataset: str | None = None  # used when `dataset` files are missing
    data_dir: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None
    val_size: int = 5000
    standardize: bool = True
    seeds: tuple[int, ...] = (0,)
    epochs: int = 25
    batch_size: int = 64
    output_dir: str = "runs/experiment"

    arch: str = "mlp"
    hidden: tuple[int, ...] = (256,) * 7
    channels: tuple[int, ...] = (16, 32)
    activation: ActivationKind = field(default_factory=lambda: parse_activation("relu"))
    keep_prob: float = 1.0
    input_keep_prob: float = 1.0
    batchnorm: bool = False
    bn_momentum: float = 0.9
    initializers: tuple[str, ...] = ("hypersphere_fwdbwd",)

    optimizer: str = "adam"
    lrs: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    lr_milestones: tuple[int, ...] = ()
    lr_decay: float = 0.1
    weight_decay: float = 0.0
    momentum: float = 0.9
    momentum_reset_every: int = 0

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.lrs:
            raise ConfigError("at least one learning rate is required")
        for name in self.initializers:
            if name not in NAMED:
                raise ConfigError(f"unknown initializer {name!r}; expected one of {sorted(NAMED)}")
        if self.arch not in ("mlp", "cnn"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.optimizer not in ("sgd", "nesterov", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


def load_config(path: str, **overrides) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    kw = {}
    if cp.has_section("experiment"):
        s = cp["experiment"]
        for key in ("dataset", "output_dir"):
            if key in s:
                kw[key] = s[key].strip()
        for key in ("data_dir", "fallback_dataset"):
            if s.get(key, "").strip():
                kw[key] = s[key].strip()
        for key in ("train_subset", "test_subset"):
            if s.get(key, "").strip():
                kw[key] = s.getint(key)
        for key in ("val_size", "epochs", "batch_size"):
            if key in s:
                kw[key] = s.getint(key)
        if "standardize" in s:
            kw["standardize"] = s.getboolean("standardize")
        if "seeds" in s:
            kw["seeds"] = _ints(s["seeds"])
    if cp.has_section("architecture"):
        s = cp["architecture"]
        if "type" in s:
            kw["arch"] = s["type"].strip()
        if "hidden" in s:
            kw["hidden"] = _ints(s["hidden"])
        if "channels" in s:
            kw["channels"] = _ints(s["channels"])
        if "activation" in s:
            kw["activation"] = parse_activation(s["activation"])
        for key in ("keep_prob", "input_keep_prob", "bn_momentum"):
            if key in s:
                kw[key] = s.getfloat(key)
        if "batchnorm" in s:
            kw["batchnorm"] = s.getboolean("batchnorm")
        if "initializer" in s:
            kw["initializers"] = tuple(t.strip() for t in s["initializer"].split(",") if t.strip())
    if cp.has_section("optimizer"):
        s = cp["optimizer"]
        if "optimizer" in s:
            kw["optimizer"] = s["optimizer"].strip()
        if "lr" in s:
            kw["lrs"] = _floats(s["lr"])
        if "lr_milestones" in s:
            kw["lr_milestones"] = _ints(s["lr_milestones"])
        for key in ("lr_decay", "weight_decay", "momentum"):
            if key in s:
                kw[key] = s.getfloat(key)
        if "momentum_reset_every" in s:
            kw["momentum_reset_every"] = s.getint("momentum_reset_every")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
