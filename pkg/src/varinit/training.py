"""Training grid runner: one metrics CSV and two checkpoints per (initializer, seed, lr) cell.

Cell outputs live in ``<output_dir>/<initializer>/``::

    seed<S>_lr<LR>.csv            per-epoch metrics
    seed<S>_lr<LR>_halfway.npz    checkpoint after epoch ceil(epochs / 2)
    seed<S>_lr<LR>_final.npz      checkpoint after the last epoch

``<output_dir>/summary.csv`` collects the final row of every cell. Every file
starts with a schema comment line; only ``wall_seconds`` varies between
identical runs.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .config import ExperimentConfig
from .core import RandomSource
from .data import Dataset, Standardizer, batches, holdout_split, load_dataset, standardize
from .layers import Mode, Network
from .models import build_cnn, build_mlp
from .optim import DivergenceError, LrSchedule, Optimizer
from .reestimate import evaluate

log = logging.getLogger(__name__)

METRICS_HEADER = "# varinit-metrics v1"
METRICS_FIELDS = ["seed", "epoch", "lr", "train_loss", "val_loss", "test_loss", "test_error",
                  "wall_seconds", "status"]
SUMMARY_HEADER = "# varinit-summary v1"
SUMMARY_FIELDS = ["initializer", "seed", "lr", "epochs_completed", "train_loss", "val_loss",
                  "test_loss", "test_error", "status"]


@dataclass
class Splits:
    train: Dataset
    val: Dataset | None
    test: Dataset
    stats: Standardizer | None = None
    source: str = ""


def prepare_data(cfg: ExperimentConfig) -> Splits:
    """Load, subset, hold out a validation split (seed 0) and standardize with train stats."""
    source = cfg.dataset
    try:
        train, test = load_dataset(cfg.dataset, cfg.data_dir)
    except FileNotFoundError as exc:
        if not cfg.fallback_dataset:
            raise
        log.warning("%s data not found (%s); using %s", cfg.dataset, exc, cfg.fallback_dataset)
        source = cfg.fallback_dataset
        train, test = load_dataset(source, cfg.data_dir)
    if cfg.train_subset:
        train = train.take(np.arange(min(cfg.train_subset, len(train))))
    if cfg.test_subset:
        test = test.take(np.arange(min(cfg.test_subset, len(test))))
    val = stats = None
    if cfg.val_size:
        train, val = holdout_split(train, cfg.val_size, seed=0)
    if cfg.standardize:
        train, stats = standardize(train)
        test, _ = standardize(test, stats)
        if val is not None:
            val, _ = standardize(val, stats)
    return Splits(train, val, test, stats, source)


def build_network(cfg: ExperimentConfig, init: str, seed: int, input_shape) -> Network:
    rng = RandomSource(seed).child(1)
    if cfg.arch == "cnn":
        return build_cnn(tuple(input_shape), list(cfg.channels), 10, cfg.activation, init, rng,
                         keep_prob=cfg.keep_prob, batchnorm=cfg.batchnorm)
    return build_mlp(int(np.prod(input_shape)), list(cfg.hidden), 10, cfg.activation, init, rng,
                     keep_prob=cfg.keep_prob, input_keep_prob=cfg.input_keep_prob,
                     batchnorm=cfg.batchnorm, bn_momentum=cfg.bn_momentum)


def make_optimizer(cfg: ExperimentConfig, net: Network) -> Optimizer:
    return Optimizer(kind=cfg.optimizer, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                     decay=net.decayed())


def train_epoch(net: Network, opt: Optimizer, data: Dataset, lr: float, batch_size: int,
                shuffle_seed: int, rng: RandomSource) -> float:
    """One pass of minibatch training; returns the example-weighted mean training loss."""
    params = net.params()
    total = 0.0
    for x, y in batches(data, batch_size, shuffle=True, seed=shuffle_seed):
        _, cache = net.forward(x, Mode.TRAIN, rng)
        loss, grads = net.backward(cache, y)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite training loss {loss}")
        opt.step(params, grads, lr)
        total += loss * len(y)
    return total / len(data)


def _cell_stem(seed: int, lr: float) -> str:
    return f"seed{seed}_lr{lr:g}"


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def train_cell(cfg: ExperimentConfig, splits: Splits, init: str, seed: int, lr: float,
               out_dir: str | None = None) -> list[dict]:
    """Train one grid cell; returns its metrics rows. Divergence ends the cell with a 'diverged' row."""
    net = build_network(cfg, init, seed, splits.train.images.shape[1:])
    net.preprocess = splits.stats
    opt = make_optimizer(cfg, net)
    schedule = LrSchedule(lr, cfg.lr_decay, tuple(cfg.lr_milestones))
    dropout_rng = RandomSource(seed).child(2)
    halfway = math.ceil(cfg.epochs / 2)
    stem = _cell_stem(seed, lr)
    rows = []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        if cfg.momentum_reset_every and epoch and epoch % cfg.momentum_reset_every == 0:
            opt.reset_slots()
        lr_now = schedule.lr_at(epoch)
        row = {"seed": seed, "epoch": epoch + 1, "lr": lr_now}
        try:
            with np.errstate(over="raise", invalid="raise"):
                row["train_loss"] = train_epoch(net, opt, splits.train, lr_now, cfg.batch_size,
                                                seed * 100_003 + epoch, dropout_rng)
            row["val_loss"] = evaluate(net, splits.val)[0] if splits.val is not None else math.nan
            row["test_loss"], row["test_error"] = evaluate(net, splits.test)
            if not all(math.isfinite(row[k]) for k in ("val_loss", "test_loss")) and splits.val is not None:
                raise DivergenceError("non-finite evaluation loss")
            row["status"] = "ok"
        except (DivergenceError, FloatingPointError) as exc:
            log.warning("cell %s/%s diverged at epoch %d: %s", init, stem, epoch + 1, exc)
            row.update(train_loss=math.nan, val_loss=math.nan, test_loss=math.nan,
                       test_error=math.nan, status="diverged")
        row["wall_seconds"] = f"{time.perf_counter() - start:.3f}"
        rows.append(row)
        if row["status"] != "ok":
            break
        if out_dir is not None and epoch + 1 in (halfway, cfg.epochs):
            tag = "final" if epoch + 1 == cfg.epochs else "halfway"
            checkpoint.save(net, os.path.join(out_dir, f"{stem}_{tag}.npz"))
            if tag == "final" and halfway == cfg.epochs:
                checkpoint.save(net, os.path.join(out_dir, f"{stem}_halfway.npz"))
    if out_dir is not None:
        write_metrics(rows, os.path.join(out_dir, f"{stem}.csv"))
    return rows


def write_metrics(rows: list[dict], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(METRICS_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in METRICS_FIELDS])


def read_metrics(path: str, drop_wall: bool = True) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if drop_wall:
        for r in rows:
            r.pop("wall_seconds", None)
    return rows


def run_train(cfg: ExperimentConfig, splits: Splits | None = None) -> list[dict]:
    """Run the full (initializer x seed x lr) grid; returns one summary row per cell."""
    splits = splits or prepare_data(cfg)
    summary = []
    for init in cfg.initializers:
        out_dir = os.path.join(cfg.output_dir, init)
        for seed in cfg.seeds:
            for lr in cfg.lrs:
                try:
                    rows = train_cell(cfg, splits, init, seed, lr, out_dir)
                except Exception as exc:  # one bad cell never stops the grid
                    log.error("cell %s seed=%d lr=%g failed: %s", init, seed, lr, exc)
                    rows = [{"epoch": 0, "train_loss": math.nan, "val_loss": math.nan,
                             "test_loss": math.nan, "test_error": math.nan, "status": "failed"}]
                last = rows[-1]
                summary.append({"initializer": init, "seed": seed, "lr": lr,
                                "epochs_completed": sum(r["status"] == "ok" for r in rows),
                                **{k: last[k] for k in ("train_loss", "val_loss", "test_loss",
                                                        "test_error", "status")}})
    write_summary(summary, os.path.join(cfg.output_dir, "summary.csv"))
    return summary


def write_summary(summary: list[dict], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in summary:
            w.writerow([_fmt(r[k]) for k in SUMMARY_FIELDS])
