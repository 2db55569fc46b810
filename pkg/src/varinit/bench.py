"""Acceptance scenarios: each runs an experiment and scores it against fixed criteria.

Scenarios read their settings from the ``.ini`` files shipped in
``varinit/configs``. Each writes its data CSVs plus ``criteria.csv`` to
``<out>/<scenario>/`` and returns one :class:`Criterion` per check.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
import statistics
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import activations as act
from . import checkpoint, varprop
from .config import load_config
from .core import RandomSource
from .data import Dataset
from .gradcheck import check_gradients
from .initializers import build_dense_weights, named_spec
from .layers import Activation, BatchNorm, Conv2d, Dense, Dropout, Mode, Network
from .reestimate import ReEstimateConfig, evaluate, reestimate
from .training import prepare_data, read_metrics, run_train

SCENARIOS = ("factors", "varprop", "grads", "mnist-init", "bn-reestimate")
CRITERIA_HEADER = "# varinit-bench v1"


@dataclass
class Criterion:
    scenario: str
    name: str
    measured: float
    target: str
    passed: bool | None  # None: skipped

    @property
    def status(self) -> str:
        return "SKIP" if self.passed is None else ("PASS" if self.passed else "FAIL")

    def line(self) -> str:
        return f"{self.status}  {self.scenario}: {self.name}  measured={self.measured:.6g}  target {self.target}"


def config_path(scenario: str) -> str:
    return str(resources.files("varinit") / "configs" / f"{scenario}.ini")


def _ini(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    return cp


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def write_criteria(criteria: list[Criterion], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(CRITERIA_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "criterion", "measured", "target", "status"])
        for c in criteria:
            w.writerow([c.scenario, c.name, repr(float(c.measured)), c.target, c.status])


def _within(value: float, target: float, tol: float) -> bool:
    return abs(value - target) <= tol


# factors -------------------------------------------------------------------

def bench_factors(out_dir: str, cfg_path: str | None = None) -> list[Criterion]:
    cp = _ini(cfg_path or config_path("factors"))
    sec = cp["factors"]
    tol = sec.getfloat("tolerance")
    agree = sec.getfloat("agreement")
    methods = [m.strip() for m in sec["methods"].split(",")]
    crit = []
    rows = []
    for name in (a.strip() for a in sec["activations"].split(",")):
        f = act.parse_activation(name)
        table = _floats(cp["table"][name])
        est = {m: act.adjustment_factors(f, m) for m in methods}
        for m, fac in est.items():
            rows.append([f.label, repr(fac.forward), repr(fac.backward), m])
            for which, value, ref in (("forward", fac.forward, table[0]), ("backward", fac.backward, table[1])):
                crit.append(Criterion("factors", f"{name} {which} by {m}", value,
                                      f"{ref} +/- {tol}", _within(value, ref, tol)))
        if len(methods) == 2:
            a, b = (est[m] for m in methods)
            for which in ("forward", "backward"):
                gap = abs(getattr(a, which) - getattr(b, which))
                crit.append(Criterion("factors", f"{name} {which} {methods[0]} vs {methods[1]}", gap,
                                      f"<= {agree}", gap <= agree))
    path = os.path.join(out_dir, "factors.csv")
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["activation", "forward", "backward", "method"])
        w.writerows(rows)
    return crit


# varprop -------------------------------------------------------------------

def bench_varprop(out_dir: str, cfg_path: str | None = None) -> list[Criterion]:
    cp = _ini(cfg_path or config_path("varprop"))
    base = cp["varprop"]
    depth = base.getint("depth")
    common = dict(depth=depth, widths=varprop.default_widths(depth), batch=base.getint("batch"),
                  seed=base.getint("seed"), activation=act.parse_activation(base["activation"]))
    fw, bw = cp["forward"], cp["backward"]
    crit = []

    def run(direction, init, p, **extra):
        cfg = varprop.PropagationConfig(direction=direction, init=init, keep_prob=p, **{**common, **extra})
        rep = varprop.propagate(cfg)
        varprop.export_report(rep, os.path.join(out_dir, f"{direction}_{init}_p{p:g}"))
        return rep

    lo, hi = fw.getfloat("band_low"), fw.getfloat("band_high")
    for p in _floats(fw["keep_probs"]):
        v = run("forward", fw["corrected_init"], p).variances
        crit.append(Criterion("varprop", f"forward corrected p={p:g} layer-{depth} variance", v[-1],
                              f"in [{lo:.4g}, {hi:g}]", lo <= v[-1] <= hi and len(v) == depth))
        worst = max(v, key=lambda x: abs(math.log(x)))
        crit.append(Criterion("varprop", f"forward corrected p={p:g} worst layer variance", worst,
                              f"in [{lo:.4g}, {hi:g}]", lo <= min(v) and max(v) <= hi))
    p_he = fw.getfloat("he_keep_prob")
    he = run("forward", "he", p_he)
    v_he = he.variances[-1] if he.exploded_at is None else math.inf
    crit.append(Criterion("varprop", f"forward he p={p_he:g} layer-{depth} variance", v_he,
                          f"> {fw.getfloat('he_min'):g}", v_he > fw.getfloat("he_min")))
    first, last = fw.getint("growth_first"), fw.getint("growth_last")
    ratio = varprop.growth_ratio(he.variances, first, last)
    gtol = fw.getfloat("growth_tolerance")
    crit.append(Criterion("varprop", f"forward he p={p_he:g} growth ratio layers {first}-{last}", ratio,
                          f"{1 / p_he:.4g} within {gtol:.0%}", abs(ratio * p_he - 1.0) <= gtol))
    p_x = fw.getfloat("xavier_keep_prob")
    v_x = run("forward", "xavier", p_x).variances[-1]
    crit.append(Criterion("varprop", f"forward xavier p={p_x:g} layer-{depth} variance", v_x,
                          f"< {fw.getfloat('xavier_max'):g}", v_x < fw.getfloat("xavier_max")))

    max_ratio = bw.getfloat("max_ratio")
    for p in _floats(bw["keep_probs"]):
        v = run("backward", bw["corrected_init"], p).variances
        r = v[0] / v[-1]
        crit.append(Criterion("varprop", f"backward corrected p={p:g} layer-1/layer-{depth} variance ratio", r,
                              f"in [1/{max_ratio:g}, {max_ratio:g}]", 1 / max_ratio <= r <= max_ratio))
    width = bw.getint("orthonormal_width")
    dev = orthonormal_identity_deviation(depth, width, common["batch"], common["seed"])
    tol = bw.getfloat("orthonormal_tolerance")
    crit.append(Criterion("varprop", "backward orthonormal identity max relative variance change", dev,
                          f"<= {tol:g}", dev <= tol))
    return crit


def orthonormal_identity_deviation(depth: int, width: int, batch: int, seed: int) -> float:
    """Max relative per-layer change of error-signal variance with identity f, orthonormal W, p=1."""
    cfg = varprop.PropagationConfig(direction="backward", depth=depth, widths=(width,) * depth,
                                    activation=act.IDENTITY, keep_prob=1.0, init="orthonormal_bwd",
                                    batch=batch, seed=seed)
    v = np.array(varprop.propagate_backward(cfg).variances)
    return float(np.max(np.abs(v[:-1] / v[1:] - 1.0)))


# grads ---------------------------------------------------------------------

def gradient_nets(seed: int = 0) -> dict[str, tuple[Network, np.ndarray, np.ndarray]]:
    """Small networks isolating each layer type, with inputs and labels."""
    rng = RandomSource(seed)
    x2 = rng.child(1).standard_normal((8, 6))
    x4 = rng.child(2).standard_normal((4, 5, 5, 2))
    y = rng.child(3).integers(0, 3, 8)
    y4 = y[:4]

    def dense(n_in, n_out, key):
        return Dense(rng.child(key).standard_normal((n_in, n_out)) / math.sqrt(n_in),
                     0.1 * rng.child(key + 1000).standard_normal(n_out))

    def conv(c_in, c_out, key, stride=1, padding=1):
        return Conv2d(rng.child(key).standard_normal((3, 3, c_in, c_out)) / math.sqrt(9 * c_in),
                      0.1 * rng.child(key + 1000).standard_normal(c_out), stride=stride, padding=padding)

    def bn(n, key):
        layer = BatchNorm(n)
        layer.gamma[...] = 1.0 + 0.2 * rng.child(key).standard_normal(n)
        layer.beta[...] = 0.2 * rng.child(key + 1000).standard_normal(n)
        return layer

    nets = {
        "dense": (Network([dense(6, 5, 10), dense(5, 3, 11)]), x2, y),
        "conv2d": (Network([conv(2, 3, 20), conv(3, 2, 21, stride=2, padding=0), dense(8, 3, 22)]), x4, y4),
        "dropout": (Network([dense(6, 5, 30), Dropout(0.5), dense(5, 3, 31)]), x2, y),
        "batchnorm": (Network([dense(6, 5, 40), bn(5, 41), dense(5, 3, 42)]), x2, y),
        "batchnorm-conv": (Network([conv(2, 3, 50), bn(3, 51), dense(75, 3, 52)]), x4, y4),
    }
    for i, name in enumerate(act.KINDS):
        f = act.parse_activation(name)
        nets[f"activation-{name}"] = (Network([dense(6, 5, 60 + i), Activation(f), dense(5, 3, 70 + i)]), x2, y)
    nets["mixed"] = (Network([conv(2, 3, 80), bn(3, 81), Activation(act.GELU), Dropout(0.7),
                              dense(75, 6, 82), bn(6, 83), Activation(act.TANH), dense(6, 3, 84)]), x4, y4)
    return nets


def bench_grads(out_dir: str, tolerance: float = 1e-4, per_param: int = 10) -> list[Criterion]:
    crit = []
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "gradcheck.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["net", "param", "index", "analytic", "numeric", "rel_error"])
        for name, (net, x, y) in gradient_nets().items():
            checks = check_gradients(net, x, y, seed=0, per_param=per_param)
            for c in checks:
                w.writerow([name, c.name, "/".join(map(str, c.index)), repr(c.analytic), repr(c.numeric),
                            repr(c.rel_error)])
            worst = max(c.rel_error for c in checks)
            crit.append(Criterion("grads", f"{name} max relative error ({len(checks)} entries)", worst,
                                  f"< {tolerance:g}", worst < tolerance))
    return crit


# training-based scenarios ----------------------------------------------------

def _median(xs):
    return statistics.median(xs) if xs else math.nan


def bench_mnist_init(out_dir: str, cfg_path: str | None = None, dataset: str | None = None) -> list[Criterion]:
    path = cfg_path or config_path("mnist-init")
    cfg = load_config(path, output_dir=os.path.join(out_dir, "runs"), dataset=dataset)
    bench = _ini(path)["bench"]
    try:
        splits = prepare_data(cfg)
    except FileNotFoundError as exc:
        return [Criterion("mnist-init", f"corrected <= baseline final train loss (data missing: {exc})",
                          math.nan, "skipped", None)]
    summary = run_train(cfg, splits)
    select_by = bench.get("select_by", "val_loss")
    best = {}
    for init in (bench["corrected"], bench["baseline"]):
        per_lr = {}
        for lr in cfg.lrs:
            cells = [r for r in summary if r["initializer"] == init and r["lr"] == lr]
            key = [r[select_by] if r["status"] == "ok" else math.inf for r in cells]
            per_lr[lr] = (_median(key), _median([r["train_loss"] if r["status"] == "ok" else math.inf
                                                 for r in cells]))
        lr_best = min(per_lr, key=lambda lr: per_lr[lr][0])
        best[init] = (lr_best, per_lr[lr_best][1])
    c_lr, c_loss = best[bench["corrected"]]
    b_lr, b_loss = best[bench["baseline"]]
    return [Criterion("mnist-init",
                      f"[{splits.source}] median final train loss {bench['corrected']} (lr={c_lr:g}) "
                      f"<= {bench['baseline']} (lr={b_lr:g}) = {b_loss:.6g}",
                      c_loss, f"<= {b_loss:.6g}", c_loss <= b_loss)]


def direction_check(sec) -> tuple[float, float]:
    """Mean ratio (re-estimated / dropout-on running_var) and fraction of features that shrank,
    on a synthetic i.i.d. net ``Dense -> tanh -> Dropout(p) -> Dense -> BatchNorm``."""
    p = sec.getfloat("keep_prob")
    width, feats = sec.getint("width"), sec.getint("features")
    batch = sec.getint("batch")
    rng = RandomSource(sec.getint("seed"))
    w1 = build_dense_weights(named_spec("hypersphere_fwd", 1.0, act.IDENTITY, act.TANH), rng.child(1), width, width)
    w2 = build_dense_weights(named_spec("hypersphere_fwd", p, act.TANH, act.IDENTITY), rng.child(2), width, feats)
    bn = BatchNorm(feats)
    net = Network([Dense(w1), Activation(act.TANH), Dropout(p), Dense(w2), bn])
    drop_rng = rng.child(3)
    data_rng = rng.child(4)
    for _ in range(sec.getint("train_batches")):
        net.forward(data_rng.standard_normal((batch, width)), Mode.TRAIN, drop_rng)
    before = bn.running_var.copy()
    n = sec.getint("reestimate_examples")
    data = Dataset(data_rng.standard_normal((n, width)), np.zeros(n, dtype=np.int64), "train")
    after = reestimate(net, data, ReEstimateConfig(estimator="exact", batch_size=batch)).batchnorms()[0].running_var
    return float(np.mean(after / before)), float(np.mean(after < before))


def bench_bn_reestimate(out_dir: str, cfg_path: str | None = None, dataset: str | None = None) -> list[Criterion]:
    path = cfg_path or config_path("bn-reestimate")
    cp = _ini(path)
    crit = []

    d = cp["direction"]
    p, tol = d.getfloat("keep_prob"), d.getfloat("tolerance")
    ratio, frac = direction_check(d)
    crit.append(Criterion("bn-reestimate", f"direction: re-estimated / dropout-on variance vs p={p:g}",
                          ratio, f"{p:g} within {tol:.0%}", abs(ratio / p - 1.0) <= tol))
    min_frac = d.getfloat("min_fraction_smaller")
    crit.append(Criterion("bn-reestimate", "direction: fraction of features whose variance shrank", frac,
                          f">= {min_frac:g}", frac >= min_frac))

    cfg = load_config(path, output_dir=os.path.join(out_dir, "runs"), dataset=dataset)
    r = cp["reestimate"]
    rcfg = ReEstimateConfig(epochs=r.getint("epochs"), estimator=r["estimator"].strip(),
                            batch_size=r.getint("batch_size"))
    try:
        splits = prepare_data(cfg)
    except FileNotFoundError as exc:
        crit.append(Criterion("bn-reestimate", f"bit-freeze and improvement (data missing: {exc})",
                              math.nan, "skipped", None))
        return crit
    run_train(cfg, splits)

    rows = []
    frozen = True
    changed_any = False
    for seed in cfg.seeds:
        stem = f"seed{seed}_lr{cfg.lrs[0]:g}"
        net = checkpoint.load(os.path.join(cfg.output_dir, cfg.initializers[0], f"{stem}_final.npz"))
        snapshot = {k: v.copy() for k, v in net.state().items()}
        new = reestimate(net, splits.train, rcfg)
        for k, v in new.state().items():
            same = np.array_equal(v, snapshot[k]) and v.tobytes() == snapshot[k].tobytes()
            if k.endswith(".running_var"):
                changed_any |= not same
            else:
                frozen &= same
        # the input network must be untouched too
        frozen &= all(np.array_equal(v, snapshot[k]) for k, v in net.state().items())
        before = evaluate(net, splits.test)
        after = evaluate(new, splits.test)
        rows.append([seed, repr(before[0]), repr(before[1]), repr(after[0]), repr(after[1])])
        checkpoint.save(new, os.path.join(out_dir, "reestimated", f"{stem}.npz"))
    with open(os.path.join(out_dir, "reestimate.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "test_loss_before", "test_error_before", "test_loss_after", "test_error_after"])
        w.writerows(rows)
    crit.append(Criterion("bn-reestimate", "bit-freeze: only running_var changes", float(frozen and changed_any),
                          "1 (frozen, running_var updated)", frozen and changed_any))
    med_before = _median([float(r[1]) for r in rows])
    med_after = _median([float(r[3]) for r in rows])
    crit.append(Criterion("bn-reestimate",
                          f"[{splits.source}] median test loss after re-estimation <= before = {med_before:.6g}",
                          med_after, f"<= {med_before:.6g}", med_after <= med_before))
    return crit


def run_benchmark_suite(name: str, out_dir: str = "bench", dataset: str | None = None) -> list[Criterion]:
    """Run one scenario (or ``all``); writes ``<out_dir>/<scenario>/criteria.csv``."""
    names = SCENARIOS if name == "all" else (name,)
    out = []
    for n in names:
        if n not in SCENARIOS:
            raise ValueError(f"unknown scenario {n!r}; expected one of {SCENARIOS} or 'all'")
        sub = os.path.join(out_dir, n)
        if n == "factors":
            crit = bench_factors(sub)
        elif n == "varprop":
            crit = bench_varprop(sub)
        elif n == "grads":
            crit = bench_grads(sub)
        elif n == "mnist-init":
            crit = bench_mnist_init(sub, dataset=dataset)
        else:
            crit = bench_bn_reestimate(sub, dataset=dataset)
        write_criteria(crit, os.path.join(sub, "criteria.csv"))
        out.extend(crit)
    return out
