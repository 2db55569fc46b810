"""Synthetic variance propagation through deep random networks.

Forward: a standard normal batch passes through ``depth`` blocks of
``dropout -> weights -> activation`` (TRAIN-mode inverted dropout). The
recorded statistic is the population variance of each layer's
pre-activations over all units and batch rows. Histograms cover the
dropped-out input of each layer with the dropout zeros removed.

Backward: after a forward pass through the same weights, an error signal
``N(0, 0.01^2)`` is injected at the top pre-activation and sent down with
``delta_l = ((delta_{l+1} @ W_{l+1}.T) * mask_{l+1}) * f'(z_l)``. Masks are
applied unscaled, which is the variance model behind the backward correction
term ``p * E[f'(z)^2]``. The recorded statistic is the mean square of the
kept entries (the error signal is zero-mean by construction).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import activations as act
from .core import RandomSource, mean_square, variance
from .initializers import build_dense_weights, named_spec

HEADER = "# varinit-varprop v1"
HIST_BINS = 50
DEFAULT_WIDTHS = (500,) * 15 + (250,) * 5


@dataclass
class PropagationConfig:
    direction: str = "forward"
    depth: int = 20
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    activation: act.ActivationKind = act.RELU
    keep_prob: float = 1.0
    init: str = "hypersphere_fwd"
    batch: int = 256
    seed: int = 0
    input_width: int | None = None  # defaults to widths[0]
    first_layer_identity: bool = True
    delta_std: float = 0.01
    scale_backward_masks: bool = False

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {self.direction!r}")
        if self.depth < 1 or len(self.widths) != self.depth:
            raise ValueError(f"need {self.depth} widths, got {len(self.widths)}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")


def default_widths(depth: int) -> tuple[int, ...]:
    """500-wide for the first three quarters, 250 after (15 x 500 + 5 x 250 at depth 20)."""
    n_wide = round(depth * 0.75)
    return (500,) * n_wide + (250,) * (depth - n_wide)


@dataclass
class VariancePropagationReport:
    variances: list[float]
    histograms: list[tuple[np.ndarray, np.ndarray]]
    kept_counts: list[int]
    config: dict = field(default_factory=dict)
    # forward: 1-based layer where values went non-finite (later layers absent);
    # backward: highest non-finite layer (its variance and those below are NaN)
    exploded_at: int | None = None

    @property
    def depth(self) -> int:
        return len(self.variances)


def _histogram(values: np.ndarray):
    values = values[np.isfinite(values)]
    if values.size == 0:
        return np.zeros(HIST_BINS + 1), np.zeros(HIST_BINS, dtype=np.int64)
    counts, edges = np.histogram(values, bins=HIST_BINS)
    return edges, counts


def _weights(cfg: PropagationConfig, rng: RandomSource):
    n_in = cfg.input_width or cfg.widths[0]
    dims = [n_in, *cfg.widths]
    out = []
    for l in range(cfg.depth):
        a_in = act.IDENTITY if (l == 0 and cfg.first_layer_identity) else cfg.activation
        spec = named_spec(cfg.init, cfg.keep_prob, a_in, cfg.activation)
        out.append(build_dense_weights(spec, rng.child(l), dims[l], dims[l + 1]))
    return out


def _forward_pass(cfg, weights, rng):
    """Yield (dropped-out input, keep mask, pre-activation) per layer; stop at non-finite."""
    p = cfg.keep_prob
    h = rng.standard_normal((cfg.batch, weights[0].shape[0]))
    mask_rng = rng.child(10_000)
    for l, w in enumerate(weights):
        mask = mask_rng.bernoulli(p, h.shape) if p < 1.0 else np.ones_like(h)
        with np.errstate(over="ignore", invalid="ignore"):
            dropped = h * mask / p
            z = dropped @ w
        yield dropped, mask, z
        if not np.all(np.isfinite(z)):
            return
        h = act.apply(cfg.activation, z)


def propagate_forward(cfg: PropagationConfig) -> VariancePropagationReport:
    rng = RandomSource(cfg.seed)
    weights = _weights(cfg, rng.child(1))
    report = VariancePropagationReport([], [], [], _config_dict(cfg))
    for l, (dropped, mask, z) in enumerate(_forward_pass(cfg, weights, rng.child(2))):
        with np.errstate(over="ignore", invalid="ignore"):
            v = float(variance(z)) if np.all(np.isfinite(z)) else math.inf
        if not math.isfinite(v):
            # z itself may be finite while its square overflows
            report.exploded_at = l + 1
            break
        kept = dropped[mask > 0]
        report.variances.append(v)
        report.histograms.append(_histogram(kept))
        report.kept_counts.append(int(kept.size))
    return report


def propagate_backward(cfg: PropagationConfig) -> VariancePropagationReport:
    rng = RandomSource(cfg.seed)
    weights = _weights(cfg, rng.child(1))
    masks, derivs = [], []
    report = VariancePropagationReport([], [], [], _config_dict(cfg))
    for dropped, mask, z in _forward_pass(cfg, weights, rng.child(2)):
        masks.append(mask)
        derivs.append(act.derivative(cfg.activation, z))
    if len(masks) < cfg.depth:
        report.exploded_at = len(masks)
        return report
    p = cfg.keep_prob
    delta = rng.child(3).standard_normal((cfg.batch, cfg.widths[-1])) * cfg.delta_std
    # (signal, keep mask) per layer; nothing is dropped at the injection point
    signals = [None] * cfg.depth
    signals[-1] = (delta, None)
    for l in range(cfg.depth - 2, -1, -1):
        m = masks[l + 1]
        with np.errstate(over="ignore", invalid="ignore"):
            back = (delta @ weights[l + 1].T) * m
            if cfg.scale_backward_masks:
                back = back / p
            delta = back * derivs[l]
        signals[l] = (delta, m)
    for l, (d, m) in enumerate(signals):
        kept = d.ravel() if m is None else d[m > 0]
        with np.errstate(over="ignore", invalid="ignore"):
            ms = mean_square(kept) if np.all(np.isfinite(kept)) else math.inf
        if not math.isfinite(ms):
            # the signal blows up from the bottom: record the gap, keep the finite layers above
            report.exploded_at = l + 1
            report.variances.append(math.nan)
            report.histograms.append(_histogram(kept))
            report.kept_counts.append(int(kept.size))
            continue
        report.variances.append(ms)
        report.histograms.append(_histogram(kept))
        report.kept_counts.append(int(kept.size))
    return report


def propagate(cfg: PropagationConfig) -> VariancePropagationReport:
    return propagate_forward(cfg) if cfg.direction == "forward" else propagate_backward(cfg)


def growth_ratio(variances, first: int = 5, last: int = 15) -> float:
    """Per-layer variance ratio from a log-linear least-squares fit over layers first..last (1-based)."""
    layers = np.arange(first, last + 1)
    logs = np.log(np.asarray(variances, dtype=float)[first - 1:last])
    slope = np.polyfit(layers, logs, 1)[0]
    return float(math.exp(slope))


def _config_dict(cfg: PropagationConfig) -> dict:
    d = asdict(cfg)
    d["activation"] = cfg.activation.label
    d["widths"] = "x".join(str(w) for w in cfg.widths)
    return d


def export_report(report: VariancePropagationReport, path) -> list[str]:
    """Write ``variance.csv`` and ``hist_layerNN.csv`` files into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    written = []
    meta = " ".join(f"{k}={v}" for k, v in sorted(report.config.items()))
    var_path = os.path.join(path, "variance.csv")
    with open(var_path, "w", newline="") as fh:
        fh.write(f"{HEADER}\n# {meta}\n")
        if report.exploded_at is not None:
            fh.write(f"# exploded_at={report.exploded_at}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "variance"])
        for i, v in enumerate(report.variances, start=1):
            w.writerow([i, repr(float(v))])
    written.append(var_path)
    for i, (edges, counts) in enumerate(report.histograms, start=1):
        hp = os.path.join(path, f"hist_layer{i:02d}.csv")
        with open(hp, "w", newline="") as fh:
            fh.write(f"{HEADER}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        written.append(hp)
    return written


def _data_rows(fh):
    return csv.DictReader(line for line in fh if not line.startswith("#"))


def read_variances(path) -> list[float]:
    with open(os.path.join(path, "variance.csv"), newline="") as fh:
        return [float(r["variance"]) for r in _data_rows(fh)]


def read_histogram(path, layer: int) -> tuple[np.ndarray, np.ndarray]:
    with open(os.path.join(path, f"hist_layer{layer:02d}.csv"), newline="") as fh:
        rows = list(_data_rows(fh))
    edges = np.array([float(r["bin_left"]) for r in rows] + [float(rows[-1]["bin_right"])])
    counts = np.array([int(r["count"]) for r in rows])
    return edges, counts
