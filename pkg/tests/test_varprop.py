import math

import numpy as np
import pytest

from varinit import activations as act
from varinit.varprop import (HIST_BINS, PropagationConfig, default_widths, export_report, growth_ratio,
                             propagate, read_histogram, read_variances)


def fwd(init, p, **kw):
    return propagate(PropagationConfig("forward", init=init, keep_prob=p, **kw))


@pytest.mark.parametrize("p", [1.0, 0.6, 0.3])
def test_corrected_forward_stays_in_band(p):
    v = fwd("hypersphere_fwd", p).variances
    assert len(v) == 20
    assert 0.5 <= v[-1] <= 2.0
    assert all(1 / 3 <= x <= 3 for x in v)


def test_he_explodes_under_dropout():
    v = fwd("he", 0.6).variances
    assert v[-1] > 100
    assert growth_ratio(v, 5, 15) == pytest.approx(1 / 0.6, rel=0.15)


def test_xavier_decays_without_dropout():
    assert fwd("xavier", 1.0).variances[-1] < 0.1


@pytest.mark.parametrize("p", [1.0, 0.6])
def test_backward_corrected_is_stable(p):
    v = propagate(PropagationConfig("backward", init="hypersphere_bwd", keep_prob=p)).variances
    assert len(v) == 20 and all(np.isfinite(v))
    assert 0.25 <= v[0] / v[-1] <= 4.0


def test_orthonormal_identity_preserves_backward_energy():
    cfg = PropagationConfig("backward", depth=10, widths=(64,) * 10, activation=act.IDENTITY,
                            init="orthonormal_bwd", batch=32)
    v = np.array(propagate(cfg).variances)
    assert np.abs(v / v[-1] - 1.0).max() < 1e-10


def test_growth_ratio_recovers_geometric_rate():
    v = [3.0 * 1.7 ** l for l in range(20)]
    assert growth_ratio(v) == pytest.approx(1.7, rel=1e-12)


def test_explosion_is_flagged():
    cfg = PropagationConfig("forward", depth=600, widths=(200,) * 600, init="he", keep_prob=0.2, batch=8)
    rep = propagate(cfg)
    assert rep.exploded_at is not None
    assert rep.depth == rep.exploded_at - 1 < 600
    assert all(math.isfinite(x) for x in rep.variances)


def test_histograms_count_kept_entries():
    cfg = PropagationConfig("forward", depth=4, widths=(50,) * 4, keep_prob=0.5, batch=64)
    rep = propagate(cfg)
    for (edges, counts), kept in zip(rep.histograms, rep.kept_counts):
        assert counts.sum() == kept
        assert len(counts) == HIST_BINS and len(edges) == HIST_BINS + 1
    # about half the 64x50 inputs survive the mask
    assert 0.4 < rep.kept_counts[1] / (64 * 50) < 0.6


def test_histograms_exclude_dropout_zeros_but_variance_uses_all():
    cfg = PropagationConfig("forward", depth=3, widths=(50,) * 3, keep_prob=0.5, batch=64)
    full = propagate(cfg)
    # variance is of the pre-activation over every entry; histograms only see survivors
    assert full.kept_counts[0] < 64 * 50
    assert full.histograms[0][1].sum() == full.kept_counts[0]


def test_export_round_trip(tmp_path):
    rep = fwd("hypersphere_fwd", 0.6, batch=32)
    files = export_report(rep, tmp_path)
    assert len(files) == 21
    assert read_variances(tmp_path) == rep.variances
    edges, counts = read_histogram(tmp_path, 7)
    assert np.array_equal(edges, rep.histograms[6][0])
    assert np.array_equal(counts, rep.histograms[6][1])
    assert (tmp_path / "variance.csv").read_text().startswith("# varinit-varprop v1\n")


def test_same_seed_is_deterministic():
    assert fwd("he", 0.6, batch=16).variances == fwd("he", 0.6, batch=16).variances


def test_config_validation():
    assert default_widths(20) == (500,) * 15 + (250,) * 5
    with pytest.raises(ValueError):
        PropagationConfig(depth=3, widths=(10, 10))
    with pytest.raises(ValueError):
        PropagationConfig(direction="sideways")
    with pytest.raises(ValueError):
        PropagationConfig(keep_prob=0.0)


def test_backward_explosion_is_flagged():
    # He with a linear activation doubles the signal energy per layer; a huge injected delta overflows
    cfg = PropagationConfig("backward", depth=40, widths=(100,) * 40, init="he", activation=act.IDENTITY,
                            batch=8, delta_std=1e150)
    rep = propagate(cfg)
    k = rep.exploded_at
    assert k is not None and 1 < k < 40
    assert all(math.isnan(v) for v in rep.variances[:k])
    assert all(math.isfinite(v) for v in rep.variances[k:])
