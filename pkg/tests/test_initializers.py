import math

import numpy as np
import pytest

from varinit import activations as act
from varinit import initializers as init
from varinit.core import RandomSource


def spec(base="hypersphere", correction="forward", p=1.0, f_in=act.RELU, f_out=act.RELU, **kw):
    return init.InitializerSpec(base, correction, p, f_in, f_out, **kw)


def test_hypersphere_columns_unit_norm(rng):
    w = init.unit_hypersphere_matrix(rng, 37, 11)
    np.testing.assert_allclose(np.linalg.norm(w, axis=0), 1.0, atol=1e-12)


def test_hypersphere_one_dimensional_is_sign(rng):
    w = init.unit_hypersphere_matrix(rng, 1, 50)
    assert set(np.unique(w)) <= {-1.0, 1.0}


def test_hypersphere_entry_variance_is_inverse_fan_in():
    rng = RandomSource(5)
    n_in = 20
    draws = np.stack([init.unit_hypersphere_matrix(rng.child(i), n_in, 1)[:, 0] for i in range(10_000)])
    assert draws.var() == pytest.approx(1.0 / n_in, rel=0.03)


def test_orthonormal_properties(rng):
    q = init.orthonormal_matrix(rng, 40)
    assert np.abs(q.T @ q - np.eye(40)).max() < 1e-10
    assert abs(abs(np.linalg.det(q)) - 1.0) < 1e-10
    assert abs(init.orthonormal_matrix(rng, 1)[0, 0]) == 1.0


def test_rectangular_orthonormal(rng):
    tall = init.rectangular_orthonormal(rng, 30, 10)
    np.testing.assert_allclose(tall.T @ tall, np.eye(10), atol=1e-10)
    wide = init.rectangular_orthonormal(rng, 10, 30)
    np.testing.assert_allclose(wide @ wide.T, np.eye(10), atol=1e-10)


@pytest.mark.parametrize("case, expected", [
    (spec(correction="forward_backward"), 1.0),
    (spec(correction="forward", p=0.5), 1.0),
    (spec(correction="forward"), math.sqrt(2.0)),
    (spec(correction="forward", f_in=act.IDENTITY), 1.0),
    (spec(correction="backward", p=0.5), 2.0),
])
def test_corrective_scale_examples(case, expected):
    assert init.corrective_scale(case, 10, 10) == pytest.approx(expected, abs=1e-12)


def test_generalized_xavier_scale():
    s = spec(base="uniform", correction="generalized_xavier", p=0.5)
    # n_in/p * 0.5 + p * n_out * 0.5 = 100*0.5/0.5 + 0.5*50*0.5
    expected = math.sqrt(3.0) / math.sqrt(100.0 + 12.5)
    assert init.corrective_scale(s, 100, 50) == pytest.approx(expected, rel=1e-12)


def test_fwdbwd_relu_full_keep_leaves_base_unchanged():
    s = spec(correction="forward_backward")
    a = init.build_dense_weights(s, RandomSource(9), 25, 8)
    b = init.unit_hypersphere_matrix(RandomSource(9), 25, 8)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("correction,p,f_in", [
    ("forward", 0.3, act.RELU), ("forward_backward", 0.7, act.ELU), ("backward", 0.5, act.TANH)])
def test_hypersphere_column_norm_equals_scale(rng, correction, p, f_in):
    s = spec(correction=correction, p=p, f_in=f_in, f_out=f_in, factor_method="quadrature")
    w = init.build_dense_weights(s, rng, 64, 16)
    np.testing.assert_allclose(np.linalg.norm(w, axis=0), init.corrective_scale(s, 64, 16), atol=1e-10)


def test_tanh_half_keep_column_norm():
    s = spec(correction="forward", p=0.5, f_in=act.TANH, factor_method="quadrature")
    w = init.build_dense_weights(s, RandomSource(2), 50, 20)
    np.testing.assert_allclose(np.linalg.norm(w, axis=0), 1.127, atol=0.01)


def test_he_entry_variance():
    w = init.build_dense_weights(init.named_spec("he"), RandomSource(4), 100, 100)
    assert w.var() == pytest.approx(0.02, rel=0.10)


def test_forward_scale_shrinks_as_keep_prob_drops():
    # inverted dropout inflates the input variance by 1/p, so the weights must shrink: scale^2 = p/a
    ps = (1.0, 0.8, 0.6, 0.4, 0.2)
    scales = [init.corrective_scale(spec(p=p), 10, 10) for p in ps]
    assert all(a > b for a, b in zip(scales, scales[1:]))
    np.testing.assert_allclose(np.square(scales), np.array(ps) / 0.5, rtol=1e-12)


def test_conv_filters_he_equivalent_norm(rng):
    f = init.build_conv_filters(spec(), rng, 3, 3, 64, 64)
    assert f.shape == (3, 3, 64, 64)
    norms = np.linalg.norm(f.reshape(-1, 64), axis=0)
    np.testing.assert_allclose(norms, math.sqrt(2.0), atol=1e-10)


def test_conv_single_weight_has_scale_magnitude(rng):
    s = spec(p=0.5, f_in=act.TANH, factor_method="quadrature")
    f = init.build_conv_filters(s, rng, 1, 1, 1, 1)
    assert abs(f.item()) == pytest.approx(init.corrective_scale(s, 1, 1), abs=1e-12)


def test_conv_rejects_backward_corrections(rng):
    with pytest.raises(init.InvalidSpecError):
        init.build_conv_filters(spec(correction="forward_backward"), rng, 3, 3, 4, 4)


def test_invalid_specs():
    with pytest.raises(init.InvalidSpecError):
        init.InitializerSpec("hypersphere", "none")
    with pytest.raises(init.InvalidSpecError):
        init.InitializerSpec("hypersphere", "forward", keep_prob=0.0)
    with pytest.raises(init.InvalidSpecError):
        init.InitializerSpec("uniform", "forward")
    with pytest.raises(init.InvalidSpecError):
        init.named_spec("lecun")


def test_zero_denominator_rejected():
    zero = act.AdjustmentFactors(0.0, 0.0, "analytic")
    # a nonlinearity whose factors are both zero cannot be corrected
    s = spec(correction="forward")
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(init, "factors_or_default", lambda f, method="analytic": zero)
        with pytest.raises(init.InvalidSpecError):
            init.corrective_scale(s, 4, 4)
