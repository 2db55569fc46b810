"""Builders for the MLP and small CNN used in the experiments."""

from __future__ import annotations

from .activations import IDENTITY, ActivationKind
from .core import RandomSource
from .initializers import build_conv_filters, build_dense_weights, named_spec
from .layers import Activation, BatchNorm, Conv2d, Dense, Dropout, Network


def build_mlp(
    n_in: int,
    hidden: list[int],
    n_classes: int,
    activation: ActivationKind,
    init: str,
    rng: RandomSource,
    keep_prob: float = 1.0,
    input_keep_prob: float = 1.0,
    batchnorm: bool = False,
    bn_momentum: float = 0.9,
    first_layer_identity: bool = True,
) -> Network:
    """Dense stack ``[Dropout] -> Dense -> [BatchNorm] -> f`` per hidden layer, then a linear head.

    Dropout sits on the input of every weight layer after the first (and on
    the raw input when ``input_keep_prob < 1``). Each layer's initializer sees
    the keep probability of the dropout feeding it, the nonlinearity feeding
    it, and its own nonlinearity (identity for the head).
    """
    layers = []
    widths = [n_in, *hidden, n_classes]
    prev_act = IDENTITY if first_layer_identity else activation
    for i in range(len(widths) - 1):
        p = input_keep_prob if i == 0 else keep_prob
        if p < 1.0:
            layers.append(Dropout(p))
        out_act = activation if i < len(hidden) else IDENTITY
        spec = named_spec(init, p, prev_act, out_act)
        layers.append(Dense(build_dense_weights(spec, rng.child(i), widths[i], widths[i + 1])))
        if i < len(hidden):
            if batchnorm:
                layers.append(BatchNorm(widths[i + 1], momentum=bn_momentum))
            layers.append(Activation(activation))
        prev_act = activation
    return Network(layers)


def build_cnn(
    input_shape: tuple[int, int, int],
    channels: list[int],
    n_classes: int,
    activation: ActivationKind,
    init: str,
    rng: RandomSource,
    keep_prob: float = 1.0,
    batchnorm: bool = False,
    dense_width: int = 64,
) -> Network:
    """Desk-scale conv net: 3x3 stride-2 convs, one hidden dense layer, linear head.

    Conv layers always take the forward-only correction; ``init`` names that
    carry a backward term fall back to ``hypersphere_fwd`` for the filters.
    """
    h, w, c = input_shape
    conv_init = init if init in ("he", "xavier", "hypersphere_fwd") else "hypersphere_fwd"
    layers = []
    prev_act = IDENTITY
    for i, c_out in enumerate(channels):
        p = 1.0 if i == 0 else keep_prob
        if p < 1.0:
            layers.append(Dropout(p))
        spec = named_spec(conv_init, p, prev_act, activation)
        conv = Conv2d(build_conv_filters(spec, rng.child(100 + i), 3, 3, c, c_out), stride=2, padding=1)
        layers.append(conv)
        h, w = conv.output_hw(h, w)
        c = c_out
        if batchnorm:
            layers.append(BatchNorm(c, momentum=0.9))
        layers.append(Activation(activation))
        prev_act = activation
    flat = h * w * c
    for j, (n_i, n_o, out_act) in enumerate([(flat, dense_width, activation),
                                             (dense_width, n_classes, IDENTITY)]):
        if keep_prob < 1.0:
            layers.append(Dropout(keep_prob))
        spec = named_spec(init, keep_prob, prev_act, out_act)
        layers.append(Dense(build_dense_weights(spec, rng.child(200 + j), n_i, n_o)))
        if j == 0:
            if batchnorm:
                layers.append(BatchNorm(dense_width, momentum=0.9))
            layers.append(Activation(activation))
    return Network(layers)
