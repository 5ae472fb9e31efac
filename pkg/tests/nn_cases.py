"""Shared small networks for gradient checks."""
import numpy as np

from fedseg.core import RngStream
from fedseg.nncore import (
    INPUT,
    Add,
    AvgPoolToGrid,
    ConcatCh,
    Conv2D,
    Dense,
    MaxPool2,
    Network,
    ReLU,
    Sigmoid,
    UpsampleBilinear,
)


def _net(layers, seed=0, bias=True):
    net = Network(layers)
    net.init_params(RngStream(seed, 1))
    if bias:
        # nonzero biases so every bias gradient is exercised away from ReLU kinks
        net.params += RngStream(seed, 2).generator().uniform(-0.2, 0.2, net.n_params).astype(np.float32)
    return net


def _x(shape, seed):
    return RngStream(seed, 3).generator().uniform(-1, 1, size=shape)


LAYER_CASES = {
    "conv_s1": ([("c", Conv2D(in_ch=2, out_ch=3, k=3, stride=1, pad=1))], (2, 2, 5, 5)),
    "conv_s2": ([("c", Conv2D(in_ch=2, out_ch=2, k=3, stride=2, pad=1))], (1, 2, 6, 6)),
    "conv_1x1": ([("c", Conv2D(in_ch=3, out_ch=2, k=1))], (2, 3, 4, 4)),
    "dense": ([("d", Dense(n_in=12, n_out=4))], (3, 3, 2, 2)),
    "relu": ([("c", Conv2D(in_ch=1, out_ch=2, k=3, pad=1)), ("r", ReLU())], (1, 1, 4, 4)),
    "sigmoid": ([("s", Sigmoid())], (2, 2, 3, 3)),
    "maxpool": ([("c", Conv2D(in_ch=1, out_ch=2, k=3, pad=1)), ("p", MaxPool2())], (1, 1, 4, 4)),
    "upsample": ([("c", Conv2D(in_ch=1, out_ch=2, k=1)), ("u", UpsampleBilinear(factor=2))], (1, 1, 3, 3)),
    "avgpool_grid": ([("c", Conv2D(in_ch=1, out_ch=2, k=1)), ("g", AvgPoolToGrid(s=2))], (1, 1, 5, 5)),
    "add": ([("c", Conv2D(in_ch=2, out_ch=2, k=3, pad=1)), ("a", Add(skip=INPUT))], (1, 2, 4, 4)),
    "concat": ([("c", Conv2D(in_ch=2, out_ch=1, k=3, pad=1)), ("cat", ConcatCh(sources=(INPUT,))),
                ("mix", Conv2D(in_ch=3, out_ch=2, k=1))], (1, 2, 4, 4)),
}
