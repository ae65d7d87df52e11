import numpy as np
import pytest

from lae.layers import (Conv2d, Linear, MaxPool2d, ReLU, Reshape, Tanh,
                        UpsampleNearest)
from lae.network import ArchSpec, build_network


def mlp_net(dims=(8, 4, 2, 4, 8), latent_index=None, act=Tanh):
    layers = []
    for a, b in zip(dims, dims[1:]):
        layers.append(Linear(a, b))
        layers.append(act())
    layers.pop()  # no activation after the last layer
    if latent_index is None:
        latent_index = 2 * (len(dims) // 2) - 1
    return build_network(ArchSpec(tuple(layers), latent_index, (dims[0],)))


def conv_net():
    """Small net touching every layer type (W_s = 98, latent 3)."""
    layers = (
        Conv2d(1, 2, 3, 3), Tanh(), MaxPool2d(2), Reshape((8,)),
        Linear(8, 3), Tanh(), Linear(3, 8), Reshape((2, 2, 2)),
        UpsampleNearest(2), Conv2d(2, 1, 3, 3), ReLU(),
    )
    return build_network(ArchSpec(layers, 4, (1, 4, 4)))


def random_net(rng):
    """Randomized small architecture mixing the layer types."""
    kind = rng.integers(0, 3)
    act = Tanh if rng.integers(0, 2) else ReLU
    if kind == 0:  # MLP
        mid = int(rng.integers(3, 8))
        k = int(rng.integers(1, 3))
        dims = (6, mid, k, mid, 6)
        layers = []
        for a, b in zip(dims, dims[1:]):
            layers.append(Linear(a, b, bias=bool(rng.integers(0, 2))))
            layers.append(act())
        layers.pop()
        return build_network(ArchSpec(tuple(layers), 3, (6,)))
    if kind == 1:  # conv encoder, linear decoder
        ch = int(rng.integers(1, 3))
        layers = (
            Conv2d(1, ch, 3, 3, bias=bool(rng.integers(0, 2))), act(),
            MaxPool2d(2), Reshape((ch * 4,)), Linear(ch * 4, 2), act(),
            Linear(2, 16), Reshape((1, 4, 4)),
        )
        return build_network(ArchSpec(layers, 4, (1, 4, 4)))
    # conv autoencoder with upsampling
    ch = int(rng.integers(1, 3))
    layers = (
        Conv2d(1, ch, 3, 3), act(), MaxPool2d(2), Reshape((ch * 4,)),
        Linear(ch * 4, 3), act(), Linear(3, ch * 4), Reshape((ch, 2, 2)),
        UpsampleNearest(2), Conv2d(ch, 1, 3, 3), act(),
    )
    return build_network(ArchSpec(layers, 4, (1, 4, 4)))


def rand_theta(net, rng, scale=0.5):
    return rng.normal(0, scale, net.n_params)


def rand_input(net, rng, n=1):
    return rng.uniform(0, 1, (n,) + tuple(net.input_shape))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# acceptance-criterion pass/fail lines, echoed after the test summary so
# they survive output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
