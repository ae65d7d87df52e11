"""Network construction, forward evaluation with tracing, and gradients.

A network is an ordered list of layers with a designated latent boundary.
Parameters live in one flat 64-bit vector with a per-layer (offset, length)
layout; non-parametric layers get zero-length slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2d, Layer, Linear, ShapeError, size_of


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple
    latent_index: int
    input_shape: tuple


@dataclass
class ActivationTrace:
    """Per-layer activations x_0 ... x_l and auxiliary records for one batch."""

    xs: list
    aux: list

    @property
    def output(self):
        return self.xs[-1]


@dataclass
class Network:
    arch: ArchSpec
    shapes: list = field(repr=False)        # per-boundary shapes, length L+1
    layout: list = field(repr=False)        # per-layer (offset, length)
    n_params: int = 0

    @property
    def layers(self):
        return self.arch.layers

    @property
    def latent_index(self):
        return self.arch.latent_index

    @property
    def input_shape(self):
        return self.arch.input_shape

    @property
    def latent_dim(self):
        return size_of(self.shapes[self.latent_index + 1])

    def param_slice(self, i):
        off, length = self.layout[i]
        return slice(off, off + length)

    def parametric_layers(self):
        return [i for i, (_, length) in enumerate(self.layout) if length > 0]

    def init_params(self, scheme="fan_in_uniform", seed=0):
        """Fresh flat parameter vector; 'zero' or 'fan_in_uniform'."""
        theta = np.zeros(self.n_params)
        if scheme == "zero":
            return theta
        if scheme != "fan_in_uniform":
            raise ValueError(f"unknown init scheme {scheme!r}")
        rng = np.random.default_rng(seed)
        for i in self.parametric_layers():
            layer = self.layers[i]
            if isinstance(layer, Linear):
                fan_in = layer.in_features
            elif isinstance(layer, Conv2d):
                fan_in = layer.in_ch * layer.kh * layer.kw
            else:
                fan_in = 1
            bound = 1.0 / np.sqrt(fan_in)
            sl = self.param_slice(i)
            theta[sl] = rng.uniform(-bound, bound, sl.stop - sl.start)
        return theta


def build_network(arch: ArchSpec) -> Network:
    """Validate shape composition and compute the flat parameter layout."""
    if not arch.layers:
        raise ShapeError("network needs at least one layer")
    if not 0 <= arch.latent_index < len(arch.layers):
        raise ShapeError(f"latent_index {arch.latent_index} out of range")
    shapes = [tuple(arch.input_shape)]
    for i, layer in enumerate(arch.layers):
        try:
            shapes.append(tuple(layer.out_shape(shapes[-1])))
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({type(layer).__name__}): {e}") from e
    if size_of(shapes[-1]) != size_of(arch.input_shape):
        raise ShapeError(
            f"output shape {shapes[-1]} does not close over input {arch.input_shape}")
    latent = size_of(shapes[arch.latent_index + 1])
    if latent >= size_of(arch.input_shape):
        raise ShapeError(f"latent dimension {latent} not smaller than input")
    layout = []
    offset = 0
    for layer, in_shape in zip(arch.layers, shapes):
        n = layer.param_count(in_shape)
        layout.append((offset, n))
        offset += n
    return Network(arch=arch, shapes=shapes, layout=layout, n_params=offset)


def _check_input(net, theta, x):
    if theta.shape != (net.n_params,):
        raise ShapeError(f"expected {net.n_params} parameters, got {theta.shape}")
    if tuple(x.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(f"input shape {x.shape[1:]} != {net.input_shape}")


def _run(net, theta, x, start, stop):
    xs = [np.asarray(x, dtype=np.float64)]
    aux = []
    for i in range(start, stop):
        layer = net.layers[i]
        y, a = layer.forward(xs[-1], theta[net.param_slice(i)])
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite activation after layer {i}")
        xs.append(y)
        aux.append(a)
    return ActivationTrace(xs=xs, aux=aux)


def forward(net: Network, theta, x) -> ActivationTrace:
    """Full forward pass, recording every intermediate activation."""
    _check_input(net, theta, x)
    return _run(net, theta, x, 0, len(net.layers))


def encode(net: Network, theta, x):
    """Latent codes z, flattened to (N, K)."""
    _check_input(net, theta, x)
    trace = _run(net, theta, x, 0, net.latent_index + 1)
    return trace.output.reshape(x.shape[0], -1)


def decode(net: Network, theta, z):
    """Reconstructions from latent codes (N, K)."""
    z = np.asarray(z, dtype=np.float64)
    shape = net.shapes[net.latent_index + 1]
    trace = _run(net, theta, z.reshape((z.shape[0],) + shape),
                 net.latent_index + 1, len(net.layers))
    return trace.output


def latent_of_trace(net: Network, trace: ActivationTrace):
    z = trace.xs[net.latent_index + 1]
    return z.reshape(z.shape[0], -1)


def grad_params(net: Network, theta, batch, loss_model, target=None):
    """Flat gradient of the summed per-example loss over the batch."""
    if target is None:
        target = batch
    trace = forward(net, theta, batch)
    n = batch.shape[0]
    g = loss_model.grad(trace.output, target).reshape(trace.output.shape)
    grad = np.zeros(net.n_params)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        w = theta[net.param_slice(i)]
        x_in, y_out, a = trace.xs[i], trace.xs[i + 1], trace.aux[i]
        off, length = net.layout[i]
        if length:
            grad[off:off + length] = layer.vjp_params(
                g.reshape(n, -1), x_in, y_out, a, w)
        g = layer.vjp_input(g.reshape(n, -1), x_in, y_out, a, w)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    return grad
