"""Generalized Gauss-Newton curvature via backpropagation of the output
Hessian M through layer Jacobians.

Modes:
* BlockDiagonal  - full M throughout, per-layer parameter blocks J_w^T M J_w
* ExactDiagonal  - full M throughout, only block diagonals stored
* ApproxDiagonal - only diag(M) propagated (linear scaling in feature size)
* MixedDiagonal  - full M while the feature count is at most dim_threshold,
                   diagonal otherwise (bottleneck-aware switching)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import size_of
from .network import forward


class MemoryGuardError(RuntimeError):
    """Analytic allocation estimate exceeds the configured guard."""


@dataclass(frozen=True)
class BlockDiagonal:
    pass


@dataclass(frozen=True)
class ExactDiagonal:
    pass


@dataclass(frozen=True)
class ApproxDiagonal:
    pass


@dataclass(frozen=True)
class MixedDiagonal:
    dim_threshold: int

    def __post_init__(self):
        if self.dim_threshold < 0:
            raise ValueError("dim_threshold must be non-negative")


DEFAULT_FLOAT_GUARD = int(2e8)


@dataclass
class CurvatureState:
    """Intermediate quantity M: either a dense PSD matrix or its diagonal."""

    kind: str           # "full" | "diag"
    value: np.ndarray

    @property
    def dim(self):
        return self.value.shape[0] if self.kind == "full" else self.value.size


@dataclass
class CurvatureResult:
    mode: object
    blocks: dict        # layer index -> block (2D) or per-layer diag (1D)
    diag: np.ndarray    # aggregate flat diagonal, length W_s
    peak_floats: int


def loss_output_hessian(loss_model, x_rec, want_full=True) -> CurvatureState:
    """Hessian of the output loss at a single reconstruction."""
    y = np.asarray(x_rec, dtype=np.float64).ravel()
    if want_full:
        return CurvatureState("full", loss_model.output_hessian_full(y))
    return CurvatureState("diag", loss_model.output_hessian_diag(y))


def backstep_input(layer, x, y, aux, w, state: CurvatureState,
                   want_full=None) -> CurvatureState:
    """Propagate M through one layer: M' = J_x^T M J_x (or its diagonal)."""
    if want_full is None:
        want_full = state.kind == "full"
    if state.kind == "diag":
        if want_full:
            M = layer.backstep_full(np.diag(state.value), x, y, aux, w, True)
            return CurvatureState("full", M)
        m = layer.backstep_diag(state.value[None], x[None], y[None], aux_b(aux), w)[0]
        return CurvatureState("diag", m)
    out = layer.backstep_full(state.value, x, y, aux, w, want_full)
    return CurvatureState("full" if want_full else "diag", out)


def layer_param_curvature(layer, x, y, aux, w, state: CurvatureState, want_block):
    """J_w^T M J_w for one parametric layer (full block or its diagonal)."""
    if layer.param_count(x.shape) == 0:
        raise ValueError("layer has no parameters")
    if state.kind == "diag":
        if want_block:
            return layer.param_curv_full(np.diag(state.value), x, y, aux, w, True)
        return layer.param_curv_diag(state.value[None], x[None], y[None], aux_b(aux), w)
    return layer.param_curv_full(state.value, x, y, aux, w, want_block)


def aux_b(aux):
    return aux[None] if aux is not None else None


def _wants_full(mode, feature_count):
    if isinstance(mode, (BlockDiagonal, ExactDiagonal)):
        return True
    if isinstance(mode, ApproxDiagonal):
        return False
    return feature_count <= mode.dim_threshold


def estimate_peak_floats(net, mode):
    """Analytic float-allocation accounting for one curvature pass.

    Counts the two live M representations during each backstep plus the
    result storage (blocks or diagonals) and the aggregate diagonal.
    """
    sizes = [size_of(s) for s in net.shapes]
    cost = [s * s if _wants_full(mode, s) else s for s in sizes]
    peak_m = max(cost[k] + cost[k + 1] for k in range(len(sizes) - 1))
    if isinstance(mode, BlockDiagonal):
        store = sum(length * length for _, length in net.layout)
    else:
        store = net.n_params
    return peak_m + store + net.n_params


def ggn_backprop(net, theta, batch, mode, loss_model,
                 float_guard=DEFAULT_FLOAT_GUARD) -> CurvatureResult:
    """Per-example GGN curvature summed over the batch."""
    peak = estimate_peak_floats(net, mode)
    if peak > float_guard:
        raise MemoryGuardError(
            f"curvature pass needs ~{peak:.3g} floats, guard is {float_guard:.3g}")
    trace = forward(net, theta, batch)
    n = batch.shape[0]
    if isinstance(mode, ApproxDiagonal):
        blocks = _approx_diag_pass(net, theta, trace, n, loss_model)
    else:
        blocks = {}
        for ex in range(n):
            for i, h in _single_example_pass(net, theta, trace, ex, mode, loss_model):
                if i in blocks:
                    blocks[i] = blocks[i] + h
                else:
                    blocks[i] = h
    diag = np.zeros(net.n_params)
    for i, h in blocks.items():
        off, length = net.layout[i]
        diag[off:off + length] = np.diag(h) if h.ndim == 2 else h
    return CurvatureResult(mode=mode, blocks=blocks, diag=diag, peak_floats=peak)


def _approx_diag_pass(net, theta, trace, n, loss_model):
    out = trace.output.reshape(n, -1)
    m = np.stack([loss_model.output_hessian_diag(out[k]) for k in range(n)])
    blocks = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        w = theta[net.param_slice(i)]
        x_in, y_out, aux = trace.xs[i], trace.xs[i + 1], trace.aux[i]
        off, length = net.layout[i]
        if length:
            blocks[i] = layer.param_curv_diag(m, x_in, y_out, aux, w)
        if i:
            m = layer.backstep_diag(m, x_in, y_out, aux, w)
    return blocks


def _single_example_pass(net, theta, trace, ex, mode, loss_model):
    out = trace.output[ex].ravel()
    state = loss_output_hessian(loss_model, out,
                                want_full=_wants_full(mode, out.size))
    want_block = isinstance(mode, BlockDiagonal)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        w = theta[net.param_slice(i)]
        x1 = trace.xs[i][ex]
        y1 = trace.xs[i + 1][ex]
        a1 = trace.aux[i][ex] if trace.aux[i] is not None else None
        _, length = net.layout[i]
        if length:
            yield i, layer_param_curvature(layer, x1, y1, a1, w, state, want_block)
        if i:
            state = backstep_input(layer, x1, y1, a1, w, state,
                                   want_full=_wants_full(mode, x1.size))
