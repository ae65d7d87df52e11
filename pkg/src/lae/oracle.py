"""Brute-force GGN reference via explicitly materialized per-layer Jacobians.

Test-scale only (guarded at W_s <= 5000): every Jacobian is built row by row
from vector-Jacobian products against basis vectors, then blocks are formed
by dense matrix products. Deliberately independent of the backstep code in
curvature.py.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import size_of
from .network import forward


@dataclass
class OracleResult:
    blocks: dict          # layer index -> dense |phi_p| x |phi_p| block
    jacobian: np.ndarray  # end-to-end J_theta f, (out_size, W_s)
    output: np.ndarray    # f_theta(x), flat


def layer_input_jacobian(layer, x, y, aux, w):
    """Dense J_x of one layer at one example, built from VJP rows."""
    out_size = y.size
    J = np.zeros((out_size, x.size))
    for k in range(out_size):
        e = np.zeros((1, out_size))
        e[0, k] = 1.0
        J[k] = layer.vjp_input(e, x[None], y[None], _b(aux), w).ravel()
    return J


def layer_param_jacobian(layer, x, y, aux, w):
    """Dense J_w of one layer at one example, built from VJP rows."""
    out_size = y.size
    n_p = layer.param_count(x.shape)
    J = np.zeros((out_size, n_p))
    for k in range(out_size):
        e = np.zeros((1, out_size))
        e[0, k] = 1.0
        J[k] = layer.vjp_params(e, x[None], y[None], _b(aux), w)
    return J


def _b(aux):
    return aux[None] if aux is not None else None


def ggn_oracle(net, theta, x, loss_model, max_params=5000) -> OracleResult:
    """Reference per-layer GGN blocks and the full J_theta f for one example."""
    if net.n_params > max_params:
        raise ValueError(f"oracle guard: {net.n_params} > {max_params} parameters")
    trace = forward(net, theta, x[None])
    out = trace.output[0].ravel()
    out_size = out.size
    H_out = loss_model.output_hessian_full(out)
    A = np.eye(out_size)                     # Jacobian from boundary i+1 to output
    blocks = {}
    jac = np.zeros((out_size, net.n_params))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        w = theta[net.param_slice(i)]
        x1, y1 = trace.xs[i][0], trace.xs[i + 1][0]
        a1 = trace.aux[i][0] if trace.aux[i] is not None else None
        off, length = net.layout[i]
        if length:
            Jp = A @ layer_param_jacobian(layer, x1, y1, a1, w)
            blocks[i] = Jp.T @ H_out @ Jp
            jac[:, off:off + length] = Jp
        if i:
            A = A @ layer_input_jacobian(layer, x1, y1, a1, w)
    return OracleResult(blocks=blocks, jacobian=jac, output=out)


def oracle_diag(net, result: OracleResult):
    """Aggregate flat diagonal of the oracle blocks."""
    d = np.zeros(net.n_params)
    for i, blk in result.blocks.items():
        off, length = net.layout[i]
        d[off:off + length] = np.diag(blk)
    return d
