"""Layer definitions with forward, first-order VJPs and curvature backsteps.

Every layer works on 64-bit float arrays. Batched operations take arrays of
shape (N, *in_shape). Curvature operations exist in two flavours per layer:

* diagonal: propagate only the diagonal of the intermediate matrix M,
* full: propagate the dense M (optionally collapsing to a diagonal on exit).

The diagonal backsteps are exact diag(J^T M J) computations for every layer
in this file, not heuristics.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when tensor shapes do not compose."""


def size_of(shape):
    return int(np.prod(shape, dtype=np.int64)) if shape else 1


# ---------------------------------------------------------------------------
# convolution geometry


@lru_cache(maxsize=None)
def conv_geometry(in_shape, kh, kw, stride, padding):
    """Gather indices for im2col on a (C, H, W) input.

    Returns (idx, mask, out_hw) where idx has shape (P, C*kh*kw) of flat
    input indices (padding positions point at 0 with mask 0) and P is the
    number of spatial output positions.
    """
    c, h, w = in_shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv output collapses on input {in_shape}")
    rows = np.arange(oh) * stride - padding
    cols = np.arange(ow) * stride - padding
    ii = rows[:, None] + np.arange(kh)[None, :]          # (oh, kh)
    jj = cols[:, None] + np.arange(kw)[None, :]          # (ow, kw)
    valid_i = (ii >= 0) & (ii < h)
    valid_j = (jj >= 0) & (jj < w)
    ii = np.clip(ii, 0, h - 1)
    jj = np.clip(jj, 0, w - 1)
    # (oh, ow, c, kh, kw) flat input index
    chan = np.arange(c)[None, None, :, None, None] * (h * w)
    pix = ii[:, None, None, :, None] * w + jj[None, :, None, None, :]
    idx = (chan + pix).reshape(oh * ow, c * kh * kw)
    mask = (valid_i[:, None, None, :, None] & valid_j[None, :, None, None, :])
    mask = np.broadcast_to(mask, (oh, ow, c, kh, kw)).reshape(oh * ow, c * kh * kw)
    return idx, mask.astype(np.float64), (oh, ow)


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Layer:
    def param_count(self, in_shape) -> int:
        return 0

    def out_shape(self, in_shape):
        raise NotImplementedError

    # batched first-order ops -------------------------------------------------
    def forward(self, x, w):
        raise NotImplementedError

    def vjp_input(self, g, x, y, aux, w):
        raise NotImplementedError

    def vjp_params(self, g, x, y, aux, w):
        return np.zeros(0)

    # diagonal curvature ops (batched) ---------------------------------------
    def backstep_diag(self, m, x, y, aux, w):
        """m: (N, out_size) -> (N, in_size), exact diag(J_x^T diag(m) J_x)."""
        raise NotImplementedError

    def param_curv_diag(self, m, x, y, aux, w):
        """Sum over the batch of diag(J_w^T diag(m_n) J_w)."""
        return np.zeros(0)

    # full-matrix curvature ops (single example) ------------------------------
    def backstep_full(self, M, x, y, aux, w, want_full):
        raise NotImplementedError

    def param_curv_full(self, M, x, y, aux, w, want_block):
        raise NotImplementedError


def _as_batch_flat(a, n):
    return a.reshape(n, -1)


@dataclass(frozen=True)
class Linear(Layer):
    in_features: int
    out_features: int
    bias: bool = True

    def param_count(self, in_shape=None):
        return self.out_features * self.in_features + (self.out_features if self.bias else 0)

    def out_shape(self, in_shape):
        if size_of(in_shape) != self.in_features:
            raise ShapeError(f"linear expects {self.in_features} inputs, got shape {in_shape}")
        return (self.out_features,)

    def _split(self, w):
        nw = self.out_features * self.in_features
        W = w[:nw].reshape(self.out_features, self.in_features)
        b = w[nw:] if self.bias else None
        return W, b

    def forward(self, x, w):
        n = x.shape[0]
        W, b = self._split(w)
        y = _as_batch_flat(x, n) @ W.T
        if b is not None:
            y = y + b
        return y, None

    def vjp_input(self, g, x, y, aux, w):
        W, _ = self._split(w)
        return (g @ W).reshape(x.shape)

    def vjp_params(self, g, x, y, aux, w):
        n = x.shape[0]
        xf = _as_batch_flat(x, n)
        gw = np.einsum("no,ni->oi", g, xf).ravel()
        if self.bias:
            return np.concatenate([gw, g.sum(axis=0)])
        return gw

    def backstep_diag(self, m, x, y, aux, w):
        W, _ = self._split(w)
        return m @ (W * W)

    def param_curv_diag(self, m, x, y, aux, w):
        n = x.shape[0]
        xf = _as_batch_flat(x, n)
        hw = np.einsum("no,ni->oi", m, xf * xf).ravel()
        if self.bias:
            return np.concatenate([hw, m.sum(axis=0)])
        return hw

    def backstep_full(self, M, x, y, aux, w, want_full):
        W, _ = self._split(w)
        if want_full:
            return W.T @ M @ W
        return np.einsum("oi,oi->i", W, M @ W)

    def _param_jacobian(self, x):
        xf = x.ravel()
        o, i = self.out_features, self.in_features
        J = np.zeros((o, self.param_count()))
        for k in range(o):
            J[k, k * i:(k + 1) * i] = xf
        if self.bias:
            J[:, o * i:] = np.eye(o)
        return J

    def param_curv_full(self, M, x, y, aux, w, want_block):
        if want_block:
            J = self._param_jacobian(x)
            return J.T @ M @ J
        xf = x.ravel()
        d = np.outer(np.diag(M), xf * xf).ravel()
        if self.bias:
            return np.concatenate([d, np.diag(M)])
        return d


@dataclass(frozen=True)
class Conv2d(Layer):
    in_ch: int
    out_ch: int
    kh: int
    kw: int
    stride: int = 1
    padding: int = -1   # -1: preserve spatial size for stride 1
    bias: bool = True

    def _pad(self):
        return (self.kh - 1) // 2 if self.padding < 0 else self.padding

    def param_count(self, in_shape=None):
        return self.out_ch * self.in_ch * self.kh * self.kw + (self.out_ch if self.bias else 0)

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"conv expects (C={self.in_ch}, H, W), got {in_shape}")
        _, _, (oh, ow) = self._geom(in_shape)
        return (self.out_ch, oh, ow)

    def _geom(self, in_shape):
        return conv_geometry(tuple(in_shape), self.kh, self.kw, self.stride, self._pad())

    def _split(self, w):
        nw = self.out_ch * self.in_ch * self.kh * self.kw
        W = w[:nw].reshape(self.out_ch, self.in_ch * self.kh * self.kw)
        b = w[nw:] if self.bias else None
        return W, b

    def _patches(self, x):
        n = x.shape[0]
        idx, mask, _ = self._geom(x.shape[1:])
        xf = _as_batch_flat(x, n)
        return xf[:, idx] * mask

    def forward(self, x, w):
        n = x.shape[0]
        W, b = self._split(w)
        idx, mask, (oh, ow) = self._geom(x.shape[1:])
        patches = self._patches(x)                       # (N, P, CKK)
        y = np.einsum("npk,ok->nop", patches, W)
        if b is not None:
            y = y + b[None, :, None]
        return y.reshape(n, self.out_ch, oh, ow), patches

    def _scatter_to_input(self, contrib, in_shape):
        """contrib: (N, P, CKK) additive patch contributions -> (N, *in_shape)."""
        n = contrib.shape[0]
        idx, mask, _ = self._geom(in_shape)
        out = np.zeros((n, size_of(in_shape)))
        np.add.at(out, (np.arange(n)[:, None, None], idx[None, :, :]), contrib * mask)
        return out.reshape((n,) + tuple(in_shape))

    def vjp_input(self, g, x, y, aux, w):
        n = x.shape[0]
        W, _ = self._split(w)
        gf = g.reshape(n, self.out_ch, -1)
        contrib = np.einsum("nop,ok->npk", gf, W)
        return self._scatter_to_input(contrib, x.shape[1:])

    def vjp_params(self, g, x, y, aux, w):
        n = x.shape[0]
        gf = g.reshape(n, self.out_ch, -1)
        patches = aux if aux is not None else self._patches(x)
        gw = np.einsum("nop,npk->ok", gf, patches).ravel()
        if self.bias:
            return np.concatenate([gw, gf.sum(axis=(0, 2))])
        return gw

    def backstep_diag(self, m, x, y, aux, w):
        n = x.shape[0]
        W, _ = self._split(w)
        mf = m.reshape(n, self.out_ch, -1)
        contrib = np.einsum("nop,ok->npk", mf, W * W)
        return self._scatter_to_input(contrib, x.shape[1:]).reshape(n, -1)

    def param_curv_diag(self, m, x, y, aux, w):
        n = x.shape[0]
        mf = m.reshape(n, self.out_ch, -1)
        patches = aux if aux is not None else self._patches(x)
        hw = np.einsum("nop,npk->ok", mf, patches * patches).ravel()
        if self.bias:
            return np.concatenate([hw, mf.sum(axis=(0, 2))])
        return hw

    def _input_jacobian_sparse(self, in_shape, w):
        """Sparse J_x of shape (out_size, in_size)."""
        W, _ = self._split(w)
        idx, mask, (oh, ow) = self._geom(in_shape)
        p, ckk = idx.shape
        rows = (np.arange(self.out_ch)[:, None, None] * p
                + np.arange(p)[None, :, None])
        rows = np.broadcast_to(rows, (self.out_ch, p, ckk)).ravel()
        cols = np.broadcast_to(idx[None, :, :], (self.out_ch, p, ckk)).ravel()
        data = (W[:, None, :] * mask[None, :, :]).ravel()
        out_size = self.out_ch * p
        return sp.csr_matrix((data, (rows, cols)), shape=(out_size, size_of(in_shape)))

    def backstep_full(self, M, x, y, aux, w, want_full):
        J = self._input_jacobian_sparse(x.shape, w)
        A = J.T @ M                                       # (in, out) dense
        if want_full:
            Mp = J.T @ A.T
            return 0.5 * (Mp + Mp.T)
        d = J.T.multiply(A).sum(axis=1)
        return np.asarray(d).ravel()

    def _param_jacobian(self, x):
        """Dense J_w of shape (out_size, param_count) for one example."""
        patches = self._patches(x[None])[0]               # (P, CKK)
        p, ckk = patches.shape
        o = self.out_ch
        nw = o * ckk
        J = np.zeros((o * p, self.param_count()))
        for c in range(o):
            J[c * p:(c + 1) * p, c * ckk:(c + 1) * ckk] = patches
            if self.bias:
                J[c * p:(c + 1) * p, nw + c] = 1.0
        return J

    def param_curv_full(self, M, x, y, aux, w, want_block):
        if want_block:
            J = self._param_jacobian(x[0] if x.ndim == 4 else x)
            return J.T @ M @ J
        patches = self._patches(x if x.ndim == 4 else x[None])[0]
        p = patches.shape[0]
        o = self.out_ch
        parts = []
        bias_d = np.zeros(o)
        for c in range(o):
            B = M[c * p:(c + 1) * p, c * p:(c + 1) * p]
            parts.append(np.einsum("pk,pq,qk->k", patches, B, patches))
            bias_d[c] = B.sum()
        d = np.concatenate(parts)
        if self.bias:
            return np.concatenate([d, bias_d])
        return d


@dataclass(frozen=True)
class Tanh(Layer):
    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, w):
        return np.tanh(x), None

    def _deriv(self, y):
        return 1.0 - y * y

    def vjp_input(self, g, x, y, aux, w):
        return g.reshape(y.shape) * self._deriv(y)

    def backstep_diag(self, m, x, y, aux, w):
        n = x.shape[0]
        d = self._deriv(y).reshape(n, -1)
        return m * d * d

    def backstep_full(self, M, x, y, aux, w, want_full):
        d = self._deriv(y).ravel()
        if want_full:
            return M * np.outer(d, d)
        return np.diag(M) * d * d


@dataclass(frozen=True)
class ReLU(Layer):
    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, w):
        return np.maximum(x, 0.0), None

    def _active(self, x):
        # derivative at exactly 0 is 0
        return (x > 0.0).astype(np.float64)

    def vjp_input(self, g, x, y, aux, w):
        return g.reshape(x.shape) * self._active(x)

    def backstep_diag(self, m, x, y, aux, w):
        n = x.shape[0]
        return m * self._active(x).reshape(n, -1)

    def backstep_full(self, M, x, y, aux, w, want_full):
        d = self._active(x).ravel()
        if want_full:
            return M * np.outer(d, d)
        return np.diag(M) * d * d


@dataclass(frozen=True)
class MaxPool2d(Layer):
    k: int

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        if h % self.k or w % self.k:
            raise ShapeError(f"maxpool {self.k} does not divide {in_shape}")
        return (c, h // self.k, w // self.k)

    def forward(self, x, w):
        n, c, h, wd = x.shape
        k = self.k
        oh, ow = h // k, wd // k
        windows = (x.reshape(n, c, oh, k, ow, k)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(n, c, oh, ow, k * k))
        loc = windows.argmax(axis=-1)                    # ties: first in scan order
        y = np.take_along_axis(windows, loc[..., None], axis=-1)[..., 0]
        oi = np.arange(oh)[None, None, :, None] * k + loc // k
        oj = np.arange(ow)[None, None, None, :] * k + loc % k
        flat = (np.arange(c)[None, :, None, None] * (h * wd) + oi * wd + oj)
        return y, flat.reshape(n, -1)                    # aux: flat argmax per output

    def vjp_input(self, g, x, y, aux, w):
        n = x.shape[0]
        out = np.zeros((n, x[0].size))
        np.add.at(out, (np.arange(n)[:, None], aux), g.reshape(n, -1))
        return out.reshape(x.shape)

    def backstep_diag(self, m, x, y, aux, w):
        n = x.shape[0]
        out = np.zeros((n, x[0].size))
        np.add.at(out, (np.arange(n)[:, None], aux), m)
        return out

    def backstep_full(self, M, x, y, aux, w, want_full):
        a = aux.ravel()
        in_size = x.size if x.ndim == 3 else x[0].size
        if want_full:
            Mp = np.zeros((in_size, in_size))
            Mp[np.ix_(a, a)] = M
            return Mp
        d = np.zeros(in_size)
        d[a] = np.diag(M)
        return d


@dataclass(frozen=True)
class UpsampleNearest(Layer):
    factor: int

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"upsample expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        return (c, h * self.factor, w * self.factor)

    def _in_of_out(self, in_shape):
        """Flat input index feeding each flat output position."""
        c, h, w = in_shape
        f = self.factor
        grid = np.arange(c * h * w).reshape(c, h, w)
        return np.repeat(np.repeat(grid, f, axis=1), f, axis=2).ravel()

    def forward(self, x, w):
        f = self.factor
        return np.repeat(np.repeat(x, f, axis=2), f, axis=3), None

    def vjp_input(self, g, x, y, aux, w):
        n = x.shape[0]
        in_of = self._in_of_out(x.shape[1:])
        out = np.zeros((n, x[0].size))
        np.add.at(out, (np.arange(n)[:, None], in_of[None, :]), g.reshape(n, -1))
        return out.reshape(x.shape)

    def backstep_diag(self, m, x, y, aux, w):
        n = x.shape[0]
        in_of = self._in_of_out(x.shape[1:])
        out = np.zeros((n, x[0].size))
        np.add.at(out, (np.arange(n)[:, None], in_of[None, :]), m)
        return out

    def backstep_full(self, M, x, y, aux, w, want_full):
        in_shape = x.shape if x.ndim == 3 else x.shape[1:]
        in_of = self._in_of_out(in_shape)
        in_size = size_of(in_shape)
        if want_full:
            Mp = np.zeros((in_size, in_size))
            np.add.at(Mp, (in_of[:, None], in_of[None, :]), M)
            return Mp
        # d_i = sum of the replicated-block entries of M feeding input i
        d = np.zeros(in_size)
        np.add.at(d, in_of, (M * (in_of[None, :] == in_of[:, None])).sum(axis=1))
        return d


@dataclass(frozen=True)
class Reshape(Layer):
    target: tuple

    def out_shape(self, in_shape):
        if size_of(in_shape) != size_of(self.target):
            raise ShapeError(f"cannot reshape {in_shape} to {self.target}")
        return tuple(self.target)

    def forward(self, x, w):
        return x.reshape((x.shape[0],) + tuple(self.target)), None

    def vjp_input(self, g, x, y, aux, w):
        return g.reshape(x.shape)

    def backstep_diag(self, m, x, y, aux, w):
        return m

    def backstep_full(self, M, x, y, aux, w, want_full):
        return M if want_full else np.diag(M).copy()
