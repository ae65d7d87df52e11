"""Output loss models and their gradients / output-space Hessians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianMSE:
    """Gaussian reconstruction likelihood with fixed noise scale sigma_d."""

    sigma_d: float = 1.0

    def __post_init__(self):
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be positive")

    def value(self, y, target):
        r = y.reshape(y.shape[0], -1) - target.reshape(y.shape[0], -1)
        return 0.5 / self.sigma_d**2 * float((r * r).sum())

    def grad(self, y, target):
        n = y.shape[0]
        r = y.reshape(n, -1) - target.reshape(n, -1)
        return r / self.sigma_d**2

    def output_hessian_diag(self, y_flat):
        return np.full(y_flat.size, self.sigma_d**-2)

    def output_hessian_full(self, y_flat):
        return np.eye(y_flat.size) / self.sigma_d**2


@dataclass(frozen=True)
class Bernoulli:
    """Softmax-categorical output loss over flattened logits.

    Targets are treated as soft labels that sum to one per example; the
    output Hessian diag(pi) - pi pi^T is exact under that convention.
    """

    def _softmax(self, y):
        z = y - y.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def value(self, y, target):
        n = y.shape[0]
        yf = y.reshape(n, -1)
        t = target.reshape(n, -1)
        z = yf - yf.max(axis=1, keepdims=True)
        logsm = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-(t * logsm).sum())

    def grad(self, y, target):
        n = y.shape[0]
        yf = y.reshape(n, -1)
        t = target.reshape(n, -1)
        pi = self._softmax(yf)
        return pi * t.sum(axis=1, keepdims=True) - t

    def output_hessian_diag(self, y_flat):
        pi = self._softmax(y_flat[None])[0]
        return pi * (1.0 - pi)

    def output_hessian_full(self, y_flat):
        pi = self._softmax(y_flat[None])[0]
        return np.diag(pi) - np.outer(pi, pi)
