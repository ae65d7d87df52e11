"""Diagonal Gaussian posterior over network weights.

Covers prior initialization, counter-based sampling, post-hoc Laplace
fitting with prior-precision selection, the mean-shift correction, and
Monte Carlo prediction with latent/output uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curvature import DEFAULT_FLOAT_GUARD, ggn_backprop
from .network import forward, latent_of_trace


@dataclass
class DiagGaussianPosterior:
    mean: np.ndarray
    precision: np.ndarray
    step: int = 0
    mode: str = "prior"

    def __post_init__(self):
        if self.mean.shape != self.precision.shape:
            raise ValueError("mean and precision must share a layout")
        if not np.all(self.precision > 0):
            raise ValueError("precision entries must be positive")

    @property
    def n_params(self):
        return self.mean.size


@dataclass
class UncertaintySummary:
    """Empirical moments over sampled networks (population variance,
    divisor n, so a single sample gives exactly zero variance)."""

    output_mean: np.ndarray
    output_var: np.ndarray
    latent_mean: np.ndarray
    latent_var: np.ndarray
    nll: np.ndarray            # -log-mean-exp over samples, constants dropped
    nll_mean_logs: np.ndarray  # mean of per-sample NLLs (secondary estimate)
    n_samples: int = 1


def init_prior(net, prior_precision, init_scheme="zero", seed=0):
    """Posterior q^0 with precision gamma^2 * ones and a chosen mean."""
    if prior_precision <= 0:
        raise ValueError("prior precision must be positive")
    mean = net.init_params(scheme=init_scheme, seed=seed)
    return DiagGaussianPosterior(
        mean=mean, precision=np.full(net.n_params, float(prior_precision)))


def _stream(seed, index):
    # counter-based stream: identical draws for identical (seed, index)
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


def sample_params(posterior, n, seed):
    """n parameter draws theta_s = mean + h^(-1/2) * eps."""
    if n < 1:
        raise ValueError("need at least one sample")
    std = 1.0 / np.sqrt(posterior.precision)
    out = np.empty((n, posterior.n_params))
    for i in range(n):
        eps = _stream(seed, i).standard_normal(posterior.n_params)
        out[i] = posterior.mean + std * eps
    return out


def laplace_mean_shift(theta_star, grad, hessian_diag):
    """Center of the Laplace Gaussian when the expansion point is not a
    stationary point: theta* - H^-1 grad, elementwise for diagonal H."""
    h = np.asarray(hessian_diag, dtype=np.float64)
    if np.any(h == 0):
        raise ZeroDivisionError("singular Hessian entry in mean shift")
    return np.asarray(theta_star) - np.asarray(grad) / h


def posthoc_fit(net, theta_map, data, mode, loss_model, prior_precision,
                batch_size=64, float_guard=DEFAULT_FLOAT_GUARD):
    """Post-hoc Laplace: precision = sum of GGN diagonals over the data
    plus gamma^2; mean stays at theta_MAP (no mean shift)."""
    if prior_precision <= 0:
        raise ValueError("prior precision must be positive")
    precision = np.full(net.n_params, float(prior_precision))
    for start in range(0, len(data), batch_size):
        chunk = data[start:start + batch_size]
        res = ggn_backprop(net, theta_map, chunk, mode, loss_model,
                           float_guard=float_guard)
        precision += res.diag
    return DiagGaussianPosterior(mean=theta_map.copy(), precision=precision,
                                 mode=f"posthoc-{type(mode).__name__}")


def optimize_prior_precision(theta_map, ggn_diag, grid=None):
    """Grid search on the diagonal-LA log marginal likelihood.

    Objective (data-fit constant dropped):
        -1/2 gamma^2 |theta|^2 + 1/2 sum log gamma^2 - 1/2 sum log(ggn + gamma^2)
    Ties break toward the smallest grid value.
    """
    if grid is None:
        grid = [10.0 ** k for k in np.arange(-4.0, 4.0 + 1e-9, 0.25)]
    t2 = float(np.dot(theta_map, theta_map))
    best, best_val = None, -np.inf
    for g2 in grid:
        val = (-0.5 * g2 * t2
               + 0.5 * ggn_diag.size * np.log(g2)
               - 0.5 * float(np.log(ggn_diag + g2).sum()))
        if val > best_val + 1e-12:
            best, best_val = g2, val
    return best


def posterior_predict(net, posterior, x, n_samples, seed, sigma_d=1.0):
    """MC prediction: moments in latent and output space plus per-example
    NLL estimates (constant-free, summed over pixels)."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    n = x.shape[0]
    thetas = sample_params(posterior, n_samples, seed)
    out_sum = out_sq = lat_sum = lat_sq = None
    logps = np.empty((n_samples, n))
    xf = x.reshape(n, -1)
    for s in range(n_samples):
        trace = forward(net, thetas[s], x)
        out = trace.output.reshape(n, -1)
        lat = latent_of_trace(net, trace)
        if out_sum is None:
            out_sum, out_sq = out.copy(), out * out
            lat_sum, lat_sq = lat.copy(), lat * lat
        else:
            out_sum += out
            out_sq += out * out
            lat_sum += lat
            lat_sq += lat * lat
        r = out - xf
        logps[s] = -0.5 / sigma_d**2 * (r * r).sum(axis=1)
    om = out_sum / n_samples
    lm = lat_sum / n_samples
    out_var = np.maximum(out_sq / n_samples - om * om, 0.0)
    lat_var = np.maximum(lat_sq / n_samples - lm * lm, 0.0)
    # -log (1/S sum exp logp_s), computed stably
    top = logps.max(axis=0)
    nll = -(top + np.log(np.exp(logps - top).mean(axis=0)))
    shape = (n,) + tuple(net.shapes[-1])
    return UncertaintySummary(
        output_mean=om.reshape(shape), output_var=out_var.reshape(shape),
        latent_mean=lm, latent_var=lat_var,
        nll=nll, nll_mean_logs=-logps.mean(axis=0), n_samples=n_samples)
