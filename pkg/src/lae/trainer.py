"""Training loops: MAP pretraining with Adam, and the online scheme that
maintains a diagonal Gaussian posterior alongside the running mean.

Online step, per minibatch:
  1. draw parameter samples from the current posterior,
  2. average the minibatch loss gradient across the samples,
  3. Adam-update the posterior mean with that gradient,
  4. recompute the diagonal GGN at the post-step mean and blend it into the
     precision: h <- (1 - alpha) h + ggn_diag.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .curvature import (ApproxDiagonal, BlockDiagonal, DEFAULT_FLOAT_GUARD,
                        ExactDiagonal, MixedDiagonal, ggn_backprop)
from .loss import GaussianMSE
from .network import forward, grad_params
from .posterior import DiagGaussianPosterior, init_prior, sample_params


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    max_epochs: int = 50
    alpha: float = 0.0001            # precision forgetting rate (online)
    prior_precision: float = 1.0     # gamma^2
    mc_train_samples: int = 1        # posterior draws per online step
    mc_samples: int = 100            # draws for prediction
    sigma_d: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    early_stop_patience: int = 8
    hessian_mode: str = "approx"     # block | exact | approx | mixed
    mixed_threshold: int = 512
    ggn_at: str = "post"             # evaluate refresh GGN pre- or post-step
    init_scheme: str = "fan_in_uniform"
    seed: int = 0
    val_size: int = 5000
    float_guard: int = DEFAULT_FLOAT_GUARD

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("invalid optimization settings")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.ggn_at not in ("pre", "post"):
            raise ValueError("ggn_at must be 'pre' or 'post'")
        self.curvature_mode()  # validate

    def curvature_mode(self):
        table = {"block": BlockDiagonal(), "exact": ExactDiagonal(),
                 "approx": ApproxDiagonal()}
        if self.hessian_mode in table:
            return table[self.hessian_mode]
        if self.hessian_mode == "mixed":
            return MixedDiagonal(self.mixed_threshold)
        raise ValueError(f"unknown hessian_mode {self.hessian_mode!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001

    @classmethod
    def fresh(cls, n, lr):
        return cls(m=np.zeros(n), v=np.zeros(n), t=0, lr=lr)


def adam_step(state: AdamState, params, grad, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns (new params, advanced state)."""
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m=m, v=v, t=t, lr=state.lr)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (epoch, train, val, lr)
    wall_time: float = 0.0
    steps: int = 0
    stopped_early: bool = False

    def to_csv(self):
        lines = ["epoch,train_loss,val_loss,lr"]
        for e, tr, va, lr in self.epochs:
            lines.append(f"{e},{tr:.8g},{va:.8g},{lr:.8g}")
        return "\n".join(lines) + "\n"


def _mean_loss(net, theta, data, loss_model, batch_size):
    total = 0.0
    for start in range(0, len(data), batch_size):
        chunk = data[start:start + batch_size]
        out = forward(net, theta, chunk).output
        total += loss_model.value(out, chunk)
    return total / len(data)


def _epoch_driver(train_x, config, do_epoch, eval_val):
    """Shared loop: shuffling, plateau halving, early stopping."""
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    lr = config.lr
    best = np.inf
    since_best = since_sched = 0
    t0 = time.perf_counter()
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_x))
        train_loss = do_epoch(train_x[order], lr, epoch)
        val_loss = eval_val()
        report.epochs.append((epoch, train_loss, val_loss, lr))
        if val_loss < best - 1e-12:
            best = val_loss
            since_best = since_sched = 0
        else:
            since_best += 1
            since_sched += 1
        if since_sched > config.scheduler_patience:
            lr *= config.scheduler_factor
            since_sched = 0
        if since_best > config.early_stop_patience:
            report.stopped_early = True
            break
    report.wall_time = time.perf_counter() - t0
    return report


def train_map(net, train_x, val_x, config: TrainConfig, loss_model=None):
    """MAP training of the point network; returns (theta, report)."""
    loss_model = loss_model or GaussianMSE(config.sigma_d)
    theta = net.init_params(scheme=config.init_scheme, seed=config.seed)
    adam = AdamState.fresh(net.n_params, config.lr)
    steps = 0

    def do_epoch(xs, lr, _epoch):
        nonlocal theta, adam, steps
        adam = replace(adam, lr=lr)
        total = 0.0
        for start in range(0, len(xs), config.batch_size):
            chunk = xs[start:start + config.batch_size]
            grad = grad_params(net, theta, chunk, loss_model)
            out = forward(net, theta, chunk).output
            total += loss_model.value(out, chunk)
            theta, adam = adam_step(adam, theta, grad, config.beta1,
                                    config.beta2, config.adam_eps)
            steps += 1
        return total / len(xs)

    report = _epoch_driver(
        train_x, config, do_epoch,
        lambda: _mean_loss(net, theta, val_x, loss_model, config.batch_size))
    report.steps = steps
    return theta, report


def lae_online_step(net, posterior, adam, batch, config, loss_model, step_seed):
    """One online update of (mean, precision); returns the new triple."""
    thetas = sample_params(posterior, config.mc_train_samples, step_seed)
    grad = np.zeros(net.n_params)
    for s in range(config.mc_train_samples):
        grad += grad_params(net, thetas[s], batch, loss_model)
    grad /= config.mc_train_samples
    ggn_point = posterior.mean
    mean, adam = adam_step(adam, posterior.mean, grad, config.beta1,
                           config.beta2, config.adam_eps)
    if config.ggn_at == "post":
        ggn_point = mean
    res = ggn_backprop(net, ggn_point, batch, config.curvature_mode(),
                       loss_model, float_guard=config.float_guard)
    precision = (1 - config.alpha) * posterior.precision + res.diag
    post = DiagGaussianPosterior(mean=mean, precision=precision,
                                 step=posterior.step + 1, mode="online")
    return post, adam


def train_online(net, train_x, val_x, config: TrainConfig, loss_model=None,
                 posterior=None):
    """Online posterior training from the prior (or a warm start);
    returns (posterior, report)."""
    loss_model = loss_model or GaussianMSE(config.sigma_d)
    if posterior is None:
        posterior = init_prior(net, config.prior_precision,
                               init_scheme=config.init_scheme, seed=config.seed)
    adam = AdamState.fresh(net.n_params, config.lr)
    steps = 0

    def do_epoch(xs, lr, _epoch):
        nonlocal posterior, adam, steps
        adam = replace(adam, lr=lr)
        total = 0.0
        for start in range(0, len(xs), config.batch_size):
            chunk = xs[start:start + config.batch_size]
            out = forward(net, posterior.mean, chunk).output
            total += loss_model.value(out, chunk)
            posterior, adam = lae_online_step(
                net, posterior, adam, chunk, config, loss_model,
                step_seed=(config.seed << 20) + posterior.step)
            steps += 1
        return total / len(xs)

    report = _epoch_driver(
        train_x, config, do_epoch,
        lambda: _mean_loss(net, posterior.mean, val_x, loss_model,
                           config.batch_size))
    report.steps = steps
    return posterior, report
