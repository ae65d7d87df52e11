"""Downstream evaluations on a fitted posterior: OOD scoring/AUROC,
missing-pixel imputation, semi-supervised kNN, calibration metrics, and
latent-space variance maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.neighbors import KNeighborsClassifier

from .network import decode, encode, forward
from .posterior import posterior_predict, sample_params


@dataclass
class OodScores:
    nll: np.ndarray
    typicality: np.ndarray
    sigma_latent: np.ndarray
    sigma_output: np.ndarray

    def as_dict(self):
        return {"nll": self.nll, "typicality": self.typicality,
                "sigma_latent": self.sigma_latent,
                "sigma_output": self.sigma_output}


def ood_scores(net, posterior, x, n_samples, train_nll_mean, seed=0,
               sigma_d=1.0) -> OodScores:
    """Per-example OOD scores; higher means more out-of-distribution."""
    summ = posterior_predict(net, posterior, x, n_samples, seed, sigma_d)
    n = x.shape[0]
    return OodScores(
        nll=summ.nll,
        typicality=np.abs(summ.nll - train_nll_mean),
        sigma_latent=summ.latent_var.mean(axis=1),
        sigma_output=summ.output_var.reshape(n, -1).mean(axis=1))


def auroc(scores_in, scores_out):
    """P(score_out > score_in) with ties counted 1/2 (Mann-Whitney U)."""
    a = np.asarray(scores_in, dtype=np.float64)
    b = np.asarray(scores_out, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both score lists must be nonempty")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2
    return float(u / (a.size * b.size))


@dataclass(frozen=True)
class ImputationConfig:
    mask: np.ndarray            # boolean, True = missing, image-shaped
    chain_count: int = 5
    refine_count: int = 5
    iterations: int = 20
    noise_low: float = 0.0
    noise_high: float = 1.0

    def __post_init__(self):
        if self.chain_count < 1 or self.refine_count < 1 or self.iterations < 1:
            raise ValueError("imputation counts must be >= 1")


def half_mask(image_shape, which="bottom"):
    """Boolean mask hiding one half of the image (True = missing)."""
    m = np.zeros(image_shape, dtype=bool)
    h = image_shape[-2]
    if which == "bottom":
        m[..., h // 2:, :] = True
    elif which == "top":
        m[..., :h // 2, :] = True
    else:
        raise ValueError(f"unknown half {which!r}")
    return m


def full_mask(image_shape):
    return np.ones(image_shape, dtype=bool)


def _chain_pass(net, theta, x0, mask, start, iterations):
    cur = start
    for _ in range(iterations):
        z = encode(net, theta, cur[None])
        cur = decode(net, theta, z)[0]
        cur = np.where(mask, cur, x0)   # clamp observed pixels
    return cur


def impute(net, posterior, x, cfg: ImputationConfig, seed=0):
    """Multi-chain imputation of masked pixels for one image.

    Each chain: initialize missing pixels with uniform noise, iterate
    decode(encode(.)) under a freshly sampled network with observed pixels
    clamped every step; then average refine_count second-stage passes.
    Returns (chains [C,*image], per-pixel across-chain variance).
    """
    x = np.asarray(x, dtype=np.float64)
    mask = np.broadcast_to(cfg.mask, x.shape)
    n_nets = cfg.chain_count * (1 + cfg.refine_count)
    thetas = sample_params(posterior, n_nets, seed)
    chains = np.empty((cfg.chain_count,) + x.shape)
    t = 0
    for c in range(cfg.chain_count):
        rng = np.random.default_rng((seed << 16) + c)
        start = np.where(
            mask, rng.uniform(cfg.noise_low, cfg.noise_high, x.shape), x)
        first = _chain_pass(net, thetas[t], x, mask, start, cfg.iterations)
        t += 1
        refined = np.zeros_like(x)
        for _ in range(cfg.refine_count):
            refined += _chain_pass(net, thetas[t], x, mask, first,
                                   cfg.iterations)
            t += 1
        chains[c] = np.where(mask, refined / cfg.refine_count, x)
    return chains, chains.var(axis=0)


def knn_semisup_eval(embeddings_labeled, labels, embeddings_test, labels_test,
                     k_grid=(1, 3, 5, 7, 9, 11, 13, 15), force_k=None):
    """Euclidean kNN accuracy with the neighbor count picked by 2-fold CV
    on the labeled set. Stochastic encoders pass all their embeddings per
    labeled point (same label repeated)."""
    X = np.asarray(embeddings_labeled, dtype=np.float64)
    y = np.asarray(labels)
    if set(np.unique(labels_test)) - set(np.unique(y)):
        raise ValueError("test contains a class absent from the labeled set")
    if force_k is None:
        halves = (np.arange(len(y)) % 2 == 0)
        best_k, best_acc = k_grid[0], -1.0
        for k in k_grid:
            accs = []
            for tr in (halves, ~halves):
                if k > tr.sum() or len(np.unique(y[tr])) < len(np.unique(y)):
                    continue
                clf = KNeighborsClassifier(n_neighbors=k).fit(X[tr], y[tr])
                accs.append(clf.score(X[~tr], y[~tr]))
            acc = np.mean(accs) if accs else -1.0
            if acc > best_acc + 1e-12:
                best_k, best_acc = k, acc
        force_k = best_k
    clf = KNeighborsClassifier(n_neighbors=min(force_k, len(y))).fit(X, y)
    return float(clf.score(np.asarray(embeddings_test, dtype=np.float64),
                           labels_test))


def stochastic_embeddings(net, posterior, x, labels, n_embeddings, seed=0):
    """Each input contributes n_embeddings latent codes, one per sampled
    encoder; labels repeat accordingly. Returns (codes, labels)."""
    thetas = sample_params(posterior, n_embeddings, seed)
    zs = [encode(net, thetas[s], x) for s in range(n_embeddings)]
    codes = np.concatenate(zs, axis=0)
    return codes, np.tile(np.asarray(labels), n_embeddings)


@dataclass
class CalibrationReport:
    ece: float
    mce: float
    rmsce: float
    n_bins: int
    bin_confidence: np.ndarray
    bin_accuracy: np.ndarray
    bin_counts: np.ndarray


def calibration(probs, labels, n_bins=15) -> CalibrationReport:
    """Equal-width confidence binning on the max probability."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    if np.any(p < -1e-12):
        raise ValueError("negative probabilities")
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == np.asarray(labels)).astype(np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.digitize(conf, edges[1:-1]), 0, n_bins - 1)
    n = len(conf)
    bc = np.zeros(n_bins)
    ba = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    np.add.at(counts, idx, 1)
    np.add.at(bc, idx, conf)
    np.add.at(ba, idx, correct)
    occ = counts > 0
    bc[occ] /= counts[occ]
    ba[occ] /= counts[occ]
    gap = np.abs(ba[occ] - bc[occ])
    w = counts[occ] / n
    return CalibrationReport(
        ece=float((w * gap).sum()), mce=float(gap.max()),
        rmsce=float(np.sqrt((w * gap * gap).sum())), n_bins=n_bins,
        bin_confidence=bc, bin_accuracy=ba, bin_counts=counts)


def latent_variance_map(net, posterior, grid_range, grid_size, n_samples,
                        seed=0):
    """Mean-over-pixels decoder variance on a grid_size x grid_size grid
    over [-grid_range, grid_range]^2. Requires a 2-D latent."""
    if net.latent_dim != 2:
        raise ValueError(f"latent dimension is {net.latent_dim}, need 2")
    if grid_size == 1:
        axis = np.array([0.0])
    else:
        axis = np.linspace(-grid_range, grid_range, grid_size)
    zz = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    z = zz.reshape(-1, 2)
    thetas = sample_params(posterior, n_samples, seed)
    outs = np.stack([decode(net, thetas[s], z).reshape(len(z), -1)
                     for s in range(n_samples)])
    var = outs.var(axis=0).mean(axis=1)
    return var.reshape(grid_size, grid_size)


def grid_to_csv(grid):
    lines = ["row,col,value"]
    for r in range(grid.shape[0]):
        for c in range(grid.shape[1]):
            lines.append(f"{r},{c},{grid[r, c]:.10g}")
    return "\n".join(lines) + "\n"


def grid_to_pgm(grid):
    """Binary (P5) 8-bit PGM via linear min-max normalization."""
    lo, hi = float(grid.min()), float(grid.max())
    scaled = np.zeros_like(grid) if hi == lo else (grid - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    head = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    return head + pix.tobytes()


@dataclass
class SoftmaxClassifier:
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray     # (n_classes,)


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classifier_grad(model, X, Y):
    """Mean cross-entropy gradient; Y is one-hot (N, n_classes)."""
    p = _softmax(X @ model.weights.T + model.bias)
    d = (p - Y) / len(X)
    return d.T @ X, d.sum(axis=0)


def train_simple_classifier(x, labels, n_classes=None, lr=0.5, epochs=200,
                            seed=0):
    """Softmax regression on flattened pixels, full-batch gradient descent."""
    X = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(labels)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    Y = np.eye(n_classes)[y]
    rng = np.random.default_rng(seed)
    model = SoftmaxClassifier(
        weights=0.01 * rng.standard_normal((n_classes, X.shape[1])),
        bias=np.zeros(n_classes))
    for _ in range(epochs):
        gw, gb = classifier_grad(model, X, Y)
        model = SoftmaxClassifier(model.weights - lr * gw,
                                  model.bias - lr * gb)
    return model


def classify(model, x):
    """Probability rows for a batch of (possibly image-shaped) inputs."""
    X = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    return _softmax(X @ model.weights.T + model.bias)
