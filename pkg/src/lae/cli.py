"""`lae` command-line entry point.

Every command exits 0 on success and nonzero with a one-line diagnostic on
failure. All randomness derives from --seed (or the config seed), so fixed
seeds give byte-identical metric files. JSON is emitted with sorted keys;
CSV always carries a header row.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .bench import bench_hessian, fit_slopes, records_to_csv
from .checkpoint import (CheckpointError, config_from_header, load_checkpoint,
                         load_posterior, save_checkpoint)
from .config import parse_arch, parse_config
from .curvature import ggn_backprop
from .dataio import load_idx_file, split_train_val, to_float_images
from .loss import GaussianMSE
from .network import encode
from .posterior import (DiagGaussianPosterior, optimize_prior_precision,
                        posterior_predict)
from .tasks import (ImputationConfig, auroc, full_mask, grid_to_csv,
                    grid_to_pgm, half_mask, impute, knn_semisup_eval,
                    latent_variance_map, ood_scores, stochastic_embeddings)
from .trainer import train_map, train_online


def _load_images(path, input_shape):
    u8 = load_idx_file(path)
    if u8.ndim != 3:
        raise ValueError(f"{path}: expected an IDX image file")
    x = to_float_images(u8, channels=1)
    if input_shape is not None:
        n = x.shape[0]
        if x[0].size != int(np.prod(input_shape)):
            raise ValueError(
                f"{path}: image size {x[0].size} does not match network "
                f"input {tuple(input_shape)}")
        x = x.reshape((n,) + tuple(input_shape))
    return x


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def cmd_train_map(args):
    cfg = parse_config(args.config)
    net = parse_arch(args.config)
    x = _load_images(args.images, net.input_shape)
    load_idx_file(args.labels)  # validated; labels unused by reconstruction
    val = min(cfg.val_size, max(1, len(x) // 5))
    tr, _, va, _ = split_train_val(x, np.zeros(len(x), dtype=np.int64),
                                   val_size=val, seed=cfg.seed)
    theta, report = train_map(net, tr, va, cfg)
    save_checkpoint(args.out, net, theta, config=cfg)
    print(report.to_csv(), end="")


def cmd_train_online(args):
    cfg = parse_config(args.config)
    net = parse_arch(args.config)
    x = _load_images(args.images, net.input_shape)
    val = min(cfg.val_size, max(1, len(x) // 5))
    tr, _, va, _ = split_train_val(x, np.zeros(len(x), dtype=np.int64),
                                   val_size=val, seed=cfg.seed)
    posterior, report = train_online(net, tr, va, cfg)
    save_checkpoint(args.out, net, posterior.mean, posterior.precision,
                    config=cfg)
    print(report.to_csv(), end="")


def cmd_fit_laplace(args):
    net, mean, _, header = load_checkpoint(args.ckpt)
    cfg = config_from_header(header)
    mode = dataclasses.replace(cfg, hessian_mode=args.mode).curvature_mode()
    x = _load_images(args.images, net.input_shape)
    loss = GaussianMSE(cfg.sigma_d)
    ggn = np.zeros(net.n_params)
    for start in range(0, len(x), cfg.batch_size):
        ggn += ggn_backprop(net, mean, x[start:start + cfg.batch_size],
                            mode, loss, float_guard=cfg.float_guard).diag
    gamma_sq = cfg.prior_precision
    if args.optimize_prior:
        gamma_sq = optimize_prior_precision(mean, ggn)
    save_checkpoint(args.out, net, mean, ggn + gamma_sq, config=cfg)
    print(f"prior_precision = {gamma_sq}")


def cmd_eval_ood(args):
    net, posterior, header = load_posterior(args.ckpt)
    cfg = config_from_header(header)
    x_in = _load_images(args.in_images, net.input_shape)
    x_ood = _load_images(args.ood_images, net.input_shape)
    ref = posterior_predict(net, posterior, x_in, args.samples, args.seed,
                            cfg.sigma_d)
    train_nll_mean = float(ref.nll.mean())
    s_in = ood_scores(net, posterior, x_in, args.samples, train_nll_mean,
                      seed=args.seed, sigma_d=cfg.sigma_d)
    s_out = ood_scores(net, posterior, x_ood, args.samples, train_nll_mean,
                       seed=args.seed, sigma_d=cfg.sigma_d)
    doc = {"n_samples": args.samples, "train_nll_mean": train_nll_mean,
           "auroc": {}, "in_mean": {}, "ood_mean": {}}
    for key, a, b in zip(s_in.as_dict(), s_in.as_dict().values(),
                         s_out.as_dict().values()):
        doc["auroc"][key] = auroc(a, b)
        doc["in_mean"][key] = float(np.mean(a))
        doc["ood_mean"][key] = float(np.mean(b))
    _write_json(args.out, doc)


def cmd_impute(args):
    net, posterior, _ = load_posterior(args.ckpt)
    x = _load_images(args.images, net.input_shape)
    shape = tuple(net.input_shape)
    mask = half_mask(shape) if args.mask == "half" else full_mask(shape)
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for i in range(len(x)):
        cfg_i = ImputationConfig(mask=mask)
        chains, var = impute(net, posterior, x[i], cfg_i,
                             seed=args.seed + 1000 * i)
        for c in range(chains.shape[0]):
            img = np.clip(chains[c].reshape(shape[-2], shape[-1]), 0, 1)
            with open(os.path.join(args.out, f"img{i:03d}_chain{c}.pgm"),
                      "wb") as f:
                f.write(grid_to_pgm(img))
        with open(os.path.join(args.out, f"img{i:03d}_var.pgm"), "wb") as f:
            f.write(grid_to_pgm(var.reshape(shape[-2], shape[-1])))
        summary.append({
            "image": i,
            "masked_var": float(var[mask].mean()),
            "observed_var": float(var[~mask].mean()) if (~mask).any() else 0.0,
        })
    _write_json(os.path.join(args.out, "summary.json"), {"images": summary})


def cmd_semisup(args):
    net, posterior, header = load_posterior(args.ckpt)
    cfg = config_from_header(header)
    x = _load_images(args.images, net.input_shape)
    y = load_idx_file(args.labels).astype(np.int64)
    if len(x) != len(y):
        raise ValueError("image/label counts differ")
    classes = np.unique(y)
    stoch_accs, det_accs = [], []
    for rep in range(args.repeats):
        rng = np.random.default_rng(args.seed + rep)
        picked = np.concatenate([
            rng.choice(np.flatnonzero(y == c), args.labels_per_class,
                       replace=False) for c in classes])
        rest = np.setdiff1d(np.arange(len(x)), picked)
        codes, labels = stochastic_embeddings(
            net, posterior, x[picked], y[picked], cfg.mc_samples,
            seed=args.seed + rep)
        test_codes = encode(net, posterior.mean, x[rest])
        stoch_accs.append(knn_semisup_eval(codes, labels, test_codes, y[rest]))
        det_accs.append(knn_semisup_eval(
            encode(net, posterior.mean, x[picked]), y[picked],
            test_codes, y[rest]))
    _write_json(args.out, {
        "labels_per_class": args.labels_per_class,
        "repeats": args.repeats,
        "stochastic_acc": stoch_accs,
        "deterministic_acc": det_accs,
        "stochastic_mean": float(np.mean(stoch_accs)),
        "deterministic_mean": float(np.mean(det_accs)),
    })


def cmd_latent_map(args):
    net, posterior, _ = load_posterior(args.ckpt)
    grid = latent_variance_map(net, posterior, args.range, args.grid,
                               args.samples, seed=args.seed)
    with open(args.out + ".csv", "w", encoding="utf-8") as f:
        f.write(grid_to_csv(grid))
    with open(args.out + ".pgm", "wb") as f:
        f.write(grid_to_pgm(grid))


def cmd_bench_hessian(args):
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    sides = [int(s) for s in args.sizes.split(",") if s.strip()]
    records = bench_hessian(modes, sides, repeats=args.repeats,
                            seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(records_to_csv(records))
    print(json.dumps({"memory_slopes": fit_slopes(records)}, sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(
        prog="lae",
        description="Laplacian autoencoder training and evaluation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (default 1 for reproducibility)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-map")
    s.add_argument("--config", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_map)

    s = sub.add_parser("train-online")
    s.add_argument("--config", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_online)

    s = sub.add_parser("fit-laplace")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--mode", required=True,
                   choices=["block", "exact", "approx", "mixed"])
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--optimize-prior", action="store_true")
    s.set_defaults(fn=cmd_fit_laplace)

    s = sub.add_parser("eval-ood")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in-images", required=True)
    s.add_argument("--ood-images", required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_eval_ood)

    s = sub.add_parser("impute")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--mask", required=True, choices=["half", "full"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_impute)

    s = sub.add_parser("semisup")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--labels-per-class", type=int, required=True)
    s.add_argument("--repeats", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_semisup)

    s = sub.add_parser("latent-map")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--range", type=float, required=True)
    s.add_argument("--grid", type=int, required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_latent_map)

    s = sub.add_parser("bench-hessian")
    s.add_argument("--modes", required=True)
    s.add_argument("--sizes", required=True)
    s.add_argument("--repeats", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_bench_hessian)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except (OSError, ValueError, CheckpointError, FloatingPointError,
            RuntimeError) as e:
        print(f"lae: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
