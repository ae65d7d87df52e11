import json

import numpy as np
import pytest

from lae.checkpoint import load_checkpoint, load_posterior
from lae.cli import main
from lae.dataio import serialize_idx
from lae.layers import Linear, Tanh
from lae.loss import GaussianMSE
from lae.network import ArchSpec, build_network
from lae.oracle import ggn_oracle, oracle_diag

CONFIG = """
lr = 0.01
batch_size = 16
max_epochs = 8
val_size = 8
mc_samples = 10
seed = 1
input_shape = 1,4,4
latent_index = 2
layer = reshape 16
layer = linear 16 2
layer = tanh
layer = linear 2 16
layer = reshape 1,4,4
"""

TOY_CONFIG = """
batch_size = 8
prior_precision = 1.0
input_shape = 4
latent_index = 1
layer = linear 4 2
layer = tanh
layer = linear 2 4
"""


@pytest.fixture
def workdir(tmp_path, rng):
    imgs = rng.integers(0, 256, (48, 4, 4), dtype=np.uint8)
    labels = rng.integers(0, 3, 48, dtype=np.uint8)
    (tmp_path / "imgs.idx").write_bytes(serialize_idx(imgs))
    (tmp_path / "labels.idx").write_bytes(serialize_idx(labels))
    (tmp_path / "cfg.txt").write_text(CONFIG)
    return tmp_path


def _run(*argv):
    return main([str(a) for a in argv])


def test_train_map_and_online_write_checkpoints(workdir, capsys):
    assert _run("train-map", "--config", workdir / "cfg.txt",
                "--images", workdir / "imgs.idx",
                "--labels", workdir / "labels.idx",
                "--out", workdir / "map.ckpt") == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "epoch,train_loss,val_loss,lr"
    net, mean, prec, _ = load_checkpoint(str(workdir / "map.ckpt"))
    assert prec is None and mean.shape == (net.n_params,)

    assert _run("train-online", "--config", workdir / "cfg.txt",
                "--images", workdir / "imgs.idx",
                "--out", workdir / "on.ckpt") == 0
    _, post, _ = load_posterior(str(workdir / "on.ckpt"))
    assert np.all(post.precision > 0)


def test_fit_laplace_exact_matches_oracle_on_toy_net(tmp_path, rng, capsys):
    (tmp_path / "cfg.txt").write_text(TOY_CONFIG)
    imgs = rng.integers(0, 256, (6, 4, 4), dtype=np.uint8)
    # the toy net is 1-D (input_shape = 4): store a 4-pixel image per row
    imgs = rng.integers(0, 256, (6, 2, 2), dtype=np.uint8)
    (tmp_path / "imgs.idx").write_bytes(serialize_idx(imgs))
    (tmp_path / "labels.idx").write_bytes(
        serialize_idx(rng.integers(0, 2, 6, dtype=np.uint8)))
    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text(TOY_CONFIG + "max_epochs = 2\nval_size = 2\n")
    assert _run("train-map", "--config", cfg_path,
                "--images", tmp_path / "imgs.idx",
                "--labels", tmp_path / "labels.idx",
                "--out", tmp_path / "map.ckpt") == 0
    capsys.readouterr()
    assert _run("fit-laplace", "--ckpt", tmp_path / "map.ckpt",
                "--mode", "exact", "--images", tmp_path / "imgs.idx",
                "--out", tmp_path / "fit.ckpt") == 0
    net, post, _ = load_posterior(str(tmp_path / "fit.ckpt"))
    assert net.n_params == 22
    _, mean, _, _ = load_checkpoint(str(tmp_path / "map.ckpt"))
    x = imgs.reshape(6, 4).astype(np.float64) / 255.0
    want = np.ones(22)
    for i in range(6):
        want += oracle_diag(net, ggn_oracle(net, mean, x[i], GaussianMSE(1.0)))
    assert np.allclose(post.precision, want, rtol=1e-10)


def test_eval_ood_identical_distributions(workdir, capsys):
    _run("train-online", "--config", workdir / "cfg.txt",
         "--images", workdir / "imgs.idx", "--out", workdir / "on.ckpt")
    capsys.readouterr()
    assert _run("eval-ood", "--ckpt", workdir / "on.ckpt",
                "--in-images", workdir / "imgs.idx",
                "--ood-images", workdir / "imgs.idx",
                "--samples", 10, "--out", workdir / "ood.json") == 0
    doc = json.loads((workdir / "ood.json").read_text())
    for key, value in doc["auroc"].items():
        assert abs(value - 0.5) <= 0.05, key


def test_cli_determinism_byte_identical(workdir, capsys):
    _run("train-online", "--config", workdir / "cfg.txt",
         "--images", workdir / "imgs.idx", "--out", workdir / "on.ckpt")
    _run("train-online", "--config", workdir / "cfg.txt",
         "--images", workdir / "imgs.idx", "--out", workdir / "on2.ckpt")
    assert (workdir / "on.ckpt").read_bytes() == (workdir / "on2.ckpt").read_bytes()
    for i in (1, 2):
        _run("latent-map", "--ckpt", workdir / "on.ckpt", "--range", 2,
             "--grid", 4, "--samples", 5, "--out", workdir / f"m{i}")
    assert (workdir / "m1.csv").read_text() == (workdir / "m2.csv").read_text()
    assert (workdir / "m1.pgm").read_bytes() == (workdir / "m2.pgm").read_bytes()
    capsys.readouterr()


def test_impute_outputs(workdir, capsys):
    _run("train-online", "--config", workdir / "cfg.txt",
         "--images", workdir / "imgs.idx", "--out", workdir / "on.ckpt")
    capsys.readouterr()
    small = workdir / "two.idx"
    imgs = np.frombuffer((workdir / "imgs.idx").read_bytes()[16:],
                         dtype=np.uint8).reshape(48, 4, 4)[:2]
    small.write_bytes(serialize_idx(np.ascontiguousarray(imgs)))
    assert _run("impute", "--ckpt", workdir / "on.ckpt",
                "--images", small, "--mask", "half", "--seed", 3,
                "--out", workdir / "imp") == 0
    summary = json.loads((workdir / "imp" / "summary.json").read_text())
    assert len(summary["images"]) == 2
    assert (workdir / "imp" / "img000_chain0.pgm").exists()
    assert (workdir / "imp" / "img001_var.pgm").exists()


def test_semisup_output(workdir, capsys):
    _run("train-online", "--config", workdir / "cfg.txt",
         "--images", workdir / "imgs.idx", "--out", workdir / "on.ckpt")
    capsys.readouterr()
    assert _run("semisup", "--ckpt", workdir / "on.ckpt",
                "--images", workdir / "imgs.idx",
                "--labels", workdir / "labels.idx",
                "--labels-per-class", 2, "--repeats", 2,
                "--out", workdir / "semi.json") == 0
    doc = json.loads((workdir / "semi.json").read_text())
    assert len(doc["stochastic_acc"]) == 2
    assert 0.0 <= doc["deterministic_mean"] <= 1.0


def test_bench_hessian_csv(workdir, capsys):
    assert _run("bench-hessian", "--modes", "approx,exact", "--sizes", "8,16",
                "--repeats", 1, "--out", workdir / "bench.csv") == 0
    out = capsys.readouterr().out
    assert "memory_slopes" in out
    lines = (workdir / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("mode,side,pixels")
    assert len(lines) == 5


def test_missing_file_fails_with_diagnostic(workdir, capsys):
    assert _run("eval-ood", "--ckpt", workdir / "nope.ckpt",
                "--in-images", workdir / "imgs.idx",
                "--ood-images", workdir / "imgs.idx",
                "--samples", 3, "--out", workdir / "x.json") == 1
    err = capsys.readouterr().err
    assert err.startswith("lae: error:")
    assert err.count("\n") == 1


def test_unknown_subcommand_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err
