import numpy as np
import pytest

from lae.checkpoint import (CheckpointError, load_checkpoint, load_posterior,
                            save_checkpoint)
from lae.config import (ConfigError, arch_to_lines, parse_arch,
                        parse_arch_lines, parse_config)
from lae.layers import Conv2d, Linear, MaxPool2d, Reshape, Tanh
from lae.trainer import TrainConfig

from conftest import conv_net, mlp_net

ARCH_TEXT = """
input_shape = 1,4,4
latent_index = 4
layer = conv 1 2 3 3 stride 1 pad 1   # encoder conv
layer = tanh
layer = maxpool 2
layer = reshape 8
layer = linear 8 3
layer = tanh
layer = linear 3 16
layer = reshape 1,4,4
"""


def _write(tmp_path, text, name="cfg.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_empty_config_gives_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, ""))
    assert cfg == TrainConfig()


def test_single_override(tmp_path):
    cfg = parse_config(_write(tmp_path, "lr = 0.01\n"))
    assert cfg.lr == 0.01
    assert cfg.batch_size == 64


def test_unparseable_value_names_key(tmp_path):
    with pytest.raises(ConfigError, match="lr"):
        parse_config(_write(tmp_path, "lr = fast\n"))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(_write(tmp_path, "bogus = 1\n"))


def test_comments_and_blank_lines(tmp_path):
    cfg = parse_config(_write(tmp_path, "# a comment\n\nseed = 9 # trailing\n"))
    assert cfg.seed == 9


def test_invalid_setting_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(_write(tmp_path, "alpha = 2.0\n"))


def test_parse_arch_full_dsl(tmp_path):
    net = parse_arch(_write(tmp_path, ARCH_TEXT))
    assert isinstance(net.layers[0], Conv2d)
    assert isinstance(net.layers[2], MaxPool2d)
    assert isinstance(net.layers[3], Reshape)
    assert net.latent_dim == 3
    assert net.input_shape == (1, 4, 4)


def test_parse_arch_requires_structure(tmp_path):
    with pytest.raises(ConfigError):
        parse_arch(_write(tmp_path, "lr = 0.1\n"))
    with pytest.raises(ConfigError):
        parse_arch(_write(tmp_path, "input_shape = 4\nlatent_index = 0\n"
                                    "layer = warp 1 2\n"))


def test_arch_lines_round_trip():
    for net in (mlp_net(), conv_net()):
        again = parse_arch_lines(arch_to_lines(net))
        assert again.n_params == net.n_params
        assert again.shapes == net.shapes
        assert again.latent_index == net.latent_index
        assert [type(l) for l in again.layers] == [type(l) for l in net.layers]


def test_nobias_and_conv_options():
    net = parse_arch_lines([
        "input_shape = 1,4,4",
        "latent_index = 1",
        "layer = conv 1 1 3 3 stride 2 pad 1 nobias",
        "layer = reshape 4",
        "layer = linear 4 16 nobias",
        "layer = reshape 1,4,4",
    ])
    conv = net.layers[0]
    assert (conv.stride, conv.padding, conv.bias) == (2, 1, False)
    assert net.layers[2].bias is False
    assert net.layout[0][1] == 9  # 3x3 kernel, no bias


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    net = conv_net()
    mean = rng.normal(0, 1, net.n_params)
    prec = rng.uniform(0.5, 3, net.n_params)
    path = str(tmp_path / "a.ckpt")
    cfg = TrainConfig(lr=0.042)
    save_checkpoint(path, net, mean, prec, config=cfg)
    net2, m2, p2, header = load_checkpoint(path)
    assert np.array_equal(mean, m2)
    assert np.array_equal(prec, p2)
    assert net2.n_params == net.n_params
    assert header["config"]["lr"] == 0.042
    # byte-identical on re-save
    path2 = str(tmp_path / "b.ckpt")
    save_checkpoint(path2, net2, m2, p2, config=cfg)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_checkpoint_point_estimate(tmp_path, rng):
    net = mlp_net()
    mean = rng.normal(0, 1, net.n_params)
    path = str(tmp_path / "p.ckpt")
    save_checkpoint(path, net, mean)
    _, m2, p2, header = load_checkpoint(path)
    assert p2 is None and header["has_precision"] is False
    assert np.array_equal(m2, mean)
    with pytest.raises(CheckpointError, match="posterior"):
        load_posterior(path)


def test_checkpoint_errors(tmp_path, rng):
    net = mlp_net()
    mean = rng.normal(0, 1, net.n_params)
    path = str(tmp_path / "x.ckpt")
    with pytest.raises(CheckpointError):
        save_checkpoint(path, net, mean[:-1])
    with pytest.raises(CheckpointError):
        save_checkpoint(path, net, mean, precision=np.zeros(net.n_params))
    save_checkpoint(path, net, mean, rng.uniform(1, 2, net.n_params))
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-8])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(path)
    # corrupt the blob magic
    idx = raw.index(b"LAE1")
    open(path, "wb").write(raw[:idx] + b"XXXX" + raw[idx + 4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
