"""Line-oriented `key = value` configuration files.

One file carries both the optimization settings (consumed by parse_config)
and the architecture description (consumed by parse_arch). Architecture
lines use a repeatable `layer = ...` key with a small DSL:

    input_shape = 1,28,28
    latent_index = 5
    layer = linear 784 128
    layer = tanh
    layer = conv 1 8 3 3 stride 1 pad 1
    layer = maxpool 2
    layer = upsample 2
    layer = reshape 8,14,14

Unknown keys are rejected with the offending key named.
"""

from __future__ import annotations

import dataclasses

from .layers import (Conv2d, Linear, MaxPool2d, ReLU, Reshape, Tanh,
                     UpsampleNearest)
from .network import ArchSpec, build_network
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_INT_KEYS = {"batch_size", "max_epochs", "mc_train_samples", "mc_samples",
             "scheduler_patience", "early_stop_patience", "mixed_threshold",
             "seed", "float_guard", "val_size"}
_FLOAT_KEYS = {"lr", "alpha", "prior_precision", "sigma_d", "beta1", "beta2",
               "adam_eps", "scheduler_factor"}
_STR_KEYS = {"hessian_mode", "ggn_at", "init_scheme"}
TRAIN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS
ARCH_KEYS = {"input_shape", "latent_index", "layer"}


def pairs_from_lines(lines):
    """Ordered (key, value) pairs; `#` comments and blank lines skipped."""
    pairs = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in TRAIN_KEYS and key not in ARCH_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        pairs.append((key, value))
    return pairs


def read_pairs(path):
    with open(path, encoding="utf-8") as f:
        return pairs_from_lines(f)


def _convert(key, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        return value
    except ValueError as e:
        raise ConfigError(f"key {key!r}: cannot parse {value!r}") from e


def parse_config(path) -> TrainConfig:
    """TrainConfig from a file; unset keys keep their defaults."""
    kwargs = {}
    for key, value in read_pairs(path):
        if key in TRAIN_KEYS:
            kwargs[key] = _convert(key, value)
    try:
        return TrainConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _int_tuple(text):
    return tuple(int(p) for p in text.replace(",", " ").split())


def _parse_layer(spec):
    parts = spec.split()
    if not parts:
        raise ConfigError("empty layer line")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "linear":
            bias = not (args and args[-1] == "nobias")
            i, o = (int(a) for a in (args[:-1] if not bias else args))
            return Linear(i, o, bias=bias)
        if kind == "conv":
            bias = True
            opts = {"stride": 1, "pad": -1}
            pos = []
            it = iter(args)
            for a in it:
                if a == "nobias":
                    bias = False
                elif a in opts:
                    opts[a] = int(next(it))
                else:
                    pos.append(int(a))
            ic, oc, kh, kw = pos
            return Conv2d(ic, oc, kh, kw, stride=opts["stride"],
                          padding=opts["pad"], bias=bias)
        if kind == "tanh":
            return Tanh()
        if kind == "relu":
            return ReLU()
        if kind == "maxpool":
            return MaxPool2d(int(args[0]))
        if kind == "upsample":
            return UpsampleNearest(int(args[0]))
        if kind == "reshape":
            return Reshape(_int_tuple(" ".join(args)))
    except (ValueError, IndexError, StopIteration) as e:
        raise ConfigError(f"bad layer line {spec!r}") from e
    raise ConfigError(f"unknown layer kind {kind!r}")


def parse_arch(path):
    """Validated Network from the architecture keys of a config file."""
    with open(path, encoding="utf-8") as f:
        return parse_arch_lines(f)


def parse_arch_lines(lines):
    input_shape = None
    latent_index = None
    layers = []
    for key, value in pairs_from_lines(lines):
        if key == "input_shape":
            input_shape = _int_tuple(value)
        elif key == "latent_index":
            try:
                latent_index = int(value)
            except ValueError as e:
                raise ConfigError(f"latent_index: cannot parse {value!r}") from e
        elif key == "layer":
            layers.append(_parse_layer(value))
    if input_shape is None or latent_index is None or not layers:
        raise ConfigError("architecture needs input_shape, latent_index, "
                          "and at least one layer line")
    return build_network(ArchSpec(layers=tuple(layers),
                                  latent_index=latent_index,
                                  input_shape=input_shape))


def arch_to_lines(net):
    """Config lines reproducing the architecture (for checkpoint headers)."""
    lines = [f"input_shape = {','.join(map(str, net.input_shape))}",
             f"latent_index = {net.latent_index}"]
    for layer in net.layers:
        if isinstance(layer, Linear):
            s = f"linear {layer.in_features} {layer.out_features}"
            if not layer.bias:
                s += " nobias"
        elif isinstance(layer, Conv2d):
            s = (f"conv {layer.in_ch} {layer.out_ch} {layer.kh} {layer.kw} "
                 f"stride {layer.stride} pad {layer.padding}")
            if not layer.bias:
                s += " nobias"
        elif isinstance(layer, Tanh):
            s = "tanh"
        elif isinstance(layer, ReLU):
            s = "relu"
        elif isinstance(layer, MaxPool2d):
            s = f"maxpool {layer.k}"
        elif isinstance(layer, UpsampleNearest):
            s = f"upsample {layer.factor}"
        elif isinstance(layer, Reshape):
            s = f"reshape {','.join(map(str, layer.target))}"
        else:
            raise ConfigError(f"cannot serialize layer {layer!r}")
        lines.append(f"layer = {s}")
    return lines


def config_to_dict(config: TrainConfig):
    return dataclasses.asdict(config)
