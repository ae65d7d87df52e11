"""Time/memory benchmark of the curvature modes.

Runs one curvature pass per (mode, resolution) on a 5-convolution network
that preserves channel count and spatial size, recording the median
wall-time over repeats and the analytic peak float count. Rows whose
analytic estimate exceeds the memory guard are emitted as "skipped"
instead of being run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .curvature import (ApproxDiagonal, BlockDiagonal, DEFAULT_FLOAT_GUARD,
                        ExactDiagonal, MemoryGuardError, MixedDiagonal,
                        estimate_peak_floats, ggn_backprop)
from .layers import Conv2d, Tanh, size_of
from .loss import GaussianMSE
from .network import ArchSpec, Network

MODE_NAMES = ("block", "exact", "approx", "mixed")


def mode_by_name(name, mixed_threshold=512):
    table = {"block": BlockDiagonal(), "exact": ExactDiagonal(),
             "approx": ApproxDiagonal()}
    if name in table:
        return table[name]
    if name == "mixed":
        return MixedDiagonal(mixed_threshold)
    raise ValueError(f"unknown mode {name!r}")


def bench_net(side, channels=3):
    """5-conv channel/size-preserving net with Tanh between convolutions.

    Assembled directly (not via build_network) because size preservation
    means there is no bottleneck to call a latent code.
    """
    layers = []
    for i in range(5):
        layers.append(Conv2d(channels, channels, 3, 3, stride=1, padding=1))
        if i < 4:
            layers.append(Tanh())
    arch = ArchSpec(layers=tuple(layers), latent_index=len(layers) - 1,
                    input_shape=(channels, side, side))
    shapes = [arch.input_shape]
    for layer in layers:
        shapes.append(tuple(layer.out_shape(shapes[-1])))
    layout = []
    offset = 0
    for layer, in_shape in zip(layers, shapes):
        n = layer.param_count(in_shape)
        layout.append((offset, n))
        offset += n
    return Network(arch=arch, shapes=shapes, layout=layout, n_params=offset)


@dataclass
class BenchRecord:
    mode: str
    side: int
    pixels: int
    r_m: int          # max feature count over boundaries
    r_s: int          # sum of feature counts
    w_s: int
    time_s: float     # median wall-time; nan when skipped
    peak_floats: int
    status: str       # "ok" | "skipped"


def bench_hessian(mode_names, sides, repeats=3, seed=0,
                  float_guard=DEFAULT_FLOAT_GUARD, channels=3):
    """BenchRecord list over the (mode, side) grid; sides must ascend."""
    if list(sides) != sorted(sides):
        raise ValueError("resolutions must be ascending")
    records = []
    loss = GaussianMSE(1.0)
    for name in mode_names:
        mode = mode_by_name(name)
        for side in sides:
            net = bench_net(side, channels)
            sizes = [size_of(s) for s in net.shapes]
            x = np.random.default_rng(seed).uniform(
                0, 1, (1,) + tuple(net.input_shape))
            theta = net.init_params(seed=seed)
            peak = estimate_peak_floats(net, mode)
            if peak > float_guard:
                records.append(BenchRecord(
                    mode=name, side=side, pixels=side * side, r_m=max(sizes),
                    r_s=sum(sizes), w_s=net.n_params, time_s=float("nan"),
                    peak_floats=peak, status="skipped"))
                continue
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                ggn_backprop(net, theta, x, mode, loss, float_guard=float_guard)
                times.append(time.perf_counter() - t0)
            records.append(BenchRecord(
                mode=name, side=side, pixels=side * side, r_m=max(sizes),
                r_s=sum(sizes), w_s=net.n_params,
                time_s=float(np.median(times)), peak_floats=peak, status="ok"))
    return records


def fit_slopes(records, quantity="peak_floats"):
    """Per-mode least-squares slope of log(quantity) vs log(pixel count),
    skipped rows excluded."""
    slopes = {}
    for name in {r.mode for r in records}:
        pts = [(r.pixels, getattr(r, quantity)) for r in records
               if r.mode == name and r.status == "ok"]
        if len(pts) < 2:
            slopes[name] = float("nan")
            continue
        lx = np.log([p for p, _ in pts])
        ly = np.log([q for _, q in pts])
        slopes[name] = float(np.polyfit(lx, ly, 1)[0])
    return slopes


def records_to_csv(records):
    lines = ["mode,side,pixels,R_m,R_s,W_s,time_s,peak_floats,status"]
    for r in records:
        t = "" if np.isnan(r.time_s) else f"{r.time_s:.6g}"
        lines.append(f"{r.mode},{r.side},{r.pixels},{r.r_m},{r.r_s},"
                     f"{r.w_s},{t},{r.peak_floats},{r.status}")
    return "\n".join(lines) + "\n"
