"""Residual encoder-decoder denoiser with skip connections and explicit backpropagation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ValidationError
from ..phantom import stream
from . import layers

ACTIVATIONS = {"lrelu": 0, "identity": 1}


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor: ``levels`` poolings, ``channels`` at the top level, doubling per level."""

    levels: int = 3
    channels: int = 16
    in_channels: int = 1
    activation: str = "lrelu"
    slope: float = 0.1

    def validate(self) -> None:
        if self.levels < 1 or self.channels < 1:
            raise ValidationError("levels and channels must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {tuple(ACTIVATIONS)}")

    def width(self, level: int) -> int:
        return self.channels * 2**level

    def block_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) of every parameter block."""
        shapes = []

        def conv(name, cin, cout, k=3):
            shapes.append((name + ".w", (cout, cin, k, k)))
            shapes.append((name + ".b", (cout,)))

        cin = self.in_channels
        for lvl in range(self.levels):
            conv(f"enc{lvl}a", cin, self.width(lvl))
            conv(f"enc{lvl}b", self.width(lvl), self.width(lvl))
            cin = self.width(lvl)
        conv("mid_a", cin, self.width(self.levels))
        conv("mid_b", self.width(self.levels), self.width(self.levels))
        for lvl in reversed(range(self.levels)):
            conv(f"dec{lvl}a", self.width(lvl + 1) + self.width(lvl), self.width(lvl))
            conv(f"dec{lvl}b", self.width(lvl), self.width(lvl))
        conv("out", self.channels, self.in_channels, k=1)
        return shapes


class DenoiserParams(dict):
    """Ordered parameter blocks plus the architecture that fixes their shapes.

    ``version`` increases on every in-place update so forward caches can detect
    that the weights moved underneath them.
    """

    def __init__(self, arch: Arch, blocks: dict[str, np.ndarray]):
        super().__init__(blocks)
        self.arch = arch
        self.version = 0

    @property
    def dtype(self):
        return next(iter(self.values())).dtype

    def count(self) -> int:
        return int(sum(v.size for v in self.values()))

    def copy(self) -> "DenoiserParams":
        p = DenoiserParams(self.arch, {k: v.copy() for k, v in self.items()})
        p.version = self.version
        return p

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.items()}


def net_init(arch: Arch = Arch(), seed: int = 0, dtype=np.float32, input_shape: tuple[int, int] | None = None) -> DenoiserParams:
    """He-scaled uniform weights, zero biases."""
    arch.validate()
    if input_shape is not None:
        check_spatial(input_shape, arch)
    gain2 = 2.0 / (1.0 + arch.slope**2) if arch.activation == "lrelu" else 1.0
    rng = stream(seed, 0x1417)
    blocks = {}
    for name, shape in arch.block_shapes():
        if name.endswith(".b"):
            blocks[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            g2 = 1.0 if name.startswith("out") else gain2
            bound = np.sqrt(3.0 * g2 / fan_in)
            blocks[name] = rng.uniform(-bound, bound, shape).astype(dtype)
    return DenoiserParams(arch, blocks)


def check_spatial(shape: tuple[int, int], arch: Arch) -> None:
    f = 2**arch.levels
    if shape[0] % f or shape[1] % f:
        raise ValidationError(f"spatial size {shape} is not divisible by 2^levels = {f}")


def _act(x, arch):
    return layers.lrelu_forward(x, arch.slope) if arch.activation == "lrelu" else x


def _act_back(d, x, arch):
    return layers.lrelu_backward(d, x, arch.slope) if arch.activation == "lrelu" else d


class _Tape:
    """Forward record needed by the backward pass."""

    def __init__(self, params: DenoiserParams, x_shape, keep: bool):
        self.params = params
        self.version = params.version
        self.x_shape = x_shape
        self.keep = keep
        self.entries: dict[str, tuple] = {}
        self.consumed = False


def _conv_act(tape: _Tape, name: str, x: np.ndarray, activate: bool = True) -> np.ndarray:
    p = tape.params
    pre, cols = layers.conv_forward(x, p[name + ".w"], p[name + ".b"])
    if tape.keep:
        tape.entries[name] = (cols, x.shape, pre if activate else None)
    return _act(pre, p.arch) if activate else pre


def net_forward(params: DenoiserParams, x: np.ndarray, keep_cache: bool = True):
    """Returns (output, cache); output = x + correction."""
    arch = params.arch
    if x.ndim != 4 or x.shape[1] != arch.in_channels:
        raise ValidationError(f"expected input (N, {arch.in_channels}, H, W), got {x.shape}")
    check_spatial(x.shape[2:], arch)
    x = x.astype(params.dtype, copy=False)
    tape = _Tape(params, x.shape, keep_cache)
    skips = []
    h = x
    for lvl in range(arch.levels):
        h = _conv_act(tape, f"enc{lvl}a", h)
        h = _conv_act(tape, f"enc{lvl}b", h)
        skips.append(h)
        h = layers.avgpool2_forward(h)
    h = _conv_act(tape, "mid_a", h)
    h = _conv_act(tape, "mid_b", h)
    for lvl in reversed(range(arch.levels)):
        up = layers.upsample2_forward(h)
        h = np.concatenate([up, skips[lvl]], axis=1)
        h = _conv_act(tape, f"dec{lvl}a", h)
        h = _conv_act(tape, f"dec{lvl}b", h)
    correction = _conv_act(tape, "out", h, activate=False)
    return x + correction, (tape if keep_cache else None)


def net_backward(cache: _Tape, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for the forward pass recorded in ``cache``."""
    if cache is None or not cache.keep:
        raise ValidationError("backward needs a cache from net_forward(keep_cache=True)")
    if cache.consumed:
        raise ValidationError("forward cache already consumed by a previous backward pass")
    if cache.version != cache.params.version:
        raise ValidationError("stale cache: parameters changed since the forward pass")
    if dout.shape != cache.x_shape:
        raise ValidationError(f"upstream gradient shape {dout.shape} does not match output {cache.x_shape}")
    p, arch, e = cache.params, cache.params.arch, cache.entries
    grads: dict[str, np.ndarray] = {}
    dout = dout.astype(p.dtype, copy=False)

    def back(name, d, activated=True):
        cols, x_shape, pre = e[name]
        if activated:
            d = _act_back(d, pre, arch)
        dx, dw, db = layers.conv_backward(d, cols, p[name + ".w"], x_shape)
        grads[name + ".w"], grads[name + ".b"] = dw, db
        return dx

    d = back("out", dout, activated=False)
    dskips = [None] * arch.levels
    for lvl in range(arch.levels):
        d = back(f"dec{lvl}b", d)
        d = back(f"dec{lvl}a", d)
        n_up = arch.width(lvl + 1)
        dskips[lvl] = d[:, n_up:]
        d = layers.upsample2_backward(d[:, :n_up])
    d = back("mid_b", d)
    d = back("mid_a", d)
    for lvl in reversed(range(arch.levels)):
        d = layers.avgpool2_backward(d) + dskips[lvl]
        d = back(f"enc{lvl}b", d)
        d = back(f"enc{lvl}a", d)
    cache.consumed = True
    cache.entries.clear()
    return {name: grads[name] for name in p}


def l2_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None):
    """Masked mean squared error Σ m (p - t)² / Σ m and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ValidationError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    diff = pred - target
    if mask is None:
        total = float(diff.size)
        return float(np.sum(diff * diff) / total), 2.0 * diff / total
    if mask.shape != pred.shape:
        raise ValidationError("mask shape must match prediction")
    total = float(mask.sum())
    if total == 0:
        raise ValidationError("mask selects no pixels")
    md = mask * diff
    return float(np.sum(md * diff) / total), 2.0 * md / total
