"""Training loop shared by the three schemes, plus inference."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import ValidationError
from ..phantom import stream
from ..reconstruction import BScanImage
from ..schemes import SCHEMES, DatasetSplit, apply_n2v_mask
from .optim import AdamState, NonFiniteGradient, adam_step
from .unet import Arch, DenoiserParams, check_spatial, l2_loss, net_backward, net_forward, net_init


@dataclass(frozen=True)
class TrainConfig:
    scheme: str = "s2f"
    batch_size: int = 2
    epochs: int = 60
    learning_rate: float = 1e-3
    seed: int = 0
    arch: Arch = Arch()
    patch_size: int | None = 64
    val_patch_size: int | None = 128
    patience: int | None = 15
    report_interval: int = 1
    n2v_mask_count: int = 64
    n2v_mask_area: int = 128 * 128
    n2v_radius: int = 2
    dtype: str = "float32"

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        self.arch.validate()
        for size in (self.patch_size, self.val_patch_size):
            if size is not None:
                check_spatial((size, size), self.arch)

    def mask_count(self, shape: tuple[int, int]) -> int:
        return max(1, int(round(self.n2v_mask_count * shape[0] * shape[1] / self.n2v_mask_area)))


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_val_loss: float = math.nan
    steps: int = 0
    best_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)

    @property
    def convergence_epoch(self) -> int:
        """First epoch (1-based) whose val loss is within 1% of the minimum."""
        if not self.val_loss:
            return 0
        target = 1.01 * min(self.val_loss)
        return next(i + 1 for i, v in enumerate(self.val_loss) if v <= target)

    def write_csv(self, path: str | Path) -> None:
        """Columns epoch, train_loss, val_loss, seconds; epoch 0 holds the pre-training val loss."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            w.writerow([0, "", f"{self.initial_val_loss:.9g}", "0"])
            for i, (tr, va, s) in enumerate(zip(self.train_loss, self.val_loss, self.seconds), start=1):
                w.writerow([i, f"{tr:.9g}", f"{va:.9g}", f"{s:.3f}"])

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainHistory":
        h = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                if row["epoch"] == "0":
                    h.initial_val_loss = float(row["val_loss"])
                    continue
                h.train_loss.append(float(row["train_loss"]))
                h.val_loss.append(float(row["val_loss"]))
                h.seconds.append(float(row["seconds"]))
        return h


class TrainingAborted(RuntimeError):
    """Non-finite loss or gradient; ``params`` holds the last good (best-val) checkpoint."""

    def __init__(self, message: str, params: DenoiserParams, history: TrainHistory):
        super().__init__(message)
        self.params = params
        self.history = history


def _crop(arr: np.ndarray, top: int, left: int, size: int | None) -> np.ndarray:
    if size is None:
        return arr
    return arr[top : top + size, left : left + size]


def _corner(shape, size, rng) -> tuple[int, int]:
    if size is None:
        return 0, 0
    if size > shape[0] or size > shape[1]:
        raise ValidationError(f"patch {size} larger than image {shape}")
    return int(rng.integers(0, shape[0] - size + 1)), int(rng.integers(0, shape[1] - size + 1))


def make_sample(pair, config: TrainConfig, rng: np.random.Generator, size: int | None, mask_seed: int):
    """(input, target, mask-or-None) crop of one pair; N2V masks the crop's input."""
    src = pair.input_pixels()
    top, left = _corner(src.shape, size, rng)
    x = _crop(src, top, left, size)
    y = _crop(pair.target_pixels(), top, left, size)
    if config.scheme != "n2v":
        return x, y, None
    masked, mask = apply_n2v_mask(x, config.mask_count(x.shape), config.n2v_radius, mask_seed)
    return masked, y, mask


def _stack(samples, dtype):
    x = np.stack([s[0] for s in samples])[:, None].astype(dtype)
    y = np.stack([s[1] for s in samples])[:, None].astype(dtype)
    m = None
    if samples[0][2] is not None:
        m = np.stack([s[2] for s in samples])[:, None].astype(dtype)
    return x, y, m


def validation_batches(split: DatasetSplit, config: TrainConfig):
    """Fixed crops (and N2V masks) for the validation pairs, reused every epoch."""
    dtype = np.dtype(config.dtype)
    samples = []
    for i, pair in enumerate(split.val):
        rng = stream(config.seed, 0x7A1, i)
        samples.append(make_sample(pair, config, rng, config.val_patch_size, int(stream(config.seed, 0x7A2, i).integers(2**62))))
    return [_stack(samples[i : i + config.batch_size], dtype) for i in range(0, len(samples), config.batch_size)]


def evaluate_loss(params: DenoiserParams, batches) -> float:
    total, weight = 0.0, 0.0
    for x, y, m in batches:
        out, _ = net_forward(params, x, keep_cache=False)
        loss, _ = l2_loss(out, y, m)
        w = float(m.sum()) if m is not None else float(y.size)
        total += loss * w
        weight += w
    return total / weight


def train(
    split: DatasetSplit,
    config: TrainConfig,
    params: DenoiserParams | None = None,
    state: AdamState | None = None,
    log=None,
):
    """Mini-batch Adam on shuffled training pairs; returns (best params, history, final Adam state).

    Shuffling, crops and N2V masks are all drawn from streams keyed by
    (seed, epoch, step), so a run is bit-reproducible.
    """
    config.validate()
    if not split.train or not split.val:
        raise ValidationError("training needs non-empty train and val sets")
    for pair in split.train + split.val:
        if pair.scheme != config.scheme:
            raise ValidationError(f"pair built for {pair.scheme!r} given to a {config.scheme!r} run")
    dtype = np.dtype(config.dtype)
    params = params if params is not None else net_init(config.arch, config.seed, dtype)
    state = state if state is not None else AdamState.for_params(params, config.learning_rate)
    val_batches = validation_batches(split, config)
    history = TrainHistory(initial_val_loss=evaluate_loss(params, val_batches))
    best = params.copy()
    best_val = history.initial_val_loss
    stale = 0
    start_epoch = state.t // max(1, math.ceil(len(split.train) / config.batch_size))
    for epoch in range(start_epoch, start_epoch + config.epochs):
        t0 = time.perf_counter()
        order = stream(config.seed, 0xE90C, epoch).permutation(len(split.train))
        losses, weights = [], []
        for step, first in enumerate(range(0, len(order), config.batch_size)):
            idx = order[first : first + config.batch_size]
            rng = stream(config.seed, epoch, step)
            samples = [
                make_sample(split.train[i], config, rng, config.patch_size, int(rng.integers(2**62))) for i in idx
            ]
            x, y, m = _stack(samples, dtype)
            out, cache = net_forward(params, x)
            loss, dout = l2_loss(out, y, m)
            if not math.isfinite(loss):
                raise TrainingAborted(f"non-finite loss at epoch {epoch + 1}, step {step}", best, history)
            grads = net_backward(cache, dout)
            try:
                adam_step(params, grads, state)
            except NonFiniteGradient as exc:
                raise TrainingAborted(str(exc), best, history) from exc
            history.steps += 1
            losses.append(loss)
            weights.append(len(idx))
        val = evaluate_loss(params, val_batches)
        history.train_loss.append(float(np.average(losses, weights=weights)))
        history.val_loss.append(val)
        history.seconds.append(time.perf_counter() - t0)
        if val < best_val:
            best_val, best, stale = val, params.copy(), 0
            history.best_epoch = history.epochs_run
        else:
            stale += 1
        if log is not None and history.epochs_run % config.report_interval == 0:
            log(f"epoch {history.epochs_run:3d}  train {history.train_loss[-1]:.6f}  val {val:.6f}")
        if config.patience is not None and stale >= config.patience:
            break
    return best, history, state


def denoise(params: DenoiserParams, image: BScanImage | np.ndarray, model_id: str = "") -> BScanImage:
    """Single forward pass; reflect-pads to a multiple of 2^levels and crops back."""
    pixels = image.pixels if isinstance(image, BScanImage) else np.asarray(image)
    prov = dict(image.provenance) if isinstance(image, BScanImage) else {}
    f = 2**params.arch.levels
    h, w = pixels.shape
    ph, pw = (-h) % f, (-w) % f
    padded = np.pad(pixels, ((0, ph), (0, pw)), mode="reflect") if (ph or pw) else pixels
    out, _ = net_forward(params, padded[None, None].astype(params.dtype), keep_cache=False)
    prov["model"] = model_id
    return BScanImage(np.clip(out[0, 0, :h, :w].astype(np.float64), 0.0, 1.0), "log_normalized", prov)
