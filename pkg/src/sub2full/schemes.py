"""Training-pair construction for Sub2Full, Noise2Noise and Noise2Void, plus the grouped split.

Pairs are descriptors (b-scan, repeat, window); pixels are reconstructed lazily
through an :class:`ImageBank`, so sub-band variants cost no storage until used.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ValidationError
from .forward_model import Interferogram, SourceSpectrum, add_image_noise
from .phantom import stream
from .reconstruction import (
    BScanImage,
    LogScale,
    ReconConfig,
    SpectralWindow,
    make_gaussian_window,
    reconstruct_bscan,
    volume_log_scale,
    window_overlaps,
)

SCHEMES = ("s2f", "n2n", "n2v")


class ImageBank:
    """Reconstructs and caches images of one volume, keyed by (b-scan, repeat, window)."""

    def __init__(
        self,
        volume: list[Interferogram],
        spectrum: SourceSpectrum,
        recon: ReconConfig | None = None,
        log_scale: LogScale | None = None,
        image_noise_std: float = 0.0,
        noise_seed: int = 0,
    ):
        self.volume = volume
        self.spectrum = spectrum
        self.recon = recon or ReconConfig()
        self.recon.validate(spectrum)
        self._log_scale = log_scale
        self.image_noise_std = image_noise_std
        self.noise_seed = noise_seed
        self.source_index = list(range(len(volume)))
        self._cache: dict[tuple, np.ndarray] = {}

    def subset(self, indices: list[int]) -> "ImageBank":
        """Bank over selected b-scans; shares the log scale and keeps per-b-scan noise seeds."""
        sub = ImageBank(
            [self.volume[i] for i in indices], self.spectrum, self.recon, self.log_scale,
            self.image_noise_std, self.noise_seed,
        )
        sub.source_index = [self.source_index[i] for i in indices]
        return sub

    @property
    def n_bscans(self) -> int:
        return len(self.volume)

    @property
    def n_repeats(self) -> int:
        return self.volume[0].n_repeats if self.volume else 0

    @property
    def log_scale(self) -> LogScale:
        if self._log_scale is None:
            self._log_scale = volume_log_scale(self.volume, self.recon)
        return self._log_scale

    def pixels(self, bscan: int, repeat: int, window: SpectralWindow | None = None) -> np.ndarray:
        key = (bscan, repeat, None if window is None else (window.center_fraction, window.bandwidth_fraction))
        if key not in self._cache:
            img = reconstruct_bscan(
                self.volume[bscan].repeat(repeat),
                self.recon.with_window(window),
                self.log_scale,
                self.spectrum.envelope,
            )
            pixels = img.pixels
            if self.image_noise_std > 0:
                # additive mode: every (b-scan, repeat) gets its own zero-mean field, shared by all windows
                seed = int(stream(self.noise_seed, self.source_index[bscan], repeat).integers(2**62))
                pixels = np.clip(add_image_noise(pixels, self.image_noise_std, seed), 0.0, 1.0)
            self._cache[key] = pixels.astype(np.float32)
        return self._cache[key]

    def image(self, bscan: int, repeat: int, window: SpectralWindow | None = None) -> BScanImage:
        prov = {"bscan": bscan, "repeat": repeat, "window": "full" if window is None else window.describe()}
        return BScanImage(self.pixels(bscan, repeat, window).astype(np.float64), "log_normalized", prov)


@dataclass
class TrainingPair:
    scheme: str
    bscan: int
    input_repeat: int
    target_repeat: int
    input_window: SpectralWindow | None = None
    target_window: SpectralWindow | None = None
    bank: ImageBank | None = field(default=None, repr=False, compare=False)
    tags: dict = field(default_factory=dict)

    def input_pixels(self) -> np.ndarray:
        return self.bank.pixels(self.bscan, self.input_repeat, self.input_window)

    def target_pixels(self) -> np.ndarray:
        return self.bank.pixels(self.bscan, self.target_repeat, self.target_window)

    @property
    def input(self) -> BScanImage:
        return self.bank.image(self.bscan, self.input_repeat, self.input_window)

    @property
    def target(self) -> BScanImage:
        return self.bank.image(self.bscan, self.target_repeat, self.target_window)

    def describe(self) -> dict:
        def win(w):
            return "full" if w is None else w.describe()

        return {
            "scheme": self.scheme,
            "bscan": self.bscan,
            "input_repeat": self.input_repeat,
            "input_window": win(self.input_window),
            "target_repeat": self.target_repeat,
            "target_window": win(self.target_window),
        }


def _require_repeats(bank: ImageBank) -> None:
    if bank.n_repeats < 2:
        raise ValidationError("pair-based schemes need a volume with at least 2 repeats")


def make_s2f_dataset(
    bank: ImageBank, centers=(0.35, 0.50, 0.65), bandwidth: float = 0.5
) -> list[TrainingPair]:
    """One pair per (b-scan, centre): sub-band repeat 1 -> full-spectrum repeat 2."""
    _require_repeats(bank)
    if len(centers) == 0:
        raise ValidationError("S2F needs at least one window centre")
    windows = [make_gaussian_window(c, bandwidth, bank.spectrum) for c in centers]
    overlaps = window_overlaps(windows)
    pairs = []
    for b in range(bank.n_bscans):
        for i, w in enumerate(windows):
            tags = {"center": w.center_fraction, "beta": bandwidth, "overlaps": overlaps[i].tolist()}
            pairs.append(TrainingPair("s2f", b, 0, 1, w, None, bank, tags))
    return pairs


def make_n2n_dataset(bank: ImageBank, reverse: bool = False) -> list[TrainingPair]:
    """Full-spectrum repeat 1 -> repeat 2 (or the reverse direction)."""
    _require_repeats(bank)
    src, dst = (1, 0) if reverse else (0, 1)
    return [TrainingPair("n2n", b, src, dst, None, None, bank) for b in range(bank.n_bscans)]


def make_n2v_dataset(bank: ImageBank) -> list[TrainingPair]:
    """Single full-spectrum repeat per b-scan; blind-spot masks are drawn during training."""
    return [TrainingPair("n2v", b, 0, 0, None, None, bank) for b in range(bank.n_bscans)]


def make_dataset(bank: ImageBank, scheme: str, centers=(0.35, 0.50, 0.65), bandwidth: float = 0.5, reverse: bool = False):
    if scheme == "s2f":
        return make_s2f_dataset(bank, centers, bandwidth)
    if scheme == "n2n":
        return make_n2n_dataset(bank, reverse)
    if scheme == "n2v":
        return make_n2v_dataset(bank)
    raise ValidationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _stratified_sites(shape: tuple[int, int], count: int, rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    rows = min(h, max(1, math.ceil(math.sqrt(count * h / w))))
    cols = min(w, math.ceil(count / rows))
    rows = min(h, math.ceil(count / cols))
    r_edges = np.linspace(0, h, rows + 1).astype(int)
    c_edges = np.linspace(0, w, cols + 1).astype(int)
    cells = rng.choice(rows * cols, size=count, replace=False)
    cells.sort()
    ri, ci = np.divmod(cells, cols)
    r = rng.integers(r_edges[ri], r_edges[ri + 1])
    c = rng.integers(c_edges[ci], c_edges[ci + 1])
    return np.stack([r, c], axis=1)


def apply_n2v_mask(image, mask_count: int = 64, radius: int = 2, seed: int = 0):
    """Blind-spot masking: replace ``mask_count`` stratified sites by a random neighbour.

    Returns (masked_image, mask) as arrays; the input array is left untouched and
    serves as the target.
    """
    pixels = image.pixels if isinstance(image, BScanImage) else np.asarray(image)
    h, w = pixels.shape
    if mask_count < 1 or radius < 1:
        raise ValidationError("mask_count and radius must be >= 1")
    if mask_count > h * w:
        raise ValidationError(f"mask_count {mask_count} exceeds the {h * w} available pixels")
    rng = stream(seed, 0xB11D)
    sites = _stratified_sites((h, w), mask_count, rng)
    masked = pixels.copy()
    mask = np.zeros_like(pixels)
    for r, c in sites:
        r0, r1 = max(0, r - radius), min(h, r + radius + 1)
        c0, c1 = max(0, c - radius), min(w, c + radius + 1)
        n = (r1 - r0) * (c1 - c0) - 1
        j = int(rng.integers(n))
        flat_self = (r - r0) * (c1 - c0) + (c - c0)
        j += j >= flat_self
        rr, cc = divmod(j, c1 - c0)
        masked[r, c] = pixels[r0 + rr, c0 + cc]
        mask[r, c] = 1
    return masked, mask


@dataclass
class DatasetSplit:
    train: list
    val: list
    split_ratio: float
    seed: int

    @property
    def train_bscans(self) -> set[int]:
        return {p.bscan for p in self.train}

    @property
    def val_bscans(self) -> set[int]:
        return {p.bscan for p in self.val}


def split_train_val(pairs: list, ratio: float = 4.0, seed: int = 0) -> DatasetSplit:
    """Grouped random split: b-scan groups are permuted and the first ⌊n·r/(r+1)⌋ go to training."""
    if len(pairs) < 5:
        raise ValidationError(f"need at least 5 pairs to split, got {len(pairs)}")
    groups = sorted({p.bscan for p in pairs})
    if len(groups) < 2:
        raise ValidationError("need at least two b-scans to form a grouped split")
    order = stream(seed, 0x5B17).permutation(len(groups))
    n_train = min(len(groups) - 1, max(1, math.floor(len(groups) * ratio / (ratio + 1))))
    train_groups = {groups[i] for i in order[:n_train]}
    train = [p for p in pairs if p.bscan in train_groups]
    val = [p for p in pairs if p.bscan not in train_groups]
    return DatasetSplit(train, val, ratio, seed)


MANIFEST_FIELDS = ("split", "scheme", "bscan", "input_repeat", "input_window", "target_repeat", "target_window")


def write_manifest(path: str | Path, split: DatasetSplit, volume_path: str = "") -> None:
    """Tab-separated listing, one record per pair, preceded by a ``# volume=`` comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# volume={volume_path}\n")
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for name, part in (("train", split.train), ("val", split.val)):
            for p in part:
                writer.writerow({"split": name, **p.describe()})


def read_manifest(path: str | Path) -> list[dict]:
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = list(csv.DictReader(lines, delimiter="\t"))
    for row in rows:
        for key in ("bscan", "input_repeat", "target_repeat"):
            row[key] = int(row[key])
    return rows
