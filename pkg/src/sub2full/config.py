"""Experiment configuration: one YAML file drives a whole run.

Every section maps onto a module's own dataclass; :func:`load_config` builds
them and :meth:`ExperimentConfig.validate` checks cross-module consistency
(window support, divisibility, ROI bounds, output directory) before any
compute starts.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import ValidationError
from .forward_model import NoiseConfig, SourceSpectrum, make_source_spectrum
from .metrics import Roi
from .net.train import TrainConfig
from .net.unet import Arch
from .phantom import LayerSpec, PhantomSpec, stream
from .reconstruction import ReconConfig, make_gaussian_window

CONFIG_VERSION = 1

DEFAULTS: dict = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "output_dir": "runs/reference",
    "phantom": {
        "depth_extent": 150.0,
        "lateral_extent": 256,
        "resolution_cell": 1.5,
        "curvature": 6.0,
        "undulation": 2.0,
        "undulation_period": 0.5,
        "layers": None,
    },
    "spectrum": {"lambda_min": 450.0, "lambda_max": 725.0, "fwhm": 90.0, "n_k": 512},
    "noise": {"detector_noise_std": 0.3, "noise_mode": "physical_speckle", "image_noise_std": 0.0, "decorrelation": 1.0},
    "volume": {"n_bscans": 64, "n_repeats": 2, "test_bscans": 30},
    "recon": {"zero_padding": 1, "keep_depth_pixels": 256, "log_floor_percentile": 2.0, "log_ceil_percentile": 99.9},
    "schemes": {
        "centers": [0.35, 0.50, 0.65],
        "bandwidth": 0.5,
        "split_ratio": 4.0,
        "n2n_reverse": False,
        "n2v_mask_count": 64,
        "n2v_mask_area": 16384,
        "n2v_radius": 2,
    },
    "train": {
        "batch_size": 2,
        "epochs": 60,
        "learning_rate": 1e-3,
        "patch_size": 64,
        "val_patch_size": 128,
        "patience": 15,
        "levels": 3,
        "channels": 16,
        "slope": 0.1,
    },
    "evaluation": {"n_images": 30, "clean_realizations": 16, "inference_input": "full", "cnr_variant": "difference"},
    "rois": {
        "background": [2, 16, 96, 160],
        "structures": {"axon": [28, 50, 96, 160], "ipl": [59, 86, 96, 160], "outer": [147, 200, 96, 160]},
    },
    "sweep": {"betas": [0.10, 0.25, 0.50, 0.75, 0.90]},
    "finetune": {"fraction": 0.10},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ValidationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "structures":
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    # ---- section views -------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    def phantom_spec(self, test: bool = False) -> PhantomSpec:
        p = self.raw["phantom"]
        layers = p["layers"]
        kw = {}
        if layers is not None:
            kw["layers"] = tuple(LayerSpec(**layer) for layer in layers)
        seed = self.seed if not test else int(stream(self.seed, 0x7E57).integers(2**62))
        return PhantomSpec(
            depth_extent=float(p["depth_extent"]),
            lateral_extent=int(p["lateral_extent"]),
            seed=seed,
            resolution_cell=float(p["resolution_cell"]),
            curvature=float(p["curvature"]),
            undulation=float(p["undulation"]),
            undulation_period=float(p["undulation_period"]),
            **kw,
        )

    def spectrum(self) -> SourceSpectrum:
        s = self.raw["spectrum"]
        return make_source_spectrum(float(s["lambda_min"]), float(s["lambda_max"]), float(s["fwhm"]), int(s["n_k"]))

    def noise(self) -> NoiseConfig:
        n = self.raw["noise"]
        return NoiseConfig(float(n["detector_noise_std"]), n["noise_mode"], float(n["image_noise_std"]))

    @property
    def decorrelation(self) -> float:
        return float(self.raw["noise"]["decorrelation"])

    def recon(self) -> ReconConfig:
        r = self.raw["recon"]
        return ReconConfig(
            zero_padding=int(r["zero_padding"]),
            keep_depth_pixels=int(r["keep_depth_pixels"]),
            log_floor_percentile=float(r["log_floor_percentile"]),
            log_ceil_percentile=float(r["log_ceil_percentile"]),
        )

    def train_config(self, scheme: str, seed: int | None = None) -> TrainConfig:
        t, s = self.raw["train"], self.raw["schemes"]
        return TrainConfig(
            scheme=scheme,
            batch_size=int(t["batch_size"]),
            epochs=int(t["epochs"]),
            learning_rate=float(t["learning_rate"]),
            seed=self.seed if seed is None else seed,
            arch=Arch(levels=int(t["levels"]), channels=int(t["channels"]), slope=float(t["slope"])),
            patch_size=t["patch_size"],
            val_patch_size=t["val_patch_size"],
            patience=t["patience"],
            n2v_mask_count=int(s["n2v_mask_count"]),
            n2v_mask_area=int(s["n2v_mask_area"]),
            n2v_radius=int(s["n2v_radius"]),
        )

    def rois(self) -> list[Roi]:
        r = self.raw["rois"]
        b = r["background"]
        out = [Roi((b[0], b[1]), (b[2], b[3]), "background", "background")]
        for name, s in r["structures"].items():
            out.append(Roi((s[0], s[1]), (s[2], s[3]), "structure", name))
        return out

    @property
    def centers(self) -> list[float]:
        return [float(c) for c in self.raw["schemes"]["centers"]]

    @property
    def bandwidth(self) -> float:
        return float(self.raw["schemes"]["bandwidth"])

    @property
    def betas(self) -> list[float]:
        return [float(b) for b in self.raw["sweep"]["betas"]]

    # ---- bookkeeping ---------------------------------------------------
    def portable(self) -> dict:
        """The config without its output location, which does not affect results."""
        return {k: v for k, v in self.raw.items() if k != "output_dir"}

    def canonical(self) -> str:
        return json.dumps(self.portable(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None, **sections) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        raw = _merge(raw, sections)
        return ExperimentConfig(raw)

    def validate(self, check_output: bool = True) -> None:
        """Cross-module consistency checks; raises ValidationError on the first problem."""
        if self.raw.get("version") != CONFIG_VERSION:
            raise ValidationError(f"config version must be {CONFIG_VERSION}")
        spec = self.phantom_spec()
        spec.validate()
        self.phantom_spec(test=True).validate()
        spectrum = self.spectrum()
        if spec.depth_extent >= spectrum.max_depth:
            raise ValidationError(f"phantom depth {spec.depth_extent} µm exceeds the unambiguous range {spectrum.max_depth:.1f} µm")
        self.noise().validate()
        if not 0 <= self.decorrelation <= 1:
            raise ValidationError("noise.decorrelation must lie in [0, 1]")
        recon = self.recon()
        recon.validate(spectrum)
        v = self.raw["volume"]
        if int(v["n_bscans"]) < 1 or int(v["test_bscans"]) < 1:
            raise ValidationError("volume sizes must be >= 1")
        if int(v["n_repeats"]) < 2:
            raise ValidationError("the pair-based schemes need n_repeats >= 2")
        if not self.centers:
            raise ValidationError("schemes.centers must not be empty")
        for c in self.centers:
            make_gaussian_window(c, self.bandwidth, spectrum)
        for beta in self.betas:
            if not 0 < beta <= 1:
                raise ValidationError(f"sweep beta {beta} outside (0, 1]")
            for c in self.centers:
                make_gaussian_window(c, beta, spectrum)
        shape = (recon.keep_depth_pixels, spec.lateral_extent)
        for scheme in ("s2f", "n2n", "n2v"):
            tc = self.train_config(scheme)
            tc.validate()
            for size in (tc.patch_size, tc.val_patch_size):
                if size is not None and (size > shape[0] or size > shape[1]):
                    raise ValidationError(f"patch size {size} exceeds the {shape} image")
        tc = self.train_config("s2f")
        if tc.patch_size is None or tc.val_patch_size is None:
            from .net.unet import check_spatial

            check_spatial(shape, tc.arch)
        for roi in self.rois():
            roi.check(shape)
        if sum(r.label == "background" for r in self.rois()) != 1:
            raise ValidationError("exactly one background ROI is required")
        e = self.raw["evaluation"]
        if int(e["n_images"]) > int(v["test_bscans"]):
            raise ValidationError("evaluation.n_images exceeds volume.test_bscans")
        if e["inference_input"] not in ("full", "subband"):
            raise ValidationError("evaluation.inference_input must be 'full' or 'subband'")
        if int(e["clean_realizations"]) < 1:
            raise ValidationError("evaluation.clean_realizations must be >= 1")
        frac = float(self.raw["finetune"]["fraction"])
        if not 0 < frac <= 1:
            raise ValidationError("finetune.fraction must lie in (0, 1]")
        if check_output:
            check_writable(self.output_dir)


def check_writable(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"output directory {path} cannot be created: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ValidationError(f"output directory {path} is not writable")


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return ExperimentConfig(_merge(DEFAULTS, data))


def dump_config(config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.raw, fh, sort_keys=True)

