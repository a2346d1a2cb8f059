"""Experiment commands: each reads the config, writes its outputs plus a provenance manifest."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from functools import cached_property
from pathlib import Path

import numpy as np

from . import ValidationError
from .config import ExperimentConfig
from .formats import read_octb, read_octi, write_octb, write_octi, write_pgm
from .forward_model import simulate_fringes, simulate_volume
from .metrics import metrics_report, write_metrics_csv
from .net import TrainHistory, denoise, read_checkpoint, train, write_checkpoint
from .phantom import ScattererField, build_phantom, clean_reference, stream
from .plotting import plot_comparison, plot_history, plot_panels, plot_sweep
from .reconstruction import ReconConfig, make_gaussian_window, measure_axial_fwhm, reconstruct_bscan
from .schemes import ImageBank, make_dataset, make_s2f_dataset, split_train_val, write_manifest

log = logging.getLogger("sub2full")

COMPARE_ROWS = ("R1", "Merged", "S2F", "N2N", "N2V")


class Experiment:
    """Paths and lazily loaded data products of one configured experiment."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out = config.output_dir

    # paths
    @property
    def volume_path(self) -> Path:
        return self.out / "volume.octi"

    @property
    def test_volume_path(self) -> Path:
        return self.out / "test_volume.octi"

    def checkpoint_path(self, scheme: str) -> Path:
        return self.out / "models" / f"{scheme}.s2fw"

    def history_path(self, scheme: str) -> Path:
        return self.out / "models" / f"{scheme}_history.csv"

    # data
    @cached_property
    def spectrum(self):
        return self.config.spectrum()

    @cached_property
    def recon(self) -> ReconConfig:
        return self.config.recon()

    def _load(self, path: Path):
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run `sub2full simulate` first")
        volume = read_octi(path)
        if volume[0].data.shape[0] != self.spectrum.n_k:
            raise ValidationError(f"{path} was simulated with a different k grid")
        return volume

    def _bank(self, path: Path, test: bool) -> ImageBank:
        noise = self.config.noise()
        std = noise.image_noise_std if noise.noise_mode == "additive_gaussian_on_image" else 0.0
        seed = self.config.phantom_spec(test=test).seed
        return ImageBank(self._load(path), self.spectrum, self.recon, image_noise_std=std, noise_seed=seed)

    @cached_property
    def train_bank(self) -> ImageBank:
        return self._bank(self.volume_path, test=False)

    @cached_property
    def test_bank(self) -> ImageBank:
        return self._bank(self.test_volume_path, test=True)

    @cached_property
    def eval_indices(self) -> list[int]:
        n = int(self.config.raw["evaluation"]["n_images"])
        pool = self.test_bank.n_bscans
        return sorted(int(i) for i in stream(self.config.seed, 0xE7A1).choice(pool, size=n, replace=False))

    def clean_image(self, bscan: int) -> np.ndarray:
        """Ensemble-mean reference of a test b-scan, cached as OCTB."""
        path = self.out / "clean" / f"bscan_{bscan:03d}.octb"
        if path.exists():
            return read_octb(path).pixels
        path.parent.mkdir(parents=True, exist_ok=True)
        noise = self.config.noise()
        if noise.noise_mode == "additive_gaussian_on_image":
            # all repeats share one speckle realization; the clean image is that realization without image noise
            bank = self.test_bank
            quiet = ImageBank(bank.volume, self.spectrum, self.recon, bank.log_scale)
            img = quiet.image(bscan, 0)
        else:
            model = build_phantom(self.config.phantom_spec(test=True))
            n = int(self.config.raw["evaluation"]["clean_realizations"])
            img = clean_reference(model, self.recon, n, self.spectrum, noise, bscan, self.test_bank.log_scale)
        write_octb(path, img)
        return read_octb(path).pixels

    def model_input(self, bank: ImageBank, bscan: int, scheme: str) -> np.ndarray:
        if scheme == "s2f" and self.config.raw["evaluation"]["inference_input"] == "subband":
            return bank.pixels(bscan, 0, make_gaussian_window(0.5, self.config.bandwidth, self.spectrum))
        return bank.pixels(bscan, 0)

    def manifest(self, name: str, command: str, files: list[Path], **extra) -> None:
        body = {
            "command": command,
            "config_hash": self.config.hash(),
            "seed": self.config.seed,
            "files": sorted(str(Path(f).relative_to(self.out)) for f in files),
            "config": self.config.portable(),
            **extra,
        }
        (self.out / f"{name}.manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _row_dicts(path: Path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
def cmd_simulate(config: ExperimentConfig) -> list[Path]:
    config.validate()
    exp = Experiment(config)
    v = config.raw["volume"]
    written = []
    for path, test, n in ((exp.volume_path, False, v["n_bscans"]), (exp.test_volume_path, True, v["test_bscans"])):
        spec = config.phantom_spec(test=test)
        log.info("simulating %s: %d b-scans x %d repeats", path.name, n, v["n_repeats"])
        volume = simulate_volume(spec, exp.spectrum, config.noise(), int(n), int(v["n_repeats"]), config.decorrelation)
        write_octi(path, volume)
        written.append(path)
    exp.manifest(
        "simulate", "simulate", written,
        phantom_seeds={"train": config.phantom_spec().seed, "test": config.phantom_spec(test=True).seed},
    )
    return written


def cmd_reconstruct(config: ExperimentConfig, bscans=(0,)) -> list[Path]:
    config.validate()
    exp = Experiment(config)
    bank = exp.train_bank
    out = exp.out / "recon"
    out.mkdir(exist_ok=True)
    written = []
    windows = [None] + [make_gaussian_window(c, config.bandwidth, exp.spectrum) for c in config.centers]
    for b in bscans:
        if not 0 <= b < bank.n_bscans:
            raise ValidationError(f"b-scan {b} outside the volume")
        for r in range(bank.n_repeats):
            for w in windows:
                tag = "full" if w is None else f"sub{w.center_fraction:.2f}"
                stem = f"bscan{b:03d}_r{r + 1}_{tag}"
                img = bank.image(b, r, w)
                octb, pgm = out / f"{stem}.octb", out / f"{stem}.pgm"
                write_octb(octb, img)
                write_pgm(pgm, img.pixels)
                written += [octb, pgm]
    exp.manifest("reconstruct", "reconstruct", written, log_scale=vars(bank.log_scale))
    return written


def cmd_train(config: ExperimentConfig, scheme: str, resume: bool = False, bank: ImageBank | None = None) -> tuple[Path, TrainHistory]:
    config.validate()
    exp = Experiment(config)
    bank = bank or exp.train_bank
    tc = config.train_config(scheme)
    pairs = make_dataset(bank, scheme, config.centers, config.bandwidth, bool(config.raw["schemes"]["n2n_reverse"]))
    split = split_train_val(pairs, float(config.raw["schemes"]["split_ratio"]), config.seed)
    ckpt = exp.checkpoint_path(scheme)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    params = state = None
    if resume:
        if not ckpt.exists():
            raise FileNotFoundError(f"cannot resume: {ckpt} not found")
        params, state = read_checkpoint(ckpt)
    log.info("training %s on %d train / %d val pairs", scheme, len(split.train), len(split.val))
    best, history, state = train(split, tc, params, state, log=log.info)
    write_checkpoint(ckpt, best, state)
    history.write_csv(exp.history_path(scheme))
    write_manifest(exp.out / "models" / f"{scheme}_pairs.tsv", split, str(exp.volume_path.name))
    plot_history({scheme.upper(): history}, exp.out / "models" / f"{scheme}_history.png")
    exp.manifest(
        f"train_{scheme}", f"train --scheme {scheme}",
        [ckpt, exp.history_path(scheme)],
        convergence_epoch=history.convergence_epoch, steps=history.steps, adam_t=state.t,
    )
    return ckpt, history


def _load_model(exp: Experiment, scheme: str):
    path = exp.checkpoint_path(scheme)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run `sub2full train --scheme {scheme}`")
    return read_checkpoint(path)[0]


def cmd_denoise(config: ExperimentConfig, scheme: str) -> list[Path]:
    config.validate()
    exp = Experiment(config)
    params = _load_model(exp, scheme)
    out = exp.out / "denoised" / scheme
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for b in exp.eval_indices:
        img = denoise(params, exp.model_input(exp.test_bank, b, scheme), scheme)
        stem = out / f"bscan{b:03d}"
        write_octb(stem.with_suffix(".octb"), img)
        write_pgm(stem.with_suffix(".pgm"), img.pixels)
        written += [stem.with_suffix(".octb"), stem.with_suffix(".pgm")]
    exp.manifest(f"denoise_{scheme}", f"denoise --scheme {scheme}", written)
    return written


def _evaluate_rows(exp: Experiment, label: str, images: dict[int, np.ndarray], model_id: str):
    variant = exp.config.raw["evaluation"]["cnr_variant"]
    return [
        metrics_report(images[b], exp.config.rois(), exp.clean_image(b), f"bscan{b:03d}", model_id, label, variant)
        for b in exp.eval_indices
    ]


def cmd_evaluate(config: ExperimentConfig, scheme: str) -> Path:
    config.validate()
    exp = Experiment(config)
    params = _load_model(exp, scheme)
    images = {b: denoise(params, exp.model_input(exp.test_bank, b, scheme)).pixels for b in exp.eval_indices}
    reports = _evaluate_rows(exp, scheme.upper(), images, exp.checkpoint_path(scheme).name)
    path = exp.out / f"metrics_{scheme}.csv"
    write_metrics_csv(path, reports)
    exp.manifest(f"evaluate_{scheme}", f"evaluate --scheme {scheme}", [path])
    return path


def cmd_compare(config: ExperimentConfig) -> Path:
    """Metrics of R1, Merged, S2F, N2N, N2V on the same held-out images and ROIs."""
    config.validate()
    exp = Experiment(config)
    models = {s: _load_model(exp, s) for s in ("s2f", "n2n", "n2v")}
    bank = exp.test_bank
    idx = exp.eval_indices
    images = {
        "R1": {b: bank.pixels(b, 0).astype(np.float64) for b in idx},
        "Merged": {b: 0.5 * (bank.pixels(b, 0).astype(np.float64) + bank.pixels(b, 1)) for b in idx},
    }
    for s, params in models.items():
        images[s.upper()] = {b: denoise(params, exp.model_input(bank, b, s)).pixels for b in idx}
    reports, means = [], {}
    for label in COMPARE_ROWS:
        model_id = exp.checkpoint_path(label.lower()).name if label.lower() in models else "none"
        rows = _evaluate_rows(exp, label, images[label], model_id)
        reports += rows
        means[label] = {
            k: float(np.mean([getattr(r, k) for r in rows])) for k in ("snr_db", "cnr_db", "var_value", "psnr_db")
        }
    path = exp.out / "comparison.csv"
    write_metrics_csv(path, reports)
    previews = exp.out / "compare_previews"
    previews.mkdir(exist_ok=True)
    first = idx[0]
    for label in COMPARE_ROWS:
        write_pgm(previews / f"{label}_bscan{first:03d}.pgm", images[label][first])
    plot_comparison(means, exp.out / "comparison.png")
    plot_panels({label: images[label][first] for label in COMPARE_ROWS} | {"clean": exp.clean_image(first)},
                exp.out / "comparison_panels.png")
    exp.manifest("compare", "compare", [path], n_images=len(idx), means=means)
    return path


def single_reflector_fwhm(spectrum, beta: float | None, center: float = 0.5, depth: float = 60.0, zero_padding: int = 8) -> float:
    """Axial FWHM (pixels of the unpadded grid) of a lone noiseless reflector."""
    field_ = ScattererField([np.array([depth])], [np.array([1.0])], [np.array([0.0])], depth + 1)
    fringes = simulate_fringes(field_, spectrum).repeat(0)
    window = None if beta is None else make_gaussian_window(center, beta, spectrum)
    keep = spectrum.n_k * zero_padding // 2
    recon = ReconConfig(zero_padding=zero_padding, keep_depth_pixels=keep, scale="linear", window=window)
    return measure_axial_fwhm(reconstruct_bscan(fringes, recon), 0) / zero_padding


SWEEP_FIELDS = ("beta", "input_fwhm_px", "full_fwhm_px", "snr_db", "cnr_db", "var_value", "psnr_db", "convergence_epoch")


def cmd_sweep_bandwidth(config: ExperimentConfig, betas: list[float] | None = None) -> Path:
    betas = list(betas) if betas is not None else config.betas
    config = config.with_overrides(sweep={"betas": betas})
    config.validate()
    exp = Experiment(config)
    full = single_reflector_fwhm(exp.spectrum, None)
    rows, written = [], []
    for beta in betas:
        sub = config.with_overrides(output_dir=str(exp.out / "sweep" / f"beta_{beta:.2f}"), schemes={"bandwidth": beta})
        sub.validate()
        sub_exp = Experiment(sub)
        _, history = cmd_train(sub, "s2f", bank=exp.train_bank)
        params = _load_model(sub_exp, "s2f")
        images = {b: denoise(params, sub_exp.model_input(exp.test_bank, b, "s2f")).pixels for b in exp.eval_indices}
        reports = _evaluate_rows(exp, "S2F", images, f"s2f_beta{beta:.2f}")
        first = exp.eval_indices[0]
        preview = exp.out / "sweep" / f"beta_{beta:.2f}_bscan{first:03d}.pgm"
        write_pgm(preview, images[first])
        written.append(preview)
        rows.append({
            "beta": f"{beta:.2f}",
            "input_fwhm_px": f"{single_reflector_fwhm(exp.spectrum, beta):.6f}",
            "full_fwhm_px": f"{full:.6f}",
            "snr_db": f"{np.mean([r.snr_db for r in reports]):.6f}",
            "cnr_db": f"{np.mean([r.cnr_db for r in reports]):.6f}",
            "var_value": f"{np.mean([r.var_value for r in reports]):.6f}",
            "psnr_db": f"{np.mean([r.psnr_db for r in reports]):.6f}",
            "convergence_epoch": history.convergence_epoch,
        })
    path = exp.out / "sweep_bandwidth.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    plot_sweep(rows, exp.out / "sweep_bandwidth.png")
    exp.manifest("sweep_bandwidth", "sweep-bandwidth", [path] + written, betas=betas)
    return path


def select_frames(n_bscans: int, fraction: float, seed: int) -> list[int]:
    """⌈fraction·n⌉ distinct b-scan indices by seeded sampling, sorted."""
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must lie in (0, 1]")
    k = math.ceil(round(fraction * n_bscans, 9))
    return sorted(int(i) for i in stream(seed, 0xF12E).choice(n_bscans, size=k, replace=False))


FINETUNE_FIELDS = ("model", "n_frames", "snr_db", "cnr_db", "var_value", "psnr_db", "convergence_epoch", "wall_seconds")


def cmd_finetune_volume(config: ExperimentConfig, fraction: float | None = None) -> Path:
    """Train a dedicated S2F model on a few frames of the test volume and apply it to that volume."""
    fraction = float(config.raw["finetune"]["fraction"] if fraction is None else fraction)
    config = config.with_overrides(finetune={"fraction": fraction})
    config.validate()
    exp = Experiment(config)
    bank = exp.test_bank
    frames = select_frames(bank.n_bscans, fraction, config.seed)
    sub_bank = bank.subset(frames)
    pairs = make_s2f_dataset(sub_bank, config.centers, config.bandwidth)
    split = split_train_val(pairs, float(config.raw["schemes"]["split_ratio"]), config.seed)
    t0 = time.perf_counter()
    params, history, state = train(split, config.train_config("s2f"), log=log.info)
    out = exp.out / "finetune"
    out.mkdir(exist_ok=True)
    denoised = {}
    for b in range(bank.n_bscans):
        img = denoise(params, exp.model_input(bank, b, "s2f"), "finetune")
        denoised[b] = img.pixels
        write_octb(out / f"bscan{b:03d}.octb", img)
    wall = time.perf_counter() - t0
    ckpt = out / "s2f_finetune.s2fw"
    write_checkpoint(ckpt, params, state)
    history.write_csv(out / "history.csv")
    write_pgm(out / f"bscan{frames[0]:03d}.pgm", denoised[frames[0]])
    rows = []

    def summary(label, images, conv, seconds):
        reports = _evaluate_rows(exp, label, images, label)
        return {
            "model": label,
            "n_frames": len(frames) if label == "finetune" else "",
            "snr_db": f"{np.mean([r.snr_db for r in reports]):.6f}",
            "cnr_db": f"{np.mean([r.cnr_db for r in reports]):.6f}",
            "var_value": f"{np.mean([r.var_value for r in reports]):.6f}",
            "psnr_db": f"{np.mean([r.psnr_db for r in reports]):.6f}",
            "convergence_epoch": conv,
            "wall_seconds": seconds,
        }

    rows.append(summary("finetune", denoised, history.convergence_epoch, f"{wall:.1f}"))
    general = exp.checkpoint_path("s2f")
    if general.exists():
        gp = read_checkpoint(general)[0]
        gimages = {b: denoise(gp, exp.model_input(bank, b, "s2f")).pixels for b in exp.eval_indices}
        rows.append(summary("general", gimages, "", ""))
    path = out / "report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FINETUNE_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    exp.manifest("finetune", f"finetune --fraction {fraction}", [path, ckpt], frames=frames)
    log.info("fine-tuned on %d frames and denoised %d b-scans in %.1f s", len(frames), bank.n_bscans, wall)
    return path
