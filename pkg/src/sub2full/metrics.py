"""Image-quality metrics: SNR, CNR, VAR over ROIs, and PSNR against a known clean image."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ValidationError
from .reconstruction import BScanImage

EPS_VAR = 1e-12
PSNR_IDENTICAL = math.inf
CSV_FIELDS = ("image_id", "model_id", "scheme", "snr_db", "cnr_db", "var_value", "psnr_db", "clamp_flags")


@dataclass(frozen=True)
class Roi:
    rows: tuple[int, int]
    cols: tuple[int, int]
    label: str = "structure"
    name: str = ""

    def check(self, shape: tuple[int, int]) -> None:
        (r0, r1), (c0, c1) = self.rows, self.cols
        if not (0 <= r0 < r1 <= shape[0] and 0 <= c0 < c1 <= shape[1]):
            raise ValidationError(f"ROI {self.name or self.rows} is empty or outside the {shape} image")
        if self.label not in ("structure", "background"):
            raise ValidationError(f"ROI label must be structure or background, got {self.label!r}")

    def take(self, pixels: np.ndarray) -> np.ndarray:
        self.check(pixels.shape)
        return pixels[self.rows[0] : self.rows[1], self.cols[0] : self.cols[1]]


def _pixels(image) -> np.ndarray:
    return np.asarray(image.pixels if isinstance(image, BScanImage) else image, dtype=np.float64)


def snr(image, background: Roi) -> float:
    """20 log10(max pixel / background standard deviation)."""
    pixels = _pixels(image)
    sigma = float(background.take(pixels).std())
    if sigma == 0:
        raise ValidationError(f"background ROI {background.name or background.rows} has zero variance")
    return 20.0 * math.log10(float(pixels.max()) / sigma)


def cnr(image, structures: list[Roi], background: Roi, variant: str = "difference", flags: list | None = None) -> float:
    """Mean over structure ROIs of 10 log10(|μ_i - μ_B| / sqrt(σ_i² - σ_B²)).

    A non-positive variance difference is clamped to ``EPS_VAR`` and recorded in
    ``flags``. ``variant="sum"`` uses σ_i² + σ_B² instead.
    """
    if not structures:
        raise ValidationError("CNR needs at least one structure ROI")
    if variant not in ("difference", "sum"):
        raise ValidationError(f"unknown CNR variant {variant!r}")
    pixels = _pixels(image)
    bg = background.take(pixels)
    mu_b, var_b = float(bg.mean()), float(bg.var())
    terms = []
    for roi in structures:
        region = roi.take(pixels)
        mu, var = float(region.mean()), float(region.var())
        if mu == mu_b:
            raise ValidationError(f"ROI {roi.name or roi.rows} has the background mean; CNR diverges")
        spread = var + var_b if variant == "sum" else var - var_b
        if spread < EPS_VAR:
            spread = EPS_VAR
            if flags is not None:
                flags.append(f"cnr_clamp:{roi.name or roi.rows}")
        terms.append(10.0 * math.log10(abs(mu - mu_b) / math.sqrt(spread)))
    return float(np.mean(terms))


def var_metric(image) -> float:
    """Sum of absolute deviations from the whole-image mean."""
    pixels = _pixels(image)
    if pixels.size == 0:
        raise ValidationError("VAR of an empty image")
    return float(np.abs(pixels - pixels.mean()).sum())


def psnr(image, clean) -> float:
    """10 log10(1 / MSE) for images on [0, 1]; identical images give +inf."""
    a, b = _pixels(image), _pixels(clean)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) > 1:
        raise ValidationError("PSNR expects images on [0, 1]")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class MetricsReport:
    image_id: str
    model_id: str
    scheme: str
    snr_db: float
    cnr_db: float
    var_value: float
    psnr_db: float | None = None
    roi_stats: dict = field(default_factory=dict)
    clamp_flags: list = field(default_factory=list)

    def row(self) -> dict:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        return {
            "image_id": self.image_id,
            "model_id": self.model_id,
            "scheme": self.scheme,
            "snr_db": fmt(self.snr_db),
            "cnr_db": fmt(self.cnr_db),
            "var_value": fmt(self.var_value),
            "psnr_db": fmt(self.psnr_db),
            "clamp_flags": ";".join(self.clamp_flags),
        }


def metrics_report(
    image,
    rois: list[Roi],
    clean=None,
    image_id: str = "",
    model_id: str = "",
    scheme: str = "",
    cnr_variant: str = "difference",
) -> MetricsReport:
    background = [r for r in rois if r.label == "background"]
    structures = [r for r in rois if r.label == "structure"]
    if len(background) != 1:
        raise ValidationError("exactly one background ROI is required")
    pixels = _pixels(image)
    for r in rois:
        r.check(pixels.shape)
    flags: list[str] = []
    stats = {r.name or str(r.rows): (float(r.take(pixels).mean()), float(r.take(pixels).var())) for r in rois}
    return MetricsReport(
        image_id,
        model_id,
        scheme,
        snr(pixels, background[0]),
        cnr(pixels, structures, background[0], cnr_variant, flags),
        var_metric(pixels),
        None if clean is None else psnr(pixels, clean),
        stats,
        flags,
    )


def mean_report(reports: list[MetricsReport], image_id: str = "mean") -> MetricsReport:
    def avg(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    first = reports[0]
    flags = sorted({f for r in reports for f in r.clamp_flags})
    return MetricsReport(
        image_id, first.model_id, first.scheme,
        avg([r.snr_db for r in reports]), avg([r.cnr_db for r in reports]),
        avg([r.var_value for r in reports]), avg([r.psnr_db for r in reports]), {}, flags,
    )


def write_metrics_csv(path: str | Path, reports: list[MetricsReport], with_mean: bool = True) -> None:
    """One row per report, then (per model) a mean row when ``with_mean``."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        groups: dict[tuple, list] = {}
        for r in reports:
            writer.writerow(r.row())
            groups.setdefault((r.model_id, r.scheme), []).append(r)
        if with_mean:
            for group in groups.values():
                writer.writerow(mean_report(group).row())


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))
