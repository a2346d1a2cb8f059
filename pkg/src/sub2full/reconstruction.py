"""B-scan reconstruction: windowing, FFT, magnitude, shared log normalization."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from . import ValidationError
from .forward_model import FWHM_TO_SIGMA, Interferogram, SourceSpectrum

SHORT_MEDIUM_LONG = (0.35, 0.50, 0.65)


@dataclass(frozen=True)
class SpectralWindow:
    center_fraction: float
    bandwidth_fraction: float
    weights: np.ndarray = field(repr=False, compare=False)
    k_center: float = 0.0
    fwhm_k: float = 0.0

    def weight_at(self, k) -> np.ndarray:
        return np.exp(-4 * np.log(2) * (np.asarray(k) - self.k_center) ** 2 / self.fwhm_k**2)

    def describe(self) -> str:
        return f"c={self.center_fraction:g},beta={self.bandwidth_fraction:g}"


def make_gaussian_window(center_fraction: float, bandwidth_fraction: float, spectrum: SourceSpectrum) -> SpectralWindow:
    """Gaussian sub-band window.

    The FWHM is ``bandwidth_fraction`` times the source envelope FWHM, and the
    centre sits at ``center_fraction`` of the k grid span. The window must keep
    its ±2σ support on the grid.
    """
    c, beta = center_fraction, bandwidth_fraction
    if not 0 < c < 1:
        raise ValidationError(f"center_fraction must be in (0, 1), got {c}")
    if not 0 < beta <= 1:
        raise ValidationError(f"bandwidth_fraction must be in (0, 1], got {beta}")
    k = spectrum.k
    kc = k[0] + c * (k[-1] - k[0])
    fwhm = beta * spectrum.fwhm_k
    two_sigma = 2 * fwhm * FWHM_TO_SIGMA
    if kc - two_sigma < k[0] or kc + two_sigma > k[-1]:
        raise ValidationError(
            f"window c={c:g}, beta={beta:g} leaves the k grid: ±2σ support "
            f"[{kc - two_sigma:.4f}, {kc + two_sigma:.4f}] vs [{k[0]:.4f}, {k[-1]:.4f}]"
        )
    w = np.exp(-4 * np.log(2) * (k - kc) ** 2 / fwhm**2)
    return SpectralWindow(c, beta, w, float(kc), float(fwhm))


def window_overlaps(windows: list[SpectralWindow]) -> np.ndarray:
    """Pairwise inner products of window weights."""
    w = np.stack([win.weights for win in windows])
    return w @ w.T


def resample_lambda_to_k(fringes: np.ndarray, wavelengths: np.ndarray, k_target: np.ndarray) -> np.ndarray:
    """Cubic-spline resampling of fringes sampled on ``wavelengths`` (nm) onto ``k_target`` (rad/µm).

    ``fringes`` has the spectral axis first. Targets outside the sampled range
    take the nearest endpoint value.
    """
    lam = np.asarray(wavelengths, dtype=float)
    d = np.diff(lam)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValidationError("wavelength grid must be strictly monotonic")
    k_in = 2e3 * np.pi / lam
    order = np.argsort(k_in)
    spline = CubicSpline(k_in[order], np.asarray(fringes)[order], axis=0)
    kt = np.clip(k_target, k_in[order][0], k_in[order][-1])
    return spline(kt)


@dataclass(frozen=True)
class LogScale:
    """Shared log10 normalisation constants of one volume."""

    floor: float
    ceil: float
    eps: float

    def apply(self, magnitude: np.ndarray) -> np.ndarray:
        return np.clip((np.log10(magnitude + self.eps) - self.floor) / (self.ceil - self.floor), 0.0, 1.0)


@dataclass(frozen=True)
class ReconConfig:
    zero_padding: int = 1
    keep_depth_pixels: int = 256
    log_floor_percentile: float = 2.0
    log_ceil_percentile: float = 99.9
    window: SpectralWindow | None = None
    scale: str = "log_normalized"
    equalize_energy: bool = True

    def validate(self, spectrum: SourceSpectrum | None = None) -> None:
        if self.zero_padding < 1:
            raise ValidationError("zero_padding must be >= 1")
        if not 0 <= self.log_floor_percentile < self.log_ceil_percentile <= 100:
            raise ValidationError("need 0 <= floor percentile < ceil percentile <= 100")
        if self.scale not in ("linear", "log_normalized"):
            raise ValidationError(f"unknown scale {self.scale!r}")
        if spectrum is not None:
            if self.keep_depth_pixels < 1 or self.keep_depth_pixels > spectrum.n_k * self.zero_padding // 2:
                raise ValidationError("keep_depth_pixels exceeds the positive-depth half of the FFT")
            if self.window is not None and self.window.weights.shape != spectrum.k.shape:
                raise ValidationError("window weights do not match the k grid")

    def with_window(self, window: SpectralWindow | None) -> "ReconConfig":
        return replace(self, window=window)


@dataclass
class BScanImage:
    pixels: np.ndarray
    scale: str = "log_normalized"
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def linear_magnitude(fringes: np.ndarray, recon: ReconConfig, window: SpectralWindow | None = None) -> np.ndarray:
    """|FFT| of (optionally windowed) fringes, positive depths cropped; shape (depth, alines)."""
    window = window if window is not None else recon.window
    n_k = fringes.shape[0]
    if window is not None:
        if window.weights.shape[0] != n_k:
            raise ValidationError("window length does not match the fringe k axis")
        fringes = fringes * window.weights[:, None]
    spectrum = np.fft.fft(fringes, n=n_k * recon.zero_padding, axis=0)
    return np.abs(spectrum[: recon.keep_depth_pixels])


def energy_gain(envelope: np.ndarray, window: SpectralWindow | None) -> float:
    """Amplitude gain that restores the mean speckle intensity lost to windowing."""
    if window is None:
        return 1.0
    return float(np.sqrt(np.sum(envelope**2) / np.sum((envelope * window.weights) ** 2)))


def volume_log_scale(volume: list[Interferogram], recon: ReconConfig) -> LogScale:
    """Floor/ceil percentiles and ε from the full-spectrum images of the whole volume."""
    full = replace(recon, window=None)
    mags = np.stack([linear_magnitude(ifg.repeat(r), full) for ifg in volume for r in range(ifg.n_repeats)])
    return log_scale_from(mags, recon)


def log_scale_from(magnitudes: np.ndarray, recon: ReconConfig) -> LogScale:
    peak = float(magnitudes.max())
    eps = 1e-8 * peak if peak > 0 else 1e-12
    logs = np.log10(magnitudes + eps)
    floor, ceil = np.percentile(logs, [recon.log_floor_percentile, recon.log_ceil_percentile])
    if ceil <= floor:
        ceil = floor + 1.0
    return LogScale(float(floor), float(ceil), eps)


def reconstruct_bscan(
    fringes: np.ndarray,
    recon: ReconConfig,
    log_scale: LogScale | None = None,
    envelope: np.ndarray | None = None,
    provenance: dict | None = None,
) -> BScanImage:
    """Reconstruct one B-scan repeat.

    In log mode the normalisation constants come from ``log_scale`` (normally
    the volume's full-spectrum scale); without one, they are derived from the
    full-spectrum reconstruction of these same fringes.
    """
    prov = dict(provenance or {})
    prov["window"] = recon.window.describe() if recon.window is not None else "full"
    prov["log"] = "log10 amplitude"
    mag = linear_magnitude(fringes, recon)
    if recon.scale == "linear":
        return BScanImage(mag, "linear", prov)
    if recon.equalize_energy and recon.window is not None:
        if envelope is None:
            raise ValidationError("energy equalisation needs the source envelope")
        mag = mag * energy_gain(envelope, recon.window)
    if log_scale is None:
        log_scale = log_scale_from(linear_magnitude(fringes, replace(recon, window=None)), recon)
    return BScanImage(log_scale.apply(mag), "log_normalized", prov)


def reconstruct_volume(
    volume: list[Interferogram],
    recon: ReconConfig,
    spectrum: SourceSpectrum,
    log_scale: LogScale | None = None,
    repeat: int = 0,
) -> list[BScanImage]:
    recon.validate(spectrum)
    if log_scale is None and recon.scale == "log_normalized":
        log_scale = volume_log_scale(volume, recon)
    return [
        reconstruct_bscan(ifg.repeat(repeat), recon, log_scale, spectrum.envelope, {"bscan": i, "repeat": repeat})
        for i, ifg in enumerate(volume)
    ]


def _half_max_crossings(profile: np.ndarray, peak: int) -> tuple[float, float]:
    half = profile[peak] / 2
    left = peak
    while left > 0 and profile[left] > half:
        left -= 1
    right = peak
    while right < profile.size - 1 and profile[right] > half:
        right += 1
    if profile[left] > half or profile[right] > half:
        raise ValidationError("peak too close to the image boundary for a half-maximum width")
    x_left = left + (half - profile[left]) / (profile[left + 1] - profile[left])
    x_right = right - 1 + (profile[right - 1] - half) / (profile[right - 1] - profile[right])
    return x_left, x_right


def measure_axial_fwhm(image: BScanImage | np.ndarray, aline_index: int = 0) -> float:
    """Half-maximum width (pixels) of the dominant peak of one A-line, linear magnitude scale."""
    if isinstance(image, BScanImage):
        if image.scale != "linear":
            raise ValidationError("axial FWHM is measured on linear-scale magnitude images")
        pixels = image.pixels
    else:
        pixels = np.asarray(image)
    profile = np.asarray(pixels[:, aline_index] if pixels.ndim == 2 else pixels, dtype=float)
    peak = int(np.argmax(profile))
    if peak == 0 or peak == profile.size - 1:
        raise ValidationError("dominant peak sits on the image boundary")
    inner = profile[1:-1]
    is_max = (inner >= profile[:-2]) & (inner >= profile[2:])
    maxima = np.sort(inner[is_max])[::-1]
    if maxima.size > 1 and maxima[0] < 2 * maxima[1]:
        raise ValidationError("A-line has no unique dominant peak")
    left, right = _half_max_crossings(profile, peak)
    return float(right - left)
