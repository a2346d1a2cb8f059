"""Spectral-domain OCT acquisition: source spectrum, fringe synthesis, detector noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ValidationError
from .phantom import PhantomModel, PhantomSpec, ScattererField, build_phantom, realize_scatterers, stream

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
NOISE_MODES = ("physical_speckle", "additive_gaussian_on_image")


@dataclass(frozen=True)
class SourceSpectrum:
    k: np.ndarray
    envelope: np.ndarray
    fwhm_k: float
    lambda_min: float
    lambda_max: float

    @property
    def n_k(self) -> int:
        return self.k.size

    @property
    def dk(self) -> float:
        return float(self.k[1] - self.k[0])

    @property
    def k_center(self) -> float:
        return 0.5 * float(self.k[0] + self.k[-1])

    @property
    def max_depth(self) -> float:
        """Unambiguous depth range in µm.

        A real fringe cos(2kz) advances its phase by 2Δk·z per sample, so depths
        beyond π/(2Δk) alias onto mirror positions.
        """
        return np.pi / (2 * self.dk)

    def envelope_at(self, k) -> np.ndarray:
        """Continuous Gaussian envelope evaluated at arbitrary wavenumbers."""
        return np.exp(-4 * np.log(2) * (np.asarray(k) - self.k_center) ** 2 / self.fwhm_k**2)

    def depth_pixel(self, zero_padding: int = 1) -> float:
        """Axial pixel size in µm of an FFT of length n_k * zero_padding."""
        return np.pi / (self.n_k * zero_padding * self.dk)


def make_source_spectrum(lambda_min: float, lambda_max: float, fwhm: float, n_k: int) -> SourceSpectrum:
    """Linear-in-k grid spanning [2π/λ_max, 2π/λ_min] with a Gaussian envelope.

    Wavelengths are in nm, k in rad/µm. The envelope is centred on the grid
    midpoint; its k-space FWHM is the distance between the wavenumbers of
    λ_c ± fwhm/2, where λ_c = 2π/k_mid.
    """
    if not 0 < lambda_min < lambda_max:
        raise ValidationError(f"need 0 < lambda_min < lambda_max, got {lambda_min}, {lambda_max}")
    if not 0 < fwhm <= 2 * (lambda_max - lambda_min):
        raise ValidationError(f"fwhm {fwhm} nm is not compatible with the band {lambda_min}-{lambda_max} nm")
    if n_k < 64:
        raise ValidationError(f"n_k must be >= 64, got {n_k}")
    k = np.linspace(2e3 * np.pi / lambda_max, 2e3 * np.pi / lambda_min, n_k)
    kc = 0.5 * (k[0] + k[-1])
    lc = 2e3 * np.pi / kc
    if fwhm / 2 >= lc:
        raise ValidationError("fwhm exceeds twice the centre wavelength")
    fwhm_k = 2e3 * np.pi / (lc - fwhm / 2) - 2e3 * np.pi / (lc + fwhm / 2)
    envelope = np.exp(-4 * np.log(2) * (k - kc) ** 2 / fwhm_k**2)
    return SourceSpectrum(k, envelope / envelope.max(), fwhm_k, lambda_min, lambda_max)


@dataclass(frozen=True)
class NoiseConfig:
    detector_noise_std: float = 0.0
    noise_mode: str = "physical_speckle"
    image_noise_std: float = 0.0

    def validate(self) -> None:
        if self.detector_noise_std < 0 or self.image_noise_std < 0:
            raise ValidationError("noise standard deviations must be >= 0")
        if self.noise_mode not in NOISE_MODES:
            raise ValidationError(f"noise_mode must be one of {NOISE_MODES}")


@dataclass
class Interferogram:
    """Fringes of one B-scan: ``data`` has shape (n_k, n_alines, n_repeats)."""

    data: np.ndarray
    k: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_repeats(self) -> int:
        return self.data.shape[2]

    @property
    def n_alines(self) -> int:
        return self.data.shape[1]

    def repeat(self, index: int) -> np.ndarray:
        return self.data[:, :, index]


def _fringe_block(z: np.ndarray, c: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Σ_m Re(c_m exp(2i k z_m)) for every A-line, evaluated exactly.

    Uses k_n = k_0 + n Δk and splits n = q·B + p so that the phasor table
    factorises into two small exponent tables joined by a batched matmul.
    """
    n_alines, m = z.shape
    n_k = k.size
    if m == 0:
        return np.zeros((n_k, n_alines))
    dk = (k[-1] - k[0]) / (n_k - 1)
    block = int(np.ceil(np.sqrt(n_k)))
    n_outer = int(np.ceil(n_k / block))
    step = np.exp(2j * dk * z)
    inner = np.empty((n_alines, block, m), dtype=complex)
    inner[:, 0] = c * np.exp(2j * k[0] * z)
    for p in range(1, block):
        inner[:, p] = inner[:, p - 1] * step
    stride = np.exp(2j * dk * block * z)
    outer = np.empty((n_alines, n_outer, m), dtype=complex)
    outer[:, 0] = 1.0
    for q in range(1, n_outer):
        outer[:, q] = outer[:, q - 1] * stride
    table = np.matmul(outer, inner.transpose(0, 2, 1))  # (alines, n_outer, block)
    return table.reshape(n_alines, -1)[:, :n_k].real.T


def simulate_fringes(
    scatterers: ScattererField,
    spectrum: SourceSpectrum,
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
) -> Interferogram:
    """Background-subtracted fringes S(k) Σ a cos(2kz + φ) plus Gaussian detector noise."""
    noise.validate()
    limit = spectrum.max_depth
    for zi in scatterers.z:
        if zi.size and (zi.max() >= limit or zi.min() < 0):
            bad = zi.max() if zi.max() >= limit else zi.min()
            raise ValidationError(f"scatterer depth {bad:.3f} µm outside unambiguous range [0, {limit:.3f})")
    z, c = scatterers.padded()
    data = spectrum.envelope[:, None] * _fringe_block(z, c, spectrum.k)
    if noise.detector_noise_std > 0 and noise.noise_mode == "physical_speckle":
        data = data + noise.detector_noise_std * stream(seed, 0xD37).standard_normal(data.shape)
    return Interferogram(data[:, :, None], spectrum.k, {"seed": seed})


def simulate_volume(
    spec: PhantomSpec,
    spectrum: SourceSpectrum,
    noise: NoiseConfig,
    n_bscans: int,
    n_repeats: int = 2,
    decorrelation: float = 1.0,
    model: PhantomModel | None = None,
) -> list[Interferogram]:
    """Simulate ``n_bscans`` B-scans, each with ``n_repeats`` independent speckle realizations.

    Seeds derive from (spec.seed, b-scan, repeat). In additive-image noise mode
    all repeats share one realization and the image-domain noise is applied later
    by :func:`add_image_noise`.
    """
    if n_repeats < 1 or n_bscans < 1:
        raise ValidationError("n_bscans and n_repeats must be >= 1")
    noise.validate()
    model = model or build_phantom(spec)
    additive = noise.noise_mode == "additive_gaussian_on_image"
    volume = []
    for b in range(n_bscans):
        repeats, seeds = [], []
        for r in range(n_repeats):
            repeat_seed = 1 if additive else r + 1
            noise_seed = int(stream(spec.seed, b, r, 0xA0).integers(2**63))
            field_ = realize_scatterers(model, repeat_seed, bscan=b, decorrelation=decorrelation)
            repeats.append(simulate_fringes(field_, spectrum, noise, noise_seed).data[:, :, 0])
            seeds.append({"repeat_seed": repeat_seed, "noise_seed": noise_seed})
        meta = {"phantom_seed": spec.seed, "bscan": b, "seeds": seeds, "noise_mode": noise.noise_mode}
        volume.append(Interferogram(np.stack(repeats, axis=2), spectrum.k, meta))
    return volume


def add_image_noise(image: np.ndarray, std: float, seed: int) -> np.ndarray:
    """Zero-mean i.i.d. Gaussian noise in the image domain."""
    return image + std * stream(seed, 0x1A6E).standard_normal(image.shape)
