"""Layered retina-like phantoms and their speckle realizations.

A phantom is a continuous reflectivity map r(z, x) per B-scan. Each repeat
draws a fresh set of sub-resolution point scatterers whose ensemble-mean
intensity follows r; the random phases produce fully developed speckle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ValidationError


@dataclass(frozen=True)
class LayerSpec:
    z_top: float
    z_bottom: float
    mean_reflectivity: float
    scatterer_density: float = 10.0
    reflectivity_gradient: float = 0.0
    name: str = ""

    def validate(self) -> None:
        if not self.z_bottom > self.z_top:
            raise ValidationError(f"layer {self.name or self.z_top}: z_bottom must exceed z_top")
        if self.scatterer_density < 1:
            raise ValidationError(f"layer {self.name or self.z_top}: scatterer_density must be >= 1")
        if self.mean_reflectivity < 0:
            raise ValidationError(f"layer {self.name or self.z_top}: mean_reflectivity must be >= 0")


def default_layers() -> list[LayerSpec]:
    """Eight-band stack loosely shaped like inner + outer retina.

    Depths are in µm from the top of the image. The OS band carries a
    positive reflectivity gradient; the melanin band is dark.
    """
    return [
        LayerSpec(14.0, 32.0, 0.9, name="axon"),
        LayerSpec(32.0, 54.0, 0.45, name="ipl"),
        LayerSpec(54.0, 78.0, 0.08, name="onl"),
        LayerSpec(78.0, 81.0, 0.6, name="elm"),
        LayerSpec(84.0, 89.0, 1.0, name="ez"),
        LayerSpec(89.0, 104.0, 0.15, reflectivity_gradient=0.04, name="os"),
        LayerSpec(104.0, 110.0, 0.05, name="rpe_melanin"),
        LayerSpec(110.0, 122.0, 0.8, name="rpe_basal"),
    ]


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of a layered phantom.

    ``curvature`` bows every boundary downward towards the B-scan edges and
    ``undulation`` adds a per-B-scan sinusoidal ripple whose phase is drawn
    from ``seed`` so neighbouring B-scans are not identical.
    """

    depth_extent: float = 150.0
    layers: tuple[LayerSpec, ...] = field(default_factory=lambda: tuple(default_layers()))
    lateral_extent: int = 256
    seed: int = 0
    resolution_cell: float = 1.5
    curvature: float = 6.0
    undulation: float = 2.0
    undulation_period: float = 0.5

    def validate(self) -> None:
        if self.depth_extent <= 0:
            raise ValidationError("depth_extent must be positive")
        if self.lateral_extent < 1:
            raise ValidationError("lateral_extent must be >= 1")
        if self.resolution_cell <= 0:
            raise ValidationError("resolution_cell must be positive")
        for layer in self.layers:
            layer.validate()
        for upper, lower in zip(self.layers, self.layers[1:]):
            if lower.z_top < upper.z_bottom:
                raise ValidationError(
                    f"layers overlap or are unsorted: [{upper.z_top}, {upper.z_bottom}) "
                    f"and [{lower.z_top}, {lower.z_bottom})"
                )
        if self.layers:
            lowest = self.layers[-1].z_bottom + max(self.curvature, 0) + abs(self.undulation)
            highest = self.layers[0].z_top - abs(self.undulation) + min(self.curvature, 0)
            if lowest >= self.depth_extent or highest < 0:
                raise ValidationError("displaced layers leave [0, depth_extent)")


@dataclass(frozen=True)
class ScattererField:
    """Point scatterers of one speckle realization, one entry per A-line.

    ``z``, ``amplitude`` and ``phase`` are lists of 1-D arrays indexed by A-line.
    """

    z: list[np.ndarray]
    amplitude: list[np.ndarray]
    phase: list[np.ndarray]
    depth_extent: float

    @property
    def n_alines(self) -> int:
        return len(self.z)

    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (z, complex amplitude) as (n_alines, max_count) arrays, zero padded."""
        m = max((len(a) for a in self.z), default=0)
        z = np.zeros((self.n_alines, m))
        c = np.zeros((self.n_alines, m), dtype=complex)
        for i, (zi, ai, pi) in enumerate(zip(self.z, self.amplitude, self.phase)):
            z[i, : len(zi)] = zi
            c[i, : len(zi)] = ai * np.exp(1j * pi)
        return z, c

    def union(self, other: "ScattererField") -> "ScattererField":
        if other.n_alines != self.n_alines:
            raise ValidationError("cannot merge fields with different A-line counts")
        return ScattererField(
            [np.concatenate(p) for p in zip(self.z, other.z)],
            [np.concatenate(p) for p in zip(self.amplitude, other.amplitude)],
            [np.concatenate(p) for p in zip(self.phase, other.phase)],
            max(self.depth_extent, other.depth_extent),
        )


def stream(*key: int) -> np.random.Generator:
    """Independent generator for an integer key tuple; order of creation is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key]))


class PhantomModel:
    """Deterministic reflectivity profile r(z, x) for every B-scan of a volume."""

    def __init__(self, spec: PhantomSpec):
        spec.validate()
        self.spec = spec
        self._layers = spec.layers

    def _phase(self, bscan: int) -> float:
        return float(stream(self.spec.seed, 0x5CA7, bscan).uniform(0, 2 * np.pi))

    def displacement(self, bscan: int = 0) -> np.ndarray:
        """Downward boundary shift (µm) for every A-line of a B-scan."""
        s = self.spec
        u = (np.arange(s.lateral_extent) + 0.5) / s.lateral_extent
        sag = s.curvature * (2 * u - 1) ** 2
        ripple = s.undulation * np.sin(2 * np.pi * u / s.undulation_period + self._phase(bscan))
        return sag + ripple

    def reflectivity(self, z: np.ndarray, bscan: int = 0) -> np.ndarray:
        """r(z, x) sampled at depths ``z`` (µm) for all A-lines; shape (len(z), lateral_extent)."""
        z = np.asarray(z, dtype=float)
        local = z[:, None] - self.displacement(bscan)[None, :]
        r = np.zeros_like(local)
        for layer in self._layers:
            inside = (local >= layer.z_top) & (local < layer.z_bottom)
            r[inside] = layer.mean_reflectivity + layer.reflectivity_gradient * (local[inside] - layer.z_top)
        return np.maximum(r, 0.0)

    def __repr__(self) -> str:
        return f"PhantomModel(layers={len(self._layers)}, seed={self.spec.seed})"


def build_phantom(spec: PhantomSpec) -> PhantomModel:
    if not spec.layers:
        raise ValidationError("phantom needs at least one layer")
    return PhantomModel(spec)


def realize_scatterers(
    model: PhantomModel,
    repeat_seed: int,
    bscan: int = 0,
    decorrelation: float = 1.0,
) -> ScattererField:
    """Draw one speckle realization of B-scan ``bscan``.

    Scatterer counts per layer are fixed (density x thickness / cell), positions
    are uniform inside the layer and phases uniform on [0, 2π). Amplitudes are
    sqrt(r(z) * cell / density) so the mean intensity per µm equals r(z).

    With ``decorrelation`` < 1 only that fraction of scatterers is redrawn from
    the repeat stream; the rest come from a stream shared by all repeats.
    """
    if not 0.0 <= decorrelation <= 1.0:
        raise ValidationError("decorrelation must lie in [0, 1]")
    spec = model.spec
    shift = model.displacement(bscan)
    zs, amps, phases = [], [], []
    for a in range(spec.lateral_extent):
        rng = stream(spec.seed, bscan, a, repeat_seed)
        shared = stream(spec.seed, bscan, a, 0x5EED) if decorrelation < 1.0 else None
        z_parts, a_parts, p_parts = [], [], []
        for layer in model._layers:
            thickness = layer.z_bottom - layer.z_top
            n = max(1, int(round(layer.scatterer_density * thickness / spec.resolution_cell)))
            z = rng.uniform(layer.z_top, layer.z_bottom, n)
            ph = rng.uniform(0.0, 2 * np.pi, n)
            if shared is not None:
                keep = rng.random(n) >= decorrelation
                z = np.where(keep, shared.uniform(layer.z_top, layer.z_bottom, n), z)
                ph = np.where(keep, shared.uniform(0.0, 2 * np.pi, n), ph)
            r = np.maximum(layer.mean_reflectivity + layer.reflectivity_gradient * (z - layer.z_top), 0.0)
            z_parts.append(z + shift[a])
            a_parts.append(np.sqrt(r * spec.resolution_cell / layer.scatterer_density))
            p_parts.append(ph)
        zs.append(np.concatenate(z_parts) if z_parts else np.zeros(0))
        amps.append(np.concatenate(a_parts) if a_parts else np.zeros(0))
        phases.append(np.concatenate(p_parts) if p_parts else np.zeros(0))
    return ScattererField(zs, amps, phases, spec.depth_extent)


def clean_reference(
    model: PhantomModel,
    recon,
    n_realizations: int,
    spectrum,
    noise=None,
    bscan: int = 0,
    log_scale=None,
    seed_offset: int = 1_000_000,
):
    """Ensemble mean of ``n_realizations`` independently reconstructed images of one B-scan.

    Realizations use repeat seeds ``seed_offset + i`` so they never coincide with
    the repeats of a simulated volume. In log mode the mean is taken after log
    compression with ``log_scale``.
    """
    from .forward_model import NoiseConfig, simulate_fringes
    from .reconstruction import BScanImage, reconstruct_bscan

    if n_realizations < 1:
        raise ValidationError("n_realizations must be >= 1")
    noise = noise or NoiseConfig()
    total = None
    for i in range(n_realizations):
        seed = seed_offset + i
        field_ = realize_scatterers(model, seed, bscan=bscan)
        noise_seed = int(stream(model.spec.seed, bscan, seed, 0xA0).integers(2**63))
        ifg = simulate_fringes(field_, spectrum, noise, noise_seed)
        img = reconstruct_bscan(ifg.repeat(0), recon, log_scale, spectrum.envelope)
        total = img.pixels.copy() if total is None else total + img.pixels
    return BScanImage(total / n_realizations, img.scale, {"bscan": bscan, "clean_reference": n_realizations})
