"""Synthetic shear-wave data.

Traveling-wave superpositions on small patches (training/test data for
the wavenumber estimator), full-grid plane waves, complex Gaussian
noise, and the forward phase-encoding model that turns a displacement
field into a series of wrapped complex MR images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import ComplexGrid, GridGeom

# Relative likelihood of drawing M = 1..8 superposed waves.
WAVE_COUNT_WEIGHTS = np.array([6, 4, 3, 2, 1, 1, 1, 1], dtype=np.float64)

PATCH_DIMS_2D = (3, 3)
PATCH_DIMS_3D = (3, 3, 3)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Noise amplitude for synthesized patches.

    mode "intensity": b drawn uniformly from range (collapse the range
    to a point for a fixed b). mode "snr_db": a per-patch target SNR is
    drawn instead and b is solved from the realized signal power,
    SNR_dB = 10*log10(mean|u|^2 / b^2).
    """

    mode: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.mode not in ("intensity", "snr_db"):
            raise ConfigurationError(f"unknown noise mode {self.mode!r}")
        if not (self.lo <= self.hi):
            raise ConfigurationError(f"inverted noise range [{self.lo}, {self.hi}]")
        if self.mode == "intensity" and self.lo < 0:
            raise ConfigurationError("noise intensity must be >= 0")

    @classmethod
    def intensity(cls, b: float) -> "NoiseSpec":
        return cls("intensity", float(b), float(b))

    @classmethod
    def snr_range(cls, lo: float, hi: float) -> "NoiseSpec":
        return cls("snr_db", float(lo), float(hi))


@dataclass(frozen=True)
class SamplingConfig:
    """Distribution of random traveling-wave patches at one frequency."""

    omega: float                      # rad/s
    k_re_range: tuple[float, float]   # normalized k', s/m
    k_im_range: tuple[float, float]   # normalized k'', s/m
    noise: NoiseSpec
    ndim: int = 2

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigurationError("omega must be positive")
        lo, hi = self.k_re_range
        if not (0 < lo <= hi):
            raise ConfigurationError(f"k_re_range must lie in (0, inf), got [{lo}, {hi}]")
        lo, hi = self.k_im_range
        if not (0 <= lo <= hi):
            raise ConfigurationError(f"k_im_range must lie in [0, inf), got [{lo}, {hi}]")
        if self.ndim not in (2, 3):
            raise ConfigurationError("ndim must be 2 or 3")


@dataclass(frozen=True)
class TweParams:
    """One realization of the traveling-wave superposition.

    amplitudes has one entry per wave (length M). directions is (M, ndim)
    with unit rows, components ordered (x, y[, z]). k_star is k' + i*k''
    in rad/m. When target_snr_db is set the noise amplitude is solved
    from the realized patch power at synthesis time and noise_intensity
    is ignored.
    """

    amplitudes: np.ndarray
    directions: np.ndarray
    k_star: complex
    omega: float
    noise_intensity: float = 0.0
    target_snr_db: float | None = None

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        d = np.asarray(self.directions, dtype=np.float64)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "directions", d)
        m = a.shape[0]
        if not 1 <= m <= 8:
            raise ValueError(f"wave count must be in 1..8, got {m}")
        if d.shape != (m, d.shape[1]) or d.shape[1] not in (2, 3):
            raise ValueError(f"directions must be (M, 2) or (M, 3), got {d.shape}")
        norms = np.linalg.norm(d, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-12):
            raise ValueError("direction vectors must have unit norm within 1e-12")
        if not self.k_star.real > 0:
            raise ValueError("k' must be positive")
        if self.k_star.imag < 0:
            raise ValueError("k'' must be >= 0")
        if self.noise_intensity < 0:
            raise ValueError("noise intensity must be >= 0")
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    @property
    def wave_count(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def k_tilde(self) -> complex:
        """Normalized wavenumber k/omega in s/m."""
        return self.k_star / self.omega


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard complex Gaussian: re and im i.i.d. N(0, 1/2), E|z|^2 = 1."""
    scale = math.sqrt(0.5)
    return rng.normal(0.0, scale, shape) + 1j * rng.normal(0.0, scale, shape)


def _draw_wave_counts(rng, n: int) -> np.ndarray:
    p = WAVE_COUNT_WEIGHTS / WAVE_COUNT_WEIGHTS.sum()
    return rng.choice(np.arange(1, 9), size=n, p=p)


def _draw_amplitudes(rng, n: int) -> np.ndarray:
    mag = rng.uniform(0.0, 1.0, (n, 8))
    ang = rng.uniform(0.0, 2.0 * np.pi, (n, 8))
    return mag * np.exp(1j * ang)


def _draw_directions(rng, n: int, ndim: int) -> np.ndarray:
    if ndim == 2:
        ang = rng.uniform(0.0, 2.0 * np.pi, (n, 8))
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    z = rng.uniform(-1.0, 1.0, (n, 8))
    az = rng.uniform(0.0, 2.0 * np.pi, (n, 8))
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([rho * np.cos(az), rho * np.sin(az), z], axis=-1)


def _draw_batch_params(rng, config: SamplingConfig, n: int):
    """Vectorized parameter draws; amplitudes beyond each M are zeroed."""
    counts = _draw_wave_counts(rng, n)
    amps = _draw_amplitudes(rng, n)
    dirs = _draw_directions(rng, n, config.ndim)
    amps = np.where(np.arange(8)[None, :] < counts[:, None], amps, 0.0)
    kt_re = rng.uniform(*config.k_re_range, n)
    kt_im = rng.uniform(*config.k_im_range, n)
    if config.noise.mode == "snr_db":
        snr = rng.uniform(config.noise.lo, config.noise.hi, n)
        b = None
    else:
        snr = None
        b = rng.uniform(config.noise.lo, config.noise.hi, n)
    return counts, amps, dirs, kt_re, kt_im, snr, b


def sample_twe_params(rng: np.random.Generator, config: SamplingConfig) -> TweParams:
    """Draw one TweParams realization from the configured distributions."""
    counts, amps, dirs, kt_re, kt_im, snr, b = _draw_batch_params(rng, config, 1)
    m = int(counts[0])
    k = config.omega * (kt_re[0] + 1j * kt_im[0])
    return TweParams(
        amplitudes=amps[0, :m],
        directions=dirs[0, :m],
        k_star=complex(k),
        omega=config.omega,
        noise_intensity=0.0 if b is None else float(b[0]),
        target_snr_db=None if snr is None else float(snr[0]),
    )


def _superpose(amps, dirs, k_star, coords) -> np.ndarray:
    """Sum of traveling waves over pixel coordinates.

    amps (..., M), dirs (..., M, ndim), k_star (...,) complex,
    coords (*dims, ndim) meters. Returns (..., *dims).
    """
    dims = coords.shape[:-1]
    flat = coords.reshape(-1, coords.shape[-1])
    phase = np.einsum("...md,pd->...mp", dirs, flat)
    w = amps[..., :, None] * np.exp(1j * np.asarray(k_star)[..., None, None] * phase)
    out = w.sum(axis=-2)
    return out.reshape(out.shape[:-1] + dims)


def _noise_amp_for_snr(u_power: np.ndarray, snr_db: np.ndarray) -> np.ndarray:
    """b such that 10*log10(u_power / b^2) = snr_db."""
    return np.sqrt(u_power) * 10.0 ** (-np.asarray(snr_db) / 20.0)


def synth_patch(params: TweParams, geom: GridGeom, rng: np.random.Generator):
    """Synthesize one noisy patch. Returns (ComplexGrid, k_re, k_im targets in s/m)."""
    if geom.dims not in (PATCH_DIMS_2D, PATCH_DIMS_3D):
        raise ValueError(f"unsupported patch size {geom.dims}, expected 3x3 or 3x3x3")
    if geom.ndim != params.directions.shape[1]:
        raise ValueError("params dimensionality does not match patch geometry")
    u = _superpose(params.amplitudes, params.directions, params.k_star, geom.coords())
    if params.target_snr_db is not None:
        power = float(np.mean(np.abs(u) ** 2))
        if power == 0.0:
            raise ValueError("target-SNR noise requires a nonzero signal")
        b = float(_noise_amp_for_snr(power, params.target_snr_db))
    else:
        b = params.noise_intensity
    d = u + b * complex_normal(rng, u.shape)
    kt = params.k_tilde
    return ComplexGrid(d, geom), kt.real, kt.imag


def synth_wavefield(params: TweParams, geom: GridGeom) -> ComplexGrid:
    """Noise-free traveling-wave superposition on an arbitrary grid."""
    if geom.ndim != params.directions.shape[1]:
        raise ValueError("params dimensionality does not match grid geometry")
    u = _superpose(params.amplitudes, params.directions, params.k_star, geom.coords())
    return ComplexGrid(u, geom)


def plane_wave(geom: GridGeom, k_tilde: complex, omega: float, direction,
               amplitude: complex = 1.0 + 0.0j) -> ComplexGrid:
    """Single traveling wave with normalized wavenumber k_tilde (s/m)."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    params = TweParams(
        amplitudes=np.array([amplitude], dtype=np.complex128),
        directions=d[None, :],
        k_star=complex(omega * k_tilde),
        omega=float(omega),
    )
    return synth_wavefield(params, geom)


def add_complex_noise(field: ComplexGrid, rng: np.random.Generator, *,
                      intensity: float | None = None,
                      snr_db: float | None = None) -> ComplexGrid:
    """Add b * (standard complex Gaussian) to a field.

    Exactly one of intensity / snr_db must be given. In SNR mode b is
    solved from the mean field power, which must be nonzero.
    """
    if (intensity is None) == (snr_db is None):
        raise ValueError("pass exactly one of intensity= or snr_db=")
    if intensity is not None:
        if intensity < 0:
            raise ValueError("intensity must be >= 0")
        b = float(intensity)
    else:
        power = float(np.mean(np.abs(field.values) ** 2))
        if power == 0.0:
            raise ValueError("target-SNR noise is undefined on an all-zero field")
        b = float(_noise_amp_for_snr(power, snr_db))
    if b == 0.0:
        return field.copy()
    return ComplexGrid(field.values + b * complex_normal(rng, field.values.shape), field.geom)


@dataclass
class TrainingBatch:
    """Patches plus their normalized-wavenumber targets.

    patches: (n, *patch_dims) complex. k_re / k_im: (n,) targets in s/m.
    snr_db is NaN for intensity-mode noise; noise_b records the realized
    noise amplitude either way.
    """

    patches: np.ndarray
    k_re: np.ndarray
    k_im: np.ndarray
    geom: GridGeom
    snr_db: np.ndarray
    noise_b: np.ndarray

    def __len__(self) -> int:
        return self.patches.shape[0]


def build_training_batch(config: SamplingConfig, geom: GridGeom, batch_size: int,
                         rng: np.random.Generator) -> TrainingBatch:
    """batch_size independent (patch, target) draws, fully vectorized."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if geom.dims not in (PATCH_DIMS_2D, PATCH_DIMS_3D):
        raise ValueError(f"unsupported patch size {geom.dims}, expected 3x3 or 3x3x3")
    if geom.ndim != config.ndim:
        raise ValueError("sampling config dimensionality does not match patch geometry")
    n = int(batch_size)
    _, amps, dirs, kt_re, kt_im, snr, b = _draw_batch_params(rng, config, n)
    k_star = config.omega * (kt_re + 1j * kt_im)
    u = _superpose(amps, dirs, k_star, geom.coords())
    if b is None:
        power = np.mean(np.abs(u) ** 2, axis=tuple(range(1, u.ndim)))
        if np.any(power == 0.0):
            raise ValueError("target-SNR noise requires nonzero signal in every patch")
        b = _noise_amp_for_snr(power, snr)
        snr_out = snr
    else:
        snr_out = np.full(n, np.nan)
    noise = complex_normal(rng, u.shape)
    shape_b = (n,) + (1,) * (u.ndim - 1)
    d = u + b.reshape(shape_b) * noise
    return TrainingBatch(d, kt_re, kt_im, geom, snr_out, b)


def default_phase_offsets(j: int = 4) -> np.ndarray:
    """Evenly spaced offsets 2*pi*(j-1)/J."""
    if j < 2:
        raise ValueError("need at least two phase offsets")
    return 2.0 * np.pi * np.arange(j) / j


@dataclass
class PhaseOffsetSeries:
    """J complex MR images sharing a grid, one per encoding phase offset.

    images is (J, *dims) complex. scale_factor records the multiplier
    applied to the input displacement when a phase_scale was requested
    at encoding time (1.0 otherwise), so ground truth can be mapped into
    the encoded gauge.
    """

    images: np.ndarray
    phase_offsets: np.ndarray
    geom: GridGeom
    scale_factor: float = 1.0

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.complex128)
        self.phase_offsets = np.asarray(self.phase_offsets, dtype=np.float64)
        j = self.phase_offsets.shape[0]
        if j < 2:
            raise ValueError("a phase-offset series needs J >= 2 images")
        if self.images.shape != (j,) + self.geom.dims:
            raise ValueError(
                f"images shape {self.images.shape} != (J={j},) + dims {self.geom.dims}"
            )
        # offsets must be pairwise distinct modulo 2*pi
        for p in range(j):
            for q in range(p + 1, j):
                d = self.phase_offsets[p] - self.phase_offsets[q]
                wrapped = (d + np.pi) % (2.0 * np.pi) - np.pi
                if abs(wrapped) < 1e-9:
                    raise ValueError(
                        f"phase offsets {p} and {q} coincide modulo 2*pi"
                    )

    @property
    def n_offsets(self) -> int:
        return self.phase_offsets.shape[0]

    def grids(self) -> list[ComplexGrid]:
        return [ComplexGrid(im, self.geom) for im in self.images]


def encode_phase_series(displacement: ComplexGrid, phase_offsets, *,
                        magnitude=1.0, background_phase=0.0,
                        phase_scale: float | None = None) -> PhaseOffsetSeries:
    """Forward phase-encoding model.

    The image phase at offset phi_j is Re(U* exp(i phi_j)) where U* is
    the complex displacement; the stored image is
    |A| * exp(i Phi) * exp(i phase), so wrapping happens implicitly.

    phase_scale, when given, rescales U* so the largest encoded |phase|
    over all offsets and pixels equals phase_scale (skipped for an
    all-zero displacement). magnitude and background_phase may be
    scalars or per-pixel arrays.
    """
    offsets = np.asarray(phase_offsets, dtype=np.float64)
    if offsets.ndim != 1 or offsets.shape[0] < 2:
        raise ValueError("need at least two phase offsets")
    u = displacement.values
    rot = np.exp(1j * offsets)
    phases = np.real(u[None, ...] * rot.reshape((-1,) + (1,) * u.ndim))
    scale = 1.0
    if phase_scale is not None:
        if not phase_scale > 0:
            raise ValueError("phase_scale must be positive")
        peak = float(np.max(np.abs(phases)))
        if peak > 0.0:
            scale = phase_scale / peak
            phases = phases * scale
    mag = np.asarray(magnitude, dtype=np.float64)
    phi0 = np.asarray(background_phase, dtype=np.float64)
    images = mag * np.exp(1j * phi0) * np.exp(1j * phases)
    return PhaseOffsetSeries(images, offsets, displacement.geom, scale_factor=scale)


def add_series_noise(series: PhaseOffsetSeries, sigma: float,
                     rng: np.random.Generator) -> PhaseOffsetSeries:
    """Independent complex Gaussian noise of amplitude sigma on every image."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        images = series.images.copy()
    else:
        images = series.images + sigma * complex_normal(rng, series.images.shape)
    return PhaseOffsetSeries(images, series.phase_offsets.copy(), series.geom,
                             scale_factor=series.scale_factor)


def new_rng(seed, *spawn_key: int) -> np.random.Generator:
    """Deterministic generator from one root seed plus a spawn path."""
    ss = np.random.SeedSequence(seed)
    if spawn_key:
        ss = np.random.SeedSequence(seed, spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.PCG64(ss))


def make_sampling_config(omega: float, *, k_re_range=(0.35, 1.35),
                         k_im_range=(0.0, 0.28), noise: NoiseSpec | None = None,
                         ndim: int = 2) -> SamplingConfig:
    """SamplingConfig with the documented default wavenumber ranges."""
    if noise is None:
        noise = NoiseSpec.intensity(0.001)
    return SamplingConfig(float(omega), tuple(k_re_range), tuple(k_im_range), noise, ndim)
