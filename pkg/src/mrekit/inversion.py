"""Wavenumber map estimation and complex shear modulus recovery.

Two estimators produce normalized wavenumber maps (s/m): a trained
patch-wise network model and a direct Helmholtz inversion baseline.
fuse_modulus averages any number of such maps (across frequencies and
directions) and converts the result to a complex shear modulus map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cnet import TrainedModel, normalize_input, patch_covariance_rows
from .grid import ComplexGrid, GridGeom, geoms_compatible, spacing_compatible

_PREDICT_CHUNK = 8192


@dataclass
class WavenumberMap:
    """Normalized wavenumber estimates k~ = k/omega in s/m.

    k_re and k_im hold the real and imaginary parts on the full grid;
    mask marks pixels with a trustworthy estimate. n_clamped counts
    direct-inversion pixels whose k~'' came out negative and was
    clamped to zero.
    """

    k_re: np.ndarray
    k_im: np.ndarray
    geom: GridGeom
    omega: float
    direction: str = "z"
    mask: np.ndarray | None = None
    n_clamped: int = 0          # k~'' < 0 beyond rounding, clamped to zero

    def __post_init__(self):
        self.k_re = np.asarray(self.k_re, dtype=np.float64)
        self.k_im = np.asarray(self.k_im, dtype=np.float64)
        dims = tuple(self.geom.dims)
        if self.k_re.shape != dims or self.k_im.shape != dims:
            raise ValueError("wavenumber grids do not match the geometry")
        if self.mask is None:
            self.mask = np.ones(dims, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != dims:
                raise ValueError("mask does not match the geometry")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        # estimates are magnitudes of physical decay/propagation rates
        if self.mask.any():
            if np.min(self.k_re[self.mask]) < 0 or np.min(self.k_im[self.mask]) < 0:
                raise ValueError("negative wavenumber inside the valid mask")

    @property
    def k_complex(self) -> np.ndarray:
        return self.k_re + 1j * self.k_im


@dataclass
class ModulusMap:
    """Complex shear modulus map in Pa with fusion provenance."""

    g_re: np.ndarray
    g_im: np.ndarray
    rho: float
    geom: GridGeom
    mask: np.ndarray
    sources: list = field(default_factory=list)
    g_im_raw: np.ndarray | None = None

    def __post_init__(self):
        dims = tuple(self.geom.dims)
        for name, arr in (("g_re", self.g_re), ("g_im", self.g_im), ("mask", self.mask)):
            if np.asarray(arr).shape != dims:
                raise ValueError(f"{name} does not match the geometry")
        if self.mask.any():
            if np.min(self.g_re[self.mask]) <= 0:
                raise ValueError("storage modulus must be positive inside the mask")
            if np.min(self.g_im[self.mask]) < 0:
                raise ValueError("loss modulus must be nonnegative inside the mask")


def _interior_mask(dims) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    core = tuple(slice(1, -1) for _ in dims)
    mask[core] = True
    return mask


def estimate_wavenumber_map(model: TrainedModel, wavefield: ComplexGrid,
                            omega: float, direction: str = "z") -> WavenumberMap:
    """Run the trained model patch-wise over a wavefield.

    The wavefield is normalized once globally; every interior pixel's
    centered patch becomes one covariance row. Boundary pixels have no
    full patch and are masked invalid.
    """
    if abs(omega - model.omega) > 1e-9 * max(abs(omega), abs(model.omega)):
        raise ValueError(
            f"wavefield frequency {omega} does not match model {model.omega}")
    if not spacing_compatible(wavefield.geom, model.patch_geom):
        raise ValueError(
            f"wavefield spacing {wavefield.geom.spacing_mm} does not match "
            f"model {model.patch_geom.spacing_mm}")
    dims = tuple(wavefield.geom.dims)
    patch_dims = tuple(model.patch_geom.dims)
    if len(dims) != len(patch_dims):
        raise ValueError("wavefield and model dimensionality disagree")
    if any(n < p for n, p in zip(dims, patch_dims)):
        raise ValueError("wavefield smaller than one model patch")

    values = normalize_input(wavefield).values
    windows = np.lib.stride_tricks.sliding_window_view(values, patch_dims)
    inner = windows.shape[:len(dims)]
    flat = windows.reshape(-1, *patch_dims)

    k_re = np.zeros(dims)
    k_im = np.zeros(dims)
    out_re = np.empty(flat.shape[0])
    out_im = np.empty(flat.shape[0])
    for lo in range(0, flat.shape[0], _PREDICT_CHUNK):
        hi = min(lo + _PREDICT_CHUNK, flat.shape[0])
        rows = patch_covariance_rows(flat[lo:hi], per_patch_normalize=False)
        pr, pi = model.predict(rows)
        out_re[lo:hi] = pr
        out_im[lo:hi] = pi
    core = tuple(slice(1, -1) for _ in dims)
    k_re[core] = out_re.reshape(inner)
    k_im[core] = out_im.reshape(inner)
    return WavenumberMap(k_re, k_im, wavefield.geom, omega, direction,
                         mask=_interior_mask(dims))


def direct_inversion(wavefield: ComplexGrid, omega: float,
                     direction: str = "z") -> WavenumberMap:
    """Helmholtz baseline: k*^2 = -lap(u)/u on a 3x3(x3) stencil.

    k* is the principal square root (k' >= 0); negative k'' estimates
    are clamped to zero and counted. Pixels with |u| below 1e-6 of the
    global peak, and boundary pixels, are masked invalid.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    u = wavefield.values
    dims = tuple(wavefield.geom.dims)
    spacing = wavefield.geom.spacing_m

    lap = np.zeros(dims, dtype=np.complex128)
    core = tuple(slice(1, -1) for _ in dims)
    for ax, h in enumerate(spacing):
        lo = tuple(slice(None, -2) if a == ax else slice(1, -1) for a in range(len(dims)))
        hi = tuple(slice(2, None) if a == ax else slice(1, -1) for a in range(len(dims)))
        lap[core] += (u[lo] - 2.0 * u[core] + u[hi]) / (h * h)

    peak = float(np.abs(u).max())
    mask = _interior_mask(dims)
    mask &= np.abs(u) >= 1e-6 * peak

    ksq = np.zeros(dims, dtype=np.complex128)
    np.divide(-lap, u, out=ksq, where=mask)
    k = np.sqrt(ksq)
    k_re = np.where(mask, k.real, 0.0) / omega
    k_im = np.where(mask, k.imag, 0.0) / omega
    # count only materially negative estimates, not rounding residue
    tol = 1e-9 * float(np.max(k_re[mask], initial=0.0))
    clamped = int(np.count_nonzero(k_im[mask] < -tol))
    k_im = np.maximum(k_im, 0.0)
    return WavenumberMap(k_re, k_im, wavefield.geom, omega, direction,
                         mask=mask, n_clamped=clamped)


def median_filter_3x3(grid: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """3x3 median with edge replication; invalid neighbors are excluded."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("median filter expects a 2D grid")
    padded = np.pad(grid, 1, mode="edge")
    stack = np.empty((9,) + grid.shape)
    idx = 0
    for dy in range(3):
        for dx in range(3):
            stack[idx] = padded[dy:dy + grid.shape[0], dx:dx + grid.shape[1]]
            idx += 1
    if mask is None:
        return np.median(stack, axis=0)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise ValueError("mask does not match the grid shape")
    mpad = np.pad(mask, 1, mode="edge")
    valid = np.empty((9,) + grid.shape, dtype=bool)
    idx = 0
    for dy in range(3):
        for dx in range(3):
            valid[idx] = mpad[dy:dy + grid.shape[0], dx:dx + grid.shape[1]]
            idx += 1
    stack = np.where(valid, stack, np.nan)
    any_valid = valid.any(axis=0)
    with np.errstate(invalid="ignore"):
        out = np.where(any_valid, _nanmedian_quiet(stack), grid)
    return out


def _nanmedian_quiet(stack: np.ndarray) -> np.ndarray:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(stack, axis=0)


def _median_filter_slices(grid: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # 3D maps are filtered slice-wise with the same 3x3 kernel
    if grid.ndim == 2:
        return median_filter_3x3(grid, mask)
    out = np.empty_like(grid)
    for iz in range(grid.shape[0]):
        out[iz] = median_filter_3x3(grid[iz], mask[iz])
    return out


def fuse_modulus(maps: list, rho: float = 1000.0) -> ModulusMap:
    """Average wavenumber maps, invert to G*, and median filter.

    The average runs over the wavenumber estimates (not over moduli);
    G* = rho / (kbar' - i kbar'')^2. The loss modulus is reported as
    |Im G*| with the raw signed value kept for diagnostics.
    """
    if not maps:
        raise ValueError("need at least one wavenumber map to fuse")
    if not rho > 0:
        raise ValueError("density must be positive")
    geom = maps[0].geom
    for m in maps[1:]:
        if not geoms_compatible(geom, m.geom):
            raise ValueError("wavenumber maps disagree in geometry")
    mask = np.ones(tuple(geom.dims), dtype=bool)
    for m in maps:
        mask &= m.mask
    if not mask.any():
        raise ValueError("no pixel is valid in every map")

    k_re = np.mean([m.k_re for m in maps], axis=0)
    k_im = np.mean([m.k_im for m in maps], axis=0)
    mask &= k_re > 0

    denom = np.ones_like(k_re, dtype=np.complex128)
    np.copyto(denom, (k_re - 1j * k_im) ** 2, where=mask)
    g = rho / denom
    g_re = np.where(mask, g.real, 0.0)
    g_im_raw = np.where(mask, g.imag, 0.0)
    mask &= g_re > 0

    g_re_f = _median_filter_slices(np.where(mask, g_re, 0.0), mask)
    g_im_f = _median_filter_slices(np.where(mask, np.abs(g_im_raw), 0.0), mask)
    g_re_f = np.where(mask, g_re_f, 0.0)
    g_im_f = np.where(mask, g_im_f, 0.0)

    sources = [(m.omega, m.direction) for m in maps]
    return ModulusMap(g_re_f, g_im_f, rho, geom, mask,
                      sources=sources, g_im_raw=g_im_raw)
