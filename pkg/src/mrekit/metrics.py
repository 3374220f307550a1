"""Quantitative evaluation: RMSE, CNR, and estimator error surfaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cnet import TrainedModel, patch_covariance_rows
from .grid import GridGeom
from .synth import SamplingConfig, build_training_batch, new_rng

ESTIMATORS = ("network", "direct")


def rmse(est: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Root mean squared difference over the mask."""
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if est.shape != gt.shape:
        raise ValueError("estimate and reference shapes disagree")
    if mask is None:
        diff = est - gt
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != est.shape:
            raise ValueError("mask shape disagrees")
        if not mask.any():
            raise ValueError("empty mask")
        diff = est[mask] - gt[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def cnr(est: np.ndarray, tumor_mask: np.ndarray, bkg_mask: np.ndarray) -> float:
    """Contrast-to-noise ratio 2(mean_b - mean_t)^2 / (var_b + var_t).

    Variances are population form (divide by N).
    """
    est = np.asarray(est, dtype=np.float64)
    tumor_mask = np.asarray(tumor_mask, dtype=bool)
    bkg_mask = np.asarray(bkg_mask, dtype=bool)
    if not tumor_mask.any() or not bkg_mask.any():
        raise ValueError("both regions must be nonempty")
    if np.any(tumor_mask & bkg_mask):
        raise ValueError("tumor and background regions overlap")
    t = est[tumor_mask]
    b = est[bkg_mask]
    num = 2.0 * (b.mean() - t.mean()) ** 2
    den = b.var() + t.var()
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise ValueError("zero variance in both regions with differing means")
    return float(num / den)


@dataclass(frozen=True)
class SurfaceConfig:
    """Evaluation protocol for one estimator error surface."""

    estimator: str
    sampling: SamplingConfig
    patch_geom: GridGeom
    n_samples: int = 100_000
    seed: int = 0
    snr_edges: tuple = tuple(np.linspace(12.0, 38.0, 14))
    k_re_edges: tuple = tuple(np.linspace(0.35, 1.35, 11))
    k_im_edges: tuple = tuple(np.linspace(0.0, 0.28, 8))
    batch_size: int = 4096

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        for name in ("snr_edges", "k_re_edges", "k_im_edges"):
            edges = np.asarray(getattr(self, name), dtype=np.float64)
            if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
                raise ValueError(f"{name} must be strictly increasing, >= 2 entries")


# per-sample record columns emitted alongside every surface
SAMPLE_COLUMNS = ("snr_db", "k_re_true", "k_im_true",
                  "k_re_est", "k_im_est", "abs_err_re", "abs_err_im")


@dataclass
class ErrorSurface:
    """Binned mean absolute wavenumber errors with per-sample records.

    err_re is binned over (SNR, true k~'), err_im over (SNR, true k~'');
    counts match cell for cell. samples holds one row per test patch in
    generation order with SAMPLE_COLUMNS fields.
    """

    estimator: str
    snr_edges: np.ndarray
    k_re_edges: np.ndarray
    k_im_edges: np.ndarray
    err_re: np.ndarray
    count_re: np.ndarray
    err_im: np.ndarray
    count_im: np.ndarray
    samples: np.ndarray = field(repr=False, default=None)

    def cell_ok(self) -> bool:
        return bool(np.all(self.count_re >= 1) and np.all(self.count_im >= 1))


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = np.digitize(values, edges) - 1
    return np.clip(idx, 0, len(edges) - 2)


def _di_on_patches(patches: np.ndarray, spacing_m, omega: float):
    """Vectorized center-pixel Helmholtz inversion on 3x3(x3) patches."""
    ndim = patches.ndim - 1
    center = (slice(None),) + (1,) * ndim
    c = patches[center]
    lap = np.zeros_like(c)
    for ax in range(ndim):
        lo = [1] * ndim
        hi = [1] * ndim
        lo[ax] = 0
        hi[ax] = 2
        lap += (patches[(slice(None),) + tuple(lo)]
                + patches[(slice(None),) + tuple(hi)]
                - 2.0 * c) / spacing_m[ax] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ksq = np.where(c != 0, -lap / np.where(c != 0, c, 1.0), 0.0)
    k = np.sqrt(ksq)
    k_re = k.real / omega
    k_im = np.maximum(k.imag / omega, 0.0)
    return k_re, k_im


def _net_on_patches(model: TrainedModel, patches: np.ndarray):
    rows = patch_covariance_rows(patches, per_patch_normalize=True)
    return model.predict(rows)


def mean_error_surface(model: TrainedModel, config: SurfaceConfig) -> ErrorSurface:
    """Sample synthetic test patches and bin the estimator's errors.

    Patch generation depends only on (sampling, patch_geom, n_samples,
    seed, batch_size), so two configs differing in estimator alone are
    evaluated on identical data.
    """
    snr_edges = np.asarray(config.snr_edges, dtype=np.float64)
    k_re_edges = np.asarray(config.k_re_edges, dtype=np.float64)
    k_im_edges = np.asarray(config.k_im_edges, dtype=np.float64)
    n_re = (len(snr_edges) - 1, len(k_re_edges) - 1)
    n_im = (len(snr_edges) - 1, len(k_im_edges) - 1)
    sum_re = np.zeros(n_re)
    cnt_re = np.zeros(n_re, dtype=np.int64)
    sum_im = np.zeros(n_im)
    cnt_im = np.zeros(n_im, dtype=np.int64)
    records = np.empty((config.n_samples, len(SAMPLE_COLUMNS)))

    rng = new_rng(config.seed)
    spacing = model.patch_geom.spacing_m
    done = 0
    while done < config.n_samples:
        n = min(config.batch_size, config.n_samples - done)
        batch = build_training_batch(config.sampling, model.patch_geom, n, rng)
        if config.estimator == "network":
            est_re, est_im = _net_on_patches(model, batch.patches)
        else:
            est_re, est_im = _di_on_patches(batch.patches, spacing, model.omega)
        err_re = np.abs(est_re - batch.k_re)
        err_im = np.abs(est_im - batch.k_im)
        snr = batch.snr_db

        rows = slice(done, done + n)
        records[rows, 0] = snr
        records[rows, 1] = batch.k_re
        records[rows, 2] = batch.k_im
        records[rows, 3] = est_re
        records[rows, 4] = est_im
        records[rows, 5] = err_re
        records[rows, 6] = err_im

        # intensity-mode sampling has no per-sample SNR (records carry
        # NaN); such samples land in the first SNR bin
        si = np.where(np.isfinite(snr), _bin_index(snr, snr_edges), 0)
        np.add.at(sum_re, (si, _bin_index(batch.k_re, k_re_edges)), err_re)
        np.add.at(cnt_re, (si, _bin_index(batch.k_re, k_re_edges)), 1)
        np.add.at(sum_im, (si, _bin_index(batch.k_im, k_im_edges)), err_im)
        np.add.at(cnt_im, (si, _bin_index(batch.k_im, k_im_edges)), 1)
        done += n

    with np.errstate(invalid="ignore"):
        err_re_mean = np.where(cnt_re > 0, sum_re / np.maximum(cnt_re, 1), np.nan)
        err_im_mean = np.where(cnt_im > 0, sum_im / np.maximum(cnt_im, 1), np.nan)
    return ErrorSurface(config.estimator, snr_edges, k_re_edges, k_im_edges,
                        err_re_mean, cnt_re, err_im_mean, cnt_im, records)
