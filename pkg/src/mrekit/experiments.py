"""Reproducible desk-scale studies driven by pipeline configs.

Each experiment writes every intermediate grid, CSV tables, PGM
previews, and one summary.json carrying the config digest. Artifacts
contain no timestamps, so reruns with the same config are
byte-identical.
"""
from __future__ import annotations

import os

import numpy as np

from . import io as kio
from .cnet import train
from .config import (geometry_from, merge_config, sampling_config_from,
                     train_config_from, unwrap_config_from)
from .grid import ComplexGrid, GridGeom
from .inversion import direct_inversion, estimate_wavenumber_map, fuse_modulus
from .metrics import SAMPLE_COLUMNS, SurfaceConfig, mean_error_surface, rmse
from .phantom import SceneSpec, make_inclusion_scene, solve_helmholtz_phantom
from .synth import (add_complex_noise, add_series_noise, default_phase_offsets,
                    encode_phase_series, new_rng, plane_wave)
from .unwrap import gauge_aligned, unwrap

EXPERIMENT_NAMES = ("unwrap-noise-sweep", "fig4-surface",
                    "phantom-table2", "plane-wave-smoke")

PHASE_SCALE = 4.0 * np.pi
N_OFFSETS = 4


class UnknownExperimentError(ValueError):
    def __init__(self, name: str):
        super().__init__(
            f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENT_NAMES)}")
        self.name = name


_DEFAULT_PARAMS = {
    "unwrap-noise-sweep": {
        "sigmas": [0.0, 0.1, 0.2, 0.3, 0.4],
        "background": [2000.0, 200.0],
        "inclusions": [[[0.0, 0.0], 3.0, [4000.0, 480.0]]],
    },
    "fig4-surface": {
        "n_samples": 100_000,
        "snr_edges": [12.0, 16.0, 20.0, 24.0, 28.0, 32.0, 36.0, 40.0],
        "k_re_edges": [0.35 + 0.1 * i for i in range(11)],
        "k_im_edges": [0.04 * i for i in range(8)],
    },
    "phantom-table2": {
        "snr_db": 28.0,
        "background": [2000.0, 200.0],
        "inclusions": [[[-32.0, 0.0], 10.0, [4000.0, 480.0]],
                       [[32.0, 0.0], 10.0, [6000.0, 840.0]]],
    },
    "plane-wave-smoke": {
        "k_re": 0.707,
        "k_im": 0.0,
        "direction": [1.0, 0.0],
        "invert_stride": 1,
    },
}


def _params_for(cfg: dict) -> dict:
    name = cfg["experiment"]["name"]
    if name not in EXPERIMENT_NAMES:
        raise UnknownExperimentError(name)
    merged = dict(_DEFAULT_PARAMS[name])
    merged.update(cfg["experiment"].get("params", {}))
    return merged


def _sigma_tag(sigma: float) -> str:
    return ("%g" % sigma).replace(".", "p").replace("-", "m")


def scene_from_params(geom: GridGeom, params: dict, density: float,
                       omega: float) -> SceneSpec:
    background = complex(params["background"][0], params["background"][1])
    inclusions = [((float(c[0]), float(c[1])), float(r), complex(m[0], m[1]))
                  for c, r, m in params["inclusions"]]
    if inclusions:
        return make_inclusion_scene(geom, background, inclusions, density, omega)
    labels = np.zeros(tuple(geom.dims), dtype=np.int32)
    return SceneSpec(labels, {0: background}, density, omega)


def _summary(out_dir, name: str, cfg: dict, metrics: dict,
             artifacts: list) -> dict:
    summary = {
        "experiment": name,
        "config_digest": kio.config_digest(cfg),
        "seed": cfg["seed"],
        "metrics": metrics,
        "artifacts": sorted(artifacts),
    }
    kio.write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def _run_unwrap_noise_sweep(cfg: dict, out_dir: str) -> dict:
    params = _params_for(cfg)
    geom = geometry_from(cfg)
    density = cfg["density"]
    freq = cfg["frequencies_hz"][0]
    omega = 2.0 * np.pi * freq
    ucfg = unwrap_config_from(cfg)

    scene = scene_from_params(geom, params, density, omega)
    field = solve_helmholtz_phantom(scene, geom)
    series0 = encode_phase_series(field, default_phase_offsets(N_OFFSETS),
                                  phase_scale=PHASE_SCALE)
    gt = ComplexGrid(field.values * series0.scale_factor, geom)

    artifacts = ["summary.json", "ground_truth.cgrid", "sweep.csv"]
    kio.write_cgrid(os.path.join(out_dir, "ground_truth.cgrid"), gt.values,
                    geom, "displacement", frequency_hz=freq)

    rows = []
    per_sigma = {}
    for i, sigma in enumerate(params["sigmas"]):
        sigma = float(sigma)
        if sigma > 0.0:
            rng = new_rng(cfg["seed"], i)
            series = add_series_noise(series0, sigma, rng)
        else:
            series = series0
        result = unwrap(series, ucfg)
        aligned = gauge_aligned(result.displacement, gt, result.mask)
        err = np.abs(aligned.values - gt.values)[result.mask]
        mean_err = float(err.mean())
        max_err = float(err.max())
        tag = _sigma_tag(sigma)
        est_name = f"estimate_sigma_{tag}.cgrid"
        conv_name = f"convergence_sigma_{tag}.csv"
        pgm_name = f"error_sigma_{tag}.pgm"
        kio.write_cgrid(os.path.join(out_dir, est_name), aligned.values, geom,
                        "displacement", frequency_hz=freq)
        kio.write_csv(os.path.join(out_dir, conv_name),
                      ("iteration", "dc1", "dc2", "total"), result.history)
        err_map = np.abs(aligned.values - gt.values)
        kio.write_pgm16(os.path.join(out_dir, pgm_name), err_map)
        artifacts += [est_name, conv_name, pgm_name, pgm_name + ".json"]
        rows.append((sigma, mean_err, max_err))
        per_sigma[("%g" % sigma)] = {"mean_error_rad": mean_err,
                                     "max_error_rad": max_err}

    kio.write_csv(os.path.join(out_dir, "sweep.csv"),
                  ("sigma", "mean_error_rad", "max_error_rad"), rows)
    metrics = {"per_sigma": per_sigma,
               "phase_scale": PHASE_SCALE, "n_offsets": N_OFFSETS}
    return _summary(out_dir, "unwrap-noise-sweep", cfg, metrics, artifacts)


def _surface_csv_rows(surface, which: str):
    if which == "k_re":
        edges, err, cnt = surface.k_re_edges, surface.err_re, surface.count_re
    else:
        edges, err, cnt = surface.k_im_edges, surface.err_im, surface.count_im
    rows = []
    for i in range(err.shape[0]):
        for j in range(err.shape[1]):
            rows.append((surface.snr_edges[i], surface.snr_edges[i + 1],
                         edges[j], edges[j + 1],
                         err[i, j] if cnt[i, j] > 0 else "",
                         int(cnt[i, j])))
    return rows


def _per_snr_bin_mean(surface) -> np.ndarray:
    # overall mean |k~' error| per SNR bin, marginalized over k bins
    tot = (np.where(surface.count_re > 0, surface.err_re, 0.0)
           * surface.count_re).sum(axis=1)
    cnt = surface.count_re.sum(axis=1)
    return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


def _patch_geom_from(cfg: dict, ndim: int) -> GridGeom:
    spacing = list(cfg["geometry"]["spacing_mm"])
    while len(spacing) < ndim:
        spacing.append(spacing[-1])
    return GridGeom((3,) * ndim, tuple(spacing[:ndim]))


def _json_safe(values) -> list:
    return [float(x) if np.isfinite(x) else None for x in values]


def _run_fig4_surface(cfg: dict, out_dir: str) -> dict:
    params = _params_for(cfg)
    freq = cfg["frequencies_hz"][0]
    omega = 2.0 * np.pi * freq
    sampling = sampling_config_from(cfg, omega)
    patch_geom = _patch_geom_from(cfg, sampling.ndim)

    model = train(omega, patch_geom, sampling, train_config_from(cfg))
    model_name = "model.cnet"
    model.save(os.path.join(out_dir, model_name))

    artifacts = ["summary.json", model_name]
    surfaces = {}
    for estimator in ("network", "direct"):
        sconf = SurfaceConfig(
            estimator=estimator, sampling=sampling, patch_geom=patch_geom,
            n_samples=int(params["n_samples"]), seed=cfg["seed"],
            snr_edges=tuple(params["snr_edges"]),
            k_re_edges=tuple(params["k_re_edges"]),
            k_im_edges=tuple(params["k_im_edges"]))
        surface = mean_error_surface(model, sconf)
        surfaces[estimator] = surface
        sample_name = f"samples_{estimator}.csv"
        kio.write_csv(os.path.join(out_dir, sample_name), SAMPLE_COLUMNS,
                      surface.samples)
        for which in ("k_re", "k_im"):
            tab_name = f"surface_{which}_{estimator}.csv"
            kio.write_csv(os.path.join(out_dir, tab_name),
                          ("snr_lo", "snr_hi", "k_lo", "k_hi",
                           "mean_abs_err", "count"),
                          _surface_csv_rows(surface, which))
            artifacts.append(tab_name)
        artifacts.append(sample_name)

    net_bin = _per_snr_bin_mean(surfaces["network"])
    di_bin = _per_snr_bin_mean(surfaces["direct"])
    gap = di_bin - net_bin
    metrics = {
        "snr_edges": [float(x) for x in params["snr_edges"]],
        "network_mean_kre_err_per_snr_bin": _json_safe(net_bin),
        "direct_mean_kre_err_per_snr_bin": _json_safe(di_bin),
        "gap_per_snr_bin": _json_safe(gap),
        "n_samples": int(params["n_samples"]),
        "train_steps": cfg["training"]["steps"],
    }
    return _summary(out_dir, "fig4-surface", cfg, metrics, artifacts)


def _region_masks(labels: np.ndarray) -> dict:
    return {"background": labels == 0,
            "inclusion1": labels == 1,
            "inclusion2": labels == 2}


def _run_phantom_table2(cfg: dict, out_dir: str) -> dict:
    params = _params_for(cfg)
    geom = geometry_from(cfg)
    density = cfg["density"]
    freqs = [float(f) for f in cfg["frequencies_hz"]]
    snr_db = float(params["snr_db"])
    patch_geom = _patch_geom_from(cfg, 2)

    artifacts = ["summary.json", "table2.csv"]
    net_maps, di_maps = [], []
    labels = None
    g_re_gt = g_im_gt = None
    for i, freq in enumerate(freqs):
        omega = 2.0 * np.pi * freq
        scene = scene_from_params(geom, params, density, omega)
        labels = scene.labels
        g_re_gt, g_im_gt = scene.modulus_grids()
        field = solve_helmholtz_phantom(scene, geom)
        noisy = add_complex_noise(field, snr_db=snr_db, rng=new_rng(cfg["seed"], i))
        wf_name = f"wavefield_{freq:g}hz.cgrid"
        kio.write_cgrid(os.path.join(out_dir, wf_name), noisy.values, geom,
                        "displacement", frequency_hz=freq)
        artifacts.append(wf_name)

        sampling = sampling_config_from(cfg, omega)
        model = train(omega, patch_geom, sampling,
                      train_config_from(cfg, seed=cfg["seed"] + i))
        model_name = f"model_{freq:g}hz.cnet"
        model.save(os.path.join(out_dir, model_name))
        artifacts.append(model_name)

        net_map = estimate_wavenumber_map(model, noisy, omega)
        di_map = direct_inversion(noisy, omega)
        net_maps.append(net_map)
        di_maps.append(di_map)
        for label, m in (("network", net_map), ("direct", di_map)):
            for comp, arr in (("re", m.k_re), ("im", m.k_im)):
                kname = f"k_{comp}_{label}_{freq:g}hz.cgrid"
                kio.write_cgrid(os.path.join(out_dir, kname), arr, geom,
                                f"wavenumber_{comp}", frequency_hz=freq)
                artifacts.append(kname)

    fused = {"network": fuse_modulus(net_maps, density),
             "direct": fuse_modulus(di_maps, density)}
    regions = _region_masks(labels)
    rows = []
    metrics = {"snr_db": snr_db, "frequencies_hz": freqs,
               "regions": {}, "train_steps": cfg["training"]["steps"]}
    for estimator, mod in fused.items():
        for comp, arr, gt in (("g_re", mod.g_re, g_re_gt),
                              ("g_im", mod.g_im, g_im_gt)):
            name = f"{comp}_{estimator}.cgrid"
            kio.write_cgrid(os.path.join(out_dir, name), arr, geom,
                            "modulus_" + comp.split("_")[1])
            artifacts.append(name)
        pgm = f"g_re_{estimator}.pgm"
        kio.write_pgm16(os.path.join(out_dir, pgm), mod.g_re)
        artifacts += [pgm, pgm + ".json"]
        for region, mask in regions.items():
            m = mask & mod.mask
            entry = {
                "rmse_g_re": rmse(mod.g_re, g_re_gt, m),
                "rmse_g_im": rmse(mod.g_im, g_im_gt, m),
                "mean_g_re": float(mod.g_re[m].mean()),
                "n_pixels": int(m.sum()),
            }
            metrics["regions"].setdefault(estimator, {})[region] = entry
            rows.append((estimator, region, entry["rmse_g_re"],
                         entry["rmse_g_im"], entry["mean_g_re"],
                         entry["n_pixels"]))

    kio.write_csv(os.path.join(out_dir, "table2.csv"),
                  ("estimator", "region", "rmse_g_re", "rmse_g_im",
                   "mean_g_re", "n_pixels"), rows)
    return _summary(out_dir, "phantom-table2", cfg, metrics, artifacts)


def _run_plane_wave_smoke(cfg: dict, out_dir: str) -> dict:
    params = _params_for(cfg)
    geom = geometry_from(cfg)
    density = cfg["density"]
    freq = cfg["frequencies_hz"][0]
    omega = 2.0 * np.pi * freq
    k_tilde = complex(float(params["k_re"]), float(params["k_im"]))
    direction = tuple(float(d) for d in params["direction"])
    stride = int(params["invert_stride"])
    if stride < 1:
        raise ValueError("invert_stride must be >= 1")

    field = plane_wave(geom, k_tilde, omega, direction=direction)
    series = encode_phase_series(field, default_phase_offsets(N_OFFSETS),
                                 phase_scale=PHASE_SCALE)
    result = unwrap(series, unwrap_config_from(cfg))

    # the steeply scaled encoding needs fine sampling to unwrap, but the
    # local-patch estimators want a decent fraction of a wavelength of
    # aperture, so inversion may run on a strided copy of the estimate
    est = result.displacement
    if stride > 1:
        keep = (slice(None, None, stride),) * geom.ndim
        decimated = est.values[keep].copy()
        inv_geom = GridGeom(decimated.shape,
                            tuple(s * stride for s in geom.spacing_mm))
        est = ComplexGrid(decimated, inv_geom)

    sampling = sampling_config_from(cfg, omega)
    patch_geom = GridGeom((3,) * geom.ndim, est.geom.spacing_mm)
    model = train(omega, patch_geom, sampling, train_config_from(cfg))
    model.save(os.path.join(out_dir, "model.cnet"))

    kmap = estimate_wavenumber_map(model, est, omega)
    fused = fuse_modulus([kmap], density)
    interior = fused.mask
    g_re_interior = float(fused.g_re[interior].mean())
    g_true = density / abs(k_tilde) ** 2 if params["k_im"] == 0 else None

    artifacts = ["summary.json", "model.cnet", "wavefield.cgrid",
                 "estimate.cgrid", "g_re.cgrid", "g_im.cgrid",
                 "g_re.pgm", "g_re.pgm.json"]
    kio.write_cgrid(os.path.join(out_dir, "wavefield.cgrid"), field.values,
                    geom, "displacement", frequency_hz=freq)
    kio.write_cgrid(os.path.join(out_dir, "estimate.cgrid"),
                    result.displacement.values, geom, "displacement",
                    frequency_hz=freq)
    kio.write_cgrid(os.path.join(out_dir, "g_re.cgrid"), fused.g_re,
                    est.geom, "modulus_re")
    kio.write_cgrid(os.path.join(out_dir, "g_im.cgrid"), fused.g_im,
                    est.geom, "modulus_im")
    kio.write_pgm16(os.path.join(out_dir, "g_re.pgm"), fused.g_re)

    metrics = {
        "k_tilde_true": [k_tilde.real, k_tilde.imag],
        "invert_stride": stride,
        "mean_interior_g_re_pa": g_re_interior,
        "mean_interior_k_re": float(kmap.k_re[kmap.mask].mean()),
        "mean_interior_k_im": float(kmap.k_im[kmap.mask].mean()),
        "train_steps": cfg["training"]["steps"],
    }
    if g_true is not None:
        metrics["g_re_true_pa"] = g_true
        metrics["g_re_rel_error"] = abs(g_re_interior - g_true) / g_true
    return _summary(out_dir, "plane-wave-smoke", cfg, metrics, artifacts)


_RUNNERS = {
    "unwrap-noise-sweep": _run_unwrap_noise_sweep,
    "fig4-surface": _run_fig4_surface,
    "phantom-table2": _run_phantom_table2,
    "plane-wave-smoke": _run_plane_wave_smoke,
}


def run_experiment(cfg: dict, out_dir) -> dict:
    """Merge the config over defaults, dispatch by name, return summary."""
    cfg = merge_config(cfg)
    name = cfg["experiment"]["name"]
    if name not in _RUNNERS:
        raise UnknownExperimentError(name)
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    return _RUNNERS[name](cfg, out_dir)
