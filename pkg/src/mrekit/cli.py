"""Command-line front end for the pipeline.

Every subcommand reads a JSON config (--config, merged over defaults)
plus optional flag overrides. Data goes to files; messages go to
stderr. Exit codes: 0 success, 1 validation/usage error, 2 runtime
failure.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import io as kio
from .cnet import TrainedModel, train
from .config import (ConfigError, geometry_from, load_config, merge_config,
                     sampling_config_from, train_config_from,
                     unwrap_config_from)
from .experiments import (_DEFAULT_PARAMS, _patch_geom_from,
                          UnknownExperimentError, run_experiment,
                          scene_from_params)
from .inversion import direct_inversion, estimate_wavenumber_map, fuse_modulus
from .metrics import cnr, rmse
from .phantom import solve_helmholtz_phantom
from .synth import (PhaseOffsetSeries, add_complex_noise,
                    default_phase_offsets, encode_phase_series, new_rng,
                    plane_wave)
from .unwrap import unwrap

PROG = "mrekit"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; route through UsageError for exit 1
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: {message}")


def _load_cfg(args) -> dict:
    overrides = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects dotted.key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = overrides
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    if args.config is None:
        return merge_config(overrides)
    return load_config(args.config, overrides)


def _experiment_params(cfg: dict, fallback: str) -> dict:
    merged = dict(_DEFAULT_PARAMS[fallback])
    merged.update(cfg["experiment"].get("params", {}))
    return merged


def _frequency(cfg: dict, args) -> float:
    if getattr(args, "frequency", None) is not None:
        return float(args.frequency)
    return float(cfg["frequencies_hz"][0])


def _direction(cfg: dict) -> str:
    return str(cfg["directions"][0])


def _cmd_synth_phantom(args) -> None:
    cfg = _load_cfg(args)
    geom = geometry_from(cfg)
    freq = _frequency(cfg, args)
    params = _experiment_params(cfg, "phantom-table2")
    scene = scene_from_params(geom, params, cfg["density"], 2.0 * np.pi * freq)
    field = solve_helmholtz_phantom(scene, geom)
    if args.snr_db is not None:
        field = add_complex_noise(field, new_rng(cfg["seed"], 0),
                                  snr_db=float(args.snr_db))
    kio.write_cgrid(args.out, field.values, geom, "displacement",
                    frequency_hz=freq, direction_label=_direction(cfg))
    print(f"wrote {args.out}", file=sys.stderr)


def _cmd_synth_wave(args) -> None:
    cfg = _load_cfg(args)
    geom = geometry_from(cfg)
    freq = _frequency(cfg, args)
    params = _experiment_params(cfg, "plane-wave-smoke")
    k_re = params["k_re"] if args.k_re is None else float(args.k_re)
    k_im = params["k_im"] if args.k_im is None else float(args.k_im)
    direction = params["direction"]
    if args.direction is not None:
        direction = [float(x) for x in args.direction.split(",")]
    field = plane_wave(geom, complex(k_re, k_im), 2.0 * np.pi * freq, direction)
    kio.write_cgrid(args.out, field.values, geom, "displacement",
                    frequency_hz=freq, direction_label=_direction(cfg))
    print(f"wrote {args.out}", file=sys.stderr)


def _series_path(prefix: str, index: int) -> str:
    return f"{prefix}_offset{index}.cgrid"


def _cmd_wrap(args) -> None:
    cfg = _load_cfg(args)
    field, header = kio.read_cgrid_complex(args.infile)
    offsets = default_phase_offsets(args.offsets)
    series = encode_phase_series(field, offsets, phase_scale=args.phase_scale)
    for j in range(offsets.shape[0]):
        extra = {
            "phase_offset": float(offsets[j]),
            "series_index": j,
            "series_size": int(offsets.shape[0]),
            "scale_factor": series.scale_factor,
        }
        kio.write_cgrid(_series_path(args.out_prefix, j), series.images[j],
                        field.geom, "mr_image",
                        frequency_hz=header.get("frequency_hz"),
                        direction_label=header.get("direction_label"),
                        extra=extra)
    print(f"wrote {offsets.shape[0]} images at {args.out_prefix}_offset*.cgrid",
          file=sys.stderr)


def _read_series(prefix: str) -> tuple[PhaseOffsetSeries, dict]:
    paths = sorted(glob.glob(glob.escape(prefix) + "_offset*.cgrid"))
    if not paths:
        raise UsageError(f"no series files match {prefix}_offset*.cgrid")
    entries = []
    for p in paths:
        grid, header = kio.read_cgrid_complex(p)
        for fieldname in ("phase_offset", "series_index", "scale_factor"):
            if fieldname not in header:
                raise kio.HeaderError(f"{p}: not a phase series image "
                                      f"(missing {fieldname!r})")
        entries.append((int(header["series_index"]), header, grid))
    entries.sort(key=lambda e: e[0])
    images = np.stack([g.values for _, _, g in entries])
    offsets = np.array([h["phase_offset"] for _, h, _ in entries])
    scale = float(entries[0][1]["scale_factor"])
    series = PhaseOffsetSeries(images, offsets, entries[0][2].geom,
                               scale_factor=scale)
    return series, entries[0][1]


def _cmd_unwrap(args) -> None:
    cfg = _load_cfg(args)
    series, header = _read_series(args.in_prefix)
    result = unwrap(series, unwrap_config_from(cfg))
    kio.write_cgrid(args.out, result.displacement.values, series.geom,
                    "displacement", frequency_hz=header.get("frequency_hz"),
                    direction_label=header.get("direction_label"))
    if args.history is not None:
        kio.write_csv(args.history, ("iteration", "dc1", "dc2", "total"),
                      result.history)
    print(f"wrote {args.out} ({result.n_excluded} pixels excluded)",
          file=sys.stderr)


def _cmd_train(args) -> None:
    cfg = _load_cfg(args)
    freq = _frequency(cfg, args)
    omega = 2.0 * np.pi * freq
    sampling = sampling_config_from(cfg, omega)
    geom = _patch_geom_from(cfg, sampling.ndim)
    model = train(omega, geom, sampling, train_config_from(cfg))
    model.save(args.out)
    print(f"wrote {args.out}", file=sys.stderr)


def _wavefield_omega(cfg: dict, header: dict, position: int) -> float:
    if "frequency_hz" in header:
        return 2.0 * np.pi * float(header["frequency_hz"])
    freqs = cfg["frequencies_hz"]
    if position < len(freqs):
        return 2.0 * np.pi * float(freqs[position])
    raise ConfigError(
        f"wavefield #{position} has no frequency_hz header and the config "
        f"lists only {len(freqs)} frequencies")


def _write_modulus_bundle(cfg: dict, fused, prefix: str, estimator: str) -> None:
    geom = fused.geom
    for comp, arr in (("g_re", fused.g_re), ("g_im", fused.g_im)):
        kio.write_cgrid(f"{prefix}_{comp}.cgrid", arr, geom,
                        "modulus_" + comp.split("_")[1])
        kio.write_pgm16(f"{prefix}_{comp}.pgm", arr)
    kio.write_cgrid(f"{prefix}_mask.cgrid", fused.mask.astype(np.float64),
                    geom, "mask")
    provenance = {
        "estimator": estimator,
        "config_digest": kio.config_digest(cfg),
        "density": fused.rho,
        "sources": [{"frequency_hz": omega / (2.0 * np.pi), "direction": d}
                    for omega, d in fused.sources],
        "n_valid_pixels": int(fused.mask.sum()),
    }
    kio.write_json(f"{prefix}_provenance.json", provenance)
    print(f"wrote {prefix}_{{g_re,g_im,mask}}.cgrid + previews", file=sys.stderr)


def _cmd_invert(args) -> None:
    cfg = _load_cfg(args)
    if len(args.model) not in (1, len(args.infile)):
        raise UsageError("pass one model total or one per wavefield")
    models = [TrainedModel.load(p) for p in args.model]
    maps = []
    for i, path in enumerate(args.infile):
        field, header = kio.read_cgrid_complex(path)
        omega = _wavefield_omega(cfg, header, i)
        model = models[i if len(models) > 1 else 0]
        direction = header.get("direction_label", _direction(cfg))
        maps.append(estimate_wavenumber_map(model, field, omega,
                                            direction=direction))
    _write_modulus_bundle(cfg, fuse_modulus(maps, cfg["density"]),
                          args.out_prefix, "network")


def _cmd_invert_di(args) -> None:
    cfg = _load_cfg(args)
    maps = []
    for i, path in enumerate(args.infile):
        field, header = kio.read_cgrid_complex(path)
        omega = _wavefield_omega(cfg, header, i)
        direction = header.get("direction_label", _direction(cfg))
        maps.append(direct_inversion(field, omega, direction=direction))
    _write_modulus_bundle(cfg, fuse_modulus(maps, cfg["density"]),
                          args.out_prefix, "direct")


def _read_real_grid(path: str) -> np.ndarray:
    values, _, header = kio.read_cgrid(path)
    if header["kind"] in kio.COMPLEX_KINDS:
        raise kio.HeaderError(f"{path}: expected a real grid, got {header['kind']!r}")
    return values


def _cmd_eval(args) -> None:
    cfg = _load_cfg(args)
    est = _read_real_grid(args.est)
    gt = _read_real_grid(args.gt)
    mask = None
    if args.mask is not None:
        mask = _read_real_grid(args.mask) > 0.5
    out = {"est": args.est, "gt": args.gt,
           "config_digest": kio.config_digest(cfg),
           "rmse": rmse(est, gt, mask)}
    if (args.tumor_mask is None) != (args.bkg_mask is None):
        raise UsageError("--tumor-mask and --bkg-mask must be given together")
    if args.tumor_mask is not None:
        tumor = _read_real_grid(args.tumor_mask) > 0.5
        bkg = _read_real_grid(args.bkg_mask) > 0.5
        out["cnr"] = cnr(est, tumor, bkg)
    kio.write_json(args.out, out)
    print(f"wrote {args.out}", file=sys.stderr)


def _cmd_experiment(args) -> None:
    cfg = _load_cfg(args)
    summary = run_experiment(cfg, args.out_dir)
    print(f"{summary['experiment']}: wrote "
          f"{os.path.join(args.out_dir, 'summary.json')}", file=sys.stderr)


def _cmd_info(args) -> None:
    _, _, header = kio.read_cgrid(args.file)
    print(kio.canonical_json(header))


def _add_config_flags(p) -> None:
    p.add_argument("--config", help="JSON config file (merged over defaults)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override, dotted key, JSON value")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth-phantom", help="solve a phantom wavefield")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frequency", type=float)
    p.add_argument("--snr-db", type=float)
    p.set_defaults(func=_cmd_synth_phantom, needs_config=True)

    p = sub.add_parser("synth-wave", help="synthesize a plane wave")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frequency", type=float)
    p.add_argument("--k-re", type=float)
    p.add_argument("--k-im", type=float)
    p.add_argument("--direction", help="comma-separated components")
    p.set_defaults(func=_cmd_synth_wave, needs_config=True)

    p = sub.add_parser("wrap", help="encode a displacement into a phase series")
    _add_config_flags(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--phase-scale", type=float, default=4.0 * np.pi)
    p.add_argument("--offsets", type=int, default=4)
    p.set_defaults(func=_cmd_wrap, needs_config=True)

    p = sub.add_parser("unwrap", help="recover displacement from a phase series")
    _add_config_flags(p)
    p.add_argument("--in-prefix", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-iteration objective CSV here")
    p.set_defaults(func=_cmd_unwrap, needs_config=True)

    p = sub.add_parser("train", help="train the wavenumber networks")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frequency", type=float)
    p.set_defaults(func=_cmd_train, needs_config=True)

    p = sub.add_parser("invert", help="network inversion to a modulus bundle")
    _add_config_flags(p)
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_invert, needs_config=True)

    p = sub.add_parser("invert-di", help="Helmholtz inversion to a modulus bundle")
    _add_config_flags(p)
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_invert_di, needs_config=True)

    p = sub.add_parser("eval", help="compare grids: RMSE and optional CNR")
    _add_config_flags(p)
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask")
    p.add_argument("--tumor-mask")
    p.add_argument("--bkg-mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval, needs_config=True)

    p = sub.add_parser("experiment", help="run a named experiment")
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_experiment, needs_config=True)

    p = sub.add_parser("info", help="print a cgrid header")
    p.add_argument("file")
    p.set_defaults(func=_cmd_info, needs_config=False)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise UsageError(parser.format_usage().rstrip())
        if args.needs_config and args.config is None:
            raise UsageError(
                f"{parser.format_usage().rstrip()}\n"
                f"{PROG} {args.command}: --config is required")
        args.func(args)
        return 0
    except (UsageError, ConfigError, UnknownExperimentError) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"{PROG}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
