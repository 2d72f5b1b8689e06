"""Command-line interface.

Exit codes: 0 success, 1 acceptance-check failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, collection, figures, lens, pipelines, raytrace, reports, trap, waveoptics
from .config import ConfigError, RunConfig, parse_config

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH",
                        help="JSON run configuration (defaults: nominal device)")
    parser.add_argument("--out", metavar="DIR", default="out",
                        help="output directory (default: ./out)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured Monte Carlo seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for sweeps "
                             "(fallback: TRAPSCOPE_THREADS, then 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapscope",
        description="Trap-integrated metalens collection/detection simulator.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in [
            ("trap-solve", "solve the rf null and radial frequencies"),
            ("collection", "collection efficiency of the calibrated device"),
            ("calibrate-undercut", "bisect the undercut to the target efficiency"),
            ("lens-design", "collimation phase, fit, and feature map"),
            ("psf", "simulated point-spread function of the device"),
            ("scan-lateral", "detection efficiency vs lateral displacement"),
            ("scan-axial", "detection efficiency vs axial ion displacement"),
            ("reproduce", "rebuild one report target with its checks"),
            ("sweep", "generic parameter sweep to CSV")]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "reproduce":
            p.add_argument("target", choices=pipelines.REPRODUCE_TARGETS)
        if name in ("scan-lateral", "scan-axial"):
            p.add_argument("--setup", choices=["objective", "integrated", "both"],
                           default="both")
        if name == "sweep":
            p.add_argument("--op", required=True,
                           help=f"one of: {', '.join(pipelines.SWEEPABLE_OPS)}")
            p.add_argument("--parameter", required=True,
                           help="width | length (aperture dimension)")
            p.add_argument("--start", type=float, required=True)
            p.add_argument("--stop", type=float, required=True)
            p.add_argument("--step", type=float, required=True)
    return parser


def _load_config(args) -> RunConfig:
    config = parse_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("TRAPSCOPE_THREADS", "")
    return max(1, int(env)) if env.isdigit() else 1


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict):
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_trap_solve(args, config: RunConfig) -> int:
    layout = config.trap_layout()
    drive = config.rf_drive()
    sol = trap.radial_frequencies(layout, drive, config.ion_species())
    payload = {
        "null_x_um": sol.null_x,
        "height_um": sol.height,
        "omega_x_MHz": sol.omega_x,
        "omega_y_MHz": sol.omega_y,
        "design_target_height_um": config.collection.source_height_um,
        "note": "analytic gapless-plane model; absolute height and "
                "frequencies carry the documented model bias versus the "
                "fabricated device (design target reported alongside)",
    }
    reports.write_json(_out_dir(args) / "trap_solution.json", payload)
    _emit(payload)
    return EXIT_OK


def cmd_collection(args, config: RunConfig) -> int:
    calibration = pipelines.calibrate_device_undercut(config)
    stack = config.device_stack(calibration["undercut_half_width_um"])
    det = collection.solid_angle_stack(stack)
    mc = collection.mc_collection(stack, n_samples=config.collection.mc_samples,
                                  seed=config.seed)
    payload = {
        "calibration": calibration,
        "efficiency_pct": det.efficiency_pct,
        "solid_angle_sr": det.omega,
        "mc_efficiency_pct": mc.efficiency_pct,
        "mc_stderr_pct": 100.0 * mc.stderr,
    }
    reports.write_json(_out_dir(args) / "collection.json", payload)
    _emit(payload)
    return EXIT_OK


def cmd_calibrate_undercut(args, config: RunConfig) -> int:
    payload = pipelines.calibrate_device_undercut(config)
    reports.write_json(_out_dir(args) / "calibration.json", payload)
    _emit(payload)
    return EXIT_OK


def cmd_lens_design(args, config: RunConfig) -> int:
    layers = config.layer_stack()
    profile = lens.collimation_phase(layers, config.lens.diameter_um,
                                     config.lens.wavelength_nm,
                                     config.lens.radial_samples)
    coeffs, residual = lens.fit_even_zernike(profile, config.lens.zernike_order)
    if config.lens.library_path:
        library = lens.load_library(config.lens.library_path,
                                    config.lens.pillar_period_nm,
                                    config.lens.pillar_height_nm)
    else:
        library = lens.synthetic_library()
    fmap = lens.phase_to_featuremap(profile, library)
    out = _out_dir(args)
    reports.write_csv(out / "phase_profile.csv", ["radius_um", "phase_rad"],
                      zip(profile.radii, profile.phase))
    reports.write_csv(out / "feature_map.csv",
                      ["ix", "iz", "x_nm", "z_nm", "diameter_nm"],
                      lens.featuremap_to_rows(fmap))
    inside = ~np.isnan(fmap.residual_rad)
    payload = {
        "zernike_coefficients": list(coeffs),
        "fit_max_residual_rad": residual,
        "library_synthetic": library.synthetic,
        "map_sites": fmap.n_sites,
        "map_mean_abs_residual_rad": float(np.mean(np.abs(fmap.residual_rad[inside]))),
        "map_power_transmittance": lens.mean_amplitude_sq(fmap, library),
    }
    reports.write_json(out / "lens_design.json", payload)
    figures.phase_figure(out / "phase_profile.png", profile)
    _emit(payload)
    return EXIT_OK


def cmd_psf(args, config: RunConfig) -> int:
    result = pipelines.run_fig3d(config, _out_dir(args))
    _emit(result.summary)
    return EXIT_OK


def _scan(args, config: RunConfig, scan: str) -> int:
    calibration = pipelines.calibrate_device_undercut(config)
    stack = config.device_stack(calibration["undercut_half_width_um"])
    layers = config.layer_stack()
    params = config.train_params()
    source = raytrace.RaySource(n_rays=config.scans.rays_per_point,
                                seed=config.seed)
    setups = ["objective", "integrated"] if args.setup == "both" else [args.setup]
    out = _out_dir(args)
    curves = {}
    for setup in setups:
        if scan == "lateral":
            curve = raytrace.lateral_scan(setup, config.scans.lateral_mm, stack,
                                          layers, params, source,
                                          config.budget.total_transmittance)
        else:
            curve = raytrace.axial_scan(setup, config.scans.axial_um, stack,
                                        layers, params, source,
                                        config.budget.total_transmittance)
        curves[setup] = curve
        reports.write_csv(
            out / f"scan_{scan}_{setup}.csv",
            [curve.parameter, "efficiency_pct", "stderr_pct"],
            zip(curve.displacements, curve.efficiency_pct, curve.stderr_pct),
            comments=[f"train: {json.dumps(curve.train_info, sort_keys=True)}"])
    xlabel = ("lateral displacement d (mm)" if scan == "lateral"
              else "axial displacement d' (um)")
    figures.scan_figure(out / f"scan_{scan}.png", curves, xlabel)
    print(f"wrote {scan} scan for {', '.join(setups)} to {out}")
    return EXIT_OK


def cmd_reproduce(args, config: RunConfig) -> int:
    result = pipelines.reproduce(args.target, config, args.out, _threads(args))
    for check in result.checks:
        marker = "PASS" if check.passed else "FAIL"
        print(f"[{marker}] {result.name}: {check.label} ({check.detail})")
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def cmd_sweep(args, config: RunConfig) -> int:
    if args.step <= 0:
        raise ConfigError("sweep step must be > 0")
    if args.start > args.stop:
        raise ConfigError("sweep start must not exceed stop")
    n = int(round((args.stop - args.start) / args.step))
    values = [args.start + i * args.step for i in range(n + 1)
              if args.start + i * args.step <= args.stop + 1e-9]
    out = _out_dir(args)
    path = out / f"sweep_{args.op}_{args.parameter}.csv"
    pipelines.sweep_generic(config, args.op, args.parameter, values, path,
                            _threads(args))
    print(f"wrote {len(values)} rows to {path}")
    return EXIT_OK


_COMMANDS = {
    "trap-solve": cmd_trap_solve,
    "collection": cmd_collection,
    "calibrate-undercut": cmd_calibrate_undercut,
    "lens-design": cmd_lens_design,
    "psf": cmd_psf,
    "reproduce": cmd_reproduce,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "scan-lateral":
            return _scan(args, config, "lateral")
        if args.command == "scan-axial":
            return _scan(args, config, "axial")
        return _COMMANDS[args.command](args, config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
