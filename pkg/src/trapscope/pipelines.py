"""Figure-reproduction pipelines binding the physics modules into runs.

Each target writes plot-ready CSV/JSON (plus a rendered PNG) into the output
directory together with the effective config echo and a manifest, and
evaluates its own pass/fail checks.  Reruns with the same config and seed
are byte-identical apart from manifest timings.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, collection, figures, lens, raytrace, reports, trap, waveoptics
from .config import RunConfig, serialize_config

REPRODUCE_TARGETS = ("fig2c", "fig2d", "fig3d", "fig4c", "fig4d", "budget")

TRAP_CSV_HEADER = ["value_um", "height_um", "omega_x_MHz", "omega_y_MHz",
                   "omega_y_norm"]
COLLECTION_CSV_HEADER = ["value_um", "height_um", "efficiency_pct"]


@dataclass
class Check:
    label: str
    passed: bool
    detail: str


@dataclass
class TargetResult:
    name: str
    out_dir: Path
    checks: list[Check]
    summary: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _check(checks: list[Check], label: str, passed: bool, detail: str):
    checks.append(Check(label, bool(passed), detail))


def _map_ordered(fn, values, threads: int):
    """Apply fn to values, optionally in parallel, results in input order."""
    if threads <= 1:
        return [fn(v) for v in values]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, values))


def _prepare(config: RunConfig, out_dir) -> reports.ManifestBuilder:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = serialize_config(config)
    builder = reports.ManifestBuilder(out, text, __version__)
    echo = out / "config_echo.json"
    echo.write_text(text, encoding="utf-8")
    builder.add(echo)
    return builder


def calibrate_device_undercut(config: RunConfig) -> dict:
    """Bisect the undercut half-width to the configured collection target.

    Calibration runs at the design height with the undercut z-extent
    tracking the aperture cone (length-unconstrained), then reports the
    angular occlusion ratio reused by geometry sweeps.
    """
    c = config.collection
    t = config.trap
    seed_stack = collection.make_device_stack(
        t.aperture_width, t.aperture_length, c.source_height_um,
        occlusion_x=1.0, undercut_depth=c.undercut_depth_um)
    opening = collection.calibrate_undercut(
        seed_stack, c.target_efficiency_pct / 100.0, vary="half_width")
    stack = config.device_stack(opening.half_width)
    return {
        "undercut_half_width_um": opening.half_width,
        "undercut_half_length_um": stack.openings[-1].half_length,
        "occlusion_x": collection.undercut_occlusion(stack),
        "achieved_efficiency_pct":
            collection.solid_angle_stack(stack).efficiency_pct,
        "target_efficiency_pct": c.target_efficiency_pct,
    }


def trap_sweep_rows(config: RunConfig, parameter: str, values,
                    threads: int = 1) -> list[dict]:
    """Per-point trap solve with omega_y normalised to the no-aperture layout."""
    layout = config.trap_layout()
    drive = config.rf_drive()
    ion = config.ion_species()
    ref = trap.radial_frequencies(replace(layout, aperture_width=0.0), drive, ion)

    def solve(value):
        sol = trap.radial_frequencies(
            replace(layout, **{parameter: float(value)}), drive, ion)
        return {"value_um": float(value), "height_um": sol.height,
                "omega_x_MHz": sol.omega_x, "omega_y_MHz": sol.omega_y,
                "omega_y_norm": sol.omega_y / ref.omega_y}

    return _map_ordered(solve, list(values), threads)


def collection_sweep_rows(config: RunConfig, parameter: str, values,
                          calibration: dict | None = None,
                          trap_rows: list[dict] | None = None,
                          threads: int = 1) -> list[dict]:
    calibration = calibration or calibrate_device_undercut(config)
    if parameter == "aperture_width" and trap_rows is None:
        trap_rows = trap_sweep_rows(config, parameter, values, threads)
    return collection.sweep_collection(
        config.trap_layout(), config.rf_drive(), config.ion_species(),
        parameter, values,
        design_height=config.collection.source_height_um,
        occlusion_x=calibration["occlusion_x"],
        undercut_half_width=calibration["undercut_half_width_um"],
        undercut_depth=config.collection.undercut_depth_um,
        trap_rows=trap_rows)


def _rows_to_csv(rows, header):
    return [[row[k] for k in header] for row in rows]


# ---------------------------------------------------------------- targets

def run_fig2c(config: RunConfig, out_dir, threads: int = 1) -> TargetResult:
    """Coupled aperture-width sweep: collection efficiency + trap frequency."""
    builder = _prepare(config, out_dir)
    checks: list[Check] = []
    values = config.sweeps.width_values_um
    with builder.time_stage("trap_sweep"):
        trows = trap_sweep_rows(config, "aperture_width", values, threads)
    with builder.time_stage("collection_sweep"):
        crows = collection_sweep_rows(config, "aperture_width", values,
                                      trap_rows=trows, threads=threads)
    out = builder.out_dir
    builder.add(reports.write_csv(out / "fig2c_trap.csv", TRAP_CSV_HEADER,
                                  _rows_to_csv(trows, TRAP_CSV_HEADER)))
    builder.add(reports.write_csv(out / "fig2c_collection.csv",
                                  COLLECTION_CSV_HEADER,
                                  _rows_to_csv(crows, COLLECTION_CSV_HEADER)))
    builder.add(figures.sweep_figure(out / "fig2c.png", trows, crows,
                                     "aperture width (um)"))

    eff = [r["efficiency_pct"] for r in crows]
    peak = int(np.argmax(eff))
    peak_w = crows[peak]["value_um"]
    _check(checks, "interior efficiency maximum",
           0 < peak < len(eff) - 1 and 80.0 <= peak_w <= 250.0,
           f"maximum at width {peak_w} um")
    norms = [r["omega_y_norm"] for r in trows]
    _check(checks, "normalized omega_y strictly decreasing",
           all(b < a for a, b in zip(norms, norms[1:])),
           f"norms {['%.4f' % n for n in norms]}")
    builder.write({"target": "fig2c", "peak_width_um": peak_w})
    return TargetResult("fig2c", out, checks,
                        {"peak_width_um": peak_w, "efficiency_pct": eff})


def run_fig2d(config: RunConfig, out_dir, threads: int = 1) -> TargetResult:
    """Aperture-length sweep at the design height with calibrated undercut."""
    builder = _prepare(config, out_dir)
    checks: list[Check] = []
    values = config.sweeps.length_values_um
    with builder.time_stage("calibration"):
        calibration = calibrate_device_undercut(config)
    with builder.time_stage("collection_sweep"):
        crows = collection_sweep_rows(config, "aperture_length", values,
                                      calibration=calibration, threads=threads)
    with builder.time_stage("trap_sweep"):
        trows = trap_sweep_rows(config, "aperture_length", values, threads)
    out = builder.out_dir
    builder.add(reports.write_csv(out / "fig2d_collection.csv",
                                  COLLECTION_CSV_HEADER,
                                  _rows_to_csv(crows, COLLECTION_CSV_HEADER)))
    builder.add(reports.write_csv(out / "fig2d_trap.csv", TRAP_CSV_HEADER,
                                  _rows_to_csv(trows, TRAP_CSV_HEADER)))
    builder.add(figures.sweep_figure(out / "fig2d.png", trows, crows,
                                     "aperture length (um)"))

    eff = {r["value_um"]: r["efficiency_pct"] for r in crows}
    device_l = config.trap.aperture_length
    target = config.collection.target_efficiency_pct
    diag = {
        "calibration": calibration,
        "efficiency_ratio_600_over_100":
            eff.get(600.0, float("nan")) / eff.get(100.0, float("nan")),
        "predicted_600_pct": eff.get(600.0),
        "reference_600_pct": 3.17,
    }
    builder.add(reports.write_json(out / "fig2d_diagnostics.json", diag))
    _check(checks, "device-length row matches calibrated target",
           device_l in eff and abs(eff[device_l] - target) < 1e-3,
           f"eta({device_l}) = {eff.get(device_l):.6f}% vs {target}%")
    series = [r["efficiency_pct"] for r in crows]
    _check(checks, "efficiency monotone increasing in length",
           all(b > a for a, b in zip(series, series[1:])),
           f"range {series[0]:.3f}..{series[-1]:.3f}%")
    builder.write({"target": "fig2d",
                   "ratio_600_100": diag["efficiency_ratio_600_over_100"]})
    return TargetResult("fig2d", out, checks, diag)


def run_fig3d(config: RunConfig, out_dir, threads: int = 1) -> TargetResult:
    """Simulated PSF of the device under backside plane-wave illumination."""
    builder = _prepare(config, out_dir)
    checks: list[Check] = []
    with builder.time_stage("calibration"):
        calibration = calibrate_device_undercut(config)
    stack = config.device_stack(calibration["undercut_half_width_um"])
    layers = config.layer_stack()
    with builder.time_stage("phase_profile"):
        profile = lens.collimation_phase(layers, config.lens.diameter_um,
                                         config.lens.wavelength_nm,
                                         config.lens.radial_samples)
    with builder.time_stage("psf"):
        metrics, field = waveoptics.simulate_psf(
            profile, layers, stack, config.grid_spec(),
            wavelength_nm=config.lens.wavelength_nm)

    out = builder.out_dir
    coords = config.grid_spec().coords()
    intensity = np.abs(field.values) ** 2
    ix = int(np.argmin(np.abs(coords - metrics.peak_x)))
    iz = int(np.argmin(np.abs(coords - metrics.peak_z)))
    window = np.abs(coords) <= 10.0
    cut_rows = list(zip(coords[window], intensity[window, iz],
                        intensity[ix, window]))
    builder.add(reports.write_csv(out / "fig3d_psf_cuts.csv",
                                  ["coord_um", "intensity_x_cut", "intensity_z_cut"],
                                  cut_rows))
    builder.add(reports.write_json(out / "fig3d_metrics.json",
                                   metrics.as_dict()))
    sel = np.ix_(window, window)
    builder.add(reports.write_raster(out / "fig3d_intensity.raster",
                                     intensity[sel], config.psf.grid_spacing_um))
    builder.add(figures.psf_figure(out / "fig3d.png", coords[window],
                                   intensity[window, iz], intensity[ix, window],
                                   metrics))

    _check(checks, "fwhm_z within 15% of 0.92 um",
           abs(metrics.fwhm_z - 0.92) <= 0.15 * 0.92,
           f"fwhm_z = {metrics.fwhm_z:.4f} um")
    _check(checks, "fwhm_x / fwhm_z > 1.2",
           metrics.fwhm_x / metrics.fwhm_z > 1.2,
           f"ratio = {metrics.fwhm_x / metrics.fwhm_z:.3f}")
    builder.write({"target": "fig3d", "fwhm_z_um": metrics.fwhm_z,
                   "fwhm_x_um": metrics.fwhm_x})
    return TargetResult("fig3d", out, checks, metrics.as_dict())


def _scan_target(config: RunConfig, out_dir, scan: str) -> TargetResult:
    builder = _prepare(config, out_dir)
    checks: list[Check] = []
    with builder.time_stage("calibration"):
        calibration = calibrate_device_undercut(config)
    stack = config.device_stack(calibration["undercut_half_width_um"])
    layers = config.layer_stack()
    params = config.train_params()
    source = raytrace.RaySource(n_rays=config.scans.rays_per_point,
                                seed=config.seed)
    transmittance = config.budget.total_transmittance
    out = builder.out_dir
    name = "fig4c" if scan == "lateral" else "fig4d"
    curves = {}
    for setup in ("objective", "integrated"):
        with builder.time_stage(f"{setup}_scan"):
            if scan == "lateral":
                curve = raytrace.lateral_scan(setup, config.scans.lateral_mm,
                                              stack, layers, params, source,
                                              transmittance)
            else:
                curve = raytrace.axial_scan(setup, config.scans.axial_um,
                                            stack, layers, params, source,
                                            transmittance)
        curves[setup] = curve
        header = [curve.parameter, "efficiency_pct", "stderr_pct"]
        rows = zip(curve.displacements, curve.efficiency_pct, curve.stderr_pct)
        builder.add(reports.write_csv(
            out / f"{name}_{setup}.csv", header, rows,
            comments=[f"train: {json.dumps(curve.train_info, sort_keys=True)}"]))
    xlabel = ("lateral displacement d (mm)" if scan == "lateral"
              else "axial displacement d' (um)")
    builder.add(figures.scan_figure(out / f"{name}.png", curves, xlabel))

    if scan == "lateral":
        obj_fall = raytrace.falloff_displacement(curves["objective"])
        int_fall = raytrace.falloff_displacement(curves["integrated"])
        integ = curves["integrated"]
        near = integ.displacements <= 10.0
        _check(checks, "objective 90% falloff at 0.86 mm +- 0.15",
               abs(obj_fall - 0.86) <= 0.15, f"falloff {obj_fall:.3f} mm")
        _check(checks, "integrated holds 90% out to 10 mm",
               bool(np.all(integ.efficiency_pct[near]
                           >= 0.9 * integ.efficiency_pct.max())),
               f"min within 10 mm = {integ.efficiency_pct[near].min():.4f}%")
        _check(checks, "integrated knee near focusing-lens radius",
               abs(int_fall - 12.63) <= 1.0, f"knee {int_fall:.2f} mm")
        _check(checks, "field-of-view ratio > 10",
               int_fall / obj_fall > 10.0,
               f"ratio {int_fall / obj_fall:.1f}")
        summary = {"objective_falloff_mm": obj_fall,
                   "integrated_falloff_mm": int_fall}
    else:
        summary = {}
        for setup, curve in curves.items():
            d = curve.displacements
            eff = curve.efficiency_pct
            err = curve.stderr_pct
            asym = 0.0
            tol = 0.0
            for i, di in enumerate(d):
                j = int(np.argmin(np.abs(d + di)))
                asym = max(asym, abs(eff[i] - eff[j]))
                tol = max(tol, 3.0 * math.hypot(err[i], err[j]))
            _check(checks, f"{setup} curve even in d'",
                   asym <= max(tol, 1e-12),
                   f"max asymmetry {asym:.4f} vs 3-sigma {tol:.4f}")
            summary[f"{setup}_even_asymmetry_pct"] = asym
        o, i_ = curves["objective"], curves["integrated"]
        far = np.abs(o.displacements) >= 25.0
        slack = 3.0 * np.hypot(o.stderr_pct[far], i_.stderr_pct[far])
        _check(checks, "integrated <= objective beyond 25 um",
               bool(np.all(i_.efficiency_pct[far]
                           <= o.efficiency_pct[far] + slack)),
               "collimator optimized on axis")
    builder.write({"target": name, **summary})
    return TargetResult(name, out, checks, summary)


def run_fig4c(config: RunConfig, out_dir, threads: int = 1) -> TargetResult:
    """Detection efficiency versus lateral readout-zone displacement."""
    return _scan_target(config, out_dir, "lateral")


def run_fig4d(config: RunConfig, out_dir, threads: int = 1) -> TargetResult:
    """Detection efficiency versus axial ion displacement."""
    return _scan_target(config, out_dir, "axial")


def run_budget(config: RunConfig, out_dir, threads: int = 1) -> TargetResult:
    """Transmittance budget and the d = 0 detection prediction."""
    builder = _prepare(config, out_dir)
    checks: list[Check] = []
    layers = config.layer_stack()
    with builder.time_stage("budget"):
        metalens_t = waveoptics.calibrate_metalens_transmittance(
            layers, config.budget.total_transmittance)
        total = waveoptics.transmittance_budget(layers, metalens_t)
        fresnel = waveoptics.transmittance_budget(layers, 1.0)
        calibration = calibrate_device_undercut(config)
        collection_pct = calibration["achieved_efficiency_pct"]
        predicted = collection_pct * total
        library = lens.synthetic_library()
        profile = lens.collimation_phase(layers, config.lens.diameter_um,
                                         config.lens.wavelength_nm,
                                         config.lens.radial_samples)
        fmap = lens.phase_to_featuremap(profile, library)
        map_power_t = lens.mean_amplitude_sq(fmap, library)
    payload = {
        "fresnel_product": fresnel,
        "metalens_transmittance_calibrated": metalens_t,
        "synthetic_map_power_transmittance": map_power_t,
        "total_transmittance": total,
        "collection_pct": collection_pct,
        "predicted_detection_pct": predicted,
        "reference_detection_pct": config.budget.measured_detection_pct,
        "difference_pp": predicted - config.budget.measured_detection_pct,
    }
    out = builder.out_dir
    builder.add(reports.write_json(out / "budget.json", payload))
    builder.add(figures.budget_figure(out / "budget.png", payload))
    _check(checks, "predicted detection = 0.61% +- 0.05 pp",
           abs(predicted - 0.61) <= 0.05, f"predicted {predicted:.4f}%")
    _check(checks, "prediction within 0.10 pp of measured 0.58%",
           abs(predicted - config.budget.measured_detection_pct) < 0.10,
           f"difference {payload['difference_pp']:.4f} pp")
    builder.write({"target": "budget", "predicted_detection_pct": predicted})
    return TargetResult("budget", out, checks, payload)


_RUNNERS = {
    "fig2c": run_fig2c,
    "fig2d": run_fig2d,
    "fig3d": run_fig3d,
    "fig4c": run_fig4c,
    "fig4d": run_fig4d,
    "budget": run_budget,
}


def reproduce(target: str, config: RunConfig, out_dir,
              threads: int = 1) -> TargetResult:
    """Run one reproduction target; checks decide the process exit code."""
    if target not in _RUNNERS:
        raise ValueError(f"unknown reproduce target {target!r}; "
                         f"choose from {', '.join(REPRODUCE_TARGETS)}")
    result = _RUNNERS[target](config, out_dir, threads)
    if not result.passed:
        reports.write_json(Path(out_dir) / "failure_report.json", {
            "target": target,
            "failed_checks": [
                {"label": c.label, "detail": c.detail}
                for c in result.checks if not c.passed],
        })
    return result


SWEEPABLE_OPS = ("trap", "collection")


def sweep_generic(config: RunConfig, op: str, parameter: str, values,
                  out_path, threads: int = 1) -> Path:
    """Generic sweep runner writing the op's CSV contract; order-stable."""
    if op not in SWEEPABLE_OPS:
        raise ValueError(f"unknown sweepable op {op!r}; "
                         f"choose from {', '.join(SWEEPABLE_OPS)}")
    parameter = {"width": "aperture_width", "length": "aperture_length"}.get(
        parameter, parameter)
    if parameter not in ("aperture_width", "aperture_length"):
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    if op == "trap":
        rows = trap_sweep_rows(config, parameter, values, threads)
        header = TRAP_CSV_HEADER
    else:
        rows = collection_sweep_rows(config, parameter, values, threads=threads)
        header = COLLECTION_CSV_HEADER
    return reports.write_csv(out_path, header, _rows_to_csv(rows, header))
