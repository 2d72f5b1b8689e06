"""Acceptance suite: one pass/fail line per criterion (run with ``pytest -s``).

Each criterion pins its published tolerance; Monte Carlo gates use the fixed
default seed so results are reproducible bit for bit.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.fft as sfft

from trapscope import collection, lens, pipelines, raytrace, trap, waveoptics
from trapscope.collection import (
    ApertureStack,
    RectOpening,
    make_device_stack,
    mc_collection,
    solid_angle_onaxis,
    solid_angle_stack,
)
from trapscope.config import RunConfig
from trapscope.lens import collimation_phase, default_layer_stack
from trapscope.raytrace import RaySource, TrainParams, falloff_displacement
from trapscope.waveoptics import GridSpec, angular_spectrum_propagate, lens_field, simulate_psf


def report(number: int, label: str, passed: bool, detail: str, elapsed: float,
           budget: float):
    status = "PASS" if passed and elapsed < budget else "FAIL"
    print(f"ACCEPTANCE {number:2d} {status}: {label} "
          f"({detail}; {elapsed:.1f}s of {budget:.0f}s budget)")
    assert passed, f"criterion {number}: {detail}"
    assert elapsed < budget, f"criterion {number} exceeded {budget}s ({elapsed:.1f}s)"


def test_criterion_01_no_undercut_collection():
    t0 = time.monotonic()
    stack = ApertureStack(openings=(RectOpening(0, 20, 50),
                                    RectOpening(275, 20, 50)),
                          source_height=125.0)
    eff = solid_angle_stack(stack).efficiency_pct
    ok = abs(eff - 0.197) <= 0.005 and abs(eff - 0.20) <= 0.01
    report(1, "no-undercut collection matches 0.20%", ok,
           f"efficiency {eff:.4f}%", time.monotonic() - t0, 1.0)


def test_criterion_02_oracle_equivalence(device_stack):
    t0 = time.monotonic()
    geometries = [
        (ApertureStack(openings=(RectOpening(0, 20, 50),
                                 RectOpening(275, 20, 50)),
                       source_height=125.0), (0.0, 0.0)),
        (ApertureStack(openings=(RectOpening(0, 20, 50),),
                       source_height=125.0), (0.0, 0.0)),
        (device_stack, (0.0, 0.0)),
        (device_stack, (5.0, 20.0)),
        (ApertureStack(openings=(RectOpening(0, 20, 50),
                                 RectOpening(275, 20, 50)),
                       source_height=125.0), (0.0, 30.0)),
        (ApertureStack(openings=(RectOpening(0, 25, 60),
                                 RectOpening(150, 30, 80, center_x=4.0),
                                 RectOpening(275, 45, 200)),
                       source_height=110.0), (-4.0, 10.0)),
    ]
    worst = 0.0
    for i, (stack, source) in enumerate(geometries):
        det = solid_angle_stack(stack, source)
        mc = mc_collection(stack, source, n_samples=10_000_000, seed=100 + i)
        sigma = max(mc.stderr, 1e-12)
        worst = max(worst, abs(mc.efficiency - det.efficiency) / sigma)
    report(2, "integrator vs Monte Carlo on 6 geometries", worst < 3.0,
           f"worst deviation {worst:.2f} sigma", time.monotonic() - t0, 30.0)


def test_criterion_03_undercut_calibration(calibrated_undercut, device_stack,
                                           device_occlusion):
    t0 = time.monotonic()
    achieved = solid_angle_stack(device_stack).efficiency
    cal_ok = abs(achieved - 0.0091) < 1e-6
    eta100 = solid_angle_stack(device_stack).efficiency_pct
    stack600 = make_device_stack(40.0, 600.0, 125.0,
                                 undercut_half_width=calibrated_undercut.half_width)
    eta600 = solid_angle_stack(stack600).efficiency_pct
    ratio = eta600 / eta100
    report(3, "undercut calibration and length extrapolation",
           cal_ok and 2.0 <= ratio <= 3.6,
           f"half-width {calibrated_undercut.half_width:.3f} um, "
           f"eta(600) {eta600:.3f}% vs reference 3.17% (diagnostic), "
           f"ratio {ratio:.3f}", time.monotonic() - t0, 10.0)


def test_criterion_04_trap_model_properties(nominal_layout, nominal_drive,
                                            calcium, nominal_null,
                                            nominal_solution):
    t0 = time.monotonic()
    details = []
    sol = nominal_solution

    v2 = trap.radial_frequencies(nominal_layout,
                                 replace(nominal_drive, voltage=100.0), calcium)
    volt_ok = abs(v2.omega_x / sol.omega_x - 2.0) < 1e-9 and \
        abs(v2.omega_y / sol.omega_y - 2.0) < 1e-9
    o2 = trap.radial_frequencies(
        nominal_layout, replace(nominal_drive, omega_rf=2 * nominal_drive.omega_rf),
        calcium)
    drive_ok = abs(o2.omega_x / sol.omega_x - 0.5) < 1e-9
    details.append(f"scaling exact: {volt_ok and drive_ok}")

    ratio = sol.omega_y / sol.omega_x
    ratio_ok = abs(ratio - 1.124) <= 0.15 * 1.124
    details.append(f"omega_y/omega_x {ratio:.4f}")

    rows = trap.sweep_trap(nominal_layout, nominal_drive, calcium,
                           "aperture_width", [20, 50, 80, 110, 140, 170, 200])
    norms = [r["omega_y_norm"] for r in rows]
    width_ok = all(b < a for a, b in zip(norms, norms[1:]))

    rows_l = trap.sweep_trap(nominal_layout, nominal_drive, calcium,
                             "aperture_length", [50, 150, 300, 450, 600])
    omega_l = [r["omega_y_MHz"] for r in rows_l]
    length_ok = (max(omega_l) - min(omega_l)) < 0.05 * max(omega_l)

    gx, gy = trap.grid_search_null(nominal_layout, nominal_drive)
    oracle_ok = abs(gx - nominal_null.null_x) < 0.5 and \
        abs(gy - nominal_null.height) < 0.5

    # reported with the documented model-mismatch caveat, not hard-gated
    details.append(f"height {nominal_null.height:.1f} um vs design 125 um "
                   f"(+-40% band), f_x {sol.omega_x:.2f} MHz vs reference 1.21")
    ok = volt_ok and drive_ok and ratio_ok and width_ok and length_ok and oracle_ok
    report(4, "trap scaling/ratio/monotonicity/oracle", ok,
           "; ".join(details), time.monotonic() - t0, 60.0)


def test_criterion_05_coupled_width_sweep(default_config):
    t0 = time.monotonic()
    rows = pipelines.collection_sweep_rows(default_config, "aperture_width",
                                           default_config.sweeps.width_values_um)
    eff = [r["efficiency_pct"] for r in rows]
    peak = int(np.argmax(eff))
    peak_w = rows[peak]["value_um"]
    ok = 0 < peak < len(eff) - 1 and 80.0 <= peak_w <= 250.0
    report(5, "collection vs width has interior maximum", ok,
           f"maximum {max(eff):.3f}% at width {peak_w:.0f} um "
           f"(reference optimum near 150 um)", time.monotonic() - t0, 120.0)


def test_criterion_06_psf(device_stack):
    t0 = time.monotonic()
    layers = default_layer_stack()
    profile = collimation_phase(layers, 210.0)
    grid = GridSpec()

    field0 = lens_field(profile, grid, 397.0)
    spectrum = sfft.fft2(field0.values, workers=1)
    n = grid.n_samples
    f = np.fft.fftfreq(n, d=grid.spacing)
    band = (f[:, None] ** 2 + f[None, :] ** 2) <= (1.0 / 0.397) ** 2
    p_band = float(np.sum(np.abs(spectrum[band]) ** 2)) / n**2
    out = angular_spectrum_propagate(field0, 37.0)
    power_err = abs(out.power - p_band) / p_band
    del field0, out, spectrum

    metrics, field = simulate_psf(profile, layers, device_stack, grid)
    del field
    elapsed_default = time.monotonic() - t0

    metrics2, field2 = simulate_psf(profile, layers, device_stack,
                                    grid.doubled())
    del field2
    dx = abs(metrics2.fwhm_x - metrics.fwhm_x) / metrics.fwhm_x
    dz = abs(metrics2.fwhm_z - metrics.fwhm_z) / metrics.fwhm_z

    ok = (abs(metrics.fwhm_z - 0.92) <= 0.15 * 0.92
          and metrics.fwhm_x / metrics.fwhm_z > 1.2
          and power_err <= 1e-6
          and dx < 0.02 and dz < 0.02)
    report(6, "simulated PSF at the design height", ok,
           f"fwhm_z {metrics.fwhm_z:.3f} um (target 0.92 +-15%), "
           f"fwhm_x/fwhm_z {metrics.fwhm_x / metrics.fwhm_z:.2f}, "
           f"power error {power_err:.1e}, grid-doubling shifts "
           f"x {100 * dx:.2f}% z {100 * dz:.2f}%", elapsed_default, 120.0)


def test_criterion_07_detection_budget(default_config):
    t0 = time.monotonic()
    layers = default_config.layer_stack()
    metalens_t = waveoptics.calibrate_metalens_transmittance(layers, 0.67)
    total = waveoptics.transmittance_budget(layers, metalens_t)
    calibration = pipelines.calibrate_device_undercut(default_config)
    predicted = calibration["achieved_efficiency_pct"] * total
    ok = abs(predicted - 0.61) <= 0.05 and abs(predicted - 0.58) < 0.10
    report(7, "detection budget at d = 0", ok,
           f"predicted {predicted:.4f}% vs measured 0.58%",
           time.monotonic() - t0, 10.0)


def test_criterion_08_field_of_view(device_stack):
    t0 = time.monotonic()
    layers = default_layer_stack()
    source = RaySource(n_rays=1_000_000)
    obj = raytrace.lateral_scan(
        "objective", [0.0, 0.4, 0.7, 0.8, 0.84, 0.88, 0.92, 1.0, 1.2],
        device_stack, layers, source=source, transmittance=0.67)
    integ = raytrace.lateral_scan(
        "integrated", [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 11.0, 12.0, 12.4,
                       12.8, 13.2], device_stack, layers, source=source,
        transmittance=0.67)
    obj_fall = falloff_displacement(obj)
    integ_fall = falloff_displacement(integ)
    near = integ.displacements <= 10.0
    hold = bool(np.all(integ.efficiency_pct[near]
                       >= 0.9 * integ.efficiency_pct.max()))
    ok = (abs(obj_fall - 0.86) <= 0.15 and hold
          and abs(integ_fall - 12.63) <= 1.0
          and integ_fall / obj_fall > 10.0)
    report(8, "field-of-view scans", ok,
           f"objective falloff {obj_fall:.3f} mm, integrated knee "
           f"{integ_fall:.2f} mm, ratio {integ_fall / obj_fall:.1f}",
           time.monotonic() - t0, 120.0)


def test_criterion_09_axial_scans(device_stack):
    t0 = time.monotonic()
    layers = default_layer_stack()
    source = RaySource(n_rays=1_000_000)
    grid = [-50.0, -37.5, -25.0, -12.5, 0.0, 12.5, 25.0, 37.5, 50.0]
    curves = {setup: raytrace.axial_scan(setup, grid, device_stack, layers,
                                         source=source, transmittance=0.67)
              for setup in ("objective", "integrated")}
    even_ok = True
    detail = []
    for setup, curve in curves.items():
        worst = 0.0
        for i, d in enumerate(curve.displacements):
            j = int(np.argmin(np.abs(curve.displacements + d)))
            gap = abs(curve.efficiency_pct[i] - curve.efficiency_pct[j])
            tol = 3.0 * math.hypot(curve.stderr_pct[i], curve.stderr_pct[j])
            if gap > max(tol, 1e-12):
                even_ok = False
            worst = max(worst, gap)
        detail.append(f"{setup} asymmetry {worst:.4f} pp")
    o, i_ = curves["objective"], curves["integrated"]
    far = np.abs(o.displacements) >= 25.0
    slack = 3.0 * np.hypot(o.stderr_pct[far], i_.stderr_pct[far])
    order_ok = bool(np.all(i_.efficiency_pct[far]
                           <= o.efficiency_pct[far] + slack))
    report(9, "axial scans even and ordered", even_ok and order_ok,
           "; ".join(detail), time.monotonic() - t0, 120.0)


def test_criterion_10_determinism(tmp_path):
    t0 = time.monotonic()
    config = RunConfig()
    config = replace(config, sweeps=replace(config.sweeps,
                                            length_values_um=(100.0, 300.0, 600.0)))
    manifests = []
    datasets = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        result = pipelines.reproduce("fig2d", config, out)
        assert result.passed
        manifests.append(json.loads((out / "manifest.json").read_text()))
        datasets.append({p.name: p.read_bytes() for p in sorted(out.iterdir())
                         if p.name != "manifest.json"})
    same_files = datasets[0] == datasets[1]
    same_sums = manifests[0]["outputs"] == manifests[1]["outputs"]

    paths = []
    for threads in (1, 8):
        path = tmp_path / f"sweep_t{threads}.csv"
        pipelines.sweep_generic(config, "trap", "width",
                                [20.0, 60.0, 100.0], path, threads)
        paths.append(path.read_bytes())
    threads_ok = paths[0] == paths[1]

    report(10, "byte-identical reruns and thread independence",
           same_files and same_sums and threads_ok,
           f"{len(datasets[0])} files compared", time.monotonic() - t0, 120.0)
