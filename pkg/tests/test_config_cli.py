import json
import math
from pathlib import Path

import pytest

from trapscope.cli import main
from trapscope.config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    parse_config,
    serialize_config,
)


def write(tmp_path, payload) -> Path:
    path = tmp_path / "config.json"
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload),
                    encoding="utf-8")
    return path


def test_empty_file_gives_nominal_device_defaults(tmp_path):
    config = parse_config(write(tmp_path, ""))
    assert config.trap.aperture_width == 40.0
    assert config.trap.aperture_length == 100.0
    assert config.drive.voltage == 50.0
    assert config.drive.frequency_mhz == 20.0
    assert config.lens.wavelength_nm == 397.0
    assert config.ion.mass_amu == pytest.approx(39.9626)
    assert config.seed == 0xC0FFEE


def test_negative_aperture_width_rejected_by_name(tmp_path):
    path = write(tmp_path, {"trap": {"aperture_width": -5}})
    with pytest.raises(ConfigError, match="aperture_width"):
        parse_config(path)


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError, match="mystery"):
        config_from_dict({"mystery": {}})
    with pytest.raises(ConfigError, match="typo_key"):
        config_from_dict({"trap": {"typo_key": 1.0}})


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError, match="drive.voltage"):
        config_from_dict({"drive": {"voltage": "fifty"}})
    with pytest.raises(ConfigError, match="seed"):
        config_from_dict({"seed": -1})


def test_round_trip_identity(tmp_path):
    config = config_from_dict({"trap": {"aperture_width": 55.0},
                               "scans": {"rays_per_point": 5000},
                               "seed": 7})
    path = write(tmp_path, serialize_config(config))
    assert parse_config(path) == config


def test_domain_object_constructors():
    config = RunConfig()
    assert config.trap_layout().ground_width == 65.0
    assert config.rf_drive().omega_rf == pytest.approx(2 * math.pi * 20e6)
    assert config.layer_stack().layers[-1].refractive_index == 1.5262
    assert config.grid_spec().n_samples == 4096


def test_cli_sweep_row_count(tmp_path):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--op", "trap", "--parameter", "width",
               "--start", "20", "--stop", "200", "--step", "10",
               "--out", str(out)])
    assert rc == 0
    rows = (out / "sweep_trap_width.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 19      # header + inclusive range


def test_cli_sweep_thread_count_does_not_change_bytes(tmp_path):
    outs = []
    for threads, name in [(1, "a"), (4, "b")]:
        out = tmp_path / name
        rc = main(["sweep", "--op", "trap", "--parameter", "width",
                   "--start", "20", "--stop", "80", "--step", "20",
                   "--threads", str(threads), "--out", str(out)])
        assert rc == 0
        outs.append((out / "sweep_trap_width.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_sweep_invalid_range_is_usage_error(tmp_path):
    rc = main(["sweep", "--op", "trap", "--parameter", "width",
               "--start", "100", "--stop", "20", "--step", "10",
               "--out", str(tmp_path)])
    assert rc == 2


def test_cli_sweep_unknown_op_is_usage_error(tmp_path):
    rc = main(["sweep", "--op", "warp", "--parameter", "width",
               "--start", "1", "--stop", "2", "--step", "1",
               "--out", str(tmp_path)])
    assert rc == 2


def test_cli_bad_config_is_usage_error(tmp_path):
    path = write(tmp_path, {"trap": {"aperture_width": -1}})
    rc = main(["trap-solve", "--config", str(path), "--out", str(tmp_path)])
    assert rc == 2


def test_cli_reproduce_budget_and_determinism(tmp_path):
    cfg = write(tmp_path, {"collection": {"mc_samples": 100000}})
    manifests = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        rc = main(["reproduce", "budget", "--config", str(cfg),
                   "--out", str(out)])
        assert rc == 0
        manifests.append(json.loads((out / "manifest.json").read_text()))
        assert (out / "budget.json").exists()
        assert (out / "budget.png").exists()
        assert (out / "config_echo.json").exists()
    assert manifests[0]["outputs"] == manifests[1]["outputs"]
    assert manifests[0]["config_hash"] == manifests[1]["config_hash"]


def test_cli_reproduce_failure_sets_exit_code_and_report(tmp_path):
    # Halving the transmittance budget pushes the predicted detection far
    # from the published point, so the target's checks must fail.
    cfg = write(tmp_path, {"budget": {"total_transmittance": 0.30}})
    out = tmp_path / "broken"
    rc = main(["reproduce", "budget", "--config", str(cfg), "--out", str(out)])
    assert rc == 1
    report = json.loads((out / "failure_report.json").read_text())
    assert report["target"] == "budget"
    assert report["failed_checks"]


def test_cli_trap_solve_reports_both_heights(tmp_path):
    rc = main(["trap-solve", "--out", str(tmp_path)])
    assert rc == 0
    payload = json.loads((tmp_path / "trap_solution.json").read_text())
    assert payload["design_target_height_um"] == 125.0
    assert 70.0 < payload["height_um"] < 90.0


def test_cli_calibrate_undercut(tmp_path):
    rc = main(["calibrate-undercut", "--out", str(tmp_path)])
    assert rc == 0
    payload = json.loads((tmp_path / "calibration.json").read_text())
    assert payload["undercut_half_width_um"] == pytest.approx(30.88, abs=0.5)


def test_cli_lens_design_outputs(tmp_path):
    cfg = write(tmp_path, {"lens": {"diameter_um": 40.0, "radial_samples": 101}})
    rc = main(["lens-design", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "phase_profile.csv").exists()
    assert (tmp_path / "feature_map.csv").exists()
    head = (tmp_path / "feature_map.csv").read_text().splitlines()[0]
    assert head == "ix,iz,x_nm,z_nm,diameter_nm"
    payload = json.loads((tmp_path / "lens_design.json").read_text())
    assert payload["library_synthetic"] is True
    assert payload["fit_max_residual_rad"] < 0.05


def test_cli_scan_axial_writes_curves_with_train_header(tmp_path):
    cfg = write(tmp_path, {"scans": {"axial_um": [-25.0, 0.0, 25.0],
                                     "rays_per_point": 50000}})
    rc = main(["scan-axial", "--setup", "objective", "--config", str(cfg),
               "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "scan_axial_objective.csv").read_text().splitlines()
    assert lines[0].startswith("# train: {")
    assert lines[1] == "dprime_um,efficiency_pct,stderr_pct"
    assert len(lines) == 2 + 3


def test_cli_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("TRAPSCOPE_THREADS", "3")
    out = tmp_path / "env"
    rc = main(["sweep", "--op", "trap", "--parameter", "width",
               "--start", "20", "--stop", "60", "--step", "20",
               "--out", str(out)])
    assert rc == 0
    assert (out / "sweep_trap_width.csv").exists()


def test_cli_reproduce_fig2c(tmp_path):
    cfg = write(tmp_path, {"sweeps": {
        "width_values_um": [20, 50, 80, 110, 140, 170, 200]}})
    out = tmp_path / "fig2c"
    rc = main(["reproduce", "fig2c", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    header = (out / "fig2c_trap.csv").read_text().splitlines()[0]
    assert header == "value_um,height_um,omega_x_MHz,omega_y_MHz,omega_y_norm"
    assert (out / "fig2c_collection.csv").exists()
    assert (out / "fig2c.png").exists()


def test_cli_reproduce_fig3d_reduced_grid(tmp_path):
    cfg = write(tmp_path, {"psf": {"grid_spacing_um": 0.15,
                                   "grid_samples": 2048,
                                   "absorbing_border": 128}})
    out = tmp_path / "fig3d"
    rc = main(["reproduce", "fig3d", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    metrics = json.loads((out / "fig3d_metrics.json").read_text())
    assert abs(metrics["fwhm_z_um"] - 0.92) <= 0.15 * 0.92
    from trapscope.reports import read_raster
    data, spacing = read_raster(out / "fig3d_intensity.raster")
    assert spacing == pytest.approx(0.15)
    assert data.shape[0] == data.shape[1]
