"""Matplotlib rendering of the report outputs (PNG next to each CSV)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

plt.rcParams.update({
    "figure.figsize": (6.0, 6.0 * GOLDEN),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.linestyle": "--",
    "grid.linewidth": 0.5,
    "axes.labelsize": 10,
    "legend.fontsize": 9,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
})


def _save(fig, path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def sweep_figure(path, trap_rows, collection_rows, xlabel) -> Path:
    """Collection efficiency and normalized trap frequency on twin axes."""
    x_eff = [r["value_um"] for r in collection_rows]
    eff = [r["efficiency_pct"] for r in collection_rows]
    x_trap = [r["value_um"] for r in trap_rows]
    norm = [r["omega_y_norm"] for r in trap_rows]
    fig, ax = plt.subplots()
    ax.plot(x_eff, eff, "o-", color="tab:blue", label="collection efficiency")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("collection efficiency (%)", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    twin = ax.twinx()
    twin.plot(x_trap, norm, "s--", color="tab:red",
              label="normalized y trap frequency")
    twin.set_ylabel("normalized y trap frequency", color="tab:red")
    twin.tick_params(axis="y", labelcolor="tab:red")
    twin.grid(False)
    return _save(fig, path)


def psf_figure(path, coords, cut_x, cut_z, metrics) -> Path:
    """Normalised focal-plane intensity cuts along x and z."""
    peak = max(float(cut_x.max()), float(cut_z.max()))
    fig, ax = plt.subplots()
    ax.plot(coords, cut_x / peak, label=f"x cut (FWHM {metrics.fwhm_x:.2f} um)")
    ax.plot(coords, cut_z / peak, label=f"z cut (FWHM {metrics.fwhm_z:.2f} um)")
    ax.set_xlabel("position (um)")
    ax.set_ylabel("normalized intensity")
    ax.set_xlim(-5, 5)
    ax.legend()
    return _save(fig, path)


def scan_figure(path, curves, xlabel) -> Path:
    """Detection-efficiency curves for both setups with Monte Carlo errors."""
    fig, ax = plt.subplots()
    colors = {"objective": "tab:blue", "integrated": "tab:red"}
    for setup, curve in curves.items():
        ax.errorbar(curve.displacements, curve.efficiency_pct,
                    yerr=curve.stderr_pct, fmt="o-", ms=3, capsize=2,
                    color=colors.get(setup), label=setup)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("detection efficiency (%)")
    ax.legend()
    return _save(fig, path)


def phase_figure(path, profile) -> Path:
    """Radial collimation phase of the designed lens."""
    fig, ax = plt.subplots()
    ax.plot(profile.radii, profile.phase)
    ax.set_xlabel("radius (um)")
    ax.set_ylabel("phase (rad)")
    return _save(fig, path)


def budget_figure(path, payload) -> Path:
    """Waterfall of the efficiency budget from collection to detection."""
    labels = ["collection", "after Fresnel", "predicted", "measured"]
    values = [
        payload["collection_pct"],
        payload["collection_pct"] * payload["fresnel_product"],
        payload["predicted_detection_pct"],
        payload["reference_detection_pct"],
    ]
    fig, ax = plt.subplots()
    bars = ax.bar(labels, values,
                  color=["tab:blue", "tab:blue", "tab:green", "tab:orange"])
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v, f"{v:.2f}%",
                ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("efficiency (% of 4 pi emission)")
    return _save(fig, path)
