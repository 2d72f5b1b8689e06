"""Run configuration: schema, nominal-device defaults, JSON (de)serialization.

A run is configured by one JSON file.  Every key has a default equal to the
nominal fabricated device, so an empty file is a complete valid
configuration.  Unknown keys are rejected by name; every constraint
violation names the offending key.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .collection import ApertureStack, make_device_stack
from .lens import LayerStack, default_layer_stack
from .raytrace import TrainParams
from .trap import IonSpecies, RfDrive, TrapLayout
from .waveoptics import GridSpec


class ConfigError(ValueError):
    """Configuration file violates the schema; message names the key."""


@dataclass(frozen=True)
class TrapSection:
    rf_width_left: float = 65.0
    rf_width_right: float = 80.0
    gap: float = 20.0
    ground_baseline: float = 65.0
    aperture_width: float = 40.0
    aperture_length: float = 100.0
    ground_margin: float = 12.5
    electrode_length: float = 2000.0


@dataclass(frozen=True)
class DriveSection:
    voltage: float = 50.0
    frequency_mhz: float = 20.0


@dataclass(frozen=True)
class IonSection:
    mass_amu: float = 39.9626
    charge: int = 1


@dataclass(frozen=True)
class CollectionSection:
    source_height_um: float = 125.0
    undercut_depth_um: float = 275.0
    target_efficiency_pct: float = 0.91
    mc_samples: int = 10_000_000


@dataclass(frozen=True)
class LayerSection:
    ion_gap_um: float = 125.0
    substrate_um: float = 275.0
    glass_um: float = 200.0
    glass_index: float = 1.5262


@dataclass(frozen=True)
class LensSection:
    diameter_um: float = 210.0
    wavelength_nm: float = 397.0
    radial_samples: int = 512
    zernike_order: int = 4
    library_path: str | None = None          # None -> packaged synthetic library
    pillar_period_nm: float = 250.0
    pillar_height_nm: float = 700.0


@dataclass(frozen=True)
class PsfSection:
    grid_spacing_um: float = 0.1
    grid_samples: int = 4096
    absorbing_border: int = 256


@dataclass(frozen=True)
class TrainSection:
    objective_focal_mm: float = 10.0
    objective_radius_mm: float = 5.77
    focusing_focal_mm: float = 100.0
    focusing_radius_mm: float = 12.63
    relay_mm: float = 80.0
    detector_half_mm: float = 8.6
    collimator_radius_mm: float = 0.25


@dataclass(frozen=True)
class ScanSection:
    lateral_mm: tuple = (0.0, 0.2, 0.4, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9,
                         0.95, 1.0, 1.1, 1.2, 2.0, 4.0, 6.0, 8.0, 10.0,
                         11.0, 12.0, 12.3, 12.6, 12.9, 13.2)
    axial_um: tuple = (-50.0, -37.5, -25.0, -12.5, 0.0, 12.5, 25.0, 37.5, 50.0)
    rays_per_point: int = 1_000_000
    cone_half_angle_deg: float = 10.98
    aperture_acceptance_deg: float = 8.46    # published constant, not re-derived


@dataclass(frozen=True)
class SweepSection:
    width_values_um: tuple = (20.0, 50.0, 80.0, 110.0, 140.0, 170.0,
                              200.0, 230.0, 260.0)
    length_values_um: tuple = (100.0, 150.0, 200.0, 300.0, 400.0, 500.0, 600.0)


@dataclass(frozen=True)
class BudgetSection:
    total_transmittance: float = 0.67
    measured_detection_pct: float = 0.58


_SECTIONS = {
    "trap": TrapSection,
    "drive": DriveSection,
    "ion": IonSection,
    "collection": CollectionSection,
    "layers": LayerSection,
    "lens": LensSection,
    "psf": PsfSection,
    "train": TrainSection,
    "scans": ScanSection,
    "sweeps": SweepSection,
    "budget": BudgetSection,
}

# keys whose value must be strictly positive / non-negative
_POSITIVE = {
    "rf_width_left", "rf_width_right", "gap", "ground_baseline",
    "ground_margin", "electrode_length", "aperture_length", "voltage",
    "frequency_mhz", "mass_amu", "source_height_um", "undercut_depth_um",
    "target_efficiency_pct", "ion_gap_um", "substrate_um", "glass_um",
    "diameter_um", "wavelength_nm", "pillar_period_nm", "pillar_height_nm",
    "grid_spacing_um", "objective_focal_mm", "objective_radius_mm",
    "focusing_focal_mm", "focusing_radius_mm", "relay_mm", "detector_half_mm",
    "collimator_radius_mm", "cone_half_angle_deg", "total_transmittance",
    "aperture_width",
}
_MIN_ONE = {"charge", "radial_samples", "zernike_order", "grid_samples",
            "mc_samples", "rays_per_point", "absorbing_border"}


@dataclass(frozen=True)
class RunConfig:
    trap: TrapSection = field(default_factory=TrapSection)
    drive: DriveSection = field(default_factory=DriveSection)
    ion: IonSection = field(default_factory=IonSection)
    collection: CollectionSection = field(default_factory=CollectionSection)
    layers: LayerSection = field(default_factory=LayerSection)
    lens: LensSection = field(default_factory=LensSection)
    psf: PsfSection = field(default_factory=PsfSection)
    train: TrainSection = field(default_factory=TrainSection)
    scans: ScanSection = field(default_factory=ScanSection)
    sweeps: SweepSection = field(default_factory=SweepSection)
    budget: BudgetSection = field(default_factory=BudgetSection)
    seed: int = 0xC0FFEE

    # -- domain-object constructors -------------------------------------

    def trap_layout(self) -> TrapLayout:
        return TrapLayout(**asdict(self.trap))

    def rf_drive(self) -> RfDrive:
        return RfDrive(voltage=self.drive.voltage,
                       omega_rf=2.0 * math.pi * self.drive.frequency_mhz * 1e6)

    def ion_species(self) -> IonSpecies:
        return IonSpecies(mass=self.ion.mass_amu, charge=self.ion.charge)

    def layer_stack(self) -> LayerStack:
        return default_layer_stack(ion_height=self.layers.ion_gap_um,
                                   substrate=self.layers.substrate_um,
                                   glass=self.layers.glass_um,
                                   glass_index=self.layers.glass_index)

    def device_stack(self, undercut_half_width: float) -> ApertureStack:
        return make_device_stack(self.trap.aperture_width,
                                 self.trap.aperture_length,
                                 self.collection.source_height_um,
                                 undercut_half_width=undercut_half_width,
                                 undercut_depth=self.collection.undercut_depth_um)

    def train_params(self) -> TrainParams:
        return TrainParams(**asdict(self.train))

    def grid_spec(self) -> GridSpec:
        return GridSpec(spacing=self.psf.grid_spacing_um,
                        n_samples=self.psf.grid_samples,
                        border=self.psf.absorbing_border)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("lateral_mm", "axial_um"):
            d["scans"][name] = list(d["scans"][name])
        for name in ("width_values_um", "length_values_um"):
            d["sweeps"][name] = list(d["sweeps"][name])
        return d


def _coerce(section: str, name: str, value, target_type):
    if value is None and name == "library_path":
        return None
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{name}: expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{name}: expected an integer, got {value!r}")
        return value
    if target_type is tuple:
        if not isinstance(value, (list, tuple)) or \
                any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{section}.{name}: expected a list of numbers")
        return tuple(float(v) for v in value)
    if name == "library_path":
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{name}: expected a path string or null")
        return value
    return value


def _validate(section: str, name: str, value):
    if name in _POSITIVE and isinstance(value, (int, float)) and value <= 0:
        raise ConfigError(f"{section}.{name} must be > 0, got {value}")
    if name in _MIN_ONE and value < 1:
        raise ConfigError(f"{section}.{name} must be >= 1, got {value}")
    if name == "total_transmittance" and not 0.0 < value <= 1.0:
        raise ConfigError(f"{section}.{name} must lie in (0, 1], got {value}")
    if name == "cone_half_angle_deg" and not 0.0 < value < 90.0:
        raise ConfigError(f"{section}.{name} must lie in (0, 90), got {value}")


def config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig from a plain dict (defaults applied)."""
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for section_name, section_cls in _SECTIONS.items():
        raw = data.get(section_name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"section {section_name!r} must be a JSON object")
        known = {f.name: f.type for f in fields(section_cls)}
        bad = set(raw) - set(known)
        if bad:
            raise ConfigError(
                f"unknown key(s) in section {section_name!r}: {', '.join(sorted(bad))}")
        type_table = {"float": float, "int": int, "tuple": tuple,
                      "str | None": str}
        values = {}
        for f in fields(section_cls):
            if f.name in raw:
                value = _coerce(section_name, f.name, raw[f.name],
                                type_table.get(str(f.type), str))
                _validate(section_name, f.name, value)
                values[f.name] = value
        kwargs[section_name] = section_cls(**values)
    seed = data.get("seed", 0xC0FFEE)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return RunConfig(seed=seed, **kwargs)


def parse_config(path) -> RunConfig:
    """Load and validate a config file; empty files mean all defaults."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return RunConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def serialize_config(config: RunConfig) -> str:
    """Canonical JSON text (stable key order, newline-terminated)."""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
