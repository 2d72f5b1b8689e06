"""Collimation phase profiles and their nanopillar realisation.

The target phase collimates a point source seen through a stack of planar
layers (vacuum gap, substrate hole, glass): for each lens radius the true
ray path is found by root-solving Snell's invariant across the stack, and
the phase is the optical-path-length deficit relative to the axis,

    phase(r) = (2 pi / lambda) * (OPL(0) - OPL(r)).

The profile is compressed to even radial powers r^2, r^4, ... by least
squares and compiled to a square lattice of pillar diameters via a
phase-delay library.  The shipped default library is synthetic (smooth
monotone phase spanning 2.2 pi, amplitude transmittance 0.85..0.97) since
electromagnetic pillar simulation is out of scope; real libraries load from
CSV with columns ``diameter_nm,phase_rad,transmittance``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import optimize

TWO_PI = 2.0 * math.pi


class FitError(RuntimeError):
    """Least-squares system for the radial fit is rank deficient."""


class LibraryError(RuntimeError):
    """Pillar library cannot realise the requested phase map."""


def borosilicate_index(wavelength_um: float) -> float:
    """Borosilicate crown refractive index, two-term Cauchy fit.

    n(lambda) = 1.4980 + 4.44457e-3 um^2 / lambda^2, which evaluates to
    1.5262 at 397 nm (the default glass index used throughout).
    """
    return 1.4980 + 4.44457e-3 / wavelength_um**2


@dataclass(frozen=True)
class Layer:
    thickness: float           # um
    refractive_index: float

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError("layer thickness must be > 0")
        if self.refractive_index < 1:
            raise ValueError("refractive index must be >= 1")


@dataclass(frozen=True)
class LayerStack:
    """Planar layers from the source down to the lens plane."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("layer stack cannot be empty")

    @property
    def min_index(self) -> float:
        return min(l.refractive_index for l in self.layers)

    @property
    def axial_opl(self) -> float:
        return sum(l.thickness * l.refractive_index for l in self.layers)


GLASS_INDEX_397NM = 1.5262   # borosilicate_index(0.397) reproduces this to 5e-8


def default_layer_stack(ion_height: float = 125.0, substrate: float = 275.0,
                        glass: float = 200.0,
                        glass_index: float | None = None) -> LayerStack:
    """Ion-to-lens stack: vacuum gap, hole through the substrate, glass."""
    n_glass = GLASS_INDEX_397NM if glass_index is None else glass_index
    return LayerStack(layers=(Layer(ion_height, 1.0),
                              Layer(substrate, 1.0),
                              Layer(glass, n_glass)))


@dataclass(frozen=True)
class PhaseProfile:
    """Sampled rotationally symmetric lens phase (piston removed at r = 0)."""

    wavelength_nm: float
    lens_diameter: float                 # um
    radii: np.ndarray                    # um, ascending from 0
    phase: np.ndarray                    # rad, phase[0] == 0
    zernike_coeffs: np.ndarray | None = None

    def phase_at(self, r) -> np.ndarray:
        """Linear interpolation of the sampled phase at radii ``r`` (um)."""
        return np.interp(r, self.radii, self.phase)


def _lateral_reach(stack: LayerStack, sine: float) -> float:
    """Lateral displacement across the stack of a ray with Snell invariant ``sine``."""
    total = 0.0
    for layer in stack.layers:
        total += layer.thickness * sine / math.sqrt(
            layer.refractive_index**2 - sine * sine)
    return total


def _path_length(stack: LayerStack, sine: float) -> float:
    """Optical path length across the stack for Snell invariant ``sine``."""
    total = 0.0
    for layer in stack.layers:
        total += layer.refractive_index**2 * layer.thickness / math.sqrt(
            layer.refractive_index**2 - sine * sine)
    return total


def collimation_phase(stack: LayerStack, lens_diameter: float,
                      wavelength_nm: float = 397.0,
                      n_samples: int = 512) -> PhaseProfile:
    """Target collimation phase from the Fermat-stationary path per radius.

    For each sampled lens radius the Snell invariant sigma is root-solved so
    that the refracted ray from the source lands exactly there; the crossing
    is resolved far below the 1e-12 um contract.  A stack whose smallest
    index cannot carry the required ray raises ValueError (total internal
    reflection on the source side cannot occur for these stacks).
    """
    if lens_diameter <= 0:
        raise ValueError("lens diameter must be > 0")
    radii = np.linspace(0.0, lens_diameter / 2.0, n_samples)
    sine_max = stack.min_index
    reach_max = _lateral_reach(stack, sine_max * (1.0 - 1e-12))
    if radii[-1] >= reach_max:
        raise ValueError("lens radius unreachable: ray would need total "
                         "internal reflection inside the stack")
    k = TWO_PI / (wavelength_nm * 1e-3)          # rad per um
    opl0 = stack.axial_opl
    phase = np.zeros_like(radii)
    for i, r in enumerate(radii[1:], start=1):
        sine = optimize.brentq(lambda s: _lateral_reach(stack, s) - r,
                               0.0, sine_max * (1.0 - 1e-12),
                               xtol=1e-15, rtol=8.9e-16)
        phase[i] = k * (opl0 - _path_length(stack, sine))
    return PhaseProfile(wavelength_nm=wavelength_nm, lens_diameter=lens_diameter,
                        radii=radii, phase=phase)


def hyperbolic_phase(focal_length: float, lens_diameter: float,
                     wavelength_nm: float = 397.0,
                     n_samples: int = 512) -> PhaseProfile:
    """Ideal single-medium collimator phase -k (sqrt(r^2 + f^2) - f)."""
    radii = np.linspace(0.0, lens_diameter / 2.0, n_samples)
    k = TWO_PI / (wavelength_nm * 1e-3)
    phase = -k * (np.sqrt(radii**2 + focal_length**2) - focal_length)
    return PhaseProfile(wavelength_nm=wavelength_nm, lens_diameter=lens_diameter,
                        radii=radii, phase=phase)


def fit_even_zernike(profile: PhaseProfile, order: int = 4):
    """Least-squares fit of the phase to sum(c_k * (r/R)^(2k)), k = 1..order.

    The rotationally symmetric even-order Zernike terms span exactly these
    even radial powers (piston removed).  Returns (coefficients, max abs
    residual in rad).  Raises :class:`FitError` on a rank-deficient system.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    rho = profile.radii / (profile.lens_diameter / 2.0)
    design = np.column_stack([rho ** (2 * k) for k in range(1, order + 1)])
    coeffs, _, rank, _ = np.linalg.lstsq(design, profile.phase, rcond=None)
    if rank < order:
        raise FitError(f"design matrix rank {rank} < order {order}")
    residual = profile.phase - design @ coeffs
    return coeffs, float(np.max(np.abs(residual)))


def evaluate_even_powers(coeffs, radii, lens_diameter: float) -> np.ndarray:
    """Evaluate sum(c_k * (r/R)^(2k)) on ``radii`` (um)."""
    rho = np.asarray(radii, dtype=float) / (lens_diameter / 2.0)
    out = np.zeros_like(rho)
    for k, c in enumerate(coeffs, start=1):
        out += c * rho ** (2 * k)
    return out


@dataclass(frozen=True)
class PillarLibrary:
    """Phase delay and amplitude transmittance versus pillar diameter."""

    period_nm: float
    pillar_height_nm: float
    diameters_nm: np.ndarray      # ascending
    phase_rad: np.ndarray         # monotone increasing over the branch
    transmittance: np.ndarray     # amplitude, 0..1
    synthetic: bool = False

    def __post_init__(self):
        d = self.diameters_nm
        if np.any(np.diff(d) <= 0):
            raise LibraryError("library diameters must be strictly increasing")
        if np.any(np.diff(self.phase_rad) <= 0):
            raise LibraryError("library phase must be monotone in diameter")
        if np.any((self.transmittance < 0) | (self.transmittance > 1)):
            raise LibraryError("transmittance must lie in [0, 1]")

    @property
    def phase_span(self) -> float:
        return float(self.phase_rad[-1] - self.phase_rad[0])

    @property
    def quantization_step(self) -> float:
        return float(np.max(np.diff(self.phase_rad)))


def synthetic_library(n_entries: int = 67) -> PillarLibrary:
    """Smooth synthetic stand-in library (clearly labelled synthetic).

    Monotone phase spanning 2.2 pi over diameters 80..212 nm at the 250 nm
    period, amplitude transmittance oscillating inside 0.85..0.97.
    """
    d = np.linspace(80.0, 212.0, n_entries)
    t = (d - d[0]) / (d[-1] - d[0])
    phase = 2.2 * math.pi * t ** 1.3
    trans = 0.91 + 0.06 * np.sin(2.4 * math.pi * t + 0.3)
    trans = np.clip(trans, 0.85, 0.97)
    return PillarLibrary(period_nm=250.0, pillar_height_nm=700.0,
                         diameters_nm=d, phase_rad=phase,
                         transmittance=trans, synthetic=True)


def load_library(path, period_nm: float = 250.0,
                 pillar_height_nm: float = 700.0) -> PillarLibrary:
    """Read a pillar library CSV with header ``diameter_nm,phase_rad,transmittance``."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append((float(row["diameter_nm"]), float(row["phase_rad"]),
                         float(row["transmittance"])))
    if not rows:
        raise LibraryError(f"empty pillar library: {path}")
    rows.sort()
    d, p, t = (np.array(col) for col in zip(*rows))
    return PillarLibrary(period_nm=period_nm, pillar_height_nm=pillar_height_nm,
                         diameters_nm=d, phase_rad=p, transmittance=t)


def default_library_path():
    """Path of the packaged synthetic library CSV."""
    return resources.files("trapscope").joinpath("data/pillar_library_synthetic.csv")


def write_library_csv(library: PillarLibrary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["diameter_nm", "phase_rad", "transmittance"])
        for d, p, t in zip(library.diameters_nm, library.phase_rad,
                           library.transmittance):
            writer.writerow([f"{d:.6f}", f"{p:.9f}", f"{t:.6f}"])


@dataclass(frozen=True)
class FeatureMap:
    """Square lattice of pillar diameters realising a wrapped phase profile.

    ``diameters_nm`` is NaN outside the lens aperture.  Site (i, j) sits at
    lateral coordinates ``(coord(i), coord(j))`` with
    ``coord(i) = (i - (n-1)/2) * period``.
    """

    period_nm: float
    diameters_nm: np.ndarray             # 2-D, NaN outside aperture
    lens_diameter_um: float
    residual_rad: np.ndarray             # signed phase residual per site

    @property
    def n_sites(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.diameters_nm)))

    def site_coords_um(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.diameters_nm.shape[0]
        pitch = self.period_nm * 1e-3
        c = (np.arange(n) - (n - 1) / 2.0) * pitch
        return c, c


def _nearest_entries(target_wrapped: np.ndarray,
                     library: PillarLibrary) -> np.ndarray:
    """Index of the circularly nearest library phase per target (ties -> first)."""
    idx = np.empty(target_wrapped.shape, dtype=np.int64)
    lib = library.phase_rad
    chunk = 131072
    flat = target_wrapped.ravel()
    out = idx.ravel()
    for start in range(0, flat.size, chunk):
        t = flat[start:start + chunk, None]
        d = np.abs(lib[None, :] - t)
        d = np.minimum(d, np.abs(lib[None, :] - t - TWO_PI))
        d = np.minimum(d, np.abs(lib[None, :] - t + TWO_PI))
        out[start:start + chunk] = np.argmin(d, axis=1)
    return idx


def phase_to_featuremap(profile: PhaseProfile,
                        library: PillarLibrary) -> FeatureMap:
    """Compile the target phase to pillar diameters on the library lattice.

    Each lattice site inside the aperture takes the diameter whose library
    phase is circularly nearest the wrapped target (ties resolve to the
    smaller diameter).  Raises :class:`LibraryError` when the library spans
    less than 2 pi.
    """
    if library.phase_span < TWO_PI:
        raise LibraryError(
            f"library phase span {library.phase_span:.3f} rad < 2 pi")
    pitch = library.period_nm * 1e-3                     # um
    radius = profile.lens_diameter / 2.0
    n = 2 * int(math.floor(radius / pitch)) + 1
    c = (np.arange(n) - (n - 1) / 2.0) * pitch
    xg, zg = np.meshgrid(c, c, indexing="ij")
    r = np.hypot(xg, zg)
    inside = r <= radius

    target = np.mod(profile.phase_at(r[inside]), TWO_PI)
    idx = _nearest_entries(target, library)
    chosen = library.phase_rad[idx]
    resid = np.mod(chosen - target + math.pi, TWO_PI) - math.pi

    diameters = np.full(r.shape, np.nan)
    diameters[inside] = library.diameters_nm[idx]
    residual = np.full(r.shape, np.nan)
    residual[inside] = resid
    return FeatureMap(period_nm=library.period_nm, diameters_nm=diameters,
                      lens_diameter_um=profile.lens_diameter,
                      residual_rad=residual)


def featuremap_phase(feature_map: FeatureMap, library: PillarLibrary):
    """Per-site wrapped phase and amplitude mask realised by the map.

    Returns (phase, amplitude) arrays matching the map lattice; empty sites
    carry zero amplitude.  Unknown diameters raise :class:`LibraryError`.
    """
    d = feature_map.diameters_nm
    inside = ~np.isnan(d)
    idx = np.searchsorted(library.diameters_nm, d[inside])
    idx = np.clip(idx, 0, library.diameters_nm.size - 1)
    if not np.allclose(library.diameters_nm[idx], d[inside], atol=1e-9):
        raise LibraryError("feature map contains diameters absent from the library")
    phase = np.zeros(d.shape)
    amplitude = np.zeros(d.shape)
    phase[inside] = np.mod(library.phase_rad[idx], TWO_PI)
    amplitude[inside] = library.transmittance[idx]
    return phase, amplitude


def sample_featuremap(feature_map: FeatureMap, library: PillarLibrary,
                      x_um: np.ndarray, z_um: np.ndarray):
    """Nearest-site (phase, amplitude) resampled onto a wave-optics grid.

    ``x_um`` and ``z_um`` are broadcastable coordinate arrays centred on the
    lens axis; points outside the aperture get zero amplitude.
    """
    phase_sites, amp_sites = featuremap_phase(feature_map, library)
    pitch = feature_map.period_nm * 1e-3
    n = feature_map.diameters_nm.shape[0]
    i = np.rint(x_um / pitch + (n - 1) / 2.0).astype(np.int64)
    j = np.rint(z_um / pitch + (n - 1) / 2.0).astype(np.int64)
    valid = (i >= 0) & (i < n) & (j >= 0) & (j < n)
    i = np.clip(i, 0, n - 1)
    j = np.clip(j, 0, n - 1)
    phase = np.where(valid, phase_sites[i, j], 0.0)
    amplitude = np.where(valid, amp_sites[i, j], 0.0)
    return phase, amplitude


def mean_amplitude_sq(feature_map: FeatureMap, library: PillarLibrary) -> float:
    """Aperture-averaged power transmittance of the compiled map."""
    _, amp = featuremap_phase(feature_map, library)
    inside = ~np.isnan(feature_map.diameters_nm)
    return float(np.mean(amp[inside] ** 2))


def featuremap_to_rows(feature_map: FeatureMap):
    """Yield CSV rows ``ix, iz, x_nm, z_nm, diameter_nm`` for occupied sites."""
    d = feature_map.diameters_nm
    n = d.shape[0]
    period = feature_map.period_nm
    for i in range(n):
        for j in range(n):
            if not np.isnan(d[i, j]):
                yield (i, j, (i - (n - 1) / 2.0) * period,
                       (j - (n - 1) / 2.0) * period, d[i, j])
