"""Scalar diffraction of the integrated device: PSF and transmittance budget.

The point-spread function mirrors the backside measurement: a unit plane
wave hits the lens plane, picks up the lens phase/amplitude, crosses the
glass, the undercut opening, the electrode aperture, and the vacuum gap to
the nominal ion height, where intensity and FWHM metrics are reported.

Propagation is the exact angular-spectrum transfer function in a homogeneous
medium with a hard cutoff at the homogeneous-wave circle; silicon outside
the undercut and the electrode metal are perfectly opaque binary masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .collection import ApertureStack
from .lens import FeatureMap, LayerStack, PhaseProfile, PillarLibrary, sample_featuremap


class PropagationError(RuntimeError):
    """Sampling/aliasing contract violated; enlarge the grid or padding."""


class MeasurementError(RuntimeError):
    """Profile does not support the requested measurement."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform square simulation grid (spacing in um)."""

    spacing: float = 0.1
    n_samples: int = 4096
    border: int = 256            # absorbing frame width, samples
    dtype: str = "complex128"

    def __post_init__(self):
        if self.spacing <= 0 or self.n_samples < 16:
            raise ValueError("invalid grid")
        if 2 * self.border >= self.n_samples:
            raise ValueError("absorbing border swallows the whole grid")

    def coords(self) -> np.ndarray:
        """Sample coordinates, symmetric about 0 (half-pixel offset, even n)."""
        n = self.n_samples
        return (np.arange(n) - (n - 1) / 2.0) * self.spacing

    def doubled(self) -> "GridSpec":
        """Same physical extent at half the spacing (convergence checks)."""
        return GridSpec(spacing=self.spacing / 2.0, n_samples=2 * self.n_samples,
                        border=2 * self.border, dtype="complex64")


@dataclass(frozen=True)
class Field2D:
    """Sampled complex field; first axis x, second axis z."""

    values: np.ndarray
    spacing: float               # um
    wavelength_nm: float

    def __post_init__(self):
        # Nyquist for the steepest homogeneous wave (NA upper bound 1).
        if self.spacing > self.wavelength_nm * 1e-3 / 2.0:
            raise ValueError("grid spacing violates the lambda/2 sampling bound")

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))


@dataclass(frozen=True)
class PsfMetrics:
    fwhm_x: float                # um
    fwhm_z: float                # um
    peak_x: float                # um
    peak_z: float                # um
    plane_height: float          # um above the electrode plane
    peak_intensity: float
    encircled_fraction: float    # power within the first minima box

    def as_dict(self) -> dict:
        return {
            "fwhm_x_um": self.fwhm_x,
            "fwhm_z_um": self.fwhm_z,
            "peak_x_um": self.peak_x,
            "peak_z_um": self.peak_z,
            "plane_height_um": self.plane_height,
            "peak_intensity": self.peak_intensity,
            "encircled_fraction": self.encircled_fraction,
        }


def _real_dtype(complex_dtype) -> np.dtype:
    return np.dtype(np.float32 if np.dtype(complex_dtype) == np.complex64
                    else np.float64)


def _border_energy_fraction(values: np.ndarray, frame: int = 2) -> float:
    total = float(np.sum(np.abs(values) ** 2))
    if total == 0.0:
        return 0.0
    inner = float(np.sum(np.abs(values[frame:-frame, frame:-frame]) ** 2))
    return (total - inner) / total


def angular_spectrum_propagate(field: Field2D, distance: float,
                               index: float = 1.0) -> Field2D:
    """Exact transfer-function propagation through a homogeneous medium.

    Evanescent components are cut off at the homogeneous-wave circle, so the
    power carried by propagating components is conserved exactly (up to
    floating point).  Raises :class:`PropagationError` when more than 1e-3
    of the field energy sits within 2 samples of the border (aliasing risk).
    """
    if _border_energy_fraction(field.values) > 1e-3:
        raise PropagationError(
            "field energy touches the grid border; enlarge the grid or "
            "increase the absorbing padding")
    wavelength_um = field.wavelength_nm * 1e-3
    n = field.values.shape[0]
    real_dtype = _real_dtype(field.values.dtype)
    f = np.fft.fftfreq(n, d=field.spacing).astype(real_dtype)
    cutoff_sq = real_dtype.type((index / wavelength_um) ** 2)
    arg = cutoff_sq - f[:, None] ** 2 - f[None, :] ** 2
    propagating = arg > 0.0
    phase = real_dtype.type(2.0 * math.pi * distance) * np.sqrt(arg[propagating])
    transfer = np.zeros((n, n), dtype=field.values.dtype)
    transfer.real[propagating] = np.cos(phase)
    transfer.imag[propagating] = np.sin(phase)
    spectrum = _fft.fft2(field.values, workers=1)
    spectrum *= transfer
    out = _fft.ifft2(spectrum, workers=1, overwrite_x=True)
    return Field2D(values=out, spacing=field.spacing,
                   wavelength_nm=field.wavelength_nm)


def fwhm(coords: np.ndarray, profile: np.ndarray) -> float:
    """Full width at half maximum by linear interpolation around the peak.

    The profile must have a unique global maximum away from its endpoints;
    a missing half-maximum crossing on either side raises
    :class:`MeasurementError`.
    """
    profile = np.asarray(profile, dtype=float)
    coords = np.asarray(coords, dtype=float)
    i_peak = int(np.argmax(profile))
    if i_peak in (0, profile.size - 1):
        raise MeasurementError("profile peak sits on an endpoint")
    half = profile[i_peak] / 2.0

    def crossing(indices):
        for i in indices:
            if profile[i] <= half:
                f0, f1 = profile[i], profile[i + 1] if i < i_peak else profile[i - 1]
                c0 = coords[i]
                c1 = coords[i + 1] if i < i_peak else coords[i - 1]
                return c0 + (half - f0) * (c1 - c0) / (f1 - f0)
        raise MeasurementError("no half-maximum crossing on one side of the peak")

    left = crossing(range(i_peak - 1, -1, -1))
    right = crossing(range(i_peak + 1, profile.size))
    return float(abs(right - left))


def _first_minimum(profile: np.ndarray, start: int, step: int) -> int:
    i = start
    while 0 < i + step < profile.size - 1:
        if profile[i + step] > profile[i]:
            return i
        i += step
    return i


def _rect_mask(xc, zc, half_x, half_z, center=(0.0, 0.0)):
    mx = np.abs(xc - center[0]) <= half_x
    mz = np.abs(zc - center[1]) <= half_z
    return mx[:, None] & mz[None, :]


def _absorber(n: int, border: int, dtype) -> np.ndarray:
    ramp = np.ones(n, dtype=dtype)
    t = np.linspace(0.0, 1.0, border, dtype=dtype)
    ramp[:border] = np.sin(0.5 * math.pi * t) ** 2
    ramp[n - border:] = ramp[:border][::-1]
    return ramp


def lens_field(design, grid: GridSpec, wavelength_nm: float,
               library: PillarLibrary | None = None) -> Field2D:
    """Unit plane wave immediately after the lens plane.

    ``design`` is a :class:`PhaseProfile` (smooth phase, unit amplitude) or a
    :class:`FeatureMap` (compiled pillar phases and transmittances; requires
    ``library``).
    """
    c = grid.coords()
    dtype = np.dtype(grid.dtype)
    if isinstance(design, PhaseProfile):
        r = np.hypot(c[:, None], c[None, :])
        inside = r <= design.lens_diameter / 2.0
        phase = design.phase_at(r[inside])
        amplitude = None
    elif isinstance(design, FeatureMap):
        if library is None:
            raise ValueError("a FeatureMap design needs its pillar library")
        xg, zg = np.meshgrid(c, c, indexing="ij")
        site_phase, site_amp = sample_featuremap(design, library, xg, zg)
        inside = site_amp > 0.0
        phase = site_phase[inside]
        amplitude = site_amp[inside]
    else:
        raise TypeError(f"unsupported lens design {type(design).__name__}")
    values = np.zeros((c.size, c.size), dtype=dtype)
    values.real[inside] = np.cos(phase)
    values.imag[inside] = np.sin(phase)
    if amplitude is not None:
        values[inside] *= amplitude
    return Field2D(values=values, spacing=grid.spacing,
                   wavelength_nm=wavelength_nm)


def simulate_psf(design, stack: LayerStack, openings: ApertureStack,
                 grid: GridSpec | None = None,
                 library: PillarLibrary | None = None,
                 wavelength_nm: float = 397.0):
    """Backside-illumination PSF at the nominal source height.

    Pipeline: lens phase/amplitude -> propagate through the glass layer ->
    undercut opening mask -> propagate through the substrate depth ->
    electrode aperture mask -> propagate to the source height -> intensity.

    Returns (PsfMetrics, focal-plane Field2D).
    """
    grid = grid or GridSpec()
    glass = stack.layers[-1]
    aperture = openings.openings[0]
    undercut = openings.openings[-1]
    vacuum_gap = undercut.depth
    height = openings.source_height

    field = lens_field(design, grid, wavelength_nm, library)
    absorber = _absorber(grid.n_samples, grid.border, _real_dtype(grid.dtype))
    c = grid.coords()

    def absorb(f: Field2D) -> Field2D:
        vals = f.values * absorber[:, None]
        vals *= absorber[None, :]
        return Field2D(vals, f.spacing, f.wavelength_nm)

    field = angular_spectrum_propagate(field, glass.thickness,
                                       glass.refractive_index)
    field = absorb(field)
    mask = _rect_mask(c, c, undercut.half_width, undercut.half_length,
                      (undercut.center_x, undercut.center_z))
    field = Field2D(field.values * mask, field.spacing, field.wavelength_nm)
    field = angular_spectrum_propagate(field, vacuum_gap, 1.0)
    field = absorb(field)
    mask = _rect_mask(c, c, aperture.half_width, aperture.half_length,
                      (aperture.center_x, aperture.center_z))
    field = Field2D(field.values * mask, field.spacing, field.wavelength_nm)
    field = angular_spectrum_propagate(field, height, 1.0)

    intensity = np.abs(field.values) ** 2
    metrics = psf_metrics(c, intensity, plane_height=height)
    return metrics, field


def psf_metrics(coords: np.ndarray, intensity: np.ndarray,
                plane_height: float = 0.0) -> PsfMetrics:
    """FWHM along both axes through the peak plus the first-minima power box."""
    ix, iz = np.unravel_index(int(np.argmax(intensity)), intensity.shape)
    cut_x = intensity[:, iz]
    cut_z = intensity[ix, :]
    lo_x = _first_minimum(cut_x, ix, -1)
    hi_x = _first_minimum(cut_x, ix, +1)
    lo_z = _first_minimum(cut_z, iz, -1)
    hi_z = _first_minimum(cut_z, iz, +1)
    box = intensity[lo_x:hi_x + 1, lo_z:hi_z + 1]
    total = float(np.sum(intensity))
    return PsfMetrics(
        fwhm_x=fwhm(coords, cut_x),
        fwhm_z=fwhm(coords, cut_z),
        peak_x=float(coords[ix]),
        peak_z=float(coords[iz]),
        plane_height=plane_height,
        peak_intensity=float(intensity[ix, iz]),
        encircled_fraction=float(np.sum(box)) / total if total > 0 else 0.0,
    )


def fresnel_transmission(n1: float, n2: float) -> float:
    """Normal-incidence Fresnel power transmission across one index step."""
    r = (n1 - n2) / (n1 + n2)
    return 1.0 - r * r


def transmittance_budget(stack: LayerStack, metalens_transmittance: float) -> float:
    """Total power transmission: internal Fresnel steps times the lens term.

    ``metalens_transmittance`` is the aperture-averaged power transmittance
    of the metalens (it owns the glass exit face it is patterned on).
    """
    total = metalens_transmittance
    for a, b in zip(stack.layers, stack.layers[1:]):
        total *= fresnel_transmission(a.refractive_index, b.refractive_index)
    return total


def calibrate_metalens_transmittance(stack: LayerStack, total: float) -> float:
    """Metalens power transmittance that makes the whole budget equal ``total``."""
    return total / transmittance_budget(stack, 1.0)
