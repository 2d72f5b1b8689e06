"""Solid-angle collection efficiency through stacked rectangular openings.

A point source at height h above the electrode plane emits isotropically;
light must pass every rectangular opening of the stack (the electrode
aperture at depth 0, the undercut opening at the substrate depth, ...).
Each opening maps to an axis-aligned rectangle in direction-tangent space,
so the collected solid angle is the solid angle of the intersection box,

    Omega = integral over box of dtx dtz / (1 + tx^2 + tz^2)^(3/2),

evaluated three independent ways: closed form (corner arctans), 2-D adaptive
quadrature, and Monte Carlo ray counting.  Efficiency is Omega / 4 pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .constants import DEFAULT_SEED
from .rng import chunk_sizes, philox


class CalibrationError(RuntimeError):
    """Requested efficiency target lies outside the achievable bracket."""


@dataclass(frozen=True)
class RectOpening:
    """Rectangular opening at ``depth`` um below the electrode plane."""

    depth: float
    half_width: float      # x half-extent, um
    half_length: float     # z half-extent, um
    center_x: float = 0.0
    center_z: float = 0.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("opening depth must be >= 0")
        if self.half_width <= 0 or self.half_length <= 0:
            raise ValueError("opening half-extents must be > 0")


@dataclass(frozen=True)
class ApertureStack:
    """Ordered openings (strictly increasing depth) below a source at height h."""

    openings: tuple[RectOpening, ...]
    source_height: float
    substrate_thickness: float = 275.0

    def __post_init__(self):
        if self.source_height <= 0:
            raise ValueError("source height must be > 0")
        if not self.openings:
            raise ValueError("stack needs at least one opening")
        depths = [o.depth for o in self.openings]
        if depths[0] != 0.0:
            raise ValueError("the first opening (electrode aperture) must sit at depth 0")
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("opening depths must be strictly increasing")

    def shifted(self, dx: float, dz: float) -> "ApertureStack":
        """Stack with every opening centre translated by (dx, dz)."""
        moved = tuple(replace(o, center_x=o.center_x + dx, center_z=o.center_z + dz)
                      for o in self.openings)
        return replace(self, openings=moved)


@dataclass(frozen=True)
class SolidAngleResult:
    omega: float        # sr
    efficiency: float   # fraction of 4 pi
    stderr: float = 0.0

    @property
    def efficiency_pct(self) -> float:
        return 100.0 * self.efficiency


def _quadrant_angle(tx, tz):
    """Solid angle of the tangent-space quadrant box [0,tx] x [0,tz]; odd in each arg."""
    return np.arctan(tx * tz / np.sqrt(1.0 + tx * tx + tz * tz))


def solid_angle_box(tx_lo, tx_hi, tz_lo, tz_hi) -> float:
    """Closed-form solid angle of a tangent-space box (corner decomposition)."""
    return float(_quadrant_angle(tx_hi, tz_hi) - _quadrant_angle(tx_lo, tz_hi)
                 - _quadrant_angle(tx_hi, tz_lo) + _quadrant_angle(tx_lo, tz_lo))


def solid_angle_onaxis(width: float, length: float, height: float) -> SolidAngleResult:
    """Solid angle of a centred width x length rectangle seen from ``height`` above.

    Closed form: Omega = 4 atan(tx tz / sqrt(1 + tx^2 + tz^2)) with
    tx = width / 2h, tz = length / 2h.
    """
    if width <= 0 or length <= 0 or height <= 0:
        raise ValueError("width, length and height must all be > 0")
    tx = width / (2.0 * height)
    tz = length / (2.0 * height)
    omega = 4.0 * float(_quadrant_angle(tx, tz))
    return SolidAngleResult(omega=omega, efficiency=omega / (4.0 * math.pi))


def tangent_box(stack: ApertureStack, source=(0.0, 0.0)):
    """Intersection of the openings' angular rectangles in tangent space.

    Returns (tx_lo, tx_hi, tz_lo, tz_hi), or None when the intersection is
    empty.  Tangents are lateral displacement per unit drop below the source.
    """
    sx, sz = source
    tx_lo = tz_lo = -math.inf
    tx_hi = tz_hi = math.inf
    for o in stack.openings:
        drop = stack.source_height + o.depth
        tx_lo = max(tx_lo, (o.center_x - o.half_width - sx) / drop)
        tx_hi = min(tx_hi, (o.center_x + o.half_width - sx) / drop)
        tz_lo = max(tz_lo, (o.center_z - o.half_length - sz) / drop)
        tz_hi = min(tz_hi, (o.center_z + o.half_length - sz) / drop)
    if tx_lo >= tx_hi or tz_lo >= tz_hi:
        return None
    return tx_lo, tx_hi, tz_lo, tz_hi


def solid_angle_stack(stack: ApertureStack, source=(0.0, 0.0),
                      epsabs: float = 1e-12) -> SolidAngleResult:
    """Deterministic collected solid angle by 2-D adaptive quadrature.

    Integrates the solid-angle density over the tangent-space intersection
    box; an empty intersection yields zero efficiency (not an error).  The
    quadrature tolerance is far tighter than the 1e-8 sr contract.
    """
    box = tangent_box(stack, source)
    if box is None:
        return SolidAngleResult(omega=0.0, efficiency=0.0)
    tx_lo, tx_hi, tz_lo, tz_hi = box
    omega, _ = integrate.dblquad(
        lambda tz, tx: (1.0 + tx * tx + tz * tz) ** -1.5,
        tx_lo, tx_hi, tz_lo, tz_hi, epsabs=epsabs, epsrel=1e-12)
    return SolidAngleResult(omega=omega, efficiency=omega / (4.0 * math.pi))


def passes_stack(stack: ApertureStack, tx, tz, source=(0.0, 0.0)):
    """Vectorised pass/block test for downward tangents (tx, tz)."""
    sx, sz = source
    ok = np.ones(np.shape(tx), dtype=bool)
    for o in stack.openings:
        drop = stack.source_height + o.depth
        ok &= np.abs(sx + tx * drop - o.center_x) <= o.half_width
        ok &= np.abs(sz + tz * drop - o.center_z) <= o.half_length
    return ok


def mc_collection(stack: ApertureStack, source=(0.0, 0.0),
                  n_samples: int = 10_000_000,
                  seed: int = DEFAULT_SEED) -> SolidAngleResult:
    """Monte Carlo oracle: isotropic directions, count rays inside every opening.

    Deterministic for a given (seed, n_samples); the stream is split into
    fixed chunks keyed by chunk index (Philox 4x64), so the result does not
    depend on worker count if chunks are farmed out.
    """
    if n_samples < 1_000:
        raise ValueError("n_samples must be >= 1000")
    hits = 0
    for chunk, m in chunk_sizes(n_samples):
        u = philox(seed, 0, chunk).random((2, m))
        c = 1.0 - 2.0 * u[0]              # vertical direction cosine, down > 0
        phi = 2.0 * math.pi * u[1]
        down = c > 0.0
        s = np.sqrt(1.0 - c[down] ** 2) / c[down]
        tx = s * np.cos(phi[down])
        tz = s * np.sin(phi[down])
        hits += int(np.count_nonzero(passes_stack(stack, tx, tz, source)))
    p = hits / n_samples
    stderr = math.sqrt(p * (1.0 - p) / n_samples)
    return SolidAngleResult(omega=4.0 * math.pi * p, efficiency=p, stderr=stderr)


def calibrate_undercut(stack: ApertureStack, target_efficiency: float,
                       vary: str = "half_width", opening_index: int = -1,
                       tol: float = 1e-6, max_iter: int = 200) -> RectOpening:
    """Bisect one undercut dimension until the stack hits the target efficiency.

    ``vary`` selects the free parameter: ``half_width``, ``half_length`` or
    ``both`` (fixed aspect ratio).  The bracket runs from the top aperture's
    own footprint (fully recessed undercut) up to an opening so large it no
    longer occludes; a target outside that range raises
    :class:`CalibrationError` with the bracket attached to the message.
    """
    if vary not in ("half_width", "half_length", "both"):
        raise ValueError(f"unknown calibration parameter {vary!r}")
    idx = opening_index % len(stack.openings)
    if idx == 0:
        raise ValueError("cannot calibrate the electrode aperture itself")
    aperture = stack.openings[0]
    undercut = stack.openings[idx]

    def with_scale(s: float) -> ApertureStack:
        if vary == "half_width":
            new = replace(undercut, half_width=s * aperture.half_width)
        elif vary == "half_length":
            new = replace(undercut, half_length=s * aperture.half_length)
        else:
            new = replace(undercut, half_width=s * aperture.half_width,
                          half_length=s * aperture.half_length)
        openings = list(stack.openings)
        openings[idx] = new
        return replace(stack, openings=tuple(openings))

    def eff(s: float) -> float:
        return solid_angle_stack(with_scale(s)).efficiency

    # Upper bound: scale at which the undercut clears the aperture's
    # projected cone entirely (no further gain possible beyond it).
    drop = stack.source_height + undercut.depth
    s_hi = 1.05 * drop / stack.source_height
    lo, hi = 1.0, s_hi
    f_lo, f_hi = eff(lo), eff(hi)
    if not (f_lo - tol <= target_efficiency <= f_hi + tol):
        raise CalibrationError(
            f"target efficiency {target_efficiency:.6%} outside achievable "
            f"bracket [{f_lo:.6%}, {f_hi:.6%}]")
    if abs(f_lo - target_efficiency) <= tol:
        return with_scale(lo).openings[idx]
    if abs(f_hi - target_efficiency) <= tol:
        return with_scale(hi).openings[idx]
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = eff(mid)
        if abs(f_mid - target_efficiency) < tol:
            return with_scale(mid).openings[idx]
        if f_mid < target_efficiency:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("bisection failed to reach the requested tolerance")


def projected_half_length(aperture_half_length: float, source_height: float,
                          depth: float) -> float:
    """z half-extent of the aperture's marginal-ray cone at ``depth``."""
    return aperture_half_length * (source_height + depth) / source_height


def make_device_stack(aperture_width: float, aperture_length: float,
                      source_height: float, *,
                      undercut_half_width: float | None = None,
                      occlusion_x: float | None = None,
                      undercut_depth: float = 275.0) -> ApertureStack:
    """Aperture + undercut stack with the undercut tracking the aperture cone.

    The undercut z-extent follows the aperture's projected marginal rays (it
    never clips along the trap axis); its x-extent is either given directly
    (calibrated device) or scaled to a fixed fraction ``occlusion_x`` of the
    projected aperture half-width (geometry sweeps).
    """
    a = aperture_width / 2.0
    b = aperture_length / 2.0
    proj = (source_height + undercut_depth) / source_height
    if undercut_half_width is None:
        if occlusion_x is None:
            raise ValueError("give either undercut_half_width or occlusion_x")
        undercut_half_width = occlusion_x * a * proj
    return ApertureStack(
        openings=(RectOpening(0.0, a, b),
                  RectOpening(undercut_depth, undercut_half_width, b * proj)),
        source_height=source_height,
        substrate_thickness=undercut_depth)


def undercut_occlusion(stack: ApertureStack) -> float:
    """Ratio of the undercut's angular half-width to the aperture's (x axis)."""
    aperture, undercut = stack.openings[0], stack.openings[-1]
    tx_a = aperture.half_width / stack.source_height
    tx_u = undercut.half_width / (stack.source_height + undercut.depth)
    return tx_u / tx_a


def sweep_collection(layout, drive, ion, parameter: str, values, *,
                     design_height: float, occlusion_x: float,
                     undercut_half_width: float,
                     undercut_depth: float = 275.0,
                     trap_rows: list[dict] | None = None) -> list[dict]:
    """Collection efficiency across aperture-width or aperture-length values.

    Width sweeps stay coupled to the trap model: the source height is
    re-solved per point and the undercut scales with the projected aperture
    at the calibrated occlusion ratio (``trap_rows`` may pass in an already
    solved sweep).  Length sweeps leave the electrode cross-section (hence
    the rf null) untouched, so they run at the design height with the
    calibrated undercut width held fixed.
    """
    from . import trap as trap_mod

    if parameter not in ("aperture_width", "aperture_length"):
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    values = list(values)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be strictly increasing")

    rows = []
    if parameter == "aperture_width":
        if trap_rows is None:
            trap_rows = trap_mod.sweep_trap(layout, drive, ion, parameter, values)
        for trow in trap_rows:
            stack = make_device_stack(trow["value_um"], layout.aperture_length,
                                      trow["height_um"], occlusion_x=occlusion_x,
                                      undercut_depth=undercut_depth)
            eff = solid_angle_stack(stack)
            rows.append({"value_um": trow["value_um"],
                         "height_um": trow["height_um"],
                         "efficiency_pct": eff.efficiency_pct})
    else:
        for value in values:
            stack = make_device_stack(layout.aperture_width, float(value),
                                      design_height,
                                      undercut_half_width=undercut_half_width,
                                      undercut_depth=undercut_depth)
            eff = solid_angle_stack(stack)
            rows.append({"value_um": float(value),
                         "height_um": design_height,
                         "efficiency_pct": eff.efficiency_pct})
    return rows
