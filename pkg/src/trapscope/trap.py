"""Surface-electrode rf pseudopotential from an analytic gapless-plane model.

The electrode plane (y = 0) is treated as a perfect conductor; a rectangular
patch held at voltage V in an otherwise grounded plane produces the classic
solid-angle potential

    phi(r) = V * Omega(r) / (2 pi),

where Omega is the solid angle the patch subtends at the field point.  Both
phi and its gradient are closed-form, so rf null location, trap height and
radial secular frequencies follow without any mesh.  Rf rails sit at their
physical positions and widths with the inter-electrode gaps absorbed into the
grounded plane, and the aperture cut into the ground electrode is itself
treated as grounded conductor, so only the two rf rails contribute to the rf
field.

Coordinates are micrometres: x lateral (transverse), z axial (along the
rails), y height above the plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import ATOMIC_MASS, ELEMENTARY_CHARGE, UM


class SolverError(RuntimeError):
    """Newton iteration failed; carries the last iterate in ``last_point``."""

    def __init__(self, message, last_point=None):
        super().__init__(message)
        self.last_point = last_point


@dataclass(frozen=True)
class ElectrodeRect:
    """Rectangular electrode patch [x0, x1] x [z0, z1] in the y = 0 plane (um)."""

    x0: float
    x1: float
    z0: float
    z1: float
    role: str = "ground"          # "rf" or "ground"
    amplitude: float = 0.0        # rf voltage amplitude when role == "rf" (V)

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.z0 < self.z1):
            raise ValueError("electrode rectangle must have x0 < x1 and z0 < z1")
        if self.role not in ("rf", "ground"):
            raise ValueError(f"unknown electrode role {self.role!r}")


@dataclass(frozen=True)
class TrapLayout:
    """Five-wire surface-trap cross-section with an aperture in the centre ground.

    The ground electrode width follows
    ``max(ground_baseline, aperture_width + 2 * ground_margin)`` so that the
    nominal 40 um aperture keeps the 65 um baseline while wider apertures push
    the rf rails apart.
    """

    rf_width_left: float = 65.0
    rf_width_right: float = 80.0
    gap: float = 20.0
    ground_baseline: float = 65.0
    aperture_width: float = 40.0
    aperture_length: float = 100.0
    ground_margin: float = 12.5
    electrode_length: float = 2000.0

    def __post_init__(self):
        for name in ("rf_width_left", "rf_width_right", "gap", "ground_baseline",
                     "ground_margin", "electrode_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.aperture_width < 0 or self.aperture_length < 0:
            raise ValueError("aperture dimensions must be >= 0")
        if self.aperture_length >= self.electrode_length:
            raise ValueError("aperture_length must be smaller than electrode_length")

    @property
    def ground_width(self) -> float:
        return max(self.ground_baseline,
                   self.aperture_width + 2.0 * self.ground_margin)

    def electrodes(self, rf_amplitude: float = 1.0) -> list[ElectrodeRect]:
        """All electrode patches; the gap strips stay part of the grounded plane."""
        rail = self.ground_width / 2.0 + self.gap      # rf rail inner edge
        zl = self.electrode_length / 2.0
        rects = [
            ElectrodeRect(-rail - self.rf_width_left, -rail, -zl, zl,
                          role="rf", amplitude=rf_amplitude),
            ElectrodeRect(rail, rail + self.rf_width_right, -zl, zl,
                          role="rf", amplitude=rf_amplitude),
        ]
        rects.extend(self._ground_frame(self.ground_width / 2.0, zl))
        return rects

    def _ground_frame(self, gx: float, zl: float) -> list[ElectrodeRect]:
        # Centre ground with the aperture cut out; zero potential, kept for
        # geometric bookkeeping (and any non-rf analyses built on top).
        w2 = self.aperture_width / 2.0
        l2 = self.aperture_length / 2.0
        if w2 == 0.0 or l2 == 0.0:
            return [ElectrodeRect(-gx, gx, -zl, zl)]
        return [
            ElectrodeRect(-gx, -w2, -zl, zl),
            ElectrodeRect(w2, gx, -zl, zl),
            ElectrodeRect(-w2, w2, -zl, -l2),
            ElectrodeRect(-w2, w2, l2, zl),
        ]

    def rf_electrodes(self, rf_amplitude: float) -> list[ElectrodeRect]:
        return [r for r in self.electrodes(rf_amplitude) if r.role == "rf"]


@dataclass(frozen=True)
class RfDrive:
    """Rf drive: voltage amplitude (V) and angular frequency (rad/s)."""

    voltage: float = 50.0
    omega_rf: float = 2.0 * math.pi * 20e6

    def __post_init__(self):
        if self.voltage <= 0 or self.omega_rf <= 0:
            raise ValueError("drive voltage and frequency must be > 0")


@dataclass(frozen=True)
class IonSpecies:
    """Ion mass in atomic mass units and charge in elementary charges."""

    mass: float = 39.9626      # 40Ca+
    charge: int = 1

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be > 0")
        if self.charge < 1:
            raise ValueError("charge must be >= 1")

    @property
    def mass_kg(self) -> float:
        return self.mass * ATOMIC_MASS

    @property
    def charge_c(self) -> float:
        return self.charge * ELEMENTARY_CHARGE


@dataclass(frozen=True)
class TrapSolution:
    """Rf null location and radial confinement at that point."""

    null_x: float              # um
    height: float              # um
    omega_x: float = float("nan")   # radial secular frequency, MHz
    omega_y: float = float("nan")   # radial secular frequency, MHz
    hessian: np.ndarray = field(default=None, repr=False)  # 2x2, J/m^2
    iterations: int = 0


def rect_potential(rect: ElectrodeRect, point) -> tuple[float, np.ndarray]:
    """Potential (V) and gradient (V/m) of one held rectangle in a grounded plane.

    Parameters
    ----------
    rect : ElectrodeRect
    point : (3,) array_like
        Field point (x, y, z) in micrometres, strictly above the plane (y > 0).

    Returns
    -------
    potential : float
    gradient : ndarray, shape (3,)
        (d/dx, d/dy, d/dz) of the potential, in V/m.
    """
    x, y, z = np.asarray(point, dtype=float)
    if y <= 0.0:
        raise ValueError("field point must lie strictly above the electrode plane")
    phi, grad = _patch_fields(rect, np.array([x]), np.array([y]), np.array([z]))
    return float(phi[0]), grad[:, 0] / UM


def _patch_fields(rect: ElectrodeRect, x, y, z):
    """Vectorised potential (V) and gradient (V/um) of one patch at unit scale."""
    pot = np.zeros_like(x)
    grad = np.zeros((3,) + x.shape)
    for i, xe in enumerate((rect.x0, rect.x1)):
        for j, ze in enumerate((rect.z0, rect.z1)):
            s = 1.0 if i == j else -1.0
            u = xe - x
            v = ze - z
            r = np.sqrt(u * u + v * v + y * y)
            uy = u * u + y * y
            vy = v * v + y * y
            pot += s * np.arctan2(u * v, y * r)
            grad[0] += s * (-v * y / (r * uy))
            grad[2] += s * (-u * y / (r * vy))
            grad[1] += s * (-u * v * (r * r + y * y) / (r * uy * vy))
    scale = rect.amplitude / (2.0 * math.pi)
    return scale * pot, scale * grad


def rf_field(layout: TrapLayout, drive: RfDrive, x, y, z):
    """Rf electric field E = -grad(phi) in V/m at micrometre points (vectorised)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(y <= 0.0):
        raise ValueError("field points must lie strictly above the electrode plane")
    grad = np.zeros((3,) + np.broadcast(x, y, z).shape)
    xb, yb, zb = np.broadcast_arrays(x, y, z)
    for rect in layout.rf_electrodes(drive.voltage):
        grad += _patch_fields(rect, xb, yb, zb)[1]
    return -grad / UM


def rf_potential(layout: TrapLayout, drive: RfDrive, x, y, z):
    """Rf-phase electrostatic potential in volts at micrometre points."""
    x, y, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float),
                                  np.asarray(z, float))
    pot = np.zeros_like(x)
    for rect in layout.rf_electrodes(drive.voltage):
        pot += _patch_fields(rect, x, y, z)[0]
    return pot


def _radial_field(layout, drive, p):
    """(Ex, Ey) in V/m at transverse point p = (x, y), axial centre z = 0."""
    e = rf_field(layout, drive, p[0], p[1], 0.0)
    return np.array([e[0], e[1]])


def _radial_jacobian(layout, drive, p, step=0.05):
    """d(Ex,Ey)/d(x,y) at z = 0 by central differences of the analytic field.

    Units are (V/m) per micrometre so that Newton steps come out in um;
    divide by UM for the SI Jacobian.
    """
    jac = np.empty((2, 2))
    for k in range(2):
        dp = np.zeros(2)
        dp[k] = step
        jac[:, k] = (_radial_field(layout, drive, p + dp)
                     - _radial_field(layout, drive, p - dp)) / (2.0 * step)
    return jac


def solve_rf_null(layout: TrapLayout, drive: RfDrive,
                  guess=None, tol_rel=1e-10, max_iter=100) -> TrapSolution:
    """Locate the rf null in the transverse plane by damped 2-D Newton iteration.

    Solves E(x, y) = 0 at the axial centre.  Convergence is declared when the
    gradient norm of |E|^2 falls below ``tol_rel`` of its initial value.

    Raises
    ------
    SolverError
        If the iteration does not converge; the last iterate is attached.
    """
    if guess is None:
        a = layout.ground_width / 2.0 + layout.gap / 2.0
        b = a + (layout.rf_width_left + layout.rf_width_right) / 2.0 + layout.gap
        guess = (0.0, math.sqrt(a * b))
    p = np.asarray(guess, dtype=float)

    def grad_norm(pt, e=None, jac=None):
        e = _radial_field(layout, drive, pt) if e is None else e
        jac = _radial_jacobian(layout, drive, pt) if jac is None else jac
        return float(np.linalg.norm(2.0 * jac.T @ e))

    e = _radial_field(layout, drive, p)
    jac = _radial_jacobian(layout, drive, p)
    g0 = grad_norm(p, e, jac)
    if g0 == 0.0:
        return TrapSolution(null_x=p[0], height=p[1], iterations=0)

    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(jac, -e)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular Jacobian in rf-null Newton iteration",
                              last_point=tuple(p)) from exc
        # Damp (factor 0.5) until |E|^2 decreases and the iterate stays y > 0.
        scale = 1.0
        f_old = float(e @ e)
        for _ in range(60):
            q = p + scale * step
            if q[1] > 0.0:
                e_new = _radial_field(layout, drive, q)
                if float(e_new @ e_new) < f_old:
                    break
            scale *= 0.5
        else:
            raise SolverError("rf-null Newton iteration stalled",
                              last_point=tuple(p))
        p = q
        e = e_new
        jac = _radial_jacobian(layout, drive, p)
        if grad_norm(p, e, jac) < tol_rel * g0:
            return TrapSolution(null_x=float(p[0]), height=float(p[1]),
                                iterations=it)
    raise SolverError(f"rf-null Newton iteration did not converge in "
                      f"{max_iter} steps", last_point=tuple(p))


def grid_search_null(layout: TrapLayout, drive: RfDrive,
                     window=300.0, pitch=0.25) -> tuple[float, float]:
    """Brute-force |E|^2 minimiser on a regular grid (independent oracle).

    Scans x in [-window/2, window/2], y in (0, window] at the given pitch and
    returns the (x, y) grid point with the smallest field magnitude.
    """
    xs = np.arange(-window / 2.0, window / 2.0 + pitch / 2.0, pitch)
    ys = np.arange(pitch, window + pitch / 2.0, pitch)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    e = rf_field(layout, drive, xg, yg, np.zeros_like(xg))
    e2 = np.einsum("k...,k...->...", e, e)
    i, j = np.unravel_index(np.argmin(e2), e2.shape)
    return float(xs[i]), float(ys[j])


def pseudopotential_hessian(layout: TrapLayout, drive: RfDrive, ion: IonSpecies,
                            null: TrapSolution) -> np.ndarray:
    """Radial 2x2 Hessian of the pseudopotential at the null, in J/m^2.

    With E = 0 at the null the Hessian of |E|^2 reduces exactly to 2 J^T J,
    J being the field Jacobian; the z rows/columns decouple at the axial
    centre by symmetry.
    """
    jac = _radial_jacobian(layout, drive,
                           np.array([null.null_x, null.height])) / UM
    q = ion.charge_c
    m = ion.mass_kg
    coeff = q * q / (4.0 * m * drive.omega_rf ** 2)
    return coeff * 2.0 * (jac.T @ jac)


def radial_frequencies(layout: TrapLayout, drive: RfDrive, ion: IonSpecies,
                       null: TrapSolution | None = None) -> TrapSolution:
    """Radial secular frequencies (MHz) from the pseudopotential Hessian.

    Returns a completed :class:`TrapSolution`; ``omega_x`` is the mode whose
    eigenvector lies closest to the lateral axis.

    Raises
    ------
    SolverError
        If either curvature eigenvalue is non-positive (no radial confinement).
    """
    if null is None:
        null = solve_rf_null(layout, drive)
    hess = pseudopotential_hessian(layout, drive, ion, null)
    evals, evecs = np.linalg.eigh(hess)
    if np.any(evals <= 0.0):
        raise SolverError("no radial confinement: non-positive curvature "
                          f"eigenvalues {evals}", last_point=(null.null_x, null.height))
    freqs = np.sqrt(evals / ion.mass_kg) / (2.0 * math.pi) / 1e6
    # eigenvector column k belongs to evals[k]; x-like mode has larger |x| part
    x_like = int(np.argmax(np.abs(evecs[0, :])))
    y_like = 1 - x_like
    return replace(null, omega_x=float(freqs[x_like]),
                   omega_y=float(freqs[y_like]), hessian=hess)


def sweep_trap(layout: TrapLayout, drive: RfDrive, ion: IonSpecies,
               parameter: str, values) -> list[dict]:
    """Solve the trap across aperture-width or aperture-length values.

    ``omega_y_norm`` is referenced to the same layout with no aperture
    (width 0).  Values must be strictly increasing.  Per-point solver errors
    propagate, tagged with the failing value.
    """
    if parameter not in ("aperture_width", "aperture_length"):
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    values = list(values)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be strictly increasing")

    ref_layout = replace(layout, aperture_width=0.0)
    ref = radial_frequencies(ref_layout, drive, ion)
    rows = []
    for value in values:
        trial = replace(layout, **{parameter: float(value)})
        try:
            sol = radial_frequencies(trial, drive, ion)
        except SolverError as exc:
            raise SolverError(f"trap sweep failed at {parameter} = {value}: {exc}",
                              last_point=exc.last_point) from exc
        rows.append({
            "value_um": float(value),
            "height_um": sol.height,
            "omega_x_MHz": sol.omega_x,
            "omega_y_MHz": sol.omega_y,
            "omega_y_norm": sol.omega_y / ref.omega_y,
        })
    return rows
