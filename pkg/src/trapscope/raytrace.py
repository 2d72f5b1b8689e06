"""Monte Carlo sequential ray tracing of the two detection setups.

Rays leave a point source isotropically (or inside a cone), must clear the
physical aperture stack, then traverse an air-equivalent train of ideal thin
lenses to a square detector.  The glass path between the undercut plane and
the backside lens is folded into reduced (paraxial) axial spacings, so the
free-space trace works in straight lines plus ideal thin-lens refraction.

Setups
------
integrated : collimator at the chip backside, focal length equal to the
    on-axis source-to-lens reduced distance; it translates with the chip.
objective  : NA-0.5 objective with the source at its front focal plane; the
    chip translates relative to it.

Both relay into the same focusing lens and detector.  Detector half-size and
the objective/focusing prescriptions are calibrated, configurable defaults
(the underlying experiment publishes no prescription).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .collection import ApertureStack, passes_stack
from .constants import DEFAULT_SEED
from .lens import LayerStack
from .rng import chunk_sizes, philox

STATUS_HIT = 0
STATUS_BLOCKED_STACK = -1
STATUS_UPWARD = -2
# positive status k means "vignetted at element k" (1-based, detector last)


@dataclass(frozen=True)
class ThinLensElement:
    position: float          # mm from the source plane, air-equivalent
    focal_length: float      # mm
    aperture_radius: float   # mm
    center_x: float = 0.0    # mm, lateral offset of the element axis

    def __post_init__(self):
        if self.aperture_radius <= 0:
            raise ValueError("aperture radius must be > 0")
        if self.focal_length == 0:
            raise ValueError("focal length must be nonzero")


@dataclass(frozen=True)
class Detector:
    position: float          # mm
    half_size: float         # mm, square, centred on the axis

    def __post_init__(self):
        if self.half_size <= 0:
            raise ValueError("detector half-size must be > 0")


@dataclass(frozen=True)
class TrainParams:
    """Calibrated, configurable free-space prescription shared by both setups."""

    objective_focal_mm: float = 10.0
    objective_radius_mm: float = 5.77      # NA 0.5: tan(asin 0.5) * f
    focusing_focal_mm: float = 100.0
    focusing_radius_mm: float = 12.63
    relay_mm: float = 80.0                 # collimating element -> focusing lens
    detector_half_mm: float = 8.6          # sets the objective-setup falloff
    collimator_radius_mm: float = 0.25     # admits the full aperture cone


@dataclass(frozen=True)
class OpticalTrain:
    setup: str                             # "integrated" | "objective"
    stack: ApertureStack                   # physical geometry, um
    elements: tuple[ThinLensElement, ...]  # strictly increasing positions
    detector: Detector | None
    stack_source_offset: tuple[float, float] = (0.0, 0.0)   # um, (x, z)
    start_x_mm: float = 0.0
    start_z_mm: float = 0.0

    def __post_init__(self):
        pos = [e.position for e in self.elements]
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("element positions must be strictly increasing")
        if self.detector is not None and pos and self.detector.position <= pos[-1]:
            raise ValueError("detector must sit after the last element")

    def describe(self) -> dict:
        return {
            "setup": self.setup,
            "elements": [
                {"position_mm": e.position, "focal_mm": e.focal_length,
                 "radius_mm": e.aperture_radius, "center_x_mm": e.center_x}
                for e in self.elements],
            "detector": None if self.detector is None else
                {"position_mm": self.detector.position,
                 "half_size_mm": self.detector.half_size},
        }


@dataclass(frozen=True)
class RaySource:
    """Point emitter: isotropic over 4 pi, or uniform inside a downward cone."""

    emission: str = "isotropic"            # "isotropic" | "cone"
    cone_half_angle_deg: float = 10.98
    n_rays: int = 1_000_000
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.emission not in ("isotropic", "cone"):
            raise ValueError(f"unknown emission model {self.emission!r}")
        if self.n_rays < 1_000:
            raise ValueError("n_rays must be >= 1000")
        if self.emission == "cone" and not 0.0 < self.cone_half_angle_deg < 90.0:
            raise ValueError("cone half-angle must lie in (0, 90) degrees")

    @property
    def solid_angle_fraction(self) -> float:
        if self.emission == "isotropic":
            return 1.0
        return (1.0 - math.cos(math.radians(self.cone_half_angle_deg))) / 2.0


@dataclass(frozen=True)
class EfficiencyCurve:
    parameter: str                         # "d_mm" | "dprime_um"
    displacements: np.ndarray
    efficiency_pct: np.ndarray
    stderr_pct: np.ndarray
    train_info: dict = field(default_factory=dict)


def reduced_distance_mm(layers: LayerStack) -> float:
    """Air-equivalent source-to-lens axial distance (sum of t_i / n_i), mm."""
    return sum(l.thickness / l.refractive_index for l in layers.layers) * 1e-3


def build_train(setup: str, stack: ApertureStack, layers: LayerStack,
                params: TrainParams | None = None, *,
                lateral_mm: float = 0.0, axial_um: float = 0.0) -> OpticalTrain:
    """Assemble one setup's train for a chip displaced by ``lateral_mm`` and a
    source displaced axially by ``axial_um``.

    Lateral scans move source + chip together (and the integrated collimator
    with them) while the free-space optics stay on axis; axial scans move the
    source alone.
    """
    params = params or TrainParams()
    red = reduced_distance_mm(layers)
    if setup == "integrated":
        collimator = ThinLensElement(position=red, focal_length=red,
                                     aperture_radius=params.collimator_radius_mm,
                                     center_x=lateral_mm)
        first_after = red
    elif setup == "objective":
        collimator = ThinLensElement(position=params.objective_focal_mm,
                                     focal_length=params.objective_focal_mm,
                                     aperture_radius=params.objective_radius_mm)
        first_after = params.objective_focal_mm
    else:
        raise ValueError(f"unknown setup {setup!r}")
    focusing = ThinLensElement(position=first_after + params.relay_mm,
                               focal_length=params.focusing_focal_mm,
                               aperture_radius=params.focusing_radius_mm)
    detector = Detector(position=focusing.position + params.focusing_focal_mm,
                        half_size=params.detector_half_mm)
    return OpticalTrain(setup=setup, stack=stack,
                        elements=(collimator, focusing), detector=detector,
                        stack_source_offset=(0.0, axial_um),
                        start_x_mm=lateral_mm, start_z_mm=axial_um * 1e-3)


def trace_tangents(train: OpticalTrain, tx, tz, downward=None) -> np.ndarray:
    """Trace rays given by direction tangents; returns per-ray status codes.

    ``tx``/``tz`` are lateral displacement per unit axial advance.  Rays
    flagged not-downward never enter the train.  Status 0 is a detector hit,
    -1 blocked at the aperture stack, -2 emitted away from the chip, k > 0
    vignetted at element k (the detector counts as the last element).
    """
    tx = np.asarray(tx, dtype=float)
    tz = np.asarray(tz, dtype=float)
    status = np.full(tx.shape, STATUS_BLOCKED_STACK, dtype=np.int8)
    if downward is not None:
        status[~downward] = STATUS_UPWARD
    alive = (status == STATUS_BLOCKED_STACK)
    alive &= passes_stack(train.stack, tx, tz, train.stack_source_offset)

    x = np.where(alive, train.start_x_mm, 0.0)
    z = np.where(alive, train.start_z_mm, 0.0)
    cx = np.where(alive, tx, 0.0)
    cz = np.where(alive, tz, 0.0)
    y = 0.0
    for k, el in enumerate(train.elements, start=1):
        step = el.position - y
        x += cx * step
        z += cz * step
        y = el.position
        inside = (x - el.center_x) ** 2 + z ** 2 <= el.aperture_radius ** 2
        vignetted = alive & ~inside
        status[vignetted] = k
        alive &= inside
        cx -= np.where(alive, (x - el.center_x) / el.focal_length, 0.0)
        cz -= np.where(alive, z / el.focal_length, 0.0)
    if train.detector is None:
        status[alive] = STATUS_HIT
        return status
    step = train.detector.position - y
    x += cx * step
    z += cz * step
    on_det = (np.abs(x) <= train.detector.half_size) & \
             (np.abs(z) <= train.detector.half_size)
    status[alive & on_det] = STATUS_HIT
    status[alive & ~on_det] = len(train.elements) + 1
    return status


def trace_ray(train: OpticalTrain, tangent_x: float, tangent_z: float) -> str:
    """Single-ray convenience wrapper; returns a terminal-status label."""
    code = int(trace_tangents(train, np.array([tangent_x]),
                              np.array([tangent_z]))[0])
    if code == STATUS_HIT:
        return "detector hit"
    if code == STATUS_BLOCKED_STACK:
        return "blocked at aperture stack"
    if code == STATUS_UPWARD:
        return "emitted away from chip"
    return f"vignetted at element {code}"


def _sample_tangents(source: RaySource, stream: int, chunk: int, m: int):
    u = philox(source.seed, stream, chunk).random((2, m))
    if source.emission == "isotropic":
        c = 1.0 - 2.0 * u[0]
    else:
        cmin = math.cos(math.radians(source.cone_half_angle_deg))
        c = 1.0 - u[0] * (1.0 - cmin)
    phi = 2.0 * math.pi * u[1]
    down = c > 0.0
    s = np.zeros_like(c)
    s[down] = np.sqrt(1.0 - c[down] ** 2) / c[down]
    return s * np.cos(phi), s * np.sin(phi), down


def detection_efficiency(train: OpticalTrain, source: RaySource,
                         transmittance: float = 1.0,
                         stream: int = 0) -> tuple[float, float]:
    """Detected percentage of total 4 pi emission, with Monte Carlo stderr.

    (hits / n_rays) x (source solid-angle fraction of 4 pi) x transmittance,
    in percent; bit-reproducible for a given seed/stream and independent of
    how chunks are distributed.
    """
    if source.n_rays <= 0:
        raise ValueError("no rays to launch")
    hits = 0
    for chunk, m in chunk_sizes(source.n_rays):
        tx, tz, down = _sample_tangents(source, stream, chunk, m)
        status = trace_tangents(train, tx, tz, down)
        hits += int(np.count_nonzero(status == STATUS_HIT))
    p = hits / source.n_rays
    scale = 100.0 * source.solid_angle_fraction * transmittance
    stderr = math.sqrt(p * (1.0 - p) / source.n_rays)
    return p * scale, stderr * scale


def lateral_scan(setup: str, displacements_mm, stack: ApertureStack,
                 layers: LayerStack, params: TrainParams | None = None,
                 source: RaySource | None = None,
                 transmittance: float = 1.0) -> EfficiencyCurve:
    """Detection efficiency versus lateral chip displacement d (mm >= 0)."""
    displacements = np.asarray(list(displacements_mm), dtype=float)
    if np.any(displacements < 0):
        raise ValueError("lateral displacements must be >= 0")
    source = source or RaySource()
    eff = np.empty(displacements.size)
    err = np.empty(displacements.size)
    train_info = {}
    for i, d in enumerate(displacements):
        train = build_train(setup, stack, layers, params, lateral_mm=float(d))
        if not train_info:
            train_info = train.describe()
        eff[i], err[i] = detection_efficiency(train, source, transmittance,
                                              stream=i)
    return EfficiencyCurve("d_mm", displacements, eff, err, train_info)


def axial_scan(setup: str, displacements_um, stack: ApertureStack,
               layers: LayerStack, params: TrainParams | None = None,
               source: RaySource | None = None,
               transmittance: float = 1.0) -> EfficiencyCurve:
    """Detection efficiency versus axial source displacement d' (um)."""
    displacements = np.asarray(list(displacements_um), dtype=float)
    half_len = stack.openings[0].half_length
    if np.any(np.abs(displacements) > 2 * half_len):
        raise ValueError("axial displacement outside +- aperture length")
    source = source or RaySource()
    eff = np.empty(displacements.size)
    err = np.empty(displacements.size)
    train_info = {}
    for i, d in enumerate(displacements):
        train = build_train(setup, stack, layers, params, axial_um=float(d))
        if not train_info:
            train_info = train.describe()
        eff[i], err[i] = detection_efficiency(train, source, transmittance,
                                              stream=i)
    return EfficiencyCurve("dprime_um", displacements, eff, err, train_info)


def cone_to_isotropic(detected_fraction: float,
                      cone_half_angle_deg: float) -> float:
    """Isotropic-equivalent efficiency (percent) from a cone-source fraction.

    Multiplies the detected fraction of cone power by the cone's share of
    4 pi, 2 pi (1 - cos theta) / 4 pi; this is the convention used to compare
    artificial-source measurements against isotropic-emitter predictions.
    """
    if not 0.0 < cone_half_angle_deg < 90.0:
        raise ValueError("cone half-angle must lie in (0, 90) degrees")
    fraction = (1.0 - math.cos(math.radians(cone_half_angle_deg))) / 2.0
    return 100.0 * detected_fraction * fraction


def falloff_displacement(curve: EfficiencyCurve, level: float = 0.9) -> float:
    """Displacement where the curve first crosses ``level`` of its maximum."""
    eff = curve.efficiency_pct
    target = level * float(np.max(eff))
    below = np.nonzero(eff < target)[0]
    if below.size == 0:
        return float(curve.displacements[-1])
    j = int(below[0])
    if j == 0:
        return float(curve.displacements[0])
    d0, d1 = curve.displacements[j - 1], curve.displacements[j]
    e0, e1 = eff[j - 1], eff[j]
    if e0 == e1:
        return float(d1)
    return float(d0 + (target - e0) * (d1 - d0) / (e1 - e0))
