"""Admittance force control of a two-finger gripper against a compliant object.

Two rates: the outer force loop runs at 20 Hz and turns force error into an
aperture increment; the inner position loop is a first-order lag integrated
at 1 kHz together with the contact.  Contact is series-elastic: once the
aperture closes past ``free_aperture`` the object pushes back with
``k * penetration`` plus a damping term that only resists compression.

Aperture is in mm, force in N, so the default gains read ``K_p = 0.1 mm/N``
and ``K_d = 0.002 mm/N``.  A positive increment closes the gripper.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, ParseError

GRIPPER_MAX_FORCE_N = 20.0
SUCCESS_THRESHOLD_N = 0.01


@dataclass(frozen=True)
class AdmittanceGains:
    k_p: float = 0.1    # mm/N
    k_d: float = 0.002  # mm/N on the error increment

    def __post_init__(self):
        if not self.k_p > 0 or self.k_d < 0:
            raise ConfigurationError(f"need K_p > 0 and K_d >= 0, got {self.k_p}, {self.k_d}")


@dataclass
class ControllerState:
    p_des: float
    e_prev: float = 0.0
    p_min: float = 0.0
    p_max: float = 85.0


def admittance_step(gains: AdmittanceGains, f_ref: float, f_real: float, state: ControllerState) -> ControllerState:
    """One outer-loop tick; updates and returns ``state``."""
    e = f_ref - f_real
    de = e - state.e_prev
    delta = gains.k_p * e + gains.k_d * de
    state.p_des = min(max(state.p_des - delta, state.p_min), state.p_max)
    state.e_prev = e
    return state


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    contact_stiffness: float    # N/mm
    contact_damping: float      # N*s/mm
    break_force: float
    deform_force: float
    min_hold_force: float
    free_aperture: float        # mm

    def __post_init__(self):
        if not self.contact_stiffness > 0:
            raise ConfigurationError(f"{self.name}: contact stiffness must be positive")
        if self.contact_damping < 0:
            raise ConfigurationError(f"{self.name}: contact damping must be >= 0")
        if not (0 < self.min_hold_force <= self.deform_force <= self.break_force):
            raise ConfigurationError(
                f"{self.name}: need 0 < min_hold_force <= deform_force <= break_force")


@dataclass
class PlantState:
    p: float
    velocity: float = 0.0
    f_real: float = 0.0
    deformed: bool = False
    broken: bool = False


INNER_LOOP_TAU_S = 0.05


def contact_force(obj: ObjectSpec, p: float, velocity: float) -> float:
    penetration = obj.free_aperture - p
    if penetration <= 0.0:
        return 0.0
    return obj.contact_stiffness * penetration + obj.contact_damping * max(0.0, -velocity)


def plant_step(plant: PlantState, p_cmd: float, obj: ObjectSpec, dt: float,
               tau: float = INNER_LOOP_TAU_S) -> PlantState:
    """Advance the position lag by ``dt`` and update contact force and damage flags."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    alpha = 1.0 - math.exp(-dt / tau) if tau > 0 else 1.0
    p_new = plant.p + (p_cmd - plant.p) * alpha
    plant.velocity = (p_new - plant.p) / dt
    plant.p = p_new
    plant.f_real = contact_force(obj, plant.p, plant.velocity)
    if plant.f_real >= obj.deform_force:
        plant.deformed = True
    if plant.f_real >= obj.break_force:
        plant.broken = True
    return plant


@dataclass(frozen=True)
class FrameTransform:
    """Rotation taking sensor-frame (SCF) vectors into the world frame (WCF)."""

    rotation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise ConfigurationError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ConfigurationError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)

    @classmethod
    def identity(cls) -> "FrameTransform":
        return cls(np.eye(3))

    @classmethod
    def about_z(cls, angle_rad: float) -> "FrameTransform":
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


# Fingertip sensor as mounted: SCF z is horizontal along the closing axis
# (WCF y) and SCF x points down (WCF -z).
FINGERTIP_SENSOR = FrameTransform(np.array([[0.0, -1.0, 0.0],
                                            [0.0, 0.0, 1.0],
                                            [-1.0, 0.0, 0.0]]))
WCF_CLOSING_AXIS = 1


def transform_force(transform: FrameTransform, f_scf) -> np.ndarray:
    return transform.rotation @ np.asarray(f_scf, dtype=float)


def percent_of_max(force_n: float, max_force_n: float = GRIPPER_MAX_FORCE_N) -> float:
    if force_n < 0:
        raise ConfigurationError("force must be >= 0")
    return 100.0 * force_n / max_force_n


# -- grasp execution ------------------------------------------------------------

class Outcome(str, Enum):
    SUCCESS = "Success"
    CRUSHED = "Crushed"
    DEFORMED = "Deformed"
    SLIPPED = "Slipped"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class SimConfig:
    plant_dt: float = 1e-3
    outer_rate_hz: float = 20.0
    tau: float = INNER_LOOP_TAU_S
    horizon_s: float = 15.0
    dwell_s: float = 0.25
    hold_s: float = 1.0
    threshold_n: float = SUCCESS_THRESHOLD_N
    approach_gap_mm: float = 0.0
    lift_after_s: float = 0.0
    p_min: float = 0.0
    p_max: float = 85.0
    sensor: FrameTransform = field(default_factory=lambda: FINGERTIP_SENSOR)


@dataclass
class GraspTrace:
    t: list = field(default_factory=list)
    f_ref: list = field(default_factory=list)
    f_real: list = field(default_factory=list)
    p_des: list = field(default_factory=list)
    p: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def append(self, t, f_ref, f_real, p_des, p, flags):
        self.t.append(t)
        self.f_ref.append(f_ref)
        self.f_real.append(f_real)
        self.p_des.append(p_des)
        self.p.append(p)
        self.flags.append(flags)

    def to_csv(self, path) -> None:
        lines = ["t_s,f_ref_n,f_real_n,p_des_mm,p_mm,flags"]
        for row in zip(self.t, self.f_ref, self.f_real, self.p_des, self.p, self.flags):
            lines.append(",".join(repr(float(v)) for v in row[:5]) + "," + row[5])
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class GraspOutcome:
    outcome: Outcome
    object_name: str
    f_ref_at_lift: float
    f_real_at_lift: float
    f_real_final: float
    lift_time_s: float | None

    @property
    def percent_of_max(self) -> float:
        return percent_of_max(max(self.f_real_at_lift, 0.0))

    def report_row(self) -> str:
        return (f"{self.object_name:<22s} predicted={self.f_ref_at_lift:.3f} N  real={self.f_real_at_lift:.3f} N  "
                f"max={self.percent_of_max:.2f}%  outcome={self.outcome.value}")


def plateau(value: float) -> Callable[[float], float]:
    return lambda t: value


def zero_order_hold(refs) -> Callable[[float], float]:
    """Reference source from timestamped values; holds the latest value (0 before the first)."""
    times = np.array([r.timestamp for r in refs], dtype=float)
    values = np.array([r.value for r in refs], dtype=float)

    def source(t: float) -> float:
        i = int(np.searchsorted(times, t, side="right")) - 1
        return float(values[i]) if i >= 0 else 0.0
    return source


def _measure(plant: PlantState, sensor: FrameTransform) -> float:
    """Contact force as the fingertip sensor reports it, rotated back into WCF."""
    f_wcf = np.zeros(3)
    f_wcf[WCF_CLOSING_AXIS] = plant.f_real
    f_scf = sensor.rotation.T @ f_wcf
    return float(abs(transform_force(sensor, f_scf)[WCF_CLOSING_AXIS]))


def run_grasp(obj: ObjectSpec, reference, gains: AdmittanceGains | None = None,
              config: SimConfig | None = None, record: bool = True) -> tuple[GraspTrace, GraspOutcome]:
    """Close on ``obj`` tracking ``reference`` (a float or a callable of time).

    Lift is attempted once the fingers are in contact, ``t >= lift_after_s``
    and ``|F_ref - F_real| < threshold`` has held for ``dwell_s``.  Control
    continues through a ``hold_s`` lift phase; the object must stay intact and
    undeformed through it, and the contact force at lift must reach
    ``min_hold_force``.  The run stops early if the object breaks.
    """
    gains = gains or AdmittanceGains()
    config = config or SimConfig()
    source = reference if callable(reference) else plateau(float(reference))
    p0 = obj.free_aperture + config.approach_gap_mm
    ctrl = ControllerState(p_des=p0, p_min=config.p_min, p_max=config.p_max)
    plant = PlantState(p=p0)
    trace = GraspTrace()
    ticks_per_outer = max(1, int(round(1.0 / (config.outer_rate_hz * config.plant_dt))))
    n_steps = int(round(config.horizon_s / config.plant_dt))
    dwell_steps = int(round(config.dwell_s / config.plant_dt))
    hold_steps = int(round(config.hold_s / config.plant_dt))

    f_ref = 0.0
    in_band = 0
    lift_step = None
    lift_ref = lift_real = 0.0
    step = 0
    while step < n_steps or (lift_step is not None and step < lift_step + hold_steps):
        t = step * config.plant_dt
        if step % ticks_per_outer == 0:
            f_ref = float(source(t))
            admittance_step(gains, f_ref, _measure(plant, config.sensor), ctrl)
        plant_step(plant, ctrl.p_des, obj, config.plant_dt, config.tau)
        step += 1
        measured = _measure(plant, config.sensor)
        if record:
            flags = "broken" if plant.broken else ("deformed" if plant.deformed else "intact")
            trace.append(step * config.plant_dt, f_ref, measured, ctrl.p_des, plant.p, flags)
        if plant.broken:
            return trace, GraspOutcome(Outcome.CRUSHED, obj.name, f_ref, measured, measured,
                                       None if lift_step is None else lift_step * config.plant_dt)
        if lift_step is None:
            # a lift needs contact: an unloaded gripper trivially matches a zero reference
            tracking = (measured > 0.0 and t >= config.lift_after_s
                        and abs(f_ref - measured) < config.threshold_n)
            in_band = in_band + 1 if tracking else 0
            if in_band >= dwell_steps:
                lift_step, lift_ref, lift_real = step, f_ref, measured
        elif step >= lift_step + hold_steps:
            break

    final = _measure(plant, config.sensor)
    if lift_step is None:
        outcome = Outcome.DEFORMED if plant.deformed else Outcome.TIMEOUT
        return trace, GraspOutcome(outcome, obj.name, f_ref, final, final, None)
    if plant.deformed:
        outcome = Outcome.DEFORMED
    elif lift_real < obj.min_hold_force:
        outcome = Outcome.SLIPPED
    else:
        outcome = Outcome.SUCCESS
    return trace, GraspOutcome(outcome, obj.name, lift_ref, lift_real, final, lift_step * config.plant_dt)


# -- object catalogue ----------------------------------------------------------------

# Material limits are simulation calibration: each sits comfortably above the
# force the object was actually grasped with, so nominal grasps succeed.
OBJECTS = {
    "pepper": ObjectSpec("Fruit pepper", 1.2, 0.01, 3.0, 2.0, 0.3, 70.0),
    "tomato": ObjectSpec("Ripe tomato", 0.8, 0.01, 0.8, 0.5, 0.1, 60.0),
    "wine_glass": ObjectSpec("Wine glass", 2.0, 0.01, 12.0, 12.0, 2.0, 65.0),
    "can": ObjectSpec("Aluminum can", 1.5, 0.01, 1.0, 0.5, 0.1, 66.0),
    "thin_glass": ObjectSpec("Thin glass (0.5mm)", 2.0, 0.01, 2.0, 2.0, 0.3, 30.0),
    "strawberry": ObjectSpec("Strawberry", 1.5, 0.005, 0.15, 0.1, 0.015, 35.0),
    "bottle": ObjectSpec("Full plastic bottle", 2.5, 0.01, 15.0, 10.0, 3.0, 65.0),
    "eggshell": ObjectSpec("Egg shell", 2.0, 0.002, 0.05, 0.05, 0.004, 45.0),
}

# Predicted / real force (N) and percent of gripper maximum at the end of the grasp.
BENCHMARK_GRASPS = {
    "pepper": (1.140, 1.133, 5.67),
    "tomato": (0.239, 0.231, 1.16),
    "wine_glass": (5.932, 5.922, 29.61),
    "can": (0.216, 0.214, 1.07),
    "thin_glass": (0.826, 0.826, 4.13),
    "strawberry": (0.039, 0.040, 0.20),
    "bottle": (6.770, 6.774, 33.87),
    "eggshell": (0.010, 0.008, 0.04),
}

_OBJECT_FIELDS = {
    "name": str, "contact_stiffness": float, "contact_damping": float, "break_force": float,
    "deform_force": float, "min_hold_force": float, "free_aperture": float,
}


def load_objects(path) -> dict[str, ObjectSpec]:
    """Object specs from a key=value file with one ``[key]`` section per object."""
    path = Path(path)
    sections: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections[current] = {}
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or current is None:
            raise ParseError(f"{path}: line {lineno}: expected 'key = value' inside a [section]")
        if key not in _OBJECT_FIELDS:
            raise ParseError(f"{path}: line {lineno}: unknown field {key!r}")
        try:
            sections[current][key] = _OBJECT_FIELDS[key](value.strip())
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    specs = {}
    for key, fields in sections.items():
        fields.setdefault("name", key)
        missing = [f for f in _OBJECT_FIELDS if f not in fields]
        if missing:
            raise ParseError(f"{path}: [{key}] missing field(s) {', '.join(missing)}")
        specs[key] = ObjectSpec(**fields)
    return specs


def save_objects(path, specs: dict[str, ObjectSpec]) -> None:
    lines = []
    for key, spec in specs.items():
        lines.append(f"[{key}]")
        for name in _OBJECT_FIELDS:
            lines.append(f"{name} = {getattr(spec, name)}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def with_break_force(obj: ObjectSpec, break_force: float) -> ObjectSpec:
    return replace(obj, break_force=break_force, deform_force=min(obj.deform_force, break_force))


def contraction_factors(k: float, gains: AdmittanceGains, f_ref: float = 1.0, ticks: int = 12) -> np.ndarray:
    """Per-tick error ratios of the outer loop with an instantaneous inner loop on a pure spring."""
    obj = ObjectSpec("spring", k, 0.0, 1e9, 1e9, 1e-9, 50.0)
    ctrl = ControllerState(p_des=obj.free_aperture, p_min=-1e9, p_max=1e9)
    errors = []
    f = 0.0
    for _ in range(ticks + 1):
        errors.append(f_ref - f)
        admittance_step(gains, f_ref, f, ctrl)
        f = contact_force(obj, ctrl.p_des, 0.0)
    errors = np.array(errors)
    # past numerical zero the ratios are rounding noise
    live = np.abs(errors) > 1e-12 * abs(f_ref)
    n = int(np.argmin(live)) if not live.all() else len(errors)
    if n < len(errors):
        return np.append(errors[1:n] / errors[:n - 1], errors[n] / errors[n - 1])
    return errors[1:] / errors[:-1]


def settle_time(obj: ObjectSpec, f_ref: float, gains: AdmittanceGains | None = None,
                config: SimConfig | None = None, threshold: float = SUCCESS_THRESHOLD_N) -> float | None:
    """First time after which ``|e|`` stays below ``threshold`` for the rest of the horizon."""
    config = replace(config or SimConfig(), dwell_s=1e9)
    trace, _ = run_grasp(obj, f_ref, gains, config)
    err = np.abs(np.array(trace.f_ref) - np.array(trace.f_real))
    outside = np.flatnonzero(err >= threshold)
    if outside.size == 0:
        return 0.0
    last = outside[-1]
    return None if last == len(err) - 1 else trace.t[last + 1]


def sweep(objects: Iterable[tuple[ObjectSpec, float]], gains=None, config=None, jobs: int = 1):
    """Independent grasp runs; ``jobs > 1`` spreads them over processes."""
    tasks = [(obj, ref, gains, config) for obj, ref in objects]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_grasp_task, tasks))
    return [_grasp_task(t) for t in tasks]


def _grasp_task(args):
    obj, ref, gains, config = args
    return run_grasp(obj, ref, gains, config, record=False)[1]
