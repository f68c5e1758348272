"""Scaling-law sizing of the coaxial eight-rotor vehicle.

Every component characteristic is obtained from a reference component and a
normalized size ratio (``x* = x / x_ref``).  The reference set is loaded from
``reference.json``; the design vector holds the six ratios that the outer
optimizer moves.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

N_ARMS = 4
ROTORS_PER_ARM = 2
N_ROTORS = N_ARMS * ROTORS_PER_ARM

DESIGN_NAMES = (
    "l_mot_star",
    "r_rot_star",
    "theta0_rot_star",
    "v_bat_star",
    "l_arm_star",
    "e_arm_star",
)

# admissible range of the blade-pitch maps
PITCH_RANGE = (0.6, 1.4)

DEFAULT_BOUNDS = {
    "l_mot_star": (0.6, 1.3),
    "r_rot_star": (0.7, 1.8),
    "theta0_rot_star": PITCH_RANGE,
    "v_bat_star": (0.3, 1.5),
    "l_arm_star": (0.7, 1.1),
    "e_arm_star": (0.5, 1.5),
}

_DATA = Path(__file__).parent / "data"


class SizingError(ValueError):
    """Raised when a scaling law is evaluated outside its domain."""


def _positive(name, value):
    if not (value > 0.0) or not math.isfinite(value):
        raise SizingError(f"{name} must be finite and strictly positive, got {value!r}")


# ---------------------------------------------------------------------------
# design vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantDesign:
    """Six normalized plant design variables; the reference design is all ones."""

    l_mot_star: float = 1.0
    r_rot_star: float = 1.0
    theta0_rot_star: float = 1.0
    v_bat_star: float = 1.0
    l_arm_star: float = 1.0
    e_arm_star: float = 1.0

    def __post_init__(self):
        for name in DESIGN_NAMES:
            _positive(name, getattr(self, name))

    @classmethod
    def reference(cls) -> "PlantDesign":
        return cls()

    @classmethod
    def from_array(cls, x) -> "PlantDesign":
        x = np.asarray(x, dtype=float).ravel()
        if x.size != len(DESIGN_NAMES):
            raise SizingError(f"expected {len(DESIGN_NAMES)} design variables, got {x.size}")
        return cls(*(float(v) for v in x))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in DESIGN_NAMES])

    def check_bounds(self, bounds=None):
        bounds = DEFAULT_BOUNDS if bounds is None else bounds
        for name in DESIGN_NAMES:
            lo, hi = bounds[name]
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise SizingError(f"{name}={v} outside bounds [{lo}, {hi}]")


def validate_bounds(bounds):
    """Check ``0 < lo <= 1 <= hi`` for every design variable."""
    for name in DESIGN_NAMES:
        lo, hi = bounds[name]
        if not (0.0 < lo <= 1.0 <= hi):
            raise SizingError(f"bounds for {name} must satisfy 0 < lo <= 1 <= hi, got {(lo, hi)}")


# ---------------------------------------------------------------------------
# reference components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotorRef:
    R_ref: float
    Ke_ref: float
    Kd_ref: float
    J_ref: float
    m_ref: float
    Rth_ref: float
    tau_th_ref: float
    T_max_ref: float
    Theta_max: float


@dataclass(frozen=True)
class RotorRef:
    r_ref: float
    S_ref: float
    theta0_ref: float
    J_ref: float
    m_ref: float
    omega_max_tip: float
    ct0_ref: float
    cq0_ref: float


@dataclass(frozen=True)
class BatteryRef:
    v_ref: float
    m_ref: float
    E_ref: float
    u_cell_nom: float
    u_cell_max: float
    d_E: float
    n_series: float


@dataclass(frozen=True)
class ArmRef:
    l_ref: float
    e_ref: float
    d_ref: float
    m_ref: float
    sigma_allow: float


@dataclass(frozen=True)
class ReferenceComponents:
    motor: MotorRef
    rotor: RotorRef
    battery: BatteryRef
    arm: ArmRef
    fixed_mass: float
    rho_air: float = 1.225
    gravity: float = 9.81
    ambient_temp: float = 293.15
    core_radius: float = 0.1

    def __post_init__(self):
        for group in (self.motor, self.rotor, self.battery, self.arm):
            for f in fields(group):
                _positive(f"{type(group).__name__}.{f.name}", getattr(group, f.name))
        for name in ("fixed_mass", "rho_air", "gravity", "ambient_temp", "core_radius"):
            _positive(name, getattr(self, name))
        if self.battery.u_cell_nom > self.battery.u_cell_max:
            raise SizingError("u_cell_nom must not exceed u_cell_max")

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceComponents":
        d = dict(d)
        d.pop("description", None)
        try:
            return cls(
                motor=MotorRef(**d.pop("motor")),
                rotor=RotorRef(**d.pop("rotor")),
                battery=BatteryRef(**d.pop("battery")),
                arm=ArmRef(**d.pop("arm")),
                **d,
            )
        except (KeyError, TypeError) as exc:
            raise SizingError(f"malformed reference components: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def load_reference(path=None) -> ReferenceComponents:
    """Read a ``reference.json`` file (the bundled synthetic vehicle by default)."""
    path = _DATA / "reference.json" if path is None else Path(path)
    with open(path) as fh:
        return ReferenceComponents.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# component characteristics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotorChar:
    R: float
    Ke: float
    Kd: float
    J_mot: float
    m_mot: float
    Rth: float
    tau_th: float
    T_max: float
    Theta_max: float


@dataclass(frozen=True)
class RotorChar:
    r: float
    S: float
    theta0: float
    ct0: float
    cq0: float
    J_rot: float
    m_rot: float
    omega_max: float


@dataclass(frozen=True)
class BatteryChar:
    P_bat: float
    m_bat: float
    E_bat: float
    u_bat: float


@dataclass(frozen=True)
class ArmChar:
    l: float
    d: float
    e: float
    J_arm: float
    m_arm: float
    Z: float
    sigma_allow: float


def scale_motor(l_star: float, ref: ReferenceComponents) -> MotorChar:
    """Motor laws: R ~ l^-1, Ke ~ l^2, Kd ~ l^3, J ~ l^5, m ~ l^3, Rth ~ l^-2."""
    _positive("l_star", l_star)
    m = ref.motor
    return MotorChar(
        R=m.R_ref * l_star ** -1,
        Ke=m.Ke_ref * l_star ** 2,
        Kd=m.Kd_ref * l_star ** 3,
        J_mot=m.J_ref * l_star ** 5,
        m_mot=m.m_ref * l_star ** 3,
        Rth=m.Rth_ref * l_star ** -2,
        tau_th=m.tau_th_ref,
        T_max=m.T_max_ref * l_star ** 3.5,
        Theta_max=m.Theta_max,
    )


def thrust_coefficient_ratio(theta0_star: float) -> float:
    """ct0 / ct0_ref as an affine function of the normalized blade pitch."""
    return 0.3 + 0.7 * theta0_star


def torque_coefficient_ratio(theta0_star: float) -> float:
    """cq0 / cq0_ref, quadratic in the normalized blade pitch."""
    return 0.15 + 0.85 * theta0_star ** 2


def scale_rotor(r_star: float, theta0_star: float, ref: ReferenceComponents) -> RotorChar:
    _positive("r_star", r_star)
    _positive("theta0_star", theta0_star)
    lo, hi = PITCH_RANGE
    if not (lo <= theta0_star <= hi):
        raise SizingError(f"theta0_star={theta0_star} outside pitch range {PITCH_RANGE}")
    ro = ref.rotor
    r = ro.r_ref * r_star
    return RotorChar(
        r=r,
        S=ro.S_ref * r_star ** 2,
        theta0=ro.theta0_ref * theta0_star,
        ct0=ro.ct0_ref * thrust_coefficient_ratio(theta0_star),
        cq0=ro.cq0_ref * torque_coefficient_ratio(theta0_star),
        J_rot=ro.J_ref * r_star ** 5,
        m_rot=ro.m_ref * r_star ** 3,
        omega_max=ro.omega_max_tip / r,
    )


def scale_battery(v_star: float, ref: ReferenceComponents) -> BatteryChar:
    """Battery mass and energy are linear in the size ratio.

    Deliverable power is a 5C-style rating: ``5 d_E (u_nom/u_max) v* E_ref/3600``.
    """
    _positive("v_star", v_star)
    b = ref.battery
    return BatteryChar(
        P_bat=5.0 * b.d_E * (b.u_cell_nom / b.u_cell_max) * v_star * b.E_ref / 3600.0,
        m_bat=b.m_ref * v_star,
        E_bat=b.E_ref * b.d_E * v_star,
        u_bat=b.n_series * b.u_cell_nom,
    )


def scale_arm(l_star: float, e_star: float, ref: ReferenceComponents) -> ArmChar:
    """Thin-walled circular tube whose diameter follows the wall thickness."""
    _positive("l_star", l_star)
    _positive("e_star", e_star)
    a = ref.arm
    l = a.l_ref * l_star
    d = a.d_ref * e_star
    e = a.e_ref * e_star
    m = a.m_ref * (d / a.d_ref) * (e / a.e_ref) * (l / a.l_ref)
    return ArmChar(
        l=l,
        d=d,
        e=e,
        J_arm=m * l ** 2 / 3.0,
        m_arm=m,
        Z=math.pi / 4.0 * d ** 2 * e,
        sigma_allow=a.sigma_allow,
    )


# ---------------------------------------------------------------------------
# vehicle assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VehicleParams:
    design: PlantDesign
    motor: MotorChar
    rotor: RotorChar
    battery: BatteryChar
    arm: ArmChar
    fixed_mass: float
    m_total: float
    I_body: tuple
    rho: float
    g: float
    ambient_temp: float
    reference: ReferenceComponents = field(repr=False, compare=False)
    n_arms: int = N_ARMS
    rotors_per_arm: int = ROTORS_PER_ARM

    @property
    def n_rotors(self) -> int:
        return self.n_arms * self.rotors_per_arm

    def summary(self) -> dict:
        """Flat, JSON-friendly view of the physical characteristics."""
        return {
            "design": asdict(self.design),
            "motor": asdict(self.motor),
            "rotor": asdict(self.rotor),
            "battery": asdict(self.battery),
            "arm": asdict(self.arm),
            "fixed_mass": self.fixed_mass,
            "m_total": self.m_total,
            "I_body": list(self.I_body),
        }


def total_mass(fixed, m_mot, m_rot, m_arm, m_bat):
    return fixed + N_ROTORS * (m_mot + m_rot) + N_ARMS * m_arm + m_bat


def body_inertia(motor: MotorChar, rotor: RotorChar, arm: ArmChar, m_bat: float,
                 ref: ReferenceComponents) -> tuple:
    """Diagonal body inertia.

    Motor/rotor pairs are point masses at the arm tips (arms at 45, 135, 225
    and 315 deg), arms are slender rods hinged at the hub, and the fixed mass
    plus battery form a uniform central sphere of radius ``core_radius``.
    """
    core = 0.4 * (ref.fixed_mass + m_bat) * ref.core_radius ** 2
    tip = N_ROTORS * (motor.m_mot + rotor.m_rot) * arm.l ** 2
    rods = N_ARMS * arm.J_arm
    # each arm sits at 45 deg to the body axes: half of the planar moment on x and y
    ixx = core + 0.5 * tip + 0.5 * rods
    izz = core + tip + rods
    return (ixx, ixx, izz)


def assemble_vehicle(x_p: PlantDesign, ref: ReferenceComponents, bounds=None) -> VehicleParams:
    """Apply every scaling law and roll up mass and inertia."""
    if bounds is not None:
        x_p.check_bounds(bounds)
    motor = scale_motor(x_p.l_mot_star, ref)
    rotor = scale_rotor(x_p.r_rot_star, x_p.theta0_rot_star, ref)
    battery = scale_battery(x_p.v_bat_star, ref)
    arm = scale_arm(x_p.l_arm_star, x_p.e_arm_star, ref)
    m_total = total_mass(ref.fixed_mass, motor.m_mot, rotor.m_rot, arm.m_arm, battery.m_bat)
    return VehicleParams(
        design=x_p,
        motor=motor,
        rotor=rotor,
        battery=battery,
        arm=arm,
        fixed_mass=ref.fixed_mass,
        m_total=m_total,
        I_body=body_inertia(motor, rotor, arm, battery.m_bat, ref),
        rho=ref.rho_air,
        g=ref.gravity,
        ambient_temp=ref.ambient_temp,
        reference=ref,
    )


MASS_PARTS = ("fixed", "motors", "rotors", "arms", "battery")


def _parts(p: VehicleParams) -> dict:
    return {
        "fixed": p.fixed_mass,
        "motors": N_ROTORS * p.motor.m_mot,
        "rotors": N_ROTORS * p.rotor.m_rot,
        "arms": N_ARMS * p.arm.m_arm,
        "battery": p.battery.m_bat,
    }


def mass_breakdown(p: VehicleParams) -> dict:
    """Five-part mass distribution with share of total and change vs the reference.

    Returns ``{part: {"mass", "share", "relative_change"}}`` plus ``"total"``.
    """
    base = _parts(assemble_vehicle(PlantDesign.reference(), p.reference))
    parts = _parts(p)
    total = math.fsum(parts.values())
    out = {}
    for name in MASS_PARTS:
        out[name] = {
            "mass": parts[name],
            "share": parts[name] / total,
            "relative_change": parts[name] / base[name] - 1.0,
        }
    base_total = math.fsum(base.values())
    out["total"] = {"mass": total, "share": 1.0, "relative_change": total / base_total - 1.0}
    return out
