"""Nonlinear 6-DOF simulation of the coaxial octorotor.

Rotor numbering: rotors 1-4 are the upper rotors of arms A-D (arms at 45,
135, 225 and 315 deg), rotors 5-8 the lower rotors of the same arms.  Upper
rotors spin (+, -, +, -) about body z, lower ones the reverse, so every
coaxial pair counter-rotates.  Rotor 7 is therefore the counter-rotating
rotor on the arm diagonally opposite rotor 1.

Frames: world z points up, body z along the rotor axes; attitude is a unit
quaternion (w, x, y, z) mapping body to world.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .sizing import N_ROTORS, MotorChar, RotorChar, VehicleParams

SPIN = np.array([1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0])
ARM_ANGLES = np.deg2rad([45.0, 135.0, 225.0, 315.0])
MAX_TILT = 0.6
BLOWUP = 1.0e4
_DATA = Path(__file__).parent / "data"


class DynamicsError(ValueError):
    pass


class TrimError(DynamicsError):
    """Hover equilibrium cannot be reached within rotor and voltage limits."""


class SimulationDiverged(RuntimeError):
    """Raised when the state leaves the configured envelope; carries the partial trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# component laws
# ---------------------------------------------------------------------------

def rotor_forces(omega, rotor: RotorChar, rho: float):
    """Return ``(thrust, drag_torque)`` for rotor speed ``omega`` [rad/s]."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise DynamicsError("rotor speed must be non-negative")
    tip2 = (omega * rotor.r) ** 2
    thrust = rotor.ct0 * rho * rotor.S * tip2
    torque = rotor.cq0 * rho * rotor.S * tip2 * rotor.r
    if thrust.ndim == 0:
        return float(thrust), float(torque)
    return thrust, torque


def motor_electromechanical(u, omega, load_torque, motor: MotorChar, rotor_inertia=0.0):
    """Resistive DC motor without inductance driving an inertial load."""
    if motor.R <= 0:
        raise DynamicsError("winding resistance must be positive")
    current = (u - motor.Ke * omega) / motor.R
    torque = motor.Ke * current
    omega_dot = (torque - load_torque - motor.Kd * omega) / (motor.J_mot + rotor_inertia)
    return {
        "current": current,
        "torque": torque,
        "omega_dot": omega_dot,
        "loss": motor.R * current ** 2,
    }


def thermal_step(temp_rise, loss, motor: MotorChar):
    """First-order winding temperature rise, returns d(temp_rise)/dt [K/s]."""
    return (motor.Rth * loss - temp_rise) / motor.tau_th


# ---------------------------------------------------------------------------
# state and scenario types
# ---------------------------------------------------------------------------

@dataclass
class VehicleState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    angular_rate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotor_speed: np.ndarray = field(default_factory=lambda: np.zeros(N_ROTORS))
    motor_temp_rise: np.ndarray = field(default_factory=lambda: np.zeros(N_ROTORS))
    energy_consumed: float = 0.0
    integrators: np.ndarray = field(default_factory=lambda: np.zeros(K.NINT))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.position, self.velocity, self.attitude, self.angular_rate,
            self.rotor_speed, self.motor_temp_rise, [self.energy_consumed],
        ]).astype(float)

    @classmethod
    def from_vector(cls, x, integrators=None) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(
            position=x[K.POS:K.POS + 3].copy(),
            velocity=x[K.VEL:K.VEL + 3].copy(),
            attitude=x[K.QUAT:K.QUAT + 4].copy(),
            angular_rate=x[K.RATE:K.RATE + 3].copy(),
            rotor_speed=x[K.OMEGA:K.OMEGA + N_ROTORS].copy(),
            motor_temp_rise=x[K.TEMP:K.TEMP + N_ROTORS].copy(),
            energy_consumed=float(x[K.ENERGY]),
            integrators=np.zeros(K.NINT) if integrators is None else np.asarray(integrators, float),
        )

    @property
    def euler(self):
        return K.euler_from_quat(np.asarray(self.attitude, float))


@dataclass(frozen=True)
class FaultScenario:
    """Single rotor failure; ``failed_rotor`` is 1-based, ``None`` for a healthy flight."""

    failed_rotor: int | None = None
    fail_time: float = 0.0

    def __post_init__(self):
        if self.failed_rotor is not None and not (1 <= self.failed_rotor <= N_ROTORS):
            raise DynamicsError(f"failed_rotor must be in 1..{N_ROTORS}")
        if self.fail_time < 0:
            raise DynamicsError("fail_time must be non-negative")

    @property
    def index(self) -> int:
        return -1 if self.failed_rotor is None else self.failed_rotor - 1

    @classmethod
    def parse(cls, spec: str | None) -> "FaultScenario":
        """Parse ``"ROTOR:TIME"`` (e.g. ``"1:3.0"``); empty or ``"none"`` means healthy."""
        if spec is None or spec.strip().lower() in ("", "none"):
            return cls()
        rotor, _, time = spec.partition(":")
        return cls(int(rotor), float(time or 0.0))


NO_FAULT = FaultScenario()

SEGMENT_TYPES = ("takeoff", "climb", "cruise", "hover", "descend", "land")


@dataclass(frozen=True)
class Segment:
    type: str
    duration: float
    target: tuple
    yaw: float = 0.0


@dataclass(frozen=True)
class MissionProfile:
    """Ordered flight segments; each one moves the position setpoint from the
    previous target to its own along a quintic smoothstep."""

    start: tuple
    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise DynamicsError("mission needs at least one segment")
        for s in self.segments:
            if s.type not in SEGMENT_TYPES:
                raise DynamicsError(f"unknown segment type {s.type!r}")
            if not s.duration > 0:
                raise DynamicsError("segment durations must be positive")

    @property
    def duration(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    @classmethod
    def from_dict(cls, d: dict) -> "MissionProfile":
        segs = tuple(
            Segment(s["type"], float(s["duration"]), tuple(float(v) for v in s["target"]),
                    float(s.get("yaw", 0.0)))
            for s in d["segments"]
        )
        return cls(tuple(float(v) for v in d.get("start", (0.0, 0.0, 0.0))), segs)

    def to_dict(self) -> dict:
        return {
            "start": list(self.start),
            "segments": [
                {"type": s.type, "duration": s.duration, "target": list(s.target), "yaw": s.yaw}
                for s in self.segments
            ],
        }

    @classmethod
    def hover(cls, duration: float, position=(0.0, 0.0, 0.0)) -> "MissionProfile":
        return cls(tuple(position), (Segment("hover", duration, tuple(position)),))

    def setpoints(self, dt: float) -> np.ndarray:
        """Setpoint table sampled at ``k*dt`` for ``k = 0..round(T/dt)``."""
        n = int(round(self.duration / dt))
        t = np.arange(n + 1) * dt
        table = np.zeros((n + 1, K.NSP))
        start = np.array(self.start, dtype=float)
        t0 = 0.0
        yaw0 = self.segments[0].yaw
        table[:, 0:3] = start
        table[:, 6] = yaw0
        for seg in self.segments:
            end = np.array(seg.target, dtype=float)
            sel = t >= t0 - 1e-12
            tau = np.clip((t[sel] - t0) / seg.duration, 0.0, 1.0)
            s = tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)
            ds = 30.0 * tau ** 2 * (1.0 - tau) ** 2 / seg.duration
            table[sel, 0:3] = start + np.outer(s, end - start)
            table[sel, 3:6] = np.outer(ds, end - start)
            table[sel, 6] = yaw0 + s * (seg.yaw - yaw0)
            start, yaw0, t0 = end, seg.yaw, t0 + seg.duration
        return table


def load_mission(path=None) -> MissionProfile:
    path = _DATA / "mission.json" if path is None else Path(path)
    with open(path) as fh:
        return MissionProfile.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# vehicle packing and derivative
# ---------------------------------------------------------------------------

def rotor_positions(params: VehicleParams):
    """Planar (x, y) of the eight rotor hubs in body axes."""
    ang = np.concatenate([ARM_ANGLES, ARM_ANGLES])
    return params.arm.l * np.cos(ang), params.arm.l * np.sin(ang)


def thrust_constant(params: VehicleParams) -> float:
    ro = params.rotor
    return ro.ct0 * params.rho * ro.S * ro.r ** 2


def torque_constant(params: VehicleParams) -> float:
    ro = params.rotor
    return ro.cq0 * params.rho * ro.S * ro.r ** 3


def pack(params: VehicleParams) -> np.ndarray:
    """Flatten the parameters consumed by the compiled kernels."""
    P = np.zeros(K.NP)
    mo = params.motor
    P[K.P_M] = params.m_total
    P[K.P_G] = params.g
    P[K.P_IXX:K.P_IZZ + 1] = params.I_body
    P[K.P_R] = mo.R
    P[K.P_KE] = mo.Ke
    P[K.P_KD] = mo.Kd
    P[K.P_JTOT] = mo.J_mot + params.rotor.J_rot
    P[K.P_RTH] = mo.Rth
    P[K.P_TAUTH] = mo.tau_th
    P[K.P_KT] = thrust_constant(params)
    P[K.P_KQ] = torque_constant(params)
    P[K.P_UBAT] = params.battery.u_bat
    P[K.P_TILT] = MAX_TILT
    x, y = rotor_positions(params)
    P[K.P_X:K.P_X + N_ROTORS] = x
    P[K.P_Y:K.P_Y + N_ROTORS] = y
    P[K.P_SPIN:K.P_SPIN + N_ROTORS] = SPIN
    return P


def state_derivative(state, voltages, params: VehicleParams, fault: FaultScenario = NO_FAULT,
                     t: float = 0.0, packed=None):
    """Time derivative of the 30-element state vector (layout of :class:`VehicleState`).

    ``state`` may be a :class:`VehicleState` or a raw vector.  Returns
    ``(dx, aux)`` where ``aux`` has per-rotor ``current`` and ``torque`` and the
    total electrical ``power``.
    """
    x = state.to_vector() if isinstance(state, VehicleState) else np.asarray(state, dtype=float)
    u = np.asarray(voltages, dtype=float)
    if u.shape != (N_ROTORS,):
        raise DynamicsError("expected 8 motor voltages")
    P = pack(params) if packed is None else packed
    dx = np.empty(K.NX)
    cur = np.empty(N_ROTORS)
    tor = np.empty(N_ROTORS)
    power = K.rhs(x, u, P, fault.index, float(fault.fail_time), float(t), dx, cur, tor)
    if not np.all(np.isfinite(dx)):
        raise SimulationDiverged("non-finite state derivative", None)
    return dx, {"current": cur, "torque": tor, "power": power}


@dataclass(frozen=True)
class HoverTrim:
    omega_hover: float
    u_hover: float
    per_rotor_thrust: float


def steady_voltage(omega, params: VehicleParams):
    """Voltage holding rotor speed ``omega`` against aerodynamic and viscous drag."""
    mo = params.motor
    load = torque_constant(params) * omega ** 2 + mo.Kd * omega
    return mo.Ke * omega + mo.R * load / mo.Ke


def trim_hover(params: VehicleParams) -> HoverTrim:
    f = params.m_total * params.g / N_ROTORS
    omega = math.sqrt(f / thrust_constant(params))
    if omega > params.rotor.omega_max:
        raise TrimError(f"hover speed {omega:.1f} rad/s exceeds rotor limit {params.rotor.omega_max:.1f}")
    u = float(steady_voltage(omega, params))
    if u > params.battery.u_bat:
        raise TrimError(f"hover voltage {u:.2f} V exceeds battery voltage {params.battery.u_bat:.2f}")
    return HoverTrim(omega, u, f)


def hover_state(params: VehicleParams, position=(0.0, 0.0, 0.0), yaw=0.0) -> VehicleState:
    trim = trim_hover(params)
    q = np.empty(4)
    K.quat_from_euler(0.0, 0.0, yaw, q)
    return VehicleState(position=np.array(position, float), attitude=q,
                        rotor_speed=np.full(N_ROTORS, trim.omega_hover))


# ---------------------------------------------------------------------------
# mission simulation
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    ["time", "x", "y", "z", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "p", "q", "r"]
    + [f"omega_{j}" for j in range(1, 9)]
    + [f"temp_rise_{j}" for j in range(1, 9)]
    + ["energy", "int_vx", "int_vy", "int_vz", "int_r"]
    + [f"u_{j}" for j in range(1, 9)]
    + [f"i_{j}" for j in range(1, 9)]
    + [f"torque_{j}" for j in range(1, 9)]
    + ["power", "x_d", "y_d", "z_d", "vx_ff", "vy_ff", "vz_ff", "psi_d"]
)


@dataclass
class SimulationTrace:
    """Uniformly sampled closed-loop trajectory (SI units)."""

    dt: float
    time: np.ndarray
    states: np.ndarray
    integrators: np.ndarray
    voltages: np.ndarray
    currents: np.ndarray
    torques: np.ndarray
    power: np.ndarray
    virtual: np.ndarray
    saturated: np.ndarray
    setpoints: np.ndarray
    fault: FaultScenario = NO_FAULT
    diverged: bool = False

    @property
    def position(self):
        return self.states[:, K.POS:K.POS + 3]

    @property
    def rotor_speed(self):
        return self.states[:, K.OMEGA:K.OMEGA + N_ROTORS]

    @property
    def temp_rise(self):
        return self.states[:, K.TEMP:K.TEMP + N_ROTORS]

    @property
    def energy(self):
        return self.states[:, K.ENERGY]

    @property
    def E_mot(self) -> float:
        return float(self.energy[-1])

    def euler(self) -> np.ndarray:
        return np.array([K.euler_from_quat(q) for q in self.states[:, K.QUAT:K.QUAT + 4]])

    def position_error(self) -> np.ndarray:
        return np.linalg.norm(self.position - self.setpoints[:, 0:3], axis=1)

    def attitude_error(self) -> np.ndarray:
        """Largest of |roll|, |pitch| and the wrapped yaw tracking error (rad)."""
        eul = self.euler()
        dpsi = np.angle(np.exp(1j * (eul[:, 2] - self.setpoints[:, 6])))
        return np.max(np.abs(np.column_stack([eul[:, :2], dpsi])), axis=1)

    def recovery_time(self, pos_tol: float = 0.1, att_tol: float = np.deg2rad(2.0)) -> float:
        """Time from the fault until position and attitude errors stay inside the tolerances.

        Returns 0 when the tolerances are never left and ``inf`` when they are
        still violated at the end of the trace.
        """
        t0 = self.fault.fail_time if self.fault.failed_rotor is not None else 0.0
        after = self.time >= t0
        bad = after & ((self.position_error() >= pos_tol) | (self.attitude_error() >= att_tol))
        if not bad.any():
            return 0.0
        k = int(np.flatnonzero(bad)[-1])
        if k == len(self.time) - 1:
            return math.inf
        return float(self.time[k + 1] - t0)

    def summary(self) -> dict:
        return {
            "duration": float(self.time[-1]),
            "E_mot": self.E_mot,
            "max_torque": float(np.max(np.abs(self.torques))),
            "max_temp_rise": float(np.max(self.temp_rise)),
            "max_rotor_speed": float(np.max(self.rotor_speed)),
            "peak_power": float(np.max(self.power)),
            "max_position_error": float(np.max(self.position_error())),
            "diverged": bool(self.diverged),
        }

    def table(self) -> np.ndarray:
        return np.column_stack([
            self.time, self.states, self.integrators[:, :4], self.voltages,
            self.currents, self.torques, self.power, self.setpoints[:, :7],
        ])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.table():
                w.writerow([repr(float(v)) for v in row])


def simulate_mission(params: VehicleParams, gains, mission: MissionProfile,
                     fault: FaultScenario = NO_FAULT, dt: float = 1e-3,
                     initial_state: VehicleState | None = None) -> SimulationTrace:
    """Fixed-step RK4 simulation of the vehicle closed with the cascade controller.

    The controller is evaluated once per step and its voltages held over the
    step.  Raises :class:`SimulationDiverged` (with the partial trace) if the
    state becomes non-finite or leaves the envelope.
    """
    from .control import ControlGains, allocation

    if not dt > 0:
        raise DynamicsError("dt must be positive")
    if not isinstance(gains, ControlGains):
        gains = ControlGains.from_array(gains)
    table = mission.setpoints(dt)
    n = table.shape[0]
    if initial_state is None:
        initial_state = hover_state(params, mission.start, mission.segments[0].yaw)
    P = pack(params)
    Pinv, base = allocation(params)
    x0 = initial_state.to_vector()
    integ0 = np.asarray(initial_state.integrators, float)

    X = np.zeros((n, K.NX))
    INT = np.zeros((n, K.NINT))
    U = np.zeros((n, N_ROTORS))
    CUR = np.zeros((n, N_ROTORS))
    TOR = np.zeros((n, N_ROTORS))
    PWR = np.zeros(n)
    VIRT = np.zeros((n, 4))
    SAT = np.zeros(n, dtype=np.bool_)
    status, m = K.run(x0, integ0, table, gains.as_array(), P, Pinv, base, fault.index,
                      float(fault.fail_time), float(dt), BLOWUP,
                      X, INT, U, CUR, TOR, PWR, VIRT, SAT)
    trace = SimulationTrace(
        dt=dt, time=np.arange(m) * dt, states=X[:m], integrators=INT[:m], voltages=U[:m],
        currents=CUR[:m], torques=TOR[:m], power=PWR[:m], virtual=VIRT[:m], saturated=SAT[:m],
        setpoints=table[:m], fault=fault, diverged=status != K.STATUS_OK,
    )
    if trace.diverged:
        raise SimulationDiverged(f"simulation diverged at t={trace.time[-1]:.3f} s", trace)
    return trace
