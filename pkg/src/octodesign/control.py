"""Cascaded fixed-structure controller with 16 tunable gains, and the 8-rotor mixer.

Cascade (all gains in 1/s so they transfer between vehicle designs)::

    position P -> velocity PI -> tilt / thrust -> attitude P -> rate P (p, q), PI (r)

Thrust and torques are scaled by the vehicle mass and body inertia.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .dynamics import SPIN, VehicleState, pack, rotor_positions, torque_constant, thrust_constant
from .linear import StateSpace
from .sizing import N_ROTORS, VehicleParams

GAIN_NAMES = (
    "kp_x", "kp_y", "kp_z",
    "kp_vx", "kp_vy", "kp_vz",
    "ki_vx", "ki_vy", "ki_vz",
    "kp_phi", "kp_theta", "kp_psi",
    "kp_p", "kp_q",
    "kp_r", "ki_r",
)
N_GAINS = len(GAIN_NAMES)

# (stage, axis) of each gain in the cascade
GAIN_LOCATIONS = {
    "kp_x": ("position", "x"), "kp_y": ("position", "y"), "kp_z": ("position", "z"),
    "kp_vx": ("velocity_p", "x"), "kp_vy": ("velocity_p", "y"), "kp_vz": ("velocity_p", "z"),
    "ki_vx": ("velocity_i", "x"), "ki_vy": ("velocity_i", "y"), "ki_vz": ("velocity_i", "z"),
    "kp_phi": ("attitude", "phi"), "kp_theta": ("attitude", "theta"), "kp_psi": ("attitude", "psi"),
    "kp_p": ("rate_p", "p"), "kp_q": ("rate_p", "q"),
    "kp_r": ("rate_p", "r"), "ki_r": ("rate_i", "r"),
}

REFERENCE_NAMES = ("x_d", "y_d", "z_d", "phi_d", "theta_d", "psi_d")
MEASUREMENT_NAMES = ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r")
VIRTUAL_NAMES = ("T", "tau_x", "tau_y", "tau_z")


class AllocationError(ValueError):
    pass


@dataclass(frozen=True)
class ControlGains:
    kp_x: float = 0.0
    kp_y: float = 0.0
    kp_z: float = 0.0
    kp_vx: float = 0.0
    kp_vy: float = 0.0
    kp_vz: float = 0.0
    ki_vx: float = 0.0
    ki_vy: float = 0.0
    ki_vz: float = 0.0
    kp_phi: float = 0.0
    kp_theta: float = 0.0
    kp_psi: float = 0.0
    kp_p: float = 0.0
    kp_q: float = 0.0
    kp_r: float = 0.0
    ki_r: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("gains must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in GAIN_NAMES], dtype=float)

    @classmethod
    def from_array(cls, x) -> "ControlGains":
        x = np.asarray(x, dtype=float).ravel()
        if x.size != N_GAINS:
            raise ValueError(f"expected {N_GAINS} gains, got {x.size}")
        return cls(*(float(v) for v in x))

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in GAIN_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlGains":
        missing = set(GAIN_NAMES) - set(d)
        extra = set(d) - set(GAIN_NAMES)
        if missing or extra:
            raise ValueError(f"gain file mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        return cls(**{n: float(d[n]) for n in GAIN_NAMES})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ControlGains":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# allocation
# ---------------------------------------------------------------------------

def allocation_matrix(params: VehicleParams) -> np.ndarray:
    """4x8 map from per-rotor thrust to (T, tau_x, tau_y, tau_z)."""
    x, y = rotor_positions(params)
    kappa = torque_constant(params) / thrust_constant(params)
    return np.vstack([np.ones(N_ROTORS), y, -x, -SPIN * kappa])


def _mask(fault_mask):
    if fault_mask is None:
        return np.zeros(N_ROTORS, dtype=bool)
    m = np.asarray(fault_mask, dtype=bool)
    if m.shape != (N_ROTORS,):
        raise AllocationError("fault mask must have 8 entries")
    if m.sum() > 1:
        raise AllocationError("at most one rotor may be masked")
    return m


def allocation(params: VehicleParams, fault_mask=None):
    """Pseudo-inverse allocation about hover.

    Returns ``(Pinv, base)`` such that the per-rotor thrusts for a virtual
    command ``v`` are ``base + Pinv @ v``; masked columns are removed before
    inversion so a masked rotor always receives zero thrust.
    """
    mask = _mask(fault_mask)
    B = allocation_matrix(params)
    Bm = B.copy()
    Bm[:, mask] = 0.0
    if np.linalg.matrix_rank(Bm) < 4:
        raise AllocationError("allocation matrix lost rank after masking")
    Pinv = np.linalg.pinv(Bm)
    Pinv[mask] = 0.0
    f0 = np.full(N_ROTORS, params.m_total * params.g / N_ROTORS)
    f0[mask] = 0.0
    base = f0 - Pinv @ (Bm @ f0)
    return Pinv, base


def rotor_thrusts(virtual, params: VehicleParams, fault_mask=None) -> np.ndarray:
    Pinv, base = allocation(params, fault_mask)
    return base + Pinv @ np.asarray(virtual, float)


def mixer(virtual, fault_mask, params: VehicleParams) -> np.ndarray:
    """Map ``(T, tau_x, tau_y, tau_z)`` to eight motor voltages clamped to ``[0, u_bat]``."""
    Pinv, base = allocation(params, fault_mask)
    u = np.empty(N_ROTORS)
    K.mix(np.asarray(virtual, float), pack(params), Pinv, base, u)
    return u


def mixer_jacobian(virtual, params: VehicleParams, fault_mask=None, dead=None) -> np.ndarray:
    """d(voltages)/d(virtual) of the unsaturated mixer; rows of ``dead`` rotors are zero."""
    Pinv, base = allocation(params, fault_mask)
    f = base + Pinv @ np.asarray(virtual, float)
    kT = thrust_constant(params)
    kQ = torque_constant(params)
    mo = params.motor
    J = np.zeros((N_ROTORS, 4))
    for j in range(N_ROTORS):
        if dead is not None and j == dead:
            continue
        if f[j] <= 0:
            continue
        w = np.sqrt(f[j] / kT)
        du_dw = mo.Ke + mo.R * (2.0 * kQ * w + mo.Kd) / mo.Ke
        J[j] = du_dw / (2.0 * kT * w) * Pinv[j]
    return J


# ---------------------------------------------------------------------------
# control law
# ---------------------------------------------------------------------------

def controller_step(setpoints, state, integrators, gains: ControlGains, params: VehicleParams,
                    dt: float, fault_mask=None) -> dict:
    """One evaluation of the cascade.

    ``setpoints`` is ``[x_d, y_d, z_d, vx_ff, vy_ff, vz_ff, psi_d]`` optionally
    followed by additive roll/pitch setpoint offsets.  ``integrators`` holds
    the three velocity and the yaw-rate integrators, optionally followed by
    the two reserved slots of :class:`VehicleState`.  Integrators are frozen
    whenever the mixer or the tilt limit saturates.
    """
    sp = np.zeros(K.NSP)
    s = np.asarray(setpoints, float).ravel()
    sp[:s.size] = s
    x = state.to_vector() if isinstance(state, VehicleState) else np.asarray(state, float)
    integ = np.zeros(K.NINT)
    given = np.asarray(integrators, float).ravel()
    if given.size not in (4, K.NINT):
        raise ValueError(f"expected 4 or {K.NINT} integrator states, got {given.size}")
    integ[:given.size] = given
    Pinv, base = allocation(params, fault_mask)
    u = np.empty(N_ROTORS)
    virt = np.empty(4)
    new = np.empty(K.NINT)
    sat = K.control_law(x, sp, integ, gains.as_array(), pack(params),
                        Pinv, base, float(dt), u, virt, new)
    return {"virtual": virt, "voltages": u, "integrators": new, "saturated": bool(sat)}


def controller_as_lti(gains: ControlGains, params: VehicleParams) -> StateSpace:
    """Hover linearization of the cascade (zero yaw, no saturation, no feed-forward).

    Inputs: the six references of :data:`REFERENCE_NAMES` (``phi_d``/``theta_d``
    are additive offsets on the inner-loop setpoints) followed by the twelve
    measurements of :data:`MEASUREMENT_NAMES`.  Outputs: deviations of the
    virtual commands from hover.  Integrators with a zero gain are dropped.
    """
    k = gains.to_dict()
    m, g = params.m_total, params.g
    ixx, iyy, izz = params.I_body
    integ_gain = [k["ki_vx"], k["ki_vy"], k["ki_vz"], k["ki_r"]]
    states = [i for i, v in enumerate(integ_gain) if v != 0.0]
    nx = len(states)
    nin = 18
    col = {name: 6 + i for i, name in enumerate(MEASUREMENT_NAMES)}

    def e(i):
        v = np.zeros(nx + nin)
        v[i] = 1.0
        return v

    def ref(i):
        return e(nx + i)

    def meas(name):
        return e(nx + col[name])

    def integ(i):
        return e(states.index(i)) if i in states else np.zeros(nx + nin)

    ev, acc = [], []
    for ax, (pn, vn) in enumerate((("x", "vx"), ("y", "vy"), ("z", "vz"))):
        vd = k["kp_" + pn] * (ref(ax) - meas(pn))
        ev.append(vd - meas(vn))
        acc.append(k["kp_v" + pn] * ev[-1] + integ_gain[ax] * integ(ax))
    phi_d = -acc[1] / g + ref(3)
    theta_d = acc[0] / g + ref(4)
    p_d = k["kp_phi"] * (phi_d - meas("phi"))
    q_d = k["kp_theta"] * (theta_d - meas("theta"))
    r_d = k["kp_psi"] * (ref(5) - meas("psi"))
    er = r_d - meas("r")
    out = np.vstack([
        m * acc[2],
        ixx * k["kp_p"] * (p_d - meas("p")),
        iyy * k["kp_q"] * (q_d - meas("q")),
        izz * (k["kp_r"] * er + integ_gain[3] * integ(3)),
    ])
    rates = [ev[0], ev[1], ev[2], er]
    dyn = np.vstack([rates[i] for i in states]) if nx else np.zeros((0, nx + nin))
    return StateSpace(
        dyn[:, :nx], dyn[:, nx:], out[:, :nx], out[:, nx:],
        inputs=REFERENCE_NAMES + MEASUREMENT_NAMES, outputs=VIRTUAL_NAMES,
    )
