"""LTI models at hover: linearization, interconnection, H-infinity norms, poles, weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class LinearError(ValueError):
    pass


class AlgebraicLoopError(LinearError):
    """Feedback interconnection is ill-posed (``I - D_loop`` singular)."""


def _as2d(M, rows, cols):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros((rows, cols))
    return M.reshape(rows, cols) if M.ndim < 2 else M


@dataclass
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    inputs: tuple = ()
    outputs: tuple = ()
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        p, m = D.shape
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0] if A.size else 0
        self.A = _as2d(A, n, n)
        self.B = _as2d(self.B, n, m)
        self.C = _as2d(self.C, p, n)
        self.D = D
        if self.A.shape != (n, n) or self.B.shape != (n, m) or self.C.shape != (p, n):
            raise LinearError("inconsistent state-space dimensions")
        for M in (self.A, self.B, self.C, self.D):
            if not np.all(np.isfinite(M)):
                raise LinearError("state-space matrices must be finite")
        self.inputs = tuple(self.inputs) or tuple(f"u{i}" for i in range(m))
        self.outputs = tuple(self.outputs) or tuple(f"y{i}" for i in range(p))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self):
        return self.D.shape

    def _index(self, sel, names):
        if sel is None:
            return list(range(len(names)))
        if isinstance(sel, (int, np.integer, str)):
            sel = [sel]
        return [names.index(s) if isinstance(s, str) else int(s) for s in sel]

    def select(self, outputs=None, inputs=None) -> "StateSpace":
        oi = self._index(outputs, self.outputs)
        ii = self._index(inputs, self.inputs)
        return StateSpace(self.A, self.B[:, ii], self.C[oi], self.D[np.ix_(oi, ii)],
                          tuple(self.inputs[i] for i in ii), tuple(self.outputs[i] for i in oi))

    def evaluate(self, s) -> np.ndarray:
        """Transfer matrix at complex frequency ``s``."""
        if self.n == 0:
            return self.D.astype(complex)
        X = np.linalg.solve(s * np.eye(self.n) - self.A, self.B)
        return self.C @ X + self.D

    def freqresp(self, omega) -> np.ndarray:
        """Frequency response, shape ``(len(omega), p, m)``."""
        return np.array([self.evaluate(1j * w) for w in np.atleast_1d(omega)])


def series(first: StateSpace, second: StateSpace) -> StateSpace:
    """``second * first`` (signal flows through ``first`` then ``second``)."""
    if first.shape[0] != second.shape[1]:
        raise LinearError("series dimension mismatch")
    n1, n2 = first.n, second.n
    A = np.block([[first.A, np.zeros((n1, n2))], [second.B @ first.C, second.A]])
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    D = second.D @ first.D
    return StateSpace(A, B, C, D, first.inputs, second.outputs)


def diagonal(systems) -> StateSpace:
    """Block-diagonal append of several systems."""
    A = sla.block_diag(*[s.A for s in systems]) if any(s.n for s in systems) else np.zeros((0, 0))
    B = sla.block_diag(*[s.B if s.n else np.zeros((0, s.shape[1])) for s in systems])
    C = sla.block_diag(*[s.C if s.n else np.zeros((s.shape[0], 0)) for s in systems])
    D = sla.block_diag(*[s.D for s in systems])
    n = A.shape[0]
    return StateSpace(A, B.reshape(n, -1), C.reshape(-1, n), D)


def static_gain(D, inputs=(), outputs=()) -> StateSpace:
    D = np.atleast_2d(np.asarray(D, float))
    return StateSpace(np.zeros((0, 0)), np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D,
                      inputs, outputs)


# ---------------------------------------------------------------------------
# poles and norms
# ---------------------------------------------------------------------------

def poles(sys: StateSpace) -> np.ndarray:
    """Eigenvalues of A ordered by real part, then imaginary part."""
    if sys.n == 0:
        return np.zeros(0, dtype=complex)
    try:
        lam = np.linalg.eigvals(sys.A)
    except np.linalg.LinAlgError as exc:
        raise LinearError(f"eigenvalue computation failed: {exc}") from exc
    order = np.lexsort((lam.imag, lam.real))
    return lam[order]


def spectral_abscissa(A) -> float:
    if A.shape[0] == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def _sigma_max(sys, w):
    return float(np.linalg.svd(sys.evaluate(1j * w), compute_uv=False)[0])


def _imaginary_frequencies(sys, gamma, tol=1e-8):
    """Frequencies where ``gamma`` is a singular value of ``G(jw)`` (Hamiltonian test)."""
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    p, m = D.shape
    R = D.T @ D - gamma ** 2 * np.eye(m)
    S = D @ D.T - gamma ** 2 * np.eye(p)
    Ri = np.linalg.inv(R)
    Si = np.linalg.inv(S)
    H = np.block([
        [A - B @ Ri @ D.T @ C, -gamma * B @ Ri @ B.T],
        [gamma * C.T @ Si @ C, -A.T + C.T @ D @ Ri @ B.T],
    ])
    lam = np.linalg.eigvals(H)
    scale = max(1.0, np.abs(lam).max())
    imag = lam[np.abs(lam.real) <= tol * scale]
    return np.sort(np.unique(np.round(np.abs(imag.imag), 12)))


def _frequency_grid(lam, n=200):
    mag = np.abs(lam)
    mag = mag[mag > 0]
    if mag.size == 0:
        lo, hi = 1e-3, 1e3
    else:
        lo, hi = mag.min() / 10.0, mag.max() * 10.0
    grid = np.logspace(math.log10(lo), math.log10(hi), n)
    peaks = np.abs(lam.imag[lam.imag > 0])
    return np.concatenate([[0.0], grid, peaks])


def hinf_norm(sys: StateSpace, rel_tol: float = 1e-3) -> float:
    """H-infinity norm by Hamiltonian bisection.

    The bracket starts from the largest gain found on a coarse grid (lower
    bound) and 1.5 times that value, widened until the Hamiltonian has no
    imaginary eigenvalue (upper bound).  Each level crossing is used to lift
    the lower bound by evaluating the gain between consecutive crossing
    frequencies.  Returns the upper end of a bracket satisfying
    ``(hi - lo) / lo <= rel_tol``, or ``inf`` when A is not Hurwitz.
    """
    if not (0.0 < rel_tol <= 0.1):
        raise LinearError("rel_tol must lie in (0, 0.1]")
    d_gain = float(np.linalg.svd(sys.D, compute_uv=False)[0]) if sys.D.size else 0.0
    if sys.n == 0:
        return d_gain
    lam = np.linalg.eigvals(sys.A)
    if np.max(lam.real) >= 0.0:
        return math.inf
    grid = _frequency_grid(lam)
    lo = max(d_gain, max(_sigma_max(sys, w) for w in grid))
    if lo == 0.0:
        return 0.0
    hi = 1.5 * lo
    while True:
        freqs = _imaginary_frequencies(sys, hi)
        if freqs.size == 0:
            break
        lo = max(lo, _crossing_lower_bound(sys, freqs))
        hi = 2.0 * max(hi, lo)
    while (hi - lo) / lo > rel_tol:
        gamma = math.sqrt(lo * hi)
        freqs = _imaginary_frequencies(sys, gamma)
        if freqs.size == 0:
            hi = gamma
        else:
            lo = max(gamma, _crossing_lower_bound(sys, freqs))
    return hi


def _crossing_lower_bound(sys, freqs):
    if freqs.size == 1:
        return _sigma_max(sys, freqs[0])
    mids = 0.5 * (freqs[:-1] + freqs[1:])
    return max(_sigma_max(sys, w) for w in np.concatenate([freqs, mids]))


def grid_peak(sys: StateSpace, omega) -> float:
    """Largest singular value over an explicit frequency grid (reference oracle)."""
    resp = sys.freqresp(omega)
    return float(np.max(np.linalg.svd(resp, compute_uv=False)[..., 0]))


class ModalResponse:
    """Fast frequency response through one eigendecomposition of A.

    ``G(jw) = C V diag(1/(jw - lam)) V^-1 B + D``; falls back to direct solves
    when the eigenvector basis is ill-conditioned.
    """

    def __init__(self, sys: StateSpace):
        self.sys = sys
        self.lam, V = np.linalg.eig(sys.A) if sys.n else (np.zeros(0), np.zeros((0, 0)))
        self.direct = sys.n > 0 and np.linalg.cond(V) > 1e10
        if not self.direct and sys.n:
            self.CV = sys.C @ V
            self.VB = np.linalg.solve(V, sys.B.astype(complex))

    def response(self, omega, outputs=None, inputs=None) -> np.ndarray:
        oi = slice(None) if outputs is None else outputs
        ii = slice(None) if inputs is None else inputs
        D = self.sys.D[oi][:, ii] if outputs is not None or inputs is not None else self.sys.D
        if self.sys.n == 0:
            return np.broadcast_to(D, (len(omega),) + D.shape).astype(complex)
        if self.direct:
            return np.array([self.sys.evaluate(1j * w)[oi][:, ii] for w in omega])
        invd = 1.0 / (1j * np.asarray(omega)[:, None] - self.lam[None, :])
        CV = self.CV[oi]
        VB = self.VB[:, ii]
        return np.einsum("pk,wk,km->wpm", CV, invd, VB) + D


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def weight_w1(omega_b: float, M: float, eps: float, channels: int = 1) -> StateSpace:
    """Low-frequency performance weight ``(s/M + w_b) / (s + w_b eps)`` per channel."""
    if not (omega_b > 0 and M > 1 and 0 < eps < 1):
        raise LinearError("W1 requires omega_b > 0, M > 1, 0 < eps < 1")
    a = omega_b * eps
    one = StateSpace([[-a]], [[1.0]], [[omega_b - a / M]], [[1.0 / M]])
    return one if channels == 1 else diagonal([one] * channels)


def weight_w2(omega_c: float, gain_hf: float, channels: int = 1) -> StateSpace:
    """High-pass control-effort weight ``gain_hf * s / (s + w_c)`` per channel."""
    if not (omega_c > 0 and gain_hf > 0):
        raise LinearError("W2 requires omega_c > 0 and gain_hf > 0")
    one = StateSpace([[-omega_c]], [[1.0]], [[-gain_hf * omega_c]], [[gain_hf]])
    return one if channels == 1 else diagonal([one] * channels)


def w1_response(omega, omega_b, M, eps):
    s = 1j * np.asarray(omega)
    return (s / M + omega_b) / (s + omega_b * eps)


def w2_response(omega, omega_c, gain_hf):
    s = 1j * np.asarray(omega)
    return gain_hf * s / (s + omega_c)


# ---------------------------------------------------------------------------
# interconnection
# ---------------------------------------------------------------------------

def connect_closed_loop(plant: StateSpace, controller: StateSpace, n_ref: int) -> StateSpace:
    """Close ``plant`` with ``controller`` whose inputs are ``[references, plant outputs]``.

    The returned system maps the references to ``[plant outputs, plant inputs]``.
    """
    p, m = plant.shape
    if controller.shape != (m, n_ref + p):
        raise LinearError(f"controller must be {m}x{n_ref + p}, got {controller.shape}")
    Dr = controller.D[:, :n_ref]
    Dy = controller.D[:, n_ref:]
    Br = controller.B[:, :n_ref]
    By = controller.B[:, n_ref:]
    L = np.eye(m) - Dy @ plant.D
    if np.linalg.cond(L) > 1e12:
        raise AlgebraicLoopError("feedback interconnection is ill-posed")
    Li = np.linalg.inv(L)
    # u = Li (Ck xk + Dr r + Dy C x)
    Ux = Li @ Dy @ plant.C
    Uk = Li @ controller.C
    Ur = Li @ Dr
    # y = C x + D u
    Yx = plant.C + plant.D @ Ux
    Yk = plant.D @ Uk
    Yr = plant.D @ Ur
    A = np.block([
        [plant.A + plant.B @ Ux, plant.B @ Uk],
        [By @ Yx, controller.A + By @ Yk],
    ])
    B = np.vstack([plant.B @ Ur, Br + By @ Yr])
    C = np.vstack([np.hstack([Yx, Yk]), np.hstack([Ux, Uk])])
    D = np.vstack([Yr, Ur])
    return StateSpace(A, B, C, D, controller.inputs[:n_ref], plant.outputs + plant.inputs)


def sensitivity(closed: StateSpace, refs, outs) -> StateSpace:
    """Output sensitivity (reference -> tracking error) ``I - T`` for paired channels."""
    T = closed.select(outs, refs)
    if T.shape[0] != T.shape[1]:
        raise LinearError("sensitivity needs as many outputs as references")
    return StateSpace(T.A, T.B, -T.C, np.eye(T.shape[0]) - T.D, T.inputs,
                      tuple("e_" + o for o in T.outputs))


def dump_frequency_response(path, sys: StateSpace, omega):
    """Write ``omega`` and the magnitude of every channel to CSV."""
    resp = np.abs(sys.freqresp(omega))
    names = [f"{o}<-{i}" for o in sys.outputs for i in sys.inputs]
    data = np.column_stack([omega, resp.reshape(len(omega), -1)])
    np.savetxt(path, data, delimiter=",", header=",".join(["omega"] + names), comments="")


# ---------------------------------------------------------------------------
# linearization of the vehicle
# ---------------------------------------------------------------------------

PLANT_STATES = (
    ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r")
    + tuple(f"omega_{j}" for j in range(1, 9))
)
MEASURED = PLANT_STATES[:12]
VOLTAGES = tuple(f"u_{j}" for j in range(1, 9))


def _reduced_rhs(xr, u, P, dead):
    from . import _kernels as K

    x = np.zeros(K.NX)
    x[K.POS:K.POS + 3] = xr[0:3]
    x[K.VEL:K.VEL + 3] = xr[3:6]
    q = np.empty(4)
    K.quat_from_euler(xr[6], xr[7], xr[8], q)
    x[K.QUAT:K.QUAT + 4] = q
    x[K.RATE:K.RATE + 3] = xr[9:12]
    x[K.OMEGA:K.OMEGA + 8] = xr[12:20]
    dx = np.empty(K.NX)
    cur = np.empty(8)
    tor = np.empty(8)
    K.rhs(x, u, P, dead, 0.0, 0.0, dx, cur, tor)
    phi, theta = xr[6], xr[7]
    p, q_, r = xr[9:12]
    sphi, cphi = math.sin(phi), math.cos(phi)
    ctheta, ttheta = math.cos(theta), math.tan(theta)
    euler_dot = [
        p + (q_ * sphi + r * cphi) * ttheta,
        q_ * cphi - r * sphi,
        (q_ * sphi + r * cphi) / ctheta,
    ]
    return np.concatenate([dx[K.POS:K.POS + 3], dx[K.VEL:K.VEL + 3], euler_dot,
                           dx[K.RATE:K.RATE + 3], dx[K.OMEGA:K.OMEGA + 8]])


@dataclass(frozen=True)
class OperatingPoint:
    state: np.ndarray
    voltages: np.ndarray
    virtual: np.ndarray
    thrusts: np.ndarray
    failed: int | None


def hover_operating_point(params, failed: int | None = None) -> OperatingPoint:
    """Hover equilibrium, optionally after losing rotor ``failed`` (1-based).

    With a failed rotor the unchanged (passive) mixer must reach equilibrium:
    the virtual command settles where the seven live rotors balance weight
    and all three moments, the residual yaw moment being absorbed by the
    remaining rotors.
    """
    from .control import allocation, allocation_matrix
    from .dynamics import TrimError, steady_voltage, thrust_constant, trim_hover

    trim = trim_hover(params)
    Bm = allocation_matrix(params)
    Pinv, base = allocation(params)
    v_h = np.array([params.m_total * params.g, 0.0, 0.0, 0.0])
    if failed is None:
        v = v_h
        f = base + Pinv @ v
    else:
        k = failed - 1
        fh = trim.per_rotor_thrust
        b = Bm[:, k]
        dv = np.linalg.solve(np.eye(4) - np.outer(b, Pinv[k]), b * fh)
        v = v_h + dv
        f = base + Pinv @ v
        f[k] = 0.0
        if np.any(f < 0):
            raise TrimError("post-fault equilibrium requires negative thrust")
    omega = np.sqrt(f / thrust_constant(params))
    if np.any(omega > params.rotor.omega_max):
        raise TrimError("post-fault equilibrium exceeds rotor speed limit")
    u = steady_voltage(omega, params)
    if np.any(u > params.battery.u_bat):
        raise TrimError("equilibrium voltage exceeds battery voltage")
    x = np.zeros(20)
    x[12:20] = omega
    return OperatingPoint(x, u, v, f, failed)


def _jacobians(fun, x0, u0):
    def step(v):
        return np.maximum(1e-6 * np.abs(v), 1e-8)

    f0 = fun(x0, u0)
    A = np.empty((f0.size, x0.size))
    hx = step(x0)
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += hx[i]
        xm[i] -= hx[i]
        A[:, i] = (fun(xp, u0) - fun(xm, u0)) / (2 * hx[i])
    B = np.empty((f0.size, u0.size))
    hu = step(u0)
    for i in range(u0.size):
        up, um = u0.copy(), u0.copy()
        up[i] += hu[i]
        um[i] -= hu[i]
        B[:, i] = (fun(x0, up) - fun(x0, um)) / (2 * hu[i])
    return A, B


def linearize_plant(params, fault: int | None = None) -> StateSpace:
    """Central-difference linearization at hover; inputs are the eight motor voltages.

    States: position, velocity, Euler angles, body rates, rotor speeds.  With
    a failed rotor its column of B is zero and its speed state (a decoupled,
    uncontrollable and unobservable spin-down mode at rest) is removed.
    """
    from .dynamics import pack

    op = hover_operating_point(params, fault)
    P = pack(params)
    dead = -1 if fault is None else fault - 1
    A, B = _jacobians(lambda x, u: _reduced_rhs(x, u, P, dead), op.state, op.voltages)
    keep = list(range(20))
    if fault is not None:
        B[:, dead] = 0.0
        keep.remove(12 + dead)
    A = A[np.ix_(keep, keep)]
    B = B[keep]
    C = np.zeros((12, len(keep)))
    C[:, :12] = np.eye(12)
    sys = StateSpace(A, B, C, np.zeros((12, 8)), VOLTAGES, MEASURED)
    sys.meta.update(operating_point=op, states=tuple(PLANT_STATES[i] for i in keep), packed=P,
                    dead=dead)
    return sys


def plant_with_mixer(params, fault: int | None = None, plant: StateSpace | None = None) -> StateSpace:
    """Linear plant seen by the controller: virtual commands in, measurements out."""
    from .control import VIRTUAL_NAMES, mixer_jacobian

    plant = linearize_plant(params, fault) if plant is None else plant
    op = plant.meta["operating_point"]
    dead = None if fault is None else fault - 1
    Jm = mixer_jacobian(op.virtual, params, dead=dead)
    sys = StateSpace(plant.A, plant.B @ Jm, plant.C, np.zeros((12, 4)), VIRTUAL_NAMES, MEASURED)
    sys.meta.update(plant.meta)
    return sys
