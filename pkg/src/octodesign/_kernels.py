"""Compiled inner loops: rigid-body right-hand side, cascade control law, mixer, RK4.

Everything here works on flat float arrays so that one numba compilation
serves every vehicle design.  The public, typed API lives in
:mod:`octodesign.dynamics` and :mod:`octodesign.control`.
"""
import math

import numpy as np
from numba import njit

# state layout
POS = 0
VEL = 3
QUAT = 6
RATE = 10
OMEGA = 13
TEMP = 21
ENERGY = 29
NX = 30
NR = 8

# packed parameter layout
P_M, P_G, P_IXX, P_IYY, P_IZZ = 0, 1, 2, 3, 4
P_R, P_KE, P_KD, P_JTOT, P_RTH, P_TAUTH = 5, 6, 7, 8, 9, 10
P_KT, P_KQ, P_UBAT, P_TILT = 11, 12, 13, 14
P_X = 15
P_Y = P_X + NR
P_SPIN = P_Y + NR
NP = P_SPIN + NR

# setpoint layout: position(3), velocity feed-forward(3), yaw, roll/pitch offsets
NSP = 9
NINT = 6

STATUS_OK = 0
STATUS_DIVERGED = 1


@njit(cache=True)
def euler_from_quat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    phi = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    s = 2.0 * (w * y - z * x)
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    theta = math.asin(s)
    psi = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return phi, theta, psi


@njit(cache=True)
def quat_from_euler(phi, theta, psi, out):
    cr, sr = math.cos(0.5 * phi), math.sin(0.5 * phi)
    cp, sp = math.cos(0.5 * theta), math.sin(0.5 * theta)
    cy, sy = math.cos(0.5 * psi), math.sin(0.5 * psi)
    out[0] = cr * cp * cy + sr * sp * sy
    out[1] = sr * cp * cy - cr * sp * sy
    out[2] = cr * sp * cy + sr * cp * sy
    out[3] = cr * cp * sy - sr * sp * cy


@njit(cache=True)
def rhs(x, u, P, failed, t_fail, t, dx, cur, tor):
    """Time derivative of the full state; fills per-rotor current and torque.

    Returns the total positive electrical power drawn by the motors.
    """
    R = P[P_R]
    Ke = P[P_KE]
    Kd = P[P_KD]
    J = P[P_JTOT]
    kT = P[P_KT]
    kQ = P[P_KQ]
    dead = failed >= 0 and t >= t_fail

    thrust_sum = 0.0
    tx = 0.0
    ty = 0.0
    tz = 0.0
    power = 0.0
    for j in range(NR):
        w = x[OMEGA + j]
        if w < 0.0:
            w = 0.0
        if dead and j == failed:
            i = 0.0
        else:
            i = (u[j] - Ke * w) / R
        tm = Ke * i
        cur[j] = i
        tor[j] = tm
        th = kT * w * w
        q = kQ * w * w
        wd = (tm - q - Kd * w) / J
        if x[OMEGA + j] <= 0.0 and wd < 0.0:
            wd = 0.0
        dx[OMEGA + j] = wd
        loss = R * i * i
        dx[TEMP + j] = (P[P_RTH] * loss - x[TEMP + j]) / P[P_TAUTH]
        pe = u[j] * i
        if dead and j == failed:
            pe = 0.0
        if pe > 0.0:
            power += pe
        thrust_sum += th
        tx += P[P_Y + j] * th
        ty -= P[P_X + j] * th
        tz -= P[P_SPIN + j] * q

    qw, qx, qy, qz = x[QUAT], x[QUAT + 1], x[QUAT + 2], x[QUAT + 3]
    # third column of the body-to-world rotation
    r13 = 2.0 * (qx * qz + qw * qy)
    r23 = 2.0 * (qy * qz - qw * qx)
    r33 = 1.0 - 2.0 * (qx * qx + qy * qy)
    m = P[P_M]
    for k in range(3):
        dx[POS + k] = x[VEL + k]
    dx[VEL] = r13 * thrust_sum / m
    dx[VEL + 1] = r23 * thrust_sum / m
    dx[VEL + 2] = r33 * thrust_sum / m - P[P_G]

    p, q_, r = x[RATE], x[RATE + 1], x[RATE + 2]
    dx[QUAT] = 0.5 * (-qx * p - qy * q_ - qz * r)
    dx[QUAT + 1] = 0.5 * (qw * p + qy * r - qz * q_)
    dx[QUAT + 2] = 0.5 * (qw * q_ - qx * r + qz * p)
    dx[QUAT + 3] = 0.5 * (qw * r + qx * q_ - qy * p)

    ixx, iyy, izz = P[P_IXX], P[P_IYY], P[P_IZZ]
    dx[RATE] = (tx - (izz - iyy) * q_ * r) / ixx
    dx[RATE + 1] = (ty - (ixx - izz) * r * p) / iyy
    dx[RATE + 2] = (tz - (iyy - ixx) * p * q_) / izz
    dx[ENERGY] = power
    return power


@njit(cache=True)
def mix(v, P, Pinv, base, out):
    """Virtual commands -> steady-state motor voltages; returns True if saturated."""
    kT = P[P_KT]
    kQ = P[P_KQ]
    Ke = P[P_KE]
    R = P[P_R]
    Kd = P[P_KD]
    ubat = P[P_UBAT]
    sat = False
    for j in range(NR):
        f = base[j]
        for k in range(4):
            f += Pinv[j, k] * v[k]
        if f < 0.0:
            f = 0.0
            sat = True
        w = math.sqrt(f / kT)
        uj = Ke * w + R * (kQ * w * w + Kd * w) / Ke
        if uj > ubat:
            uj = ubat
            sat = True
        out[j] = uj
    return sat


@njit(cache=True)
def control_law(x, sp, integ, K, P, Pinv, base, dt, u, virt, integ_new):
    """One step of the 16-gain cascade plus allocation; returns the saturation flag."""
    m = P[P_M]
    g = P[P_G]
    phi, theta, psi = euler_from_quat(x[QUAT:QUAT + 4])
    ev = np.empty(3)
    a = np.empty(3)
    for k in range(3):
        vd = K[k] * (sp[k] - x[POS + k]) + sp[3 + k]
        ev[k] = vd - x[VEL + k]
        a[k] = K[3 + k] * ev[k] + K[6 + k] * integ[k]
    thrust = m * (g + a[2])
    cps = math.cos(psi)
    sps = math.sin(psi)
    phi_d = (a[0] * sps - a[1] * cps) / g + sp[7]
    theta_d = (a[0] * cps + a[1] * sps) / g + sp[8]
    tilt = P[P_TILT]
    clipped = False
    if phi_d > tilt:
        phi_d = tilt
        clipped = True
    elif phi_d < -tilt:
        phi_d = -tilt
        clipped = True
    if theta_d > tilt:
        theta_d = tilt
        clipped = True
    elif theta_d < -tilt:
        theta_d = -tilt
        clipped = True
    epsi = sp[6] - psi
    epsi = math.atan2(math.sin(epsi), math.cos(epsi))
    p_d = K[9] * (phi_d - phi)
    q_d = K[10] * (theta_d - theta)
    r_d = K[11] * epsi
    er = r_d - x[RATE + 2]
    virt[0] = thrust
    virt[1] = P[P_IXX] * K[12] * (p_d - x[RATE])
    virt[2] = P[P_IYY] * K[13] * (q_d - x[RATE + 1])
    virt[3] = P[P_IZZ] * (K[14] * er + K[15] * integ[3])
    sat = mix(virt, P, Pinv, base, u)
    for k in range(NINT):
        integ_new[k] = integ[k]
    if not (sat or clipped):
        for k in range(3):
            integ_new[k] = integ[k] + ev[k] * dt
        integ_new[3] = integ[3] + er * dt
    return sat or clipped


@njit(cache=True)
def rk4_step(x, u, P, failed, t_fail, t, dt, cur, tor):
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    rhs(x, u, P, failed, t_fail, t, k1, cur, tor)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    rhs(tmp, u, P, failed, t_fail, t + 0.5 * dt, k2, cur, tor)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    rhs(tmp, u, P, failed, t_fail, t + 0.5 * dt, k3, cur, tor)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    rhs(tmp, u, P, failed, t_fail, t + dt, k4, cur, tor)
    out = np.empty(n)
    for i in range(n):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    qn = 0.0
    for i in range(4):
        qn += out[QUAT + i] ** 2
    qn = math.sqrt(qn)
    for i in range(4):
        out[QUAT + i] /= qn
    for j in range(NR):
        if out[OMEGA + j] < 0.0:
            out[OMEGA + j] = 0.0
    return out


@njit(cache=True)
def run(x0, integ0, sp_table, K, P, Pinv, base, failed, t_fail, dt, blowup,
        X, INT, U, CUR, TOR, PWR, VIRT, SAT):
    """Closed-loop fixed-step simulation; fills the trace arrays in place.

    Returns ``(status, samples_written)``.
    """
    n = sp_table.shape[0]
    x = x0.copy()
    integ = integ0.copy()
    u = np.empty(NR)
    virt = np.empty(4)
    integ_new = np.empty(NINT)
    cur = np.empty(NR)
    tor = np.empty(NR)
    dx = np.empty(NX)
    for k in range(n):
        t = k * dt
        sat = control_law(x, sp_table[k], integ, K, P, Pinv, base, dt, u, virt, integ_new)
        pw = rhs(x, u, P, failed, t_fail, t, dx, cur, tor)
        X[k] = x
        INT[k] = integ
        U[k] = u
        CUR[k] = cur
        TOR[k] = tor
        PWR[k] = pw
        VIRT[k] = virt
        SAT[k] = sat
        bad = False
        for i in range(NX):
            if not math.isfinite(x[i]):
                bad = True
        for i in range(ENERGY):
            if abs(x[i]) > blowup:
                bad = True
        if bad:
            return STATUS_DIVERGED, k + 1
        if k == n - 1:
            break
        x = rk4_step(x, u, P, failed, t_fail, t, dt, cur, tor)
        for i in range(NINT):
            integ[i] = integ_new[i]
    return STATUS_OK, n
