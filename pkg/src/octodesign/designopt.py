"""Outer design loop: sizing, controller tuning and mission simulation nested in a
surrogate-assisted global search over the six normalized plant variables.

The energy-mass coupling (a larger battery carries more energy but costs
mass and hence energy) is not iterated to a fixed point: ``v_bat_star`` is
a free variable and the energy-capacity inequality closes the loop.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.optimize import minimize
from scipy.stats import qmc

from .control import AllocationError, ControlGains
from .dynamics import (NO_FAULT, DynamicsError, FaultScenario, MissionProfile, SimulationDiverged,
                       SimulationTrace, TrimError, rotor_positions, simulate_mission,
                       thrust_constant)
from .htune import Tier, TuningError, TuningResult, build_problem, synthesize
from .linear import LinearError
from .sizing import (DEFAULT_BOUNDS, DESIGN_NAMES, ROTORS_PER_ARM, PlantDesign,
                     ReferenceComponents, SizingError, VehicleParams, assemble_vehicle,
                     validate_bounds)

log = logging.getLogger(__name__)

CONSTRAINT_NAMES = (
    "motor_torque", "motor_temperature", "rotor_speed", "rotor_overlap",
    "battery_power", "battery_energy", "arm_stress",
)
N_CONSTRAINTS = len(CONSTRAINT_NAMES)
OBJECTIVES = ("energy", "mass")
PENALTY = 1.0e3
INFEASIBLE = np.ones(N_CONSTRAINTS)
EVALUABLE_MARGIN = 0.5


class DesignError(ValueError):
    pass


@dataclass
class DesignProblem:
    reference: ReferenceComponents
    mission: MissionProfile
    objective: str = "energy"
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    faults: tuple = ()
    ftc: bool = True
    inner_budget: int = 400
    outer_budget: int = 80
    initial_samples: int = 13
    dt: float = 5e-3
    eta_dod: float = 0.8
    power_margin: float = 1.0
    nominal_tier: Tier = field(default_factory=Tier)
    degraded_tier: Tier | None = None
    restarts: int = 8

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise DesignError(f"objective must be one of {OBJECTIVES}")
        if self.inner_budget < 1 or self.outer_budget < 1:
            raise DesignError("budgets must be at least 1")
        validate_bounds(self.bounds)
        if not 0.0 < self.eta_dod <= 1.0:
            raise DesignError("eta_dod must lie in (0, 1]")
        if self.power_margin <= 0.0:
            raise DesignError("power_margin must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in DESIGN_NAMES], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in DESIGN_NAMES], dtype=float)


@dataclass
class CandidateEvaluation:
    x: np.ndarray
    objective: float
    constraints: np.ndarray
    status: str = "ok"
    tuning: TuningResult | None = field(default=None, repr=False)
    summary: dict = field(default_factory=dict)
    m_total: float = math.nan
    E_mot: float = math.nan

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.constraints = np.asarray(self.constraints, dtype=float)
        if self.constraints.shape != (N_CONSTRAINTS,):
            raise DesignError(f"expected {N_CONSTRAINTS} constraint values")

    @property
    def feasible(self) -> bool:
        return bool(math.isfinite(self.objective) and np.all(self.constraints <= 0.0))

    @property
    def merit(self) -> float:
        """Objective plus the exact penalty on constraint violations."""
        if not math.isfinite(self.objective):
            return math.inf
        return self.objective + PENALTY * float(np.maximum(self.constraints, 0.0).sum())

    def report(self) -> dict:
        return {
            "design": dict(zip(DESIGN_NAMES, map(float, self.x))),
            "objective": _num(self.objective),
            "feasible": self.feasible,
            "status": self.status,
            "m_total": _num(self.m_total),
            "E_mot": _num(self.E_mot),
            "constraints": dict(zip(CONSTRAINT_NAMES, map(float, self.constraints))),
            "trace": self.summary,
        }


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# candidate evaluation
# ---------------------------------------------------------------------------

def arm_thrust(trace: SimulationTrace, params: VehicleParams) -> np.ndarray:
    """Per-arm total thrust over time (coaxial pairs share an arm)."""
    T = thrust_constant(params) * trace.rotor_speed ** 2
    n_arms = params.n_arms
    return T[:, :n_arms] + T[:, n_arms:n_arms * ROTORS_PER_ARM]


def design_constraints(trace: SimulationTrace, params: VehicleParams,
                       problem: DesignProblem) -> np.ndarray:
    """The seven normalized design constraints (feasible when <= 0).

    A diverged trace gives the infeasible marker (all +1).
    """
    if trace.diverged:
        return INFEASIBLE.copy()
    mo, ro, bat, arm = params.motor, params.rotor, params.battery, params.arm
    stress = np.max(arm_thrust(trace, params)) * arm.l / arm.Z
    return np.array([
        np.max(np.abs(trace.torques)) / mo.T_max - 1.0,
        (params.ambient_temp + np.max(trace.temp_rise)) / mo.Theta_max - 1.0,
        np.max(trace.rotor_speed) / ro.omega_max - 1.0,
        2.0 * ro.r / (math.sqrt(2.0) * arm.l) - 1.0,
        np.max(trace.power) / (problem.power_margin * bat.P_bat) - 1.0,
        trace.E_mot / (problem.eta_dod * bat.E_bat) - 1.0,
        stress / arm.sigma_allow - 1.0,
    ])


def _failed(x, status, **kw):
    return CandidateEvaluation(x, math.inf, INFEASIBLE.copy(), status=status, **kw)


def evaluate_candidate(x_p, problem: DesignProblem, init_gains: ControlGains | None = None,
                       seed: int = 0) -> CandidateEvaluation:
    """Size, tune, simulate and score one design.

    Failures anywhere in the chain (sizing, trim, tuning, divergence) give an
    infeasible evaluation with an infinite objective instead of raising.
    """
    design = x_p if isinstance(x_p, PlantDesign) else PlantDesign.from_array(x_p)
    x = design.as_array()
    try:
        params = assemble_vehicle(design, problem.reference, problem.bounds)
    except SizingError:
        return _failed(x, "sizing")
    try:
        tprob = build_problem(params, ftc=problem.ftc, nominal=problem.nominal_tier,
                              degraded=problem.degraded_tier, restarts=problem.restarts)
        tuning = synthesize(tprob, init=init_gains, budget=problem.inner_budget, seed=seed)
    except (TrimError, TuningError, AllocationError, LinearError):
        return _failed(x, "tuning", m_total=params.m_total)
    if not tuning.feasible:
        return _failed(x, "tuning", tuning=tuning, m_total=params.m_total)

    constraints = None
    summary = {}
    E_mot = math.nan
    for fault in (NO_FAULT,) + tuple(problem.faults):
        try:
            trace = simulate_mission(params, tuning.gains, problem.mission, fault, dt=problem.dt)
        except SimulationDiverged:
            return _failed(x, "diverged", tuning=tuning, m_total=params.m_total)
        except DynamicsError:
            return _failed(x, "simulation", tuning=tuning, m_total=params.m_total)
        c = design_constraints(trace, params, problem)
        constraints = c if constraints is None else np.maximum(constraints, c)
        if fault is NO_FAULT:
            summary = trace.summary()
            E_mot = trace.E_mot
    objective = E_mot if problem.objective == "energy" else params.m_total
    return CandidateEvaluation(x, float(objective), constraints, "ok", tuning, summary,
                               params.m_total, E_mot)


# ---------------------------------------------------------------------------
# surrogate search
# ---------------------------------------------------------------------------

@dataclass
class OptimizationResult:
    best: CandidateEvaluation
    history: list
    feasible_found: bool

    def history_csv(self) -> str:
        return history_csv(self.history)


HISTORY_COLUMNS = ("index",) + DESIGN_NAMES + ("objective",) + CONSTRAINT_NAMES + (
    "feasible", "status")


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for i, ev in enumerate(history):
        w.writerow([i] + [repr(float(v)) for v in ev.x] + [repr(float(ev.objective))]
                   + [repr(float(v)) for v in ev.constraints] + [int(ev.feasible), ev.status])
    return buf.getvalue()


class _Surrogates:
    """Cubic RBF models of the scaled objective, the constraints and evaluability.

    Constraint models are fitted on completed evaluations only; failed ones
    (sizing, tuning or simulation) instead feed a kernel-weighted average of
    +1 (failed) / -1 (completed) labels.  This bounded evaluability estimate
    is appended to the constraints shifted by :data:`EVALUABLE_MARGIN`, so
    the search keeps a safety distance from designs that could not be scored.
    """

    def __init__(self, U, history, f_scale):
        d = U.shape[1]
        ok = np.array([ev.status == "ok" for ev in history])
        self.hidden = None
        if 0 < ok.sum() < ok.size:
            self.hidden = _KernelIndicator(U, np.where(ok, -1.0, 1.0))
        self.cons = _rbf(U[ok], np.array([ev.constraints for ev in history])[ok]) \
            if ok.sum() >= d + 2 else None
        f = np.array([ev.objective for ev in history])[ok] / f_scale
        if f.size >= d + 2:
            self.obj = _rbf(U[ok], f)
            self.f_fill = None
        else:
            self.obj = None
            self.f_fill = float(np.mean(f)) if f.size else 1.0

    def objective(self, U):
        U = np.atleast_2d(U)
        return self.obj(U) if self.obj is not None else np.full(U.shape[0], self.f_fill)

    def constraints(self, U):
        """Constraint predictions with the evaluability indicator appended as a last column."""
        U = np.atleast_2d(U)
        c = self.cons(U) if self.cons is not None else np.zeros((U.shape[0], N_CONSTRAINTS))
        h = self.hidden(U) if self.hidden is not None else np.full(U.shape[0], -1.0)
        return np.column_stack([c, h + EVALUABLE_MARGIN])

    def merit(self, U):
        return self.objective(U) + PENALTY * np.maximum(self.constraints(U), 0.0).sum(axis=1)


class _KernelIndicator:
    """Gaussian-weighted mean of +-1 labels; bandwidth is the median nearest-neighbour gap."""

    def __init__(self, U, y):
        self.U, self.y = U, y
        d = np.sqrt(((U[:, None, :] - U[None, :, :]) ** 2).sum(axis=2))
        np.fill_diagonal(d, np.inf)
        self.h2 = float(np.median(d.min(axis=1))) ** 2

    def __call__(self, P):
        d2 = ((P[:, None, :] - self.U[None, :, :]) ** 2).sum(axis=2)
        # shift by the nearest distance so far-away queries keep finite weights
        w = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * self.h2))
        return (w @ self.y) / w.sum(axis=1)


def _rbf(U, y):
    return RBFInterpolator(U, y, kernel="cubic", degree=1, smoothing=1e-10)


def _min_distance(P, U):
    d = np.sqrt(((P[:, None, :] - U[None, :, :]) ** 2).sum(axis=2))
    return d.min(axis=1)


def _best(history):
    feas = [ev for ev in history if ev.feasible]
    if feas:
        return min(feas, key=lambda ev: ev.objective), True
    return min(history, key=lambda ev: ev.merit), False


def optimize(problem: DesignProblem, seed: int = 0, evaluator=None,
             callback=None) -> OptimizationResult:
    """Surrogate-assisted global minimization of the design objective.

    ``evaluator(x, init_gains)`` defaults to :func:`evaluate_candidate`; any
    callable returning a :class:`CandidateEvaluation` can be injected.  The
    first sample is the all-ones reference design, followed by a Latin
    hypercube; every later point comes from the surrogate infill, every
    fifth one being a pure space-filling point.
    """
    lo, hi = problem.lower, problem.upper
    d = lo.size
    span = hi - lo
    if not np.all((lo <= 1.0) & (hi >= 1.0)):
        raise DesignError("bounds must contain the reference design")
    budget = problem.outer_budget
    n_init = min(budget, max(2, problem.initial_samples))
    if evaluator is None:
        def evaluator(x, init_gains):
            return evaluate_candidate(x, problem, init_gains, seed=seed)

    rng = np.random.default_rng(seed)
    lhs = qmc.LatinHypercube(d=d, seed=rng).random(n_init - 1)
    U = np.vstack([(1.0 - lo) / span, lhs])
    history = []
    gains = None

    def run(u):
        nonlocal gains
        ev = evaluator(lo + u * span, gains)
        history.append(ev)
        if ev.tuning is not None and ev.tuning.feasible:
            best, _ = _best(history)
            if best is ev or gains is None:
                gains = ev.tuning.gains
        log.info("candidate %d: status=%s objective=%.6g max constraint=%.3g", len(history) - 1,
                 ev.status, ev.objective, float(np.max(ev.constraints)))
        if callback is not None:
            callback(ev)
        return ev

    for u in U:
        run(u)

    while len(history) < budget:
        k = len(history)
        finite = [ev.objective for ev in history if math.isfinite(ev.objective)]
        f_scale = abs(finite[0]) if finite and finite[0] != 0 else 1.0
        sur = _Surrogates(U, history, f_scale)
        pool = rng.random((2000, d))
        if (k - n_init) % 5 == 4:
            u_new = pool[np.argmax(_min_distance(pool, U))]
        else:
            u_new = _infill(sur, U, history, rng, pool)
        U = np.vstack([U, u_new])
        run(u_new)

    best, found = _best(history)
    return OptimizationResult(best, history, found)


def _infill(sur: _Surrogates, U, history, rng, pool):
    """Surrogate minimizer near the incumbent, with a small distance bonus."""
    d = U.shape[1]
    best, _ = _best(history)
    ib = next(i for i, ev in enumerate(history) if ev is best)
    local = np.clip(U[ib] + rng.normal(0.0, 0.05, (500, d)), 0.0, 1.0)
    cand = np.vstack([pool, local])
    dist = _min_distance(cand, U)
    merit = sur.merit(cand)
    spread = float(np.ptp(merit[np.isfinite(merit)])) or 1.0
    score = merit - 0.05 * spread * dist
    starts = cand[np.argsort(score)[:4]]
    starts = np.vstack([U[ib], starts])
    best_u, best_val = None, math.inf
    cons = {"type": "ineq", "fun": lambda u: -sur.constraints(u)[0]}  # includes evaluability
    for s in starts:
        res = minimize(lambda u: float(sur.objective(u)[0]), s, method="SLSQP",
                       bounds=[(0.0, 1.0)] * d, constraints=[cons],
                       options={"maxiter": 100, "ftol": 1e-9})
        u = np.clip(res.x, 0.0, 1.0)
        val = float(sur.merit(u)[0])
        if val < best_val and _min_distance(u[None, :], U)[0] > 1e-3:
            best_u, best_val = u, val
    if best_u is None:
        best_u = cand[int(np.argmin(np.where(dist > 1e-3, score, np.inf)))]
    return best_u
