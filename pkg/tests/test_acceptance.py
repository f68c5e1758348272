"""End-to-end acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the verdict lines are
also shown without ``-s`` because they bypass output capture.
"""
import csv
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from _oracles import grid_hinf, random_stable, trapezoid_energy
from octodesign.cli import EXIT_OK, main
from octodesign.control import ControlGains
from octodesign.dynamics import (FaultScenario, MissionProfile, Segment, simulate_mission)
from octodesign.htune import build_problem, evaluate_requirements, synthesize
from octodesign.linear import StateSpace, hinf_norm, linearize_plant
from octodesign.sizing import (DESIGN_NAMES, PlantDesign, assemble_vehicle, load_reference,
                               scale_motor, scale_rotor)

REF = load_reference()
ACTIVE_TOL = 0.05


@contextmanager
def verdict(request, number, title):
    """Print exactly one PASS/FAIL line for the criterion, whatever happens inside."""
    capman = request.config.pluginmanager.getplugin("capturemanager")
    t0 = time.perf_counter()
    info = {}
    try:
        yield info
    except BaseException as exc:
        line = f"[criterion {number}] FAIL  {title} ({time.perf_counter() - t0:.1f} s): {exc}".split("\n")[0]
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        raise
    detail = "; ".join(f"{k}={v}" for k, v in info.items())
    with capman.global_and_fixture_disabled():
        print(f"\n[criterion {number}] PASS  {title} ({time.perf_counter() - t0:.1f} s) {detail}",
              flush=True)


# ---------------------------------------------------------------------------

def test_criterion_1_scaling_laws(request):
    with verdict(request, 1, "scaling laws") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        mo, ro = REF.motor, REF.rotor
        worst = 0.0
        for l, r, th in zip(rng.uniform(0.3, 3.0, 1000), rng.uniform(0.3, 3.0, 1000),
                            rng.uniform(0.6, 1.4, 1000)):
            m = scale_motor(l, REF)
            pairs = [(m.R, mo.R_ref / l), (m.Ke, mo.Ke_ref * l * l), (m.Kd, mo.Kd_ref * l ** 3),
                     (m.J_mot, mo.J_ref * l ** 5), (m.m_mot, mo.m_ref * l ** 3),
                     (m.Rth, mo.Rth_ref / (l * l)), (m.tau_th, mo.tau_th_ref),
                     (m.T_max, mo.T_max_ref * l ** 3.5)]
            q = scale_rotor(r, th, REF)
            pairs += [(q.S, ro.S_ref * r * r), (q.J_rot, ro.J_ref * r ** 5), (q.m_rot, ro.m_ref * r ** 3),
                      (q.r, ro.r_ref * r), (q.omega_max, ro.omega_max_tip / (ro.r_ref * r)),
                      (q.ct0, ro.ct0_ref * (0.3 + 0.7 * th)),
                      (q.cq0, ro.cq0_ref * (0.15 + 0.85 * th * th))]
            worst = max(worst, max(abs(a - b) / abs(b) for a, b in pairs))
        assert worst < 1e-12, f"worst relative error {worst:.2e}"
        p = assemble_vehicle(PlantDesign.reference(), REF)
        assert (p.motor.R, p.motor.Ke, p.motor.J_mot, p.rotor.r, p.rotor.ct0, p.battery.E_bat,
                p.arm.l) == (mo.R_ref, mo.Ke_ref, mo.J_ref, ro.r_ref, ro.ct0_ref, REF.battery.E_ref,
                             REF.arm.l_ref)
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0, f"took {elapsed:.2f} s"
        info["worst_rel"] = f"{worst:.1e}"


def test_criterion_2_hinf_oracle(request):
    with verdict(request, 2, "H-infinity norm vs 1e6-point grid oracle") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        rel_tol = 1e-3
        worst = 0.0
        for _ in range(200):
            A, B, C, D = random_stable(rng, n_max=12)
            oracle = grid_hinf(A, B, C, D, points=10 ** 6)
            g = hinf_norm(StateSpace(A, B, C, D), rel_tol=rel_tol)
            worst = max(worst, abs(g - oracle) / oracle)
        assert worst <= max(rel_tol, 0.01), f"worst relative gap {worst:.2e}"
        # lightly damped resonance 1/(s^2 + 0.2 s + 1)
        res = StateSpace([[0.0, 1.0], [-1.0, -0.2]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])
        peak = hinf_norm(res, rel_tol=1e-5)
        assert peak == pytest.approx(5.0252, abs=1e-4)
        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0, f"took {elapsed:.1f} s"
        info.update(worst_rel=f"{worst:.1e}", resonant_peak=f"{peak:.5f}")


def test_criterion_3_linearization(request):
    from octodesign.linear import _reduced_rhs

    with verdict(request, 3, "hover Jacobians pass the second-order remainder test") as info:
        t0 = time.perf_counter()
        params = assemble_vehicle(PlantDesign.reference(), REF)
        sys = linearize_plant(params)
        op, P = sys.meta["operating_point"], sys.meta["packed"]
        x0, u0 = op.state, op.voltages
        f0 = _reduced_rhs(x0, u0, P, -1)
        n = sys.n
        rng = np.random.default_rng(3)
        scale = np.concatenate([np.full(12, 0.05), np.full(n - 12, 5.0)])
        spread = 0.0
        for _ in range(20):
            d = rng.normal(size=n) * scale
            ratios = []
            for h in (1.0, 0.5, 0.25, 0.125):
                r = _reduced_rhs(x0 + h * d, u0, P, -1) - f0 - sys.A @ (h * d)
                ratios.append(np.linalg.norm(r) / np.linalg.norm(h * d) ** 2)
            # a correct Jacobian leaves an O(h^2) residual: the ratio settles as h halves
            assert abs(ratios[3] / ratios[2] - 1.0) < 0.2, ratios
            spread = max(spread, abs(ratios[3] / ratios[2] - 1.0))
        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0, f"took {elapsed:.1f} s"
        info["worst_ratio_drift"] = f"{spread:.3f}"


def _random_mission(rng):
    pos = np.zeros(3)
    segs = []
    for _ in range(int(rng.integers(2, 5))):
        kind = str(rng.choice(["climb", "cruise", "hover", "descend"]))
        step = rng.uniform(-3.0, 3.0, 3) * [1.0, 1.0, 0.5]
        if kind == "hover":
            step[:] = 0.0
        pos = pos + step
        segs.append(Segment(kind, float(rng.uniform(2.0, 6.0)), tuple(pos), float(rng.uniform(-0.5, 0.5))))
    return MissionProfile((0.0, 0.0, 0.0), tuple(segs))


def test_criterion_4_energy_conservation(request):
    from conftest import HAND_GAINS

    with verdict(request, 4, "trace energy equals power re-integration") as info:
        t0 = time.perf_counter()
        params = assemble_vehicle(PlantDesign.reference(), REF)
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(10):
            tr = simulate_mission(params, HAND_GAINS, _random_mission(rng), dt=2e-3)
            worst = max(worst, abs(tr.E_mot - trapezoid_energy(tr.time, tr.power)) / tr.E_mot)
        assert worst < 1e-3, f"worst relative gap {worst:.2e}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0, f"took {elapsed:.1f} s"
        info["worst_rel"] = f"{worst:.1e}"


def test_criterion_5_ftc_recovery(request):
    with verdict(request, 5, "rotor-1 failure at 3 s recovers within 10 s, rotor 7 slowed") as info:
        t0 = time.perf_counter()
        params = assemble_vehicle(PlantDesign.reference(), REF)
        result = synthesize(build_problem(params, ftc=True), seed=0)
        assert result.feasible
        fault = FaultScenario(failed_rotor=1, fail_time=3.0)
        tr = simulate_mission(params, result.gains, MissionProfile.hover(15.0), fault, dt=1e-3)
        rec = tr.recovery_time(pos_tol=0.1, att_tol=np.deg2rad(2.0))
        assert rec <= 10.0, f"recovery time {rec:.2f} s"
        steady = tr.voltages[tr.time >= tr.time[-1] - 1.0].mean(axis=0)
        others = np.delete(steady, [0, 6])
        assert steady[6] < others.min(), f"rotor 7 command {steady[6]:.3f} V vs {others.min():.3f} V"
        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f} s"
        info.update(recovery_s=f"{rec:.2f}", rotor7_V=f"{steady[6]:.2f}", next_lowest_V=f"{others.min():.2f}")


# ---------------------------------------------------------------------------
# co-design (criteria 6 and 7 share the runs)
# ---------------------------------------------------------------------------

def _codesign(out, objective):
    t0 = time.perf_counter()
    code = main(["codesign", "--objective", objective, "--seed", "0", "--out", str(out)])
    return code, time.perf_counter() - t0


@pytest.fixture(scope="module")
def codesign_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("codesign")
    runs = {}
    for objective in ("energy", "mass"):
        code, elapsed = _codesign(root / objective, objective)
        runs[objective] = (code, root / objective, elapsed)
    return root, runs


def _best(out):
    return json.loads((out / "best_design.json").read_text())


def _reference_energy(out):
    with open(out / "history.csv") as fh:
        first = next(csv.DictReader(fh))
    assert all(float(first[n]) == 1.0 for n in DESIGN_NAMES)
    return float(first["objective"])


def test_criterion_6_codesign_direction(request, codesign_runs):
    with verdict(request, 6, "co-design beats the reference, mass design lighter, limiting constraints active") as info:
        root, runs = codesign_runs
        (ce, e_dir, te), (cm, m_dir, tm) = runs["energy"], runs["mass"]
        assert ce == EXIT_OK and cm == EXIT_OK, f"exit codes energy={ce} mass={cm}"
        energy, mass = _best(e_dir), _best(m_dir)
        assert energy["feasible"] and mass["feasible"]
        e_ref = _reference_energy(e_dir)
        assert energy["E_mot"] < e_ref, f"energy {energy['E_mot']:.0f} J vs reference {e_ref:.0f} J"
        assert mass["m_total"] <= energy["m_total"], \
            f"mass design {mass['m_total']:.3f} kg vs energy design {energy['m_total']:.3f} kg"
        c = energy["constraints"]
        limiting = {"overlap": c["rotor_overlap"], "torque": c["motor_torque"],
                    "electrical": max(c["battery_power"], c["battery_energy"])}
        active = [k for k, v in limiting.items() if abs(v) <= ACTIVE_TOL]
        assert len(active) >= 2, f"active limiting constraints {active} from {limiting}"
        info.update(E_best=f"{energy['E_mot']:.0f}J", E_ref=f"{e_ref:.0f}J",
                    m_energy=f"{energy['m_total']:.3f}kg", m_mass=f"{mass['m_total']:.3f}kg",
                    active=",".join(active), runtime_s=f"{te + tm:.0f}")


def test_criterion_7_determinism(request, codesign_runs):
    with verdict(request, 7, "codesign rerun reproduces a byte-identical history") as info:
        root, runs = codesign_runs
        code, elapsed = _codesign(root / "energy_rerun", "energy")
        first = (runs["energy"][1] / "history.csv").read_bytes()
        again = (root / "energy_rerun" / "history.csv").read_bytes()
        assert first == again, "history CSV differs between identical runs"
        total = runs["energy"][2] + runs["mass"][2] + elapsed
        assert total < 1800.0, f"criteria 6 and 7 took {total:.0f} s"
        info.update(rows=first.count(b"\n") - 1, total_runtime_s=f"{total:.0f}")


# ---------------------------------------------------------------------------

CERT_DESIGNS = [
    (np.ones(6), True),
    (np.ones(6), False),
    (np.array([0.904, 1.456, 0.6, 0.401, 1.03, 0.5]), True),
    (np.array([0.822, 1.313, 0.625, 0.447, 0.921, 1.242]), True),
    (np.array([1.1, 1.0, 1.1, 1.2, 0.9, 1.1]), True),
    (np.array([1.2, 1.0, 0.9, 1.2, 0.9, 1.0]), True),
]


def test_criterion_8_certificates(request):
    with verdict(request, 8, "feasible tuning results re-verify with a tightened H-infinity tolerance") as info:
        t0 = time.perf_counter()
        checked = 0
        worst = -math.inf
        for x, ftc in CERT_DESIGNS:
            params = assemble_vehicle(PlantDesign.from_array(x), REF)
            problem = build_problem(params, ftc=ftc)
            result = synthesize(problem, seed=0)
            if not result.feasible:
                continue
            req = evaluate_requirements(ControlGains.from_array(result.gains.as_array()), problem,
                                        method="exact", rel_tol=1e-6)
            top = float(np.nanmax(req.constraints))
            assert top <= 1e-6, f"design {x.tolist()} ftc={ftc}: constraint {top:.2e}"
            assert np.all(req.abscissa < 0.0)
            worst = max(worst, top)
            checked += 1
        assert checked >= 3, f"only {checked} feasible results to check"
        elapsed = time.perf_counter() - t0
        assert elapsed < 300.0, f"took {elapsed:.1f} s"
        info.update(results=checked, worst_constraint=f"{worst:.3f}")
