import math

import numpy as np
import pytest

from octodesign.control import ControlGains
from octodesign.htune import (CONSTRAINT_NAMES, Tier, TuningError, TuningProblem, _closed_loops,
                              build_model, build_problem, evaluate_requirements, heuristic_gains,
                              penalized, pole_margins, synthesize)
from octodesign.linear import (StateSpace, connect_closed_loop, hinf_norm, sensitivity, series,
                               static_gain, w1_response, weight_w1)
from octodesign.sizing import PlantDesign, assemble_vehicle, load_reference

REF = load_reference()
PARAMS = assemble_vehicle(PlantDesign.reference(), REF)


@pytest.fixture(scope="module")
def problem():
    return build_problem(PARAMS, ftc=True)


@pytest.fixture(scope="module")
def tuned(problem):
    return synthesize(problem, seed=0)


def test_tier_relaxation():
    t = Tier()
    d = t.relaxed()
    assert d.alpha_min == 0.5 * t.alpha_min and d.zeta_min == 0.5 * t.zeta_min
    assert d.w1_translation[2] == 4 * t.w1_translation[2]
    assert d.w2 == t.w2 and d.omega_max == t.omega_max
    assert Tier.from_dict(t.to_dict()) == t


def test_problem_validation(problem):
    with pytest.raises(TuningError):
        TuningProblem([])
    with pytest.raises(TuningError):
        TuningProblem(problem.models[1:])
    strict = Tier(alpha_min=1.0)
    with pytest.raises(TuningError):
        TuningProblem(problem.models, Tier(), strict)
    with pytest.raises(TuningError):
        TuningProblem(problem.models[:1], lower=np.zeros(16))


def test_problem_models(problem):
    assert [m.name for m in problem.models] == ["nominal"] + [f"rotor_{k}_failed" for k in range(1, 9)]
    assert problem.has_degraded
    assert not build_problem(PARAMS, ftc=False).has_degraded


def test_pole_margins_hand_values():
    lam = np.array([-1.0 + 1.0j, -1.0 - 1.0j, -5.0])
    decay, damping, modulus = pole_margins(lam, Tier())
    assert decay == pytest.approx((-1.0 + 0.1) / 0.1)
    assert damping == pytest.approx(0.3 - 1.0 / math.sqrt(2.0))
    assert modulus == pytest.approx(5.0 / 200.0 - 1.0)


def test_heuristic_gains_stabilize_every_model(problem):
    req = evaluate_requirements(heuristic_gains(problem), problem, method="sweep")
    assert np.all(req.abscissa < 0.0)


def test_unstable_gains_give_infinite_norms(problem):
    g = ControlGains(**{**heuristic_gains(problem).to_dict(), "kp_p": 1e-3, "kp_q": 1e-3,
                        "kp_phi": 50.0, "kp_theta": 50.0})
    req = evaluate_requirements(g, problem, method="sweep")
    assert np.max(req.abscissa) > 0.0
    assert req.objective == math.inf and not req.feasible
    assert penalized(req) == math.inf
    # pole margins stay finite so a search can recover
    assert math.isfinite(req.constraints[4])


def test_sweep_is_a_lower_bound_of_exact(problem, tuned):
    sweep = evaluate_requirements(tuned.gains, problem, method="sweep")
    exact = evaluate_requirements(tuned.gains, problem, method="exact", rel_tol=1e-6)
    # pole margins do not depend on the norm method
    assert np.allclose(sweep.constraints[4:], exact.constraints[4:], equal_nan=True)
    assert sweep.objective <= exact.objective * (1 + 1e-9)
    assert sweep.objective == pytest.approx(exact.objective, rel=0.02)
    for i in range(4):
        assert sweep.constraints[i] <= exact.constraints[i] + 1e-9


def test_degraded_constraints_nan_without_faults():
    p = build_problem(PARAMS, ftc=False)
    req = evaluate_requirements(heuristic_gains(p), p, method="sweep")
    names = np.array(CONSTRAINT_NAMES)
    degraded = np.array(["degraded" in n for n in names])
    assert np.all(np.isnan(req.constraints[degraded]))
    assert not np.any(np.isnan(req.constraints[~degraded]))


def test_cutoff_stops_early(problem):
    req = evaluate_requirements(heuristic_gains(problem), problem, method="sweep", cutoff=0.0)
    assert not req.complete and len(req.per_model) == 1


def test_synthesis_feasible_and_deterministic(problem, tuned):
    assert tuned.feasible and tuned.converged
    assert 1.0 <= tuned.objective < 1.1
    again = synthesize(problem, seed=0)
    assert again.gains == tuned.gains and again.evaluations == tuned.evaluations


def test_certificate_reverifies(problem, tuned):
    req = evaluate_requirements(tuned.gains, problem, method="exact", rel_tol=1e-6)
    assert np.nanmax(req.constraints) <= 1e-6
    assert np.all(req.abscissa < 0.0)


def test_w1s_against_direct_frequency_response(problem, tuned):
    # independent evaluation: invert (jwI - A) on a dense grid for the x channel of every model
    tier = problem.nominal
    worst = -math.inf
    for model in problem.models:
        t = problem.tier(model.tier)
        outer, _ = _closed_loops(tuned.gains, model)
        A, B, C, D = outer.A, outer.B[:, [0]], outer.C[[0], :], outer.D[0, 0]
        w = np.logspace(-3, 3, 3000)
        I = np.eye(A.shape[0])
        T = np.array([(C @ np.linalg.solve(1j * wk * I - A, B))[0, 0] + D for wk in w])
        W = w1_response(w, *t.w1_translation)
        worst = max(worst, float(np.max(np.abs(W * (1.0 - T)))) - 1.0)
    assert tier is problem.nominal
    assert worst <= max(tuned.constraints[0], tuned.constraints[2]) + 1e-6


def test_failed_rotor_model_is_fault_tolerant(problem, tuned):
    for m in problem.models[1:]:
        outer, _ = _closed_loops(tuned.gains, m)
        assert np.max(np.linalg.eigvals(outer.A).real) < -problem.degraded.alpha_min + 1e-9


def test_result_serialization(tuned, tmp_path):
    d = tuned.to_dict()
    assert set(d["constraints"]) == set(CONSTRAINT_NAMES)
    assert len(d["models"]) == 9
    tuned.save(tmp_path / "t.json")
    assert (tmp_path / "t.json").stat().st_size > 0


def test_zero_budget_rejected(problem):
    with pytest.raises(TuningError):
        synthesize(problem, budget=0)


def test_warm_start_is_used():
    p = build_problem(PARAMS, ftc=False)
    first = synthesize(p, seed=1)
    warm = synthesize(p, init=first.gains, seed=1)
    assert warm.feasible
    assert warm.objective <= first.objective * (1 + 1e-3)


def test_build_model_fault_indexing():
    m = build_model(PARAMS, 3)
    assert m.name == "rotor_3_failed" and m.tier == "degraded"


# -- small closed-form problems --------------------------------------------------

def _w1s_integrator_loop(k, wb, M, eps):
    cl = connect_closed_loop(StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]]), static_gain([[k, -k]]), 1)
    return series(sensitivity(cl, 0, 0), weight_w1(wb, M, eps))


@pytest.mark.parametrize("wb,M,eps", [(1.0, 2.0, 0.01), (0.3, 2.0, 0.01), (5.0, 1.5, 0.05), (1.0, 4.0, 0.001)])
def test_scalar_w1s_threshold(wb, M, eps):
    # 1/s with P gain k: |W1 S|^2 <= 1 for all w reduces to a quadratic in w^2 staying
    # nonnegative, which holds iff k >= wb (sqrt(1 - eps^2 s^2) - eps s), s = sqrt(1 - 1/M^2)
    from _oracles import grid_hinf

    s = math.sqrt(1.0 - 1.0 / M ** 2)
    k_star = wb * (math.sqrt(1.0 - (eps * s) ** 2) - eps * s)
    for k, inside in ((k_star * 1.01, True), (k_star * 0.99, False)):
        sys = _w1s_integrator_loop(k, wb, M, eps)
        g = hinf_norm(sys, 1e-6)
        oracle = grid_hinf(sys.A, sys.B, sys.C, sys.D, points=200_000)
        assert g == pytest.approx(oracle, rel=1e-4)
        assert (g <= 1.0) == inside


def test_zero_gains_objective_is_infinite(problem):
    req = evaluate_requirements(ControlGains(), problem, method="sweep")
    assert req.objective == math.inf and not req.feasible


def test_damping_cone_example():
    lam = np.array([-2.0 + 2.0j, -2.0 - 2.0j])
    _, damping, _ = pole_margins(lam, Tier(zeta_min=0.5))
    assert damping == pytest.approx(0.5 - 1.0 / math.sqrt(2.0)) and damping < 0.0


def test_nominal_only_improves_on_init():
    p = build_problem(PARAMS, ftc=False, nominal=Tier(w1_translation=(0.1, 2.0, 0.05),
                                                       w1_rotation=(0.5, 2.0, 0.05)))
    init = heuristic_gains(p)
    before = evaluate_requirements(init, p, method="exact")
    assert np.max(before.abscissa) < 0.0
    res = synthesize(p, init=init, budget=150, seed=0)
    assert res.feasible
    assert res.objective <= before.objective * (1 + p.rel_tol)


def test_degraded_models_never_help(problem, tuned):
    nominal_only = synthesize(build_problem(PARAMS, ftc=False), seed=0)
    assert nominal_only.objective <= tuned.objective * (1 + 1e-9)
