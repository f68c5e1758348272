import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import grid_hinf, impulse_decay_rate, random_stable
from octodesign.linear import (AlgebraicLoopError, LinearError, ModalResponse, StateSpace,
                               connect_closed_loop, dump_frequency_response, hinf_norm,
                               linearize_plant, plant_with_mixer, poles, sensitivity,
                               spectral_abscissa, static_gain, weight_w1, weight_w2)
from octodesign.sizing import PlantDesign, assemble_vehicle, load_reference

PARAMS = assemble_vehicle(PlantDesign.reference(), load_reference())


def tf2(num, den):
    """Controllable canonical form of a strictly proper SISO transfer function."""
    num = np.asarray(num, float) / den[0]
    den = np.asarray(den, float) / den[0]
    n = len(den) - 1
    A = np.zeros((n, n))
    A[0, :] = -den[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = np.zeros((1, n))
    C[0, n - len(num):] = num
    return StateSpace(A, B, C, [[0.0]])


# -- norms ---------------------------------------------------------------------

def test_static_gain_norm():
    assert hinf_norm(static_gain([[-3.5]])) == 3.5


@pytest.mark.parametrize("w0", [0.1, 2.0, 300.0])
def test_first_order_norm(w0):
    g = hinf_norm(StateSpace([[-w0]], [[1.0]], [[w0]], [[0.0]]), rel_tol=1e-4)
    assert g == pytest.approx(1.0, rel=1e-4)
    assert g >= 1.0 - 1e-12


def test_resonant_peak_norm():
    sys = tf2([1.0], [1.0, 0.2, 1.0])
    oracle = grid_hinf(sys.A, sys.B, sys.C, sys.D)
    assert oracle == pytest.approx(5.0252, abs=5e-5)
    g = hinf_norm(sys, rel_tol=1e-4)
    assert oracle * (1 - 1e-12) <= g <= oracle * (1 + 1e-4)


def test_unstable_norm_is_infinite():
    assert hinf_norm(StateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]])) == math.inf


def test_rel_tol_domain():
    with pytest.raises(LinearError):
        hinf_norm(static_gain([[1.0]]), rel_tol=0.5)


@pytest.mark.parametrize("seed", range(12))
def test_norm_matches_grid_oracle(seed):
    A, B, C, D = random_stable(np.random.default_rng(1000 + seed))
    oracle = grid_hinf(A, B, C, D, points=200_000)
    g = hinf_norm(StateSpace(A, B, C, D), rel_tol=1e-3)
    assert abs(g - oracle) <= 1e-2 * oracle


def test_modal_response_matches_direct_evaluation():
    A, B, C, D = random_stable(np.random.default_rng(7), io_max=3)
    sys = StateSpace(A, B, C, D)
    w = np.logspace(-2, 2, 17)
    assert np.allclose(ModalResponse(sys).response(w), sys.freqresp(w), rtol=1e-9, atol=1e-12)


# -- poles -----------------------------------------------------------------------

def test_poles_closed_forms():
    pd = StateSpace([[0.0, 1.0], [-4.0, -4.0]], np.zeros((2, 1)), np.zeros((1, 2)), [[0.0]])
    assert np.allclose(poles(pd), [-2.0, -2.0], atol=1e-6)
    diag = StateSpace(np.diag([-1.0, -3.0]), np.zeros((2, 1)), np.zeros((1, 2)), [[0.0]])
    assert np.array_equal(poles(diag), np.array([-3.0, -1.0], dtype=complex))


@pytest.mark.parametrize("seed", range(3))
def test_abscissa_matches_free_response_decay(seed):
    A = random_stable(np.random.default_rng(seed), n_max=10)[0]
    A = A if A.shape[0] > 1 else np.array([[-0.7]])
    a = spectral_abscissa(A)
    rate = impulse_decay_rate(A, t_end=40.0 / abs(a))
    assert rate == pytest.approx(a, rel=0.05)


# -- weights -----------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(1.1, 10.0), st.floats(1e-4, 0.5))
def test_w1_asymptotes(wb, M, eps):
    W = weight_w1(wb, M, eps)
    assert abs(W.evaluate(0.0)[0, 0]) == pytest.approx(1.0 / eps, rel=1e-9)
    assert abs(W.evaluate(1j * 1e9 * wb)[0, 0]) == pytest.approx(1.0 / M, rel=1e-6)
    s = 0.37j * wb
    assert W.evaluate(s)[0, 0] == pytest.approx((s / M + wb) / (s + wb * eps), rel=1e-12)


def test_w2_slope_below_corner():
    W = weight_w2(20.0, 0.1)
    lo, hi = abs(W.evaluate(0.002j)[0, 0]), abs(W.evaluate(0.02j)[0, 0])
    assert 20.0 * math.log10(hi / lo) == pytest.approx(20.0, abs=1e-3)
    assert abs(W.evaluate(1e9j)[0, 0]) == pytest.approx(0.1, rel=1e-6)


@pytest.mark.parametrize("args", [(0.0, 2.0, 0.01), (1.0, 0.9, 0.01), (1.0, 2.0, 1.0)])
def test_w1_domain(args):
    with pytest.raises(LinearError):
        weight_w1(*args)


# -- interconnection -------------------------------------------------------------

def test_zero_controller_sensitivity_is_identity():
    plant = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    K = static_gain([[0.0, 0.0]])
    S = sensitivity(connect_closed_loop(plant, K, 1), 0, 0)
    for w in (0.0, 1.0, 10.0):
        assert S.evaluate(1j * w)[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("k", [0.5, 3.0, 40.0])
def test_integrator_p_loop(k):
    plant = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    cl = connect_closed_loop(plant, static_gain([[k, -k]]), 1)
    S = sensitivity(cl, 0, 0)
    assert abs(S.evaluate(1j * k)[0, 0]) == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-12)
    assert np.allclose(poles(cl), [-k])
    T = cl.select(0, 0)
    for w in np.logspace(-2, 2, 9):
        assert abs(S.evaluate(1j * w)[0, 0] + T.evaluate(1j * w)[0, 0] - 1.0) < 1e-8


def test_closed_loop_poles_match_assembled_matrix():
    # double integrator with PD gains kp=4, kd=4 -> (s+2)^2
    plant = StateSpace([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], np.eye(2), np.zeros((2, 1)))
    cl = connect_closed_loop(plant, static_gain([[4.0, -4.0, -4.0]]), 1)
    assert np.allclose(np.sort_complex(poles(cl)), np.sort_complex(np.linalg.eigvals(cl.A)))
    assert np.max(poles(cl).real) < 0.0


def test_algebraic_loop_detected():
    plant = static_gain([[1.0]])
    with pytest.raises(AlgebraicLoopError):
        connect_closed_loop(plant, static_gain([[0.0, 1.0]]), 1)


def test_frequency_dump(tmp_path):
    sys = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    dump_frequency_response(tmp_path / "fr.csv", sys, np.array([0.0, 1.0]))
    data = np.loadtxt(tmp_path / "fr.csv", delimiter=",", skiprows=1)
    assert data[1, 1] == pytest.approx(1.0 / math.sqrt(2.0))


# -- linearization -----------------------------------------------------------------

def test_hover_kinematics_and_gravity_coupling():
    sys = linearize_plant(PARAMS)
    A = sys.A
    assert np.allclose(A[0:3, 3:6], np.eye(3), atol=1e-9)
    g = PARAMS.g
    # small-angle translation: ax = g*theta, ay = -g*phi
    assert A[3, 7] == pytest.approx(g, abs=1e-3 * g)
    assert A[4, 6] == pytest.approx(-g, abs=1e-3 * g)


def test_faulty_model_drops_rotor():
    sys = linearize_plant(PARAMS, fault=1)
    assert np.all(sys.B[:, 0] == 0.0)
    assert sys.n == 19
    mixed = plant_with_mixer(PARAMS, fault=1, plant=sys)
    assert mixed.shape == (12, 4)


def test_linearization_second_order_remainder():
    from octodesign.linear import _reduced_rhs

    sys = linearize_plant(PARAMS)
    op = sys.meta["operating_point"]
    P = sys.meta["packed"]
    x0, u0 = op.state, op.voltages
    f0 = _reduced_rhs(x0, u0, P, -1)
    rng = np.random.default_rng(3)
    scale = np.concatenate([np.full(12, 0.05), np.full(8, 5.0)])
    for _ in range(5):
        d = rng.normal(size=20) * scale
        c = []
        for h in (1.0, 0.5, 0.25):
            r = _reduced_rhs(x0 + h * d, u0, P, -1) - f0 - sys.A @ (h * d)
            c.append(np.linalg.norm(r) / np.linalg.norm(h * d) ** 2)
        assert c[2] == pytest.approx(c[1], rel=0.2)
