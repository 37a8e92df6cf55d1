import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.special import ellipk

from magsleigh.numerics import (
    IntegrationError,
    IntegratorConfig,
    QuadratureError,
    RootBracket,
    RootFindingError,
    SampledTrajectory,
    agm,
    elliptic_K,
    find_root,
    integrate,
    integrate_piecewise,
    quadrature,
)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(step_size=-1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(max_steps=0)
    cfg = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-8).tightened(10)
    assert cfg.rel_tol == pytest.approx(1e-9) and cfg.abs_tol == pytest.approx(1e-9)


def test_exponential_decay_matches_closed_form():
    times = np.linspace(0, 5, 11)
    traj = integrate(lambda t, y: -y, 0.0, [1.0], 5.0, sample_times=times)
    assert np.max(np.abs(traj.states[:, 0] - np.exp(-times))) < 1e-10


def test_harmonic_oscillator_dense_output():
    traj = integrate(lambda t, y: np.array([y[1], -y[0]]), 0.0, [0.0, 1.0], 20.0)
    ts = np.linspace(0, 20, 997)
    dense = traj(ts)
    assert np.max(np.abs(dense[:, 0] - np.sin(ts))) < 1e-9
    assert np.max(np.abs(dense[:, 1] - np.cos(ts))) < 1e-9
    # Scalar evaluation returns a single state.
    assert traj(1.0).shape == (2,)


def test_agrees_with_scipy_reference_solver():
    def lorenz_like(t, y):
        return np.array([y[1], -math.sin(y[0]) - 0.1 * y[1]])

    ts = np.linspace(0, 30, 61)
    ours = integrate(lorenz_like, 0.0, [2.0, 0.0], 30.0, sample_times=ts)
    ref = solve_ivp(lorenz_like, (0, 30), [2.0, 0.0], method="DOP853", rtol=1e-13, atol=1e-13, t_eval=ts)
    assert np.max(np.abs(ours.states - ref.y.T)) < 1e-8


def test_projection_hook_is_applied():
    # Projection onto the unit circle keeps the radius exact at the step nodes.
    def proj(t, y):
        return y / np.linalg.norm(y)

    traj = integrate(lambda t, y: np.array([-y[1], y[0]]), 0.0, [1.0, 0.0], 50.0,
                     IntegratorConfig(rel_tol=1e-6, abs_tol=1e-6), project=proj)
    assert np.max(np.abs(np.linalg.norm(traj.states, axis=1) - 1.0)) < 1e-12


def test_piecewise_restart_at_breakpoints():
    # y' = s(t) with a unit step at t=1: y(2) = 1 exactly.
    def rhs_for(k):
        return lambda t, y: np.array([0.0 if k == 0 else 1.0])

    traj = integrate_piecewise(rhs_for, 0.0, [0.0], 2.0, breakpoints=[1.0], sample_times=[0.0, 0.5, 1.0, 1.5, 2.0])
    assert traj.states[:, 0] == pytest.approx([0, 0, 0, 0.5, 1.0], abs=1e-13)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integration_failures():
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, 1.0, [1.0], 0.0)
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: y * y, 0.0, [1.0], 2.0)  # blows up at t = 1
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: np.array([math.nan]), 0.0, [1.0], 1.0)
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: np.array([math.cos(100 * t)]), 0.0, [0.0], 100.0, IntegratorConfig(max_steps=5))
    with pytest.raises(ValueError):
        integrate(lambda t, y: -y, 0.0, [1.0], 1.0, sample_times=[0.0, 2.0])


def test_sampled_trajectory_checks():
    with pytest.raises(ValueError):
        SampledTrajectory(np.array([0.0, 0.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        SampledTrajectory(np.array([0.0, 1.0]), np.zeros((2, 1)))(0.5)


def test_find_root_known_values():
    assert find_root(lambda x: math.cos(x) - x, RootBracket(0.0, 1.0)) == pytest.approx(0.7390851332151607, abs=1e-12)
    assert find_root(lambda x: x**3 - 2, RootBracket(0.0, 2.0)) == pytest.approx(2 ** (1 / 3), abs=1e-12)


def test_find_root_errors():
    with pytest.raises(ValueError):
        RootBracket(1.0, 0.0)
    with pytest.raises(RootFindingError):
        find_root(lambda x: x * x + 1, RootBracket(-1.0, 1.0))


@given(st.floats(-50, 50))
def test_find_root_property(r):
    x = find_root(lambda x: math.tanh(x - r), RootBracket(-60.0, 60.0))
    assert abs(x - r) < 1e-10


def test_agm_known_value():
    # Gauss's constant: agm(1, sqrt 2) = 1.19814023473559220744...
    assert agm(1.0, math.sqrt(2.0)) == pytest.approx(1.1981402347355922, rel=1e-15)
    assert agm(3.0, 3.0) == 3.0
    assert agm(0.0, 5.0) == 0.0
    with pytest.raises(ValueError):
        agm(-1.0, 1.0)


def test_elliptic_K_values():
    assert elliptic_K(0.0) == pytest.approx(math.pi / 2, rel=1e-15)
    assert elliptic_K(-1.0) == pytest.approx(1.3110287771460599, rel=1e-14)
    with pytest.raises(ValueError):
        elliptic_K(1.0)


@given(st.floats(-1e6, 0.999))
def test_elliptic_K_matches_scipy(m):
    assert elliptic_K(m) == pytest.approx(float(ellipk(m)), rel=1e-13)


def test_quadrature():
    assert quadrature(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-13)
    assert quadrature(lambda x: 2 * math.sin(x), 0.0, math.pi) == pytest.approx(4.0, abs=1e-13)
    with pytest.raises(ValueError):
        quadrature(math.sin, 1.0, 0.0)
    with pytest.raises(QuadratureError):
        quadrature(lambda x: 1 / x, 0.0, 1.0, limit=10)
    with pytest.raises(QuadratureError):
        quadrature(lambda x: math.sin(1 / x), 1e-6, 1.0, tol=1e-14, limit=20)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.1, 5.0))
def test_dense_output_matches_steps(k, t1):
    traj = integrate(lambda t, y: -k * y, 0.0, [1.0], t1)
    ts = np.linspace(0, t1, 37)
    assert np.max(np.abs(traj(ts)[:, 0] - np.exp(-k * ts))) < 1e-9


def test_spec_examples_exponential_and_constant():
    cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12)
    assert abs(integrate(lambda t, y: y, 0.0, [1.0], 1.0, cfg).final[0] - math.e) < 1e-10
    assert integrate(lambda t, y: np.zeros(1), 0.0, [7.0], 5.0).final[0] == 7.0


def test_planar_turnaround_reaches_pi():
    from magsleigh.planner import TurnaroundProblem, solve_B0

    B0 = solve_B0(TurnaroundProblem(2.0, 1.0))
    traj = integrate(lambda t, y: np.array([y[1] - math.sin(y[0]), y[1] * math.cos(y[0])]), 0.0, [0.0, B0], 2.0)
    assert abs(traj.final[0] - math.pi) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-10, 1e-6), st.floats(0.5, 3.0), st.floats(-2.0, 2.0))
def test_self_convergence_under_halved_tolerance(tol, k, y0):
    def rhs(t, y):
        return np.array([y[1], -k * math.sin(y[0])])

    coarse = integrate(rhs, 0.0, [y0, 0.3], 1.0, IntegratorConfig(rel_tol=tol, abs_tol=tol)).final
    fine = integrate(rhs, 0.0, [y0, 0.3], 1.0, IntegratorConfig(rel_tol=tol / 2, abs_tol=tol / 2)).final
    assert np.max(np.abs(coarse - fine) / (1.0 + np.abs(fine))) < tol


def test_find_root_spec_examples():
    assert find_root(lambda x: x * x - 2, RootBracket(1.0, 2.0)) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert find_root(lambda x: x, RootBracket(-1.0, 1.0)) == pytest.approx(0.0, abs=1e-12)
    from magsleigh.planner import time_of_flight

    B0 = find_root(lambda b: time_of_flight(b, 1.0) - 2.0, RootBracket(1e-12, 10.0, 1e-14))
    assert B0 == pytest.approx(1.4160604704204027, rel=1e-12)


@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(1e-12, 1e-6))
def test_find_root_tolerance_criterion(r, scale, tol):
    f = lambda x: scale * (x - r) ** 3 + (x - r)  # noqa: E731
    lo, hi = r - 7.0, r + 3.0
    x = find_root(f, RootBracket(lo, hi, tol))
    assert abs(f(x)) <= tol * (1 + abs(f(lo)) + abs(f(hi))) or abs(x - r) <= tol


@pytest.mark.parametrize("m", [0.0, -0.5, -1.0, -10.0, -100.0])
def test_elliptic_K_matches_defining_integral(m):
    ref = quadrature(lambda th: 1 / math.sqrt(1 - m * math.sin(th) ** 2), 0.0, math.pi / 2, tol=1e-14)
    assert elliptic_K(m) == pytest.approx(ref, rel=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(-3, 0), st.floats(0.1, 3))
def test_quadrature_exact_on_cubics(coef, a, width):
    b = a + width
    p = np.polynomial.Polynomial(coef)
    exact = p.integ()(b) - p.integ()(a)
    assert quadrature(lambda x: float(p(x)), a, b) == pytest.approx(exact, abs=1e-12 * (1 + abs(exact)))


def test_quadrature_spec_examples():
    assert quadrature(lambda x: 1.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-15)
