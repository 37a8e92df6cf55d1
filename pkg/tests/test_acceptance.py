"""Acceptance gate: every criterion at its stated tolerance and time budget."""

import math
import time

import numpy as np
import pytest

from magsleigh.lie_poisson import lp_flow, se2_sleigh_system, sleigh_momentum
from magsleigh.numerics import IntegratorConfig
from magsleigh.optimal_control import (
    conserved_pair,
    hopt_planar,
    pendulum_residual,
    planar_equilibria,
    planar_flow,
    pmp_flow_4d,
)
from magsleigh.planner import (
    TurnaroundProblem,
    cost,
    default_sweep_grid,
    ode_time_of_flight,
    phase_portrait,
    plan,
    sweep,
    time_of_flight,
)
from magsleigh.sleigh import (
    PiecewiseConstantField,
    SleighParams,
    full_from_reduced,
    full_to_reduced,
    initial_reduced_state,
    kinetic_energy,
    simulate_constant_B,
    simulate_full,
    simulate_reduced,
)


@pytest.fixture(scope="module")
def default_sweep():
    start = time.perf_counter()
    rows = sweep(default_sweep_grid(60, 10**-1.5, 10**2.5, log=True), c=1.0)
    return rows, time.perf_counter() - start


def test_01_heteroclinic_cost(report):
    start = time.perf_counter()
    J = cost(1e-10, 1.0)
    elapsed = time.perf_counter() - start
    ok = 4.0 <= J <= 4.0 + 1e-4 and elapsed < 1.0
    assert report(1, "heteroclinic cost", ok, f"J(1e-10)={J!r}, {elapsed:.3f}s")


def test_02_minimum_field_asymptote(report, default_sweep):
    rows, elapsed = default_sweep
    last = rows[-1]
    # Near T = 10^2.5 max_B rounds to exactly 2.0, so strict decrease is read
    # off max_B - 2c, which is carried without cancellation.
    decreasing = all(a.max_B_excess > b.max_B_excess for a, b in zip(rows, rows[1:]))
    ok = not any(r.error for r in rows) and 2.0 <= last.max_B <= 2.05 and decreasing and elapsed < 30.0
    assert report(2, "minimum-field asymptote", ok,
                  f"max_B(T={last.T:.4g})={last.max_B!r}, strictly decreasing={decreasing}, {elapsed:.3f}s")


def test_03_cost_monotone(report, default_sweep):
    rows, _ = default_sweep
    # Same float-tie caveat as criterion 2: compare J - 4c^2.
    decreasing = all(a.J_excess > b.J_excess for a, b in zip(rows, rows[1:]))
    non_increasing = all(a.J >= b.J for a, b in zip(rows, rows[1:]))
    ok = len(rows) == 60 and decreasing and non_increasing
    assert report(3, "cost monotonicity", ok,
                  f"{len(rows)} points, J from {rows[0].J:.6g} to {rows[-1].J!r}, strictly decreasing={decreasing}")


def test_04_elliptic_vs_ode_time_of_flight(report):
    start = time.perf_counter()
    worst = 0.0
    for B0 in (0.01, 0.1, 1.0, 10.0):
        for c in (0.5, 1.0):
            T_ode = ode_time_of_flight(B0, c)
            worst = max(worst, abs(time_of_flight(B0, c) - T_ode) / T_ode)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 5.0
    assert report(4, "elliptic vs ODE time of flight", ok, f"max rel diff {worst:.2e}, {elapsed:.3f}s")


def test_05_turnaround_boundary(report):
    start = time.perf_counter()
    res = plan(TurnaroundProblem(2.0, 1.0))
    elapsed = time.perf_counter() - start
    ok = abs(res.boundary_error) < 1e-8 and res.min_B > 0 and elapsed < 1.0
    assert report(5, "turnaround boundary", ok,
                  f"alpha(T)-pi={res.boundary_error:.2e}, min B={res.min_B:.6g}, {elapsed:.3f}s")


def test_06_energy_conservation_under_random_fields(report):
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst_reduced = worst_full = 0.0
    for _ in range(20):
        c = float(rng.choice([0.25, 0.5, 1.0]))
        sched = PiecewiseConstantField.random(rng, 100.0, n_pieces=10, scale=2.0)
        state0 = initial_reduced_state(c, 0.5, float(rng.uniform(-np.pi, np.pi)))

        red = simulate_reduced(sched, c, state0, 100.0)
        E = 0.5 * (red.states[:, 0] ** 2 / c + red.states[:, 1] ** 2)
        worst_reduced = max(worst_reduced, float(np.max(np.abs(E - E[0])) / E[0]))

        params = SleighParams.reference(c)
        norm = params.normalization
        pose0, vel0 = full_from_reduced((0.0, 0.0, float(rng.uniform(-np.pi, np.pi))), state0, params)
        dim_sched = PiecewiseConstantField(sched.times * norm.t, sched.values * norm.B)
        full = simulate_full(dim_sched, params, pose0, vel0, 100.0 * norm.t)
        KE = kinetic_energy(full.states[:, 2], full.states[:, 3:], params)
        worst_full = max(worst_full, float(np.max(np.abs(KE - KE[0])) / KE[0]))
    elapsed = time.perf_counter() - start
    ok = worst_reduced < 1e-8 and worst_full < 1e-8 and elapsed < 10.0
    assert report(6, "energy conservation", ok,
                  f"max |dE|/E reduced={worst_reduced:.2e}, full={worst_full:.2e}, {elapsed:.3f}s")


def test_07_two_invariants(report):
    rng = np.random.default_rng(7)
    cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12)
    worst_E = worst_H = 0.0
    start = time.perf_counter()
    for _ in range(20):
        a = rng.uniform(-np.pi, np.pi)
        s0 = [math.cos(a), math.sin(a), *rng.normal(0.0, 0.5, 2)]
        traj = pmp_flow_4d(s0, 1.0, 50.0, cfg)
        pair = conserved_pair(traj, 1.0, "4d")
        worst_E = max(worst_E, pair.E_drift)
        worst_H = max(worst_H, pair.H_opt_drift)
    elapsed = time.perf_counter() - start
    ok = worst_E < 1e-8 and worst_H < 1e-8
    assert report(7, "two invariants of the costate flow", ok,
                  f"max drift E={worst_E:.2e}, H_opt={worst_H:.2e}, {elapsed:.3f}s")


def test_08_pendulum_equivalence(report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for c in (0.25, 0.5, 1.0):
        for _ in range(5):
            state = (rng.uniform(-np.pi, np.pi), rng.uniform(-2.0, 2.0))
            traj = planar_flow(state, c, 20.0, sample_times=np.linspace(0, 20, 401))
            worst = max(worst, pendulum_residual(traj, c))
    ok = worst < 1e-9
    assert report(8, "pendulum equivalence", ok, f"max residual {worst:.2e}")


def test_09_reduction_chain(report):
    rng = np.random.default_rng(9)
    ts = np.linspace(0.0, 10.0, 101)
    worst = {"full-reduced": 0.0, "lp-reduced": 0.0, "full-lp": 0.0}
    for k in range(10):
        c = 1.0 if k < 3 else float(rng.uniform(0.2, 1.0))
        m, a = rng.uniform(0.5, 2.0, 2)
        params = SleighParams(m=m, a=a, I_rot=m * a * a * (1 - c) / c, e=rng.uniform(0.5, 2.0), B0=rng.uniform(0.5, 2.0))
        norm = params.normalization
        state0 = (rng.normal(0, 1.0), rng.normal(0, 1.0))
        B = float(rng.uniform(-2, 2))
        red = simulate_reduced(B, c, state0, 10.0, sample_times=ts).states

        pose0, vel0 = full_from_reduced((0.0, 0.0, rng.uniform(-np.pi, np.pi)), state0, params)
        full = full_to_reduced(simulate_full(B * norm.B, params, pose0, vel0, 10.0 * norm.t,
                                             sample_times=ts * norm.t).states, params)

        system = se2_sleigh_system(params, B)
        mu = lp_flow(sleigh_momentum(state0[0] * norm.v, state0[1] * norm.omega, system), system,
                     10.0 * norm.t, sample_times=ts * norm.t).states
        xi = np.array([system.velocity(row) for row in mu])
        lp = np.column_stack([xi[:, 1] / norm.v, xi[:, 0] / norm.omega])

        worst["full-reduced"] = max(worst["full-reduced"], float(np.max(np.abs(full - red))))
        worst["lp-reduced"] = max(worst["lp-reduced"], float(np.max(np.abs(lp - red))))
        worst["full-lp"] = max(worst["full-lp"], float(np.max(np.abs(full - lp))))
    ok = all(v < 1e-8 for v in worst.values())
    assert report(9, "reduction chain equivalence", ok, ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


def test_10_phase_portrait_classification(report):
    kinds = {(round(e.alpha, 12), round(e.B, 12)): e.kind for e in planar_equilibria(1.0)}
    expected = {
        (0.0, 0.0): "saddle",
        (round(math.pi, 12), 0.0): "saddle",
        (round(math.pi / 2, 12), 1.0): "center",
        (round(-math.pi / 2, 12), -1.0): "center",
    }
    pp = phase_portrait(1.0, separatrix_points=2001)
    level = max(float(np.max(np.abs(hopt_planar(p[:, 0], p[:, 1], 1.0)))) for p in pp.separatrices.values())
    ok = kinds == expected and level < 1e-12 and set(pp.separatrices) == {"B=0", "B=2c*sin(alpha)"}
    assert report(10, "phase-portrait classification", ok,
                  f"{sorted(kinds.values())}, separatrix |H_opt| max {level:.1e}")


def _unwrapped_alpha(states):
    return np.unwrap(np.arctan2(states[:, 4], states[:, 3]))


def test_11_constant_field_regimes(report):
    ts = np.linspace(0.0, 50.0, 2001)
    below = simulate_constant_B(0.5, 1.0, 0.5, 0.0, 50.0, sample_times=ts).states
    at = simulate_constant_B(1.0, 1.0, 0.5, 0.0, 50.0, sample_times=ts).states
    above = simulate_constant_B(2.0, 1.0, 0.5, 0.0, 50.0, sample_times=ts).states

    # B < 1: omega settles at B.
    w = below[:, 4]
    below_ok = abs(w[-1] - 0.5) < 1e-6 and np.all(np.diff(w) >= -1e-12)
    # B = 1: omega creeps up to 1 (algebraically), never exceeding it.
    w = at[:, 4]
    at_ok = w[-1] > 0.99 and np.all(w <= 1.0 + 1e-12) and np.all(np.diff(w[ts > 5]) >= -1e-12)
    # B > 1: alpha winds up without bound.
    alpha = _unwrapped_alpha(above)
    above_ok = np.all(np.diff(alpha) > 0) and alpha[-1] > 50.0
    ok = bool(below_ok and at_ok and above_ok)
    assert report(11, "constant-field regimes", ok,
                  f"B=0.5 omega(50)={below[-1, 4]:.9f}; B=1 omega(50)={at[-1, 4]:.6f}; "
                  f"B=2 alpha(50)={alpha[-1]:.3f}")
