"""Fixed-time turnaround: steer ``alpha`` from 0 to pi minimizing the integral of B^2/2.

Along the planar optimal flow ``alpha`` obeys ``alpha'' = sin(2 alpha)/2``
for every coupling, so ``alpha'^2 = (B0/c)^2 + sin^2(alpha)`` and the time
to turn around is

    T(B0) = (2c / B0) K(-c^2 / B0^2) = pi c / agm(B0, sqrt(B0^2 + c^2)).

Only the ``B > 0`` branch making a single half turn is considered.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    IntegratorConfig,
    NumericalError,
    RootBracket,
    SampledTrajectory,
    agm,
    find_root,
    integrate,
    quadrature,
)
from .optimal_control import Equilibrium, hopt_planar, planar_equilibria
from .sleigh import check_coupling, reconstruct_pose

# Smallest B0 we represent directly; below this the log form is returned.
B0_FLOOR = 1e-300
PLAN_CONFIG = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12)
STABILIZE_BELOW = 1e-3


class HorizonTooLongError(NumericalError):
    """Raised when the initial field for a horizon underflows double precision."""

    def __init__(self, T: float, log_B0: float):
        super().__init__(
            f"horizon T={T} needs B0 = exp({log_B0:.6g}) < {B0_FLOOR}; "
            "the limiting trajectory is the heteroclinic orbit B = 2c sin(alpha)"
        )
        self.T = T
        self.log_B0 = log_B0


@dataclass(frozen=True)
class TurnaroundProblem:
    T: float
    c: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        check_coupling(self.c)


def time_of_flight(B0: float, c: float = 1.0) -> float:
    """Time for ``alpha`` to go from 0 to pi when ``B(0) = B0``."""
    if not B0 > 0:
        raise ValueError(f"B0 must be positive, got {B0}")
    check_coupling(c)
    # (2c/B0) K(-c^2/B0^2) with the agm rescaled by B0, which stays finite as B0 -> 0.
    return math.pi * c / agm(B0, math.hypot(B0, c))


def _log_time_of_flight(log_B0: float, c: float) -> float:
    B0 = math.exp(log_B0)
    if B0 < B0_FLOOR:
        # K(m) ~ log(4 sqrt(-m)) / sqrt(-m) as m -> -inf; the remainder is O(B0^2).
        return 2.0 * (math.log(4.0 * c) - log_B0)
    return time_of_flight(B0, c)


def solve_log_B0(problem: TurnaroundProblem, tol: float = 1e-14) -> float:
    """Natural log of the initial field that turns the sleigh around in time ``T``."""
    T, c = problem.T, problem.c
    asymptotic = math.log(4.0 * c) - 0.5 * T
    if asymptotic < math.log(B0_FLOOR) - 1.0:
        return asymptotic

    def f(u):
        return _log_time_of_flight(u, c) - T

    # Doubling/halving from B0 = 1; T decreases as B0 grows.
    step = math.log(2.0)
    lo = hi = 0.0
    if f(0.0) > 0:
        while f(hi) > 0:
            lo, hi = hi, hi + step
    else:
        while f(lo) < 0:
            lo, hi = lo - step, lo
    return find_root(f, RootBracket(lo, hi, tol))


def solve_B0(problem: TurnaroundProblem) -> float:
    log_B0 = solve_log_B0(problem)
    B0 = math.exp(log_B0)
    if B0 < B0_FLOOR:
        raise HorizonTooLongError(problem.T, log_B0)
    return B0


def B_of_alpha(alpha, B0: float, c: float = 1.0):
    """Positive field on the level ``H_opt = B0^2 / (2c)``."""
    s = c * np.sin(alpha)
    root = np.hypot(s, B0)
    # For s < 0 use the conjugate form B0^2 / (root - s) to avoid cancellation.
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s >= 0, s + root, B0 * (B0 / (root - s)))


def max_field(B0: float, c: float = 1.0) -> float:
    if not B0 >= 0:
        raise ValueError(f"B0 must be non-negative, got {B0}")
    return c + math.hypot(c, B0)


def max_field_excess(B0: float, c: float = 1.0) -> float:
    """``max_field(B0, c) - 2c`` without cancellation."""
    return B0 * B0 / (c + math.hypot(c, B0))


def min_controllable_field(c: float = 1.0) -> float:
    check_coupling(c)
    return 2.0 * c


def cost_integrand(alpha, B0: float, c: float = 1.0):
    """``B^2/2 dt/dalpha`` along the optimal trajectory."""
    root = np.hypot(c * np.sin(alpha), B0)
    B = c * np.sin(alpha) + root
    return 0.5 * B * B * c / root


def _excess_shape(r: float) -> float:
    # cost_integrand - 2 c^2 sin(alpha) = (c B0 / 2) * shape(r) with
    # r = c sin(alpha) / B0, free of cancellation and of underflow in B0^2.
    q = math.hypot(1.0, r)
    # Divided in steps so that huge r underflows to 0 instead of overflowing.
    return 1.0 / q / (q + r) / (q + r)


def cost_excess(B0: float, c: float = 1.0, tol: float = 1e-13) -> float:
    """``cost(B0, c) - 4 c^2``, positive and close to ``B0^2 / 2`` for small ``B0``.

    The integrand is symmetric about pi/2 and concentrated near ``alpha ~ B0/c``,
    so the half range is integrated in ``u = log(alpha)``.
    """
    if not B0 > 0:
        raise ValueError(f"B0 must be positive, got {B0}")
    check_coupling(c)
    # The excess is ~ B0^2/2 for small B0 and ~ pi c B0/2 for large B0. The
    # integrand is divided by scale = c B0^2 / (c + B0) so the absolute
    # quadrature tolerance acts as a relative one.
    u_lo = math.log(B0 / c) - 40.0
    u_hi = math.log(math.pi / 2)
    if u_lo >= u_hi:
        u_lo = u_hi - 40.0
    ratio = 0.5 * (c + B0)

    def g(u):
        a = math.exp(u)
        return ratio * (a / B0) * _excess_shape(c * math.sin(a) / B0)

    half = quadrature(g, u_lo, u_hi, tol, limit=1000)
    # Left of u_lo the integrand is ~ c B0 / 2.
    return 2.0 * (c * B0 / (c + B0)) * B0 * half + c * B0 * math.exp(u_lo)


def cost(B0: float, c: float = 1.0) -> float:
    """Optimal turnaround cost for initial field ``B0``."""
    return 4.0 * c * c + cost_excess(B0, c)


def cost_direct(B0: float, c: float = 1.0, tol: float = 1e-11) -> float:
    """Quadrature of :func:`cost_integrand` over ``[0, pi]`` without rearrangement."""
    # The integrand varies on the scale B0/c next to both ends: break there geometrically.
    cuts = []
    x = B0 / c
    while x < 1.0:
        cuts.append(x)
        x *= 10.0
    points = sorted(set(cuts + [math.pi - x for x in cuts] + [1.0, math.pi - 1.0]))
    return quadrature(lambda a: float(cost_integrand(a, B0, c)), 0.0, math.pi, tol, limit=1000, points=points)


# Direct ODE oracles -------------------------------------------------------------


def _augmented_planar(c: float):
    inv_c = 1.0 / c

    def rhs(t, y):
        return np.array([y[1] * inv_c - math.sin(y[0]), y[1] * math.cos(y[0]), 0.5 * y[1] * y[1]])

    return rhs


def ode_time_of_flight(B0: float, c: float = 1.0, config: IntegratorConfig = PLAN_CONFIG) -> float:
    """Turnaround time from direct integration of the planar flow and root finding."""
    if not B0 > 0:
        raise ValueError(f"B0 must be positive, got {B0}")
    # alpha' lies between B0/c and sqrt(B0^2 + c^2)/c.
    t_lo = math.pi * c / math.hypot(B0, c)
    t_hi = math.pi * c / B0
    traj = integrate(_augmented_planar(c), 0.0, [0.0, B0, 0.0], t_hi, config)
    return find_root(lambda t: float(traj(t)[0]) - math.pi, RootBracket(t_lo, t_hi, 1e-14))


def ode_cost(B0: float, T: float, c: float = 1.0, config: IntegratorConfig = PLAN_CONFIG) -> float:
    """Integral of ``B^2/2`` over ``[0, T]`` along the planar flow from ``(0, B0)``."""
    traj = integrate(_augmented_planar(c), 0.0, [0.0, B0, 0.0], T, config)
    return float(traj.final[2])


# Planning ---------------------------------------------------------------------


@dataclass
class PlanResult:
    problem: TurnaroundProblem
    B0: float
    planar: SampledTrajectory
    pose: SampledTrajectory
    cost: float
    cost_time_domain: float
    max_B: float
    boundary_error: float
    hopt_drift: float
    time_mismatch: float
    min_B: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.planar.times


def plan(
    problem: TurnaroundProblem,
    pose0=(0.0, 0.0, 0.0),
    config: IntegratorConfig = PLAN_CONFIG,
    n_samples: int = 401,
    stabilize: bool | None = None,
) -> PlanResult:
    """Solve the turnaround for horizon ``problem.T`` and reconstruct the path.

    The planar flow passes close to the saddle at ``alpha = 0`` when ``B0`` is
    small, which amplifies integration error roughly by ``1/B0``, and near
    ``alpha = pi`` the unwrapped phase cannot resolve offsets of size ``B0``.
    With ``stabilize`` the field is reset after each step to the value fixed
    by conservation of ``H_opt``, only ``[0, T/2]`` is integrated, and the
    second half follows from the symmetry ``alpha(T - t) = pi - alpha(t)``,
    ``B(T - t) = B(t)``. The default enables this for ``B0 < 1e-3``.
    """
    T, c = problem.T, problem.c
    B0 = solve_B0(problem)
    if stabilize is None:
        stabilize = B0 < STABILIZE_BELOW
    # alpha starts at 0 with rate B0/c: the absolute tolerance must resolve B0.
    ode_config = IntegratorConfig(config.step_size, config.rel_tol, min(config.abs_tol, B0 * config.rel_tol),
                                  config.max_steps)
    times = np.linspace(0.0, T, n_samples)

    if stabilize:

        def project(t, y):
            y = y.copy()
            y[1] = B_of_alpha(y[0], B0, c)
            return y

        half = integrate(_augmented_planar(c), 0.0, [0.0, B0, 0.0], 0.5 * T, ode_config, project=project)
        J_half = float(half.final[2])
        n_steps = half.n_steps

        def aug(t):
            tt = np.asarray(t, dtype=float)
            first = tt <= 0.5 * T
            st = np.asarray(half(np.where(first, tt, T - tt)))
            out = st.copy()
            out[..., 0] = np.where(first, st[..., 0], math.pi - st[..., 0])
            out[..., 2] = np.where(first, st[..., 2], 2.0 * J_half - st[..., 2])
            return out

        # First-order image of the midpoint miss at t = T.
        alpha_T = math.pi + 2.0 * (float(half.final[0]) - 0.5 * math.pi)
        J_T = 2.0 * J_half
    else:
        full = integrate(_augmented_planar(c), 0.0, [0.0, B0, 0.0], T, ode_config)
        aug = full.interpolant
        n_steps = full.n_steps
        alpha_T, _, J_T = (float(x) for x in full.final)

    states = aug(times)
    planar = SampledTrajectory(times, states[:, :2], lambda t: np.asarray(aug(t))[..., :2], n_steps)

    sqrt_c = math.sqrt(c)

    def vw(t):
        alpha = np.asarray(aug(t))[..., 0]
        return np.stack([sqrt_c * np.cos(alpha), np.sin(alpha)], axis=-1)

    reduced = SampledTrajectory(times, vw(times), vw)
    pose = reconstruct_pose(reduced, pose0, config)

    H = hopt_planar(planar.states[:, 0], planar.states[:, 1], c)
    alpha_rate_T = math.hypot(c * math.sin(alpha_T), B0) / c
    result = PlanResult(
        problem=problem,
        B0=B0,
        planar=planar,
        pose=pose,
        cost=cost(B0, c),
        cost_time_domain=J_T,
        max_B=max_field(B0, c),
        boundary_error=float(alpha_T - math.pi),
        hopt_drift=float(np.max(np.abs(H - H[0]))),
        # Time the ODE still needs to reach pi, to first order, relative to T.
        time_mismatch=float(abs(alpha_T - math.pi) / alpha_rate_T / T),
        min_B=float(np.min(planar.states[:, 1])),
    )
    result.diagnostics = {
        "conservation_error": float(np.max(np.abs(planar.states[:, 1] - B_of_alpha(planar.states[:, 0], B0, c)))),
        "cost_mismatch": abs(result.cost - result.cost_time_domain),
        "integrator_steps": n_steps,
        "stabilized": bool(stabilize),
    }
    return result


# Sweep -----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    T: float
    B0: float
    log_B0: float
    J: float
    J_excess: float
    max_B: float
    max_B_excess: float
    error: str = ""


def default_sweep_grid(points: int = 60, t_min: float = 10**-1.5, t_max: float = 10**2.5, log: bool = True) -> np.ndarray:
    if not (0 < t_min < t_max) or points < 2:
        raise ValueError("sweep grid needs 0 < t_min < t_max and at least 2 points")
    if log:
        return np.logspace(math.log10(t_min), math.log10(t_max), points)
    return np.linspace(t_min, t_max, points)


def _sweep_row(T: float, c: float) -> SweepRow:
    try:
        problem = TurnaroundProblem(float(T), c)
        log_B0 = solve_log_B0(problem)
        B0 = math.exp(log_B0)
        if B0 < B0_FLOOR:
            raise HorizonTooLongError(problem.T, log_B0)
        excess = cost_excess(B0, c)
        return SweepRow(
            T=float(T),
            B0=B0,
            log_B0=log_B0,
            J=4.0 * c * c + excess,
            J_excess=excess,
            max_B=max_field(B0, c),
            max_B_excess=max_field_excess(B0, c),
        )
    except (NumericalError, ValueError) as exc:
        nan = float("nan")
        return SweepRow(float(T), nan, nan, nan, nan, nan, nan, error=f"{type(exc).__name__}: {exc}")


def sweep(T_values, c: float = 1.0, workers: int | None = None) -> list[SweepRow]:
    """Cost and peak field for each horizon, in input order.

    Failures are reported per row in ``SweepRow.error``.
    """
    check_coupling(c)
    Ts = [float(T) for T in T_values]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda T: _sweep_row(T, c), Ts))
    return [_sweep_row(T, c) for T in Ts]


# Phase portrait ----------------------------------------------------------------


@dataclass
class PhasePortrait:
    c: float
    samples: np.ndarray  # rows (alpha, B, dalpha, dB)
    equilibria: list[Equilibrium]
    separatrices: dict[str, np.ndarray]  # name -> rows (alpha, B)


def phase_portrait(
    c: float = 1.0,
    alpha_range=(-math.pi, math.pi),
    B_range=(-3.0, 3.0),
    density: int = 41,
    separatrix_points: int = 401,
) -> PhasePortrait:
    check_coupling(c)
    a0, a1 = alpha_range
    b0, b1 = B_range
    if not (a0 < a1 and b0 < b1):
        raise ValueError("phase-portrait ranges must be increasing")
    if density < 2 or separatrix_points < 2:
        raise ValueError("grid density must be at least 2")
    A, Bg = np.meshgrid(np.linspace(a0, a1, density), np.linspace(b0, b1, density), indexing="xy")
    A, Bg = A.ravel(), Bg.ravel()
    samples = np.column_stack([A, Bg, Bg / c - np.sin(A), Bg * np.cos(A)])
    alphas = np.linspace(a0, a1, separatrix_points)
    separatrices = {
        "B=0": np.column_stack([alphas, np.zeros_like(alphas)]),
        "B=2c*sin(alpha)": np.column_stack([alphas, 2 * c * np.sin(alphas)]),
    }
    return PhasePortrait(c, samples, planar_equilibria(c), separatrices)
