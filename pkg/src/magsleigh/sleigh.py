"""Chaplygin sleigh with a charge at its center of mass in a vertical field.

Three levels of description are provided:

* full: pose ``(x, y, theta)`` of the contact point plus velocities, with the
  lateral no-slip constraint enforced through a multiplier;
* reduced: body forward speed ``v`` and angular velocity ``omega``
  (dimensionless);
* heading phase ``alpha`` on the unit energy shell, ``v = sqrt(c) cos(alpha)``,
  ``omega = sin(alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from .numerics import (
    IntegratorConfig,
    SampledTrajectory,
    integrate,
    integrate_piecewise,
)

SHELL_TOL = 1e-9
PROJECTION_TOL = 1e-10


@dataclass(frozen=True)
class NormalizationSet:
    """Scale factors: dimensional = factor * dimensionless."""

    omega0: float
    t: float
    B: float
    v: float
    omega: float

    @property
    def length(self) -> float:
        return self.v * self.t


@dataclass(frozen=True)
class SleighParams:
    m: float = 1.0
    a: float = 1.0
    I_rot: float = 0.0
    e: float = 1.0
    B0: float = 1.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if not self.a > 0:
            raise ValueError(f"offset a must be positive, got {self.a}")
        if not self.I_rot >= 0:
            raise ValueError(f"moment of inertia must be non-negative, got {self.I_rot}")
        if self.e == 0:
            raise ValueError("charge must be non-zero")
        if not self.B0 > 0:
            raise ValueError(f"reference field B0 must be positive, got {self.B0}")

    @classmethod
    def reference(cls, c: float) -> "SleighParams":
        """Unit mass, offset, charge and field with the inertia that gives coupling ``c``."""
        check_coupling(c)
        return cls(m=1.0, a=1.0, I_rot=(1.0 - c) / c, e=1.0, B0=1.0)

    @property
    def c(self) -> float:
        return coupling_c(self)

    @property
    def total_inertia(self) -> float:
        return self.I_rot + self.m * self.a**2

    @property
    def normalization(self) -> NormalizationSet:
        omega0 = self.e * self.B0 / self.m
        if not omega0 > 0:
            raise ValueError("cyclotron frequency e B0 / m must be positive")
        return NormalizationSet(
            omega0=omega0,
            t=1.0 / omega0,
            B=self.m * omega0 / self.e,
            v=self.total_inertia * omega0 / (self.m * self.a),
            omega=omega0,
        )

    def mass_matrix(self, theta: float) -> np.ndarray:
        m, a = self.m, self.a
        s, co = math.sin(theta), math.cos(theta)
        return np.array(
            [
                [m, 0.0, -m * a * s],
                [0.0, m, m * a * co],
                [-m * a * s, m * a * co, self.total_inertia],
            ]
        )


def check_coupling(c: float) -> float:
    if not 0 < c <= 1:
        raise ValueError(f"coupling c must lie in (0, 1], got {c}")
    return c


def coupling_c(params: SleighParams) -> float:
    return params.m * params.a**2 / params.total_inertia


class Quantities(NamedTuple):
    t: float | None = None
    B: float | None = None
    v: float | None = None
    omega: float | None = None


def _scale(q: Quantities, norm: NormalizationSet, inverse: bool) -> Quantities:
    out = []
    for name, value in zip(q._fields, q):
        if value is None:
            out.append(None)
            continue
        k = getattr(norm, name)
        out.append(value * k if inverse else value / k)
    return Quantities(*out)


def nondimensionalize(q: Quantities, params: SleighParams) -> Quantities:
    return _scale(q, params.normalization, inverse=False)


def redimensionalize(q: Quantities, params: SleighParams) -> Quantities:
    return _scale(q, params.normalization, inverse=True)


class ReducedState(NamedTuple):
    v: float
    omega: float


class FullState(NamedTuple):
    x: float
    y: float
    theta: float
    v: float
    omega: float


class MultiplierResult(NamedTuple):
    accelerations: np.ndarray
    lam: float


def reduced_rhs(state, B: float, c: float) -> tuple[float, float]:
    """Dimensionless ``(dv/dt, domega/dt)`` at constant field ``B``."""
    v, omega = state
    slip = B - omega
    return -c * omega * slip, v * slip


def full_system_matrix(theta: float, params: SleighParams) -> np.ndarray:
    m, a = params.m, params.a
    s, co = math.sin(theta), math.cos(theta)
    return np.array(
        [
            [1.0, 0.0, -a * s, s / m],
            [0.0, 1.0, a * co, -co / m],
            [0.0, 0.0, params.total_inertia, 0.0],
            [-s, co, 0.0, 0.0],
        ]
    )


def full_rhs(pose, velocity, B: float, params: SleighParams) -> MultiplierResult:
    """Accelerations and constraint multiplier of the dimensional sleigh.

    ``pose = (x, y, theta)``, ``velocity = (xdot, ydot, thetadot)`` and ``B`` is
    the dimensional field. The three Euler-Lagrange equations and the
    time-differentiated no-slip constraint form a 4x4 linear system in
    ``(xddot, yddot, thetaddot, lambda)``.
    """
    _, _, theta = pose
    xd, yd, td = velocity
    tdd, xdd, ydd, lam = _full_accelerations(theta, xd, yd, td, B, params)
    return MultiplierResult(np.array([xdd, ydd, tdd]), lam)


def _full_accelerations(theta, xd, yd, td, B, params: SleighParams):
    # Block elimination of full_system_matrix: the theta row decouples, then
    # the constraint row fixes lambda.
    m, a, e = params.m, params.a, params.e
    s, co = math.sin(theta), math.cos(theta)
    fwd = xd * co + yd * s
    tdd = (e * B * a - m * a * td) * fwd / params.total_inertia
    X = a * td * td * co + (e * B / m) * (-yd - a * td * co) + a * s * tdd
    Y = a * td * td * s + (e * B / m) * (xd - a * td * s) - a * co * tdd
    lam = m * (td * fwd + s * X - co * Y)
    xdd = X - s * lam / m
    ydd = Y + co * lam / m
    if not math.isfinite(lam):
        raise ValueError("singular multiplier system")
    return tdd, xdd, ydd, lam


def full_residuals(pose, velocity, result: MultiplierResult, B: float, params: SleighParams) -> np.ndarray:
    """Residuals of the four equations solved by :func:`full_rhs`."""
    _, _, theta = pose
    xd, yd, td = velocity
    xdd, ydd, tdd = result.accelerations
    lam = result.lam
    m, a, e = params.m, params.a, params.e
    s, co = math.sin(theta), math.cos(theta)
    fwd = xd * co + yd * s
    return np.array(
        [
            xdd - a * td**2 * co - a * tdd * s + lam / m * s - (e * B / m) * (-yd - a * td * co),
            ydd - a * td**2 * s + a * tdd * co - lam / m * co - (e * B / m) * (xd - a * td * s),
            params.total_inertia * tdd + m * a * td * fwd - e * B * (a * xd * co + a * yd * s),
            ydd * co - xdd * s - td * fwd,
        ]
    )


def energy(state, c: float) -> float:
    v, omega = state
    return 0.5 * (v * v / c + omega * omega)


def kinetic_energy(theta, velocity, params: SleighParams):
    """``q'^T M(theta) q' / 2``; ``theta`` may be an array with ``velocity`` rows."""
    qd = np.asarray(velocity, dtype=float)
    if np.ndim(theta) == 0 and qd.ndim == 1:
        return 0.5 * float(qd @ params.mass_matrix(theta) @ qd)
    xd, yd, td = qd[..., 0], qd[..., 1], qd[..., 2]
    m, a = params.m, params.a
    cross = -xd * np.sin(theta) + yd * np.cos(theta)
    return 0.5 * (m * (xd * xd + yd * yd) + 2 * m * a * td * cross + params.total_inertia * td * td)


def alpha_coords(state, c: float) -> float:
    """Phase ``alpha`` in ``(-pi, pi]`` of a reduced state on the ``E = 1/2`` shell."""
    E = energy(state, c)
    if abs(E - 0.5) > SHELL_TOL:
        raise ValueError(f"state is not on the E = 1/2 shell (E = {E!r})")
    v, omega = state
    return math.atan2(omega, v / math.sqrt(c))


def from_alpha(alpha: float, c: float) -> ReducedState:
    return ReducedState(math.sqrt(c) * math.cos(alpha), math.sin(alpha))


def alpha_rate(alpha: float, B: float, c: float) -> float:
    """``dalpha/dt`` of the sleigh on the unit energy shell."""
    return math.sqrt(c) * (B - math.sin(alpha))


def initial_reduced_state(c: float, E0: float = 0.5, alpha0: float = 0.0) -> ReducedState:
    """State on the energy level ``E0`` at phase ``alpha0``."""
    if not E0 >= 0:
        raise ValueError(f"energy must be non-negative, got {E0}")
    r = math.sqrt(2 * E0)
    return ReducedState(r * math.sqrt(c) * math.cos(alpha0), r * math.sin(alpha0))


# Control schedules ---------------------------------------------------------


class PiecewiseConstantField:
    """Field equal to ``values[k]`` on ``[times[k], times[k+1])``.

    Before ``times[0]`` the first value applies; after the last time the last
    value holds.
    """

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape or self.times.size == 0:
            raise ValueError("schedule needs equal-length, non-empty time and value lists")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("schedule times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("schedule values must be finite")

    @classmethod
    def random(cls, rng: np.random.Generator, t1: float, n_pieces: int = 10, scale: float = 2.0):
        cuts = np.sort(rng.uniform(0, t1, n_pieces - 1))
        return cls(np.concatenate([[0.0], cuts]), rng.uniform(-scale, scale, n_pieces))

    @property
    def breakpoints(self) -> np.ndarray:
        return self.times[1:]

    def __call__(self, t):
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 1)
        return self.values[idx]


FieldLike = Union[float, Callable[[float], float], PiecewiseConstantField]


def _field_segments(B: FieldLike, t0: float, t1: float):
    """Breakpoints and per-segment field callables for any supported schedule."""
    if isinstance(B, PiecewiseConstantField):
        cuts = [b for b in B.breakpoints if t0 < b < t1]
        edges = [t0, *cuts]
        values = [float(B(t)) for t in edges]
        return cuts, lambda k: (lambda t, _v=values[k]: _v)
    if callable(B):
        return [], lambda k: B
    value = float(B)
    return [], lambda k: (lambda t: value)


def field_value(B: FieldLike, t):
    if callable(B):
        return B(t)
    return np.full_like(np.asarray(t, dtype=float), float(B))


# Simulation ----------------------------------------------------------------


def simulate_reduced(
    B: FieldLike,
    c: float,
    state0,
    t1: float,
    config: IntegratorConfig | None = None,
    sample_times=None,
    t0: float = 0.0,
) -> SampledTrajectory:
    """Integrate the dimensionless ``(v, omega)`` system under field schedule ``B``."""
    check_coupling(c)
    cuts, field_of = _field_segments(B, t0, t1)

    def rhs_for(k):
        Bk = field_of(k)

        def rhs(t, y):
            slip = Bk(t) - y[1]
            return np.array([-c * y[1] * slip, y[0] * slip])

        return rhs

    return integrate_piecewise(rhs_for, t0, np.asarray(state0, dtype=float), t1, cuts, config, sample_times)


def project_constraint(y: np.ndarray) -> np.ndarray:
    """Remove the lateral velocity component of a full state if it has drifted."""
    _, _, theta, xd, yd, _ = y.tolist()
    s, co = math.sin(theta), math.cos(theta)
    lateral = yd * co - xd * s
    if abs(lateral) <= PROJECTION_TOL:
        return y
    fwd = xd * co + yd * s
    out = y.copy()
    out[3] = fwd * co
    out[4] = fwd * s
    return out


def constraint_residual(states: np.ndarray) -> np.ndarray:
    """``|ydot cos(theta) - xdot sin(theta)|`` for rows ``(x, y, theta, xdot, ydot, thetadot)``."""
    states = np.atleast_2d(states)
    th = states[:, 2]
    return np.abs(states[:, 4] * np.cos(th) - states[:, 3] * np.sin(th))


def simulate_full(
    B: FieldLike,
    params: SleighParams,
    pose0,
    velocity0,
    t1: float,
    config: IntegratorConfig | None = None,
    sample_times=None,
    t0: float = 0.0,
) -> SampledTrajectory:
    """Integrate the dimensional constrained sleigh.

    State rows are ``(x, y, theta, xdot, ydot, thetadot)``; ``B`` is the
    dimensional field (number, callable of time, or piecewise schedule).
    """
    cuts, field_of = _field_segments(B, t0, t1)

    m, a, e, inertia = params.m, params.a, params.e, params.total_inertia
    sin, cos = math.sin, math.cos

    def rhs_for(k):
        Bk = field_of(k)

        # Inlined copy of _full_accelerations; this is the hot loop.
        def rhs(t, y):
            _, _, theta, xd, yd, td = y.tolist()
            eB = e * Bk(t)
            s, co = sin(theta), cos(theta)
            fwd = xd * co + yd * s
            tdd = (eB * a - m * a * td) * fwd / inertia
            X = a * td * td * co + (eB / m) * (-yd - a * td * co) + a * s * tdd
            Y = a * td * td * s + (eB / m) * (xd - a * td * s) - a * co * tdd
            lam = td * fwd + s * X - co * Y  # multiplier over m
            return np.array([xd, yd, td, X - s * lam, Y + co * lam, tdd])

        return rhs

    y0 = np.concatenate([np.asarray(pose0, float), np.asarray(velocity0, float)])
    if constraint_residual(y0)[0] > SHELL_TOL:
        raise ValueError("initial velocity violates the no-slip constraint")
    return integrate_piecewise(
        rhs_for, t0, y0, t1, cuts, config, sample_times, project=lambda t, y: project_constraint(y)
    )


def full_to_reduced(states: np.ndarray, params: SleighParams) -> np.ndarray:
    """Dimensionless ``(v, omega)`` rows from dimensional full-state rows."""
    states = np.atleast_2d(states)
    norm = params.normalization
    th = states[:, 2]
    v = states[:, 3] * np.cos(th) + states[:, 4] * np.sin(th)
    return np.column_stack([v / norm.v, states[:, 5] / norm.omega])


def full_from_reduced(pose0, state0, params: SleighParams) -> tuple[np.ndarray, np.ndarray]:
    """Dimensional pose and velocity from a dimensionless pose/reduced state."""
    norm = params.normalization
    x0, y0, th0 = pose0
    v = state0[0] * norm.v
    pose = np.array([x0 * norm.length, y0 * norm.length, th0])
    vel = np.array([v * math.cos(th0), v * math.sin(th0), state0[1] * norm.omega])
    return pose, vel


def reconstruct_pose(
    reduced: SampledTrajectory,
    pose0=(0.0, 0.0, 0.0),
    config: IntegratorConfig | None = None,
) -> SampledTrajectory:
    """Integrate ``xdot = v cos(theta), ydot = v sin(theta), thetadot = omega``.

    ``(v, omega)`` are read from the dense interpolant of ``reduced`` when it
    has one, otherwise from a cubic spline through its samples. The result has
    rows ``(x, y, theta, v, omega)`` at the sample times of ``reduced``.
    """
    if reduced.interpolant is not None:
        vw = reduced.interpolant
    else:
        from scipy.interpolate import CubicSpline

        vw = CubicSpline(reduced.times, reduced.states[:, :2], axis=0)

    def rhs(t, p):
        v, omega = np.asarray(vw(t))[:2]
        return np.array([v * math.cos(p[2]), v * math.sin(p[2]), omega])

    t0, t1 = reduced.times[0], reduced.times[-1]
    if t1 == t0:
        return SampledTrajectory(reduced.times, np.concatenate([np.atleast_2d(pose0), reduced.states[:, :2]], axis=1))
    poses = integrate(rhs, t0, np.asarray(pose0, float), t1, config, sample_times=reduced.times)
    states = np.column_stack([poses.states, reduced.states[:, :2]])

    def dense(t):
        scalar = np.ndim(t) == 0
        out = np.column_stack([np.atleast_2d(poses.interpolant(t)), np.atleast_2d(vw(t))[:, :2]])
        return out[0] if scalar else out

    return SampledTrajectory(reduced.times, states, dense, poses.n_steps)


def simulate_constant_B(
    B: float,
    c: float,
    E0: float = 0.5,
    alpha0: float = 0.0,
    t1: float = 50.0,
    pose0=(0.0, 0.0, 0.0),
    config: IntegratorConfig | None = None,
    sample_times=None,
) -> SampledTrajectory:
    """Constant-field sleigh started at phase ``alpha0`` on energy level ``E0``.

    Returns rows ``(x, y, theta, v, omega)``.
    """
    state0 = initial_reduced_state(c, E0, alpha0)
    if sample_times is None:
        sample_times = np.linspace(0.0, t1, 1001)
    reduced = simulate_reduced(float(B), c, state0, t1, config, sample_times)
    return reconstruct_pose(reduced, pose0, config)
