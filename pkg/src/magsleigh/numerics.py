"""Shared numerical kernels.

Adaptive Dormand-Prince 5(4) integration with dense output, Brent root
finding on a sign-changing bracket, the complete elliptic integral of the
first kind via the arithmetic-geometric mean, and adaptive quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _scipy_integrate

__all__ = [
    "NumericalError",
    "IntegrationError",
    "RootFindingError",
    "QuadratureError",
    "IntegratorConfig",
    "RootBracket",
    "SampledTrajectory",
    "integrate",
    "integrate_piecewise",
    "find_root",
    "agm",
    "elliptic_K",
    "quadrature",
]

EPS = np.finfo(float).eps


class NumericalError(RuntimeError):
    """Base class for numerical failures (integration, root finding, quadrature)."""


class IntegrationError(NumericalError):
    pass


class RootFindingError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-size control settings for :func:`integrate`.

    ``step_size`` is the initial step guess; the controller adapts it from
    there using ``rel_tol`` and ``abs_tol``.
    """

    step_size: float = 1e-2
    rel_tol: float = 1e-11
    abs_tol: float = 1e-11
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("rel_tol and abs_tol must be positive")
        if not self.max_steps > 0:
            raise ValueError(f"max_steps must be positive, got {self.max_steps}")

    def tightened(self, factor: float) -> "IntegratorConfig":
        """Copy with both tolerances divided by ``factor``."""
        return IntegratorConfig(
            self.step_size, self.rel_tol / factor, self.abs_tol / factor, self.max_steps
        )


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tol: float = 1e-12

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if not self.tol > 0:
            raise ValueError("bracket tolerance must be positive")


# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array(
    [
        [0, 0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    ]
)
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = np.array(
    [
        -71 / 57600,
        0,
        71 / 16695,
        -71 / 1920,
        17253 / 339200,
        -22 / 525,
        1 / 40,
    ]
)
# Shampine's free 4th-order continuous extension: y(t + s h) = y + h K^T P [s, s^2, s^3, s^4]
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

# Stage rows followed by the 5th-order weights, scaled by h once per step.
_AB = np.vstack([_A, _B[:6]])
_C_LIST = [float(x) for x in _C]

_ROUNDOFF_ULPS = 64.0

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


class DenseSolution:
    """Piecewise polynomial interpolant over accepted steps."""

    def __init__(self, t_nodes: np.ndarray, y_nodes: np.ndarray, q_coeffs: np.ndarray):
        # q_coeffs[i] has shape (n, 4): h * K^T P for step i.
        self.t = t_nodes
        self.y = y_nodes
        self.q = q_coeffs

    @property
    def t_min(self) -> float:
        return float(self.t[0])

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.t, tt, side="right") - 1
        idx = np.clip(idx, 0, len(self.t) - 2)
        h = self.t[idx + 1] - self.t[idx]
        s = (tt - self.t[idx]) / h
        powers = np.stack([s, s**2, s**3, s**4], axis=-1)
        out = self.y[idx] + np.einsum("knp,kp->kn", self.q[idx], powers)
        # Exact node values at step ends.
        exact = tt == self.t[idx + 1]
        if np.any(exact):
            out[exact] = self.y[idx[exact] + 1]
        return out[0] if scalar else out


class PiecewiseDense:
    """Concatenation of dense solutions on adjacent time segments."""

    def __init__(self, pieces: Sequence[DenseSolution]):
        self.pieces = list(pieces)
        self._starts = np.array([p.t_min for p in self.pieces])

    @property
    def t_min(self) -> float:
        return self.pieces[0].t_min

    @property
    def t_max(self) -> float:
        return self.pieces[-1].t_max

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        which = np.clip(np.searchsorted(self._starts, tt, side="right") - 1, 0, len(self.pieces) - 1)
        n = self.pieces[0].y.shape[1]
        out = np.empty((tt.size, n))
        for k in np.unique(which):
            mask = which == k
            out[mask] = self.pieces[k](tt[mask])
        return out[0] if scalar else out


@dataclass
class SampledTrajectory:
    """States sampled at increasing times, with an optional dense interpolant."""

    times: np.ndarray
    states: np.ndarray
    interpolant: Callable | None = field(default=None, repr=False)
    n_steps: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t):
        if self.interpolant is None:
            raise ValueError("trajectory carries no dense interpolant")
        return self.interpolant(t)


def _initial_step(rhs, t0, y0, f0, t_span, cfg: IntegratorConfig) -> float:
    # Hairer-Norsett-Wanner starting step heuristic, capped by config.step_size.
    scale = cfg.abs_tol + np.abs(y0) * cfg.rel_tol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    y1 = y0 + h0 * f0
    f1 = np.asarray(rhs(t0 + h0, y1), dtype=float)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, cfg.step_size, t_span)


def _check_finite(values: np.ndarray, t: float):
    if not np.all(np.isfinite(values)):
        raise IntegrationError(f"non-finite right-hand side value at t={t!r}")


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0,
    t1: float,
    config: IntegratorConfig | None = None,
    sample_times=None,
    project: Callable[[float, np.ndarray], np.ndarray] | None = None,
) -> SampledTrajectory:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1`` with Dormand-Prince 5(4).

    Args:
        rhs: vector field ``f(t, y)`` returning an array shaped like ``y``.
        t0, t1: integration interval, ``t1 > t0``.
        y0: initial state.
        config: tolerances and step limits; defaults to ``IntegratorConfig()``.
        sample_times: times in ``[t0, t1]`` at which to report the state. When
            omitted, every accepted step is reported.
        project: optional map applied to the state after each accepted step
            (constraint projection).

    Returns:
        SampledTrajectory whose ``interpolant`` evaluates the dense output
        anywhere in ``[t0, t1]``.

    Raises:
        IntegrationError: on non-finite values or when ``max_steps`` is hit.
    """
    cfg = config or IntegratorConfig()
    t0 = float(t0)
    t1 = float(t1)
    if not t1 > t0:
        raise ValueError(f"integration requires t1 > t0, got t0={t0}, t1={t1}")
    y = np.array(y0, dtype=float).ravel()
    n = y.size
    rtol, atol = cfg.rel_tol, cfg.abs_tol

    f = np.asarray(rhs(t0, y), dtype=float)
    _check_finite(f, t0)
    h = _initial_step(rhs, t0, y, f, t1 - t0, cfg)

    t = t0
    ts = [t0]
    ys = [y.copy()]
    hs = []
    Ks = []
    K = np.empty((7, n))
    abs_y = np.abs(y)
    steps = 0
    while t < t1:
        if steps >= cfg.max_steps:
            raise IntegrationError(f"step limit {cfg.max_steps} exceeded at t={t!r}")
        h = min(h, t1 - t)
        # Avoid a sliver of a final step.
        if t + 1.01 * h >= t1:
            h = t1 - t
        K[0] = f
        hA = h * _AB
        for i in range(1, 6):
            K[i] = rhs(t + _C_LIST[i] * h, y + hA[i, :i] @ K[:i])
        y_new = y + hA[6] @ K[:6]
        t_new = t + h if t + h < t1 else t1
        f_new = np.asarray(rhs(t_new, y_new), dtype=float)
        K[6] = f_new
        abs_new = np.abs(y_new)
        r = (_E @ K) * h / (atol + rtol * np.maximum(abs_y, abs_new))
        err = math.sqrt(float(r @ r) / n)
        # Every stage and the new state enter the error norm, so a non-finite
        # value anywhere shows up here (inf/inf and inf-inf are nan).
        if not math.isfinite(err):
            # Retry with a smaller step; give up once the step is negligible.
            h *= 0.25
            if h < 16 * EPS * max(1.0, abs(t)):
                raise IntegrationError(f"non-finite right-hand side value near t={t!r}")
            continue
        if err <= 1.0:
            # Dense-output coefficients are formed in one batch at the end.
            hs.append(h)
            Ks.append(K.copy())
            if project is not None:
                projected = project(t_new, y_new)
                if projected is not y_new:
                    y_new = np.asarray(projected, dtype=float)
                    f_new = np.asarray(rhs(t_new, y_new), dtype=float)
                    abs_new = np.abs(y_new)
            t, y, f, abs_y = t_new, y_new, f_new, abs_new
            ts.append(t)
            ys.append(y)
            steps += 1
            h *= _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2)
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
            if h < 16 * EPS * max(1.0, abs(t)):
                raise IntegrationError(f"step size underflow at t={t!r}")

    # q[i] = h_i * K_i^T P, shape (steps, n, 4).
    qs = np.einsum("sjn,jp->snp", np.array(Ks).reshape(-1, 7, n), _P) * np.array(hs)[:, None, None]
    dense = DenseSolution(np.array(ts), np.array(ys), qs)
    if sample_times is None:
        return SampledTrajectory(dense.t, dense.y, dense, steps)
    st = np.asarray(sample_times, dtype=float)
    if st.size and (st.min() < t0 - 1e-12 * max(1, abs(t0)) or st.max() > t1 + 1e-12 * max(1, abs(t1))):
        raise ValueError("sample_times must lie within [t0, t1]")
    return SampledTrajectory(st, dense(np.clip(st, t0, t1)), dense, steps)


def integrate_piecewise(
    rhs_for_segment: Callable[[int], Callable[[float, np.ndarray], np.ndarray]],
    t0: float,
    y0,
    t1: float,
    breakpoints: Sequence[float] = (),
    config: IntegratorConfig | None = None,
    sample_times=None,
    project: Callable | None = None,
) -> SampledTrajectory:
    """Integrate across segments separated by ``breakpoints``, restarting at each.

    ``rhs_for_segment(k)`` returns the vector field used on segment ``k``.
    Restarting at discontinuities of the right-hand side keeps the step
    controller from straddling a jump.
    """
    cuts = sorted(b for b in breakpoints if t0 < b < t1)
    edges = [float(t0), *cuts, float(t1)]
    pieces = []
    steps = 0
    y = np.array(y0, dtype=float).ravel()
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        seg = integrate(rhs_for_segment(k), a, y, b, config, project=project)
        pieces.append(seg.interpolant)
        steps += seg.n_steps
        y = seg.final
    dense = PiecewiseDense(pieces)
    if sample_times is None:
        ts = np.concatenate([pieces[0].t] + [p.t[1:] for p in pieces[1:]])
        return SampledTrajectory(ts, dense(ts), dense, steps)
    st = np.asarray(sample_times, dtype=float)
    return SampledTrajectory(st, dense(st), dense, steps)


def find_root(f: Callable[[float], float], bracket: RootBracket, max_iter: int = 200) -> float:
    """Brent's method: bisection safeguarded inverse quadratic interpolation.

    Terminates when ``f`` is exactly zero or the bracket half-width falls
    below ``bracket.tol + 2 eps |x|``.
    """
    a, b = float(bracket.lo), float(bracket.hi)
    fa, fb = f(a), f(b)
    if not (math.isfinite(fa) and math.isfinite(fb)):
        raise RootFindingError("non-finite function value at the bracket ends")
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if (fa > 0) == (fb > 0):
        raise RootFindingError(f"no sign change on [{a}, {b}]: f={fa}, {fb}")

    c, fc = a, fa
    d = e = b - a
    for _ in range(max_iter):
        if (fb > 0) == (fc > 0):
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol = 2 * EPS * abs(b) + 0.5 * bracket.tol
        m = 0.5 * (c - b)
        if abs(m) <= tol or fb == 0.0:
            return b
        if abs(e) >= tol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2 * m * s
                q = 1 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2 * m * q * (q - r) - (b - a) * (r - 1))
                q = (q - 1) * (r - 1) * (s - 1)
            if p > 0:
                q = -q
            else:
                p = -p
            if 2 * p < min(3 * m * q - abs(tol * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = e = m
        else:
            d = e = m
        a, fa = b, fb
        b += d if abs(d) > tol else math.copysign(tol, m)
        fb = f(b)
        if not math.isfinite(fb):
            raise RootFindingError(f"non-finite function value at x={b!r}")
    raise RootFindingError(f"no convergence within {max_iter} iterations")


def agm(a: float, b: float) -> float:
    """Arithmetic-geometric mean of two non-negative numbers."""
    if a < 0 or b < 0:
        raise ValueError("agm requires non-negative arguments")
    if a == 0 or b == 0:
        return 0.0
    for _ in range(100):
        if abs(a - b) <= 2 * EPS * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return 0.5 * (a + b)


def elliptic_K(m: float) -> float:
    """Complete elliptic integral of the first kind in the parameter convention.

    ``K(m) = int_0^{pi/2} dtheta / sqrt(1 - m sin^2 theta)``, evaluated as
    ``pi / (2 agm(1, sqrt(1 - m)))``. Valid for ``m < 1``.
    """
    if not m < 1:
        raise ValueError(f"elliptic_K requires m < 1, got {m}")
    return math.pi / (2 * agm(1.0, math.sqrt(1.0 - m)))


def quadrature(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12, limit: int = 500,
               points=None) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``[a, b]`` to absolute ``tol``.

    A tolerance below what double precision can resolve is met at the
    round-off level: when the adaptive scheme reports round-off, the result is
    accepted if the error estimate is within a few ulps of the value.

    Raises QuadratureError if the error estimate cannot be brought below ``tol``
    within ``limit`` subdivisions, or the integrand misbehaves.
    """
    if not a < b:
        raise ValueError(f"quadrature requires a < b, got [{a}, {b}]")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _scipy_integrate.IntegrationWarning)
        value, abserr, _, *msg = _scipy_integrate.quad(
            f, a, b, epsabs=tol, epsrel=0.0, limit=limit, points=points, full_output=1
        )
    ier = 0 if not msg else (2 if "roundoff" in msg[0] else -1)
    if not math.isfinite(value):
        raise QuadratureError(f"non-finite integral on [{a}, {b}]")
    if abserr <= tol and ier in (0, 2):
        return value
    if ier == 2:
        if abserr <= _ROUNDOFF_ULPS * EPS * abs(value):
            return value
    detail = f": {msg[0].strip()}" if msg else ""
    raise QuadratureError(f"error estimate {abserr:.3g} exceeds tolerance {tol:.3g} on [{a}, {b}]{detail}")
