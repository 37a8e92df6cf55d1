"""Pontryagin layer for the magnetically steered sleigh with running cost B^2/2.

Two formulations are provided. The four-dimensional costate flow in
``(v, omega, p_v, p_omega)`` and the planar flow in ``(alpha, B)`` generated
by ``H(alpha, B) = B^2 / (2c) - B sin(alpha)``. They coincide at ``c = 1``;
for other couplings the planar flow is the planner model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import IntegratorConfig, SampledTrajectory, integrate
from .sleigh import check_coupling


class CostateState(NamedTuple):
    v: float
    omega: float
    p_v: float
    p_omega: float


class PlanarOptState(NamedTuple):
    alpha: float
    B: float


@dataclass(frozen=True)
class ConservedPair:
    """Initial values of the two invariants and their largest drift along a flow."""

    E: float
    H_opt: float
    E_drift: float
    H_opt_drift: float


# Four-dimensional costate flow ----------------------------------------------


def extended_hamiltonian_4d(s, B: float, c: float) -> float:
    v, w, pv, pw = s
    return 0.5 * B * B + pv * (c * w * w - c * w * B) + pw * (-w * v + v * B)


def optimal_B_4d(s, c: float) -> float:
    """Minimizer in ``B`` of the extended Hamiltonian (it is convex in ``B``)."""
    v, w, pv, pw = s
    return c * w * pv - v * pw


def hopt_4d(s, c: float) -> float:
    v, w, pv, pw = s
    return (
        c * w * w * pv
        - 0.5 * pw * pw * v * v
        - 0.5 * c * c * w * w * pv * pv
        - w * pw * v
        + c * w * pw * pv * v
    )


def pmp_rhs_4d(s, c: float) -> np.ndarray:
    """Canonical equations of :func:`hopt_4d`."""
    v, w, pv, pw = s
    return np.array(
        [
            c * w * w - c * c * w * w * pv + c * w * v * pw,
            -w * v + c * w * v * pv - v * v * pw,
            w * pw + v * pw * pw - c * w * pw * pv,
            v * pw - 2 * c * w * pv + c * c * w * pv * pv - c * v * pw * pv,
        ]
    )


def pmp_flow_4d(
    s0, c: float, t1: float, config: IntegratorConfig | None = None, sample_times=None
) -> SampledTrajectory:
    check_coupling(c)
    return integrate(lambda t, y: pmp_rhs_4d(y, c), 0.0, np.asarray(s0, float), t1, config, sample_times)


def costate_from_planar(alpha: float, B: float) -> CostateState:
    """Lift a planar state to the 4D flow at ``c = 1``.

    Uses ``v = cos(alpha)``, ``omega = sin(alpha)``, ``p_alpha = -B`` and a
    zero costate along the energy direction, which gives ``optimal_B_4d = B``.
    """
    return CostateState(math.cos(alpha), math.sin(alpha), B * math.sin(alpha), -B * math.cos(alpha))


def field_from_p_alpha(p_alpha: float, c: float) -> float:
    """Optimal field as a function of the costate conjugate to ``alpha``."""
    return -math.sqrt(c) * p_alpha


# Planar flow ----------------------------------------------------------------


def hopt_planar(alpha, B, c: float):
    return 0.5 * B * B / c - B * np.sin(alpha)


def planar_rhs(state, c: float) -> tuple[float, float]:
    alpha, B = state
    return B / c - math.sin(alpha), B * math.cos(alpha)


def planar_jacobian(state, c: float) -> np.ndarray:
    alpha, B = state
    return np.array(
        [
            [-math.cos(alpha), 1.0 / c],
            [-B * math.sin(alpha), math.cos(alpha)],
        ]
    )


def planar_flow(
    state0, c: float, t1: float, config: IntegratorConfig | None = None, sample_times=None
) -> SampledTrajectory:
    """Integrate the planar flow; ``alpha`` is left unwrapped."""
    check_coupling(c)
    inv_c = 1.0 / c

    def rhs(t, y):
        return np.array([y[1] * inv_c - math.sin(y[0]), y[1] * math.cos(y[0])])

    return integrate(rhs, 0.0, np.asarray(state0, float), t1, config, sample_times)


def pendulum_residual(traj: SampledTrajectory, c: float) -> float:
    """Largest ``|alpha'' - sin(2 alpha) / 2|`` along a planar trajectory.

    ``alpha''`` is obtained by the chain rule from ``alpha' = B/c - sin(alpha)``
    and ``B' = B cos(alpha)``.
    """
    alpha, B = traj.states[:, 0], traj.states[:, 1]
    alpha_dot = B / c - np.sin(alpha)
    B_dot = B * np.cos(alpha)
    alpha_ddot = B_dot / c - np.cos(alpha) * alpha_dot
    return float(np.max(np.abs(alpha_ddot - 0.5 * np.sin(2 * alpha))))


def conserved_pair(traj: SampledTrajectory, c: float, kind: str | None = None) -> ConservedPair:
    """Drift of the energy and the optimal Hamiltonian along a flow.

    ``kind`` is ``"4d"`` or ``"planar"``; it is inferred from the state width
    when omitted. On the planar chart the energy is 1/2 by construction.
    """
    states = traj.states
    if kind is None:
        kind = {4: "4d", 2: "planar"}.get(states.shape[1])
    if kind == "4d":
        v, w = states[:, 0], states[:, 1]
        E = 0.5 * (v * v / c + w * w)
        H = np.array([hopt_4d(s, c) for s in states])
    elif kind == "planar":
        E = np.full(len(states), 0.5)
        H = hopt_planar(states[:, 0], states[:, 1], c)
    else:
        raise ValueError(f"unknown flow kind {kind!r}")
    return ConservedPair(
        E=float(E[0]),
        H_opt=float(H[0]),
        E_drift=float(np.max(np.abs(E - E[0]))),
        H_opt_drift=float(np.max(np.abs(H - H[0]))),
    )


# Equilibria -----------------------------------------------------------------


@dataclass(frozen=True)
class Equilibrium:
    alpha: float
    B: float
    kind: str
    eigenvalues: tuple[complex, complex]


def classify_equilibrium(state, c: float, tol: float = 1e-12) -> Equilibrium:
    """Saddle, center, node or focus from the eigenvalues of the planar Jacobian."""
    ev = np.linalg.eigvals(planar_jacobian(state, c))
    re, im = ev.real, ev.imag
    if np.all(np.abs(im) > tol) and np.all(np.abs(re) <= tol):
        kind = "center"
    elif np.all(np.abs(im) <= tol) and re[0] * re[1] < 0:
        kind = "saddle"
    elif np.all(np.abs(im) > tol):
        kind = "stable focus" if re[0] < 0 else "unstable focus"
    else:
        kind = "stable node" if np.all(re < 0) else "unstable node"
    order = np.argsort(ev.imag + ev.real * 1e-3)
    eigs = tuple(complex(ev[i]) for i in order)
    return Equilibrium(float(state[0]), float(state[1]), kind, eigs)


def planar_equilibria(c: float) -> list[Equilibrium]:
    """Equilibria of the planar flow for ``alpha`` in ``(-pi, pi]``."""
    check_coupling(c)
    points = [(0.0, 0.0), (math.pi, 0.0), (math.pi / 2, c), (-math.pi / 2, -c)]
    return [classify_equilibrium(p, c) for p in points]
