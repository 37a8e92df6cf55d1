"""Magnetic nonholonomic Lie-Poisson equations for left-invariant systems.

Body momentum ``mu`` in the dual algebra evolves as

    mu' = ad*_xi mu + B_e(xi, .) + lambda^i eta_i,    xi = inertia^{-1} mu,

with the multipliers chosen so the constraints ``eta_i(xi) = 0`` are
preserved. Structure constants are stored densely as ``C[k, i, j]`` with
``[e_i, e_j] = C[k, i, j] e_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import IntegratorConfig, SampledTrajectory, integrate
from .sleigh import SleighParams

STRUCTURE_TOL = 1e-12
CONSTRAINT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LieAlgebraStructure:
    constants: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.constants, dtype=float)
        if C.ndim != 3 or not (C.shape[0] == C.shape[1] == C.shape[2]):
            raise ValueError("structure constants must have shape (n, n, n)")
        if np.max(np.abs(C + C.transpose(0, 2, 1)), initial=0.0) > STRUCTURE_TOL:
            raise ValueError("structure constants are not antisymmetric in the lower indices")
        object.__setattr__(self, "constants", C)
        if jacobi_residual(C) > STRUCTURE_TOL:
            raise ValueError("structure constants violate the Jacobi identity")

    @property
    def dim(self) -> int:
        return self.constants.shape[0]

    def bracket(self, xi, zeta) -> np.ndarray:
        return np.einsum("kij,i,j->k", self.constants, xi, zeta)


def jacobi_residual(C: np.ndarray) -> float:
    """Largest entry of ``[[e_i, e_j], e_k] + cyclic``."""
    # [[e_i,e_j],e_k] = C[m,i,j] C[l,m,k] e_l
    t = np.einsum("mij,lmk->lijk", C, C)
    cyc = t + t.transpose(0, 2, 3, 1) + t.transpose(0, 3, 1, 2)
    return float(np.max(np.abs(cyc), initial=0.0))


def so3() -> LieAlgebraStructure:
    C = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        C[k, i, j] = 1.0
        C[k, j, i] = -1.0
    return LieAlgebraStructure(C)


def se2() -> LieAlgebraStructure:
    """Basis ``e1`` rotation, ``e2, e3`` body translations.

    ``[e1, e2] = e3``, ``[e1, e3] = -e2``, ``[e2, e3] = 0``.
    """
    C = np.zeros((3, 3, 3))
    C[2, 0, 1], C[2, 1, 0] = 1.0, -1.0
    C[1, 0, 2], C[1, 2, 0] = -1.0, 1.0
    return LieAlgebraStructure(C)


@dataclass(frozen=True, eq=False)
class LeftInvariantSystem:
    """Left-invariant kinetic energy, magnetic term and constraint covectors.

    The inertia only needs to be positive definite on the admissible
    velocities ``ker(etas)``; a degenerate unconstrained inertia (a sleigh
    with no rotational inertia of its own) is allowed. Velocities and
    multipliers come from the saddle-point system ``[[I, H^T], [H, 0]]``.
    """

    algebra: LieAlgebraStructure
    inertia: np.ndarray
    B_e: np.ndarray
    etas: np.ndarray

    def __post_init__(self):
        n = self.algebra.dim
        inertia = np.asarray(self.inertia, dtype=float)
        B_e = np.asarray(self.B_e, dtype=float)
        etas = np.asarray(self.etas, dtype=float).reshape(-1, n)
        if inertia.shape != (n, n) or B_e.shape != (n, n):
            raise ValueError(f"inertia and B_e must be {n}x{n}")
        scale = max(1.0, float(np.max(np.abs(inertia))))
        if np.max(np.abs(inertia - inertia.T)) > 1e-12 * scale:
            raise ValueError("inertia must be symmetric")
        if np.max(np.abs(B_e + B_e.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(B_e))):
            raise ValueError("magnetic matrix B_e must be antisymmetric")
        k = etas.shape[0]
        if k >= n:
            raise ValueError("need fewer constraints than the algebra dimension")
        if k and np.linalg.matrix_rank(etas) < k:
            raise ValueError("constraint covectors must be linearly independent")
        if np.min(np.linalg.eigvalsh(inertia)) < -1e-12 * scale:
            raise ValueError("inertia must be positive semidefinite")
        # Orthonormal basis of the admissible velocities.
        _, _, vt = np.linalg.svd(etas) if k else (None, None, np.eye(n))
        basis = vt[k:].T
        if np.min(np.linalg.eigvalsh(basis.T @ inertia @ basis)) <= 1e-12 * scale:
            raise ValueError("inertia must be positive definite on the constraint distribution")
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = inertia
        kkt[:n, n:] = etas.T
        kkt[n:, :n] = etas
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "B_e", B_e)
        object.__setattr__(self, "etas", etas)
        object.__setattr__(self, "_kkt_inv", np.linalg.inv(kkt))

    @property
    def dim(self) -> int:
        return self.algebra.dim

    def _split(self, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.dim
        sol = self._kkt_inv @ np.concatenate([rhs, np.zeros(self.etas.shape[0])])
        return sol[:n], sol[n:]

    def velocity(self, mu) -> np.ndarray:
        """Admissible velocity ``xi`` with ``mu = I xi + H^T kappa``."""
        return self._split(np.asarray(mu, dtype=float))[0]

    def energy(self, mu) -> float:
        xi = self.velocity(mu)
        return 0.5 * float(xi @ self.inertia @ xi)

    def constraint_values(self, mu) -> np.ndarray:
        """``kappa``: the part of ``mu`` along the constraint covectors.

        It vanishes exactly when ``mu = I xi`` with ``xi`` admissible.
        """
        return self._split(np.asarray(mu, dtype=float))[1]


def ad_star(xi, mu, algebra: LieAlgebraStructure) -> np.ndarray:
    """``nu_j = C[k, i, j] xi^i mu_k``, the dual of ``zeta -> [xi, zeta]``."""
    xi = np.asarray(xi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    n = algebra.dim
    if xi.shape != (n,) or mu.shape != (n,):
        raise ValueError(f"expected vectors of length {n}")
    return np.einsum("kij,i,k->j", algebra.constants, xi, mu)


def _unconstrained_rate(mu: np.ndarray, system: LeftInvariantSystem):
    xi = system.velocity(mu)
    return ad_star(xi, mu, system.algebra) + xi @ system.B_e


def multipliers(mu, system: LeftInvariantSystem) -> np.ndarray:
    """Constraint multipliers keeping ``d/dt eta_i(xi) = 0``.

    Solves ``I xi' = f + H^T lambda``, ``H xi' = 0``.
    """
    mu = np.asarray(mu, dtype=float)
    if system.etas.shape[0] == 0:
        return np.zeros(0)
    return -system._split(_unconstrained_rate(mu, system))[1]


def lp_rhs(mu, system: LeftInvariantSystem) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    f = _unconstrained_rate(mu, system)
    if system.etas.shape[0] == 0:
        return f
    lam = -system._split(f)[1]
    return f + lam @ system.etas


def project_momentum(mu: np.ndarray, system: LeftInvariantSystem) -> np.ndarray:
    """Drop a drifted component along the constraint covectors: ``mu <- I xi``."""
    if system.etas.shape[0] == 0:
        return mu
    xi, kappa = system._split(mu)
    if np.max(np.abs(kappa)) <= CONSTRAINT_TOL:
        return mu
    return system.inertia @ xi


def lp_flow(
    mu0,
    system: LeftInvariantSystem,
    t1: float,
    config: IntegratorConfig | None = None,
    sample_times=None,
) -> SampledTrajectory:
    return integrate(
        lambda t, mu: lp_rhs(mu, system),
        0.0,
        np.asarray(mu0, dtype=float),
        t1,
        config,
        sample_times,
        project=lambda t, mu: project_momentum(mu, system),
    )


def se2_sleigh_system(params: SleighParams, B: float) -> LeftInvariantSystem:
    """Sleigh on SE(2) in body coordinates ``xi = (omega, v_forward, v_lateral)``.

    ``B`` is the dimensionless field; the system itself is dimensional. The
    field ``B dx_c ^ dy_c`` of the center of mass, pulled back to the
    identity where ``dx_c ^ dy_c = dx ^ dy + a dx ^ dtheta``, gives
    ``B_e(e1, e2) = -a B``, ``B_e(e2, e3) = B`` (times the charge).
    """
    m, a = params.m, params.a
    inertia = np.array(
        [
            [params.total_inertia, 0.0, m * a],
            [0.0, m, 0.0],
            [m * a, 0.0, m],
        ]
    )
    field = params.e * B * params.normalization.B
    B_e = field * np.array(
        [
            [0.0, -a, 0.0],
            [a, 0.0, 1.0],
            [0.0, -1.0, 0.0],
        ]
    )
    return LeftInvariantSystem(se2(), inertia, B_e, np.array([[0.0, 0.0, 1.0]]))


def sleigh_momentum(v: float, omega: float, system: LeftInvariantSystem) -> np.ndarray:
    """Body momentum of a constrained sleigh moving with forward speed ``v``."""
    return system.inertia @ np.array([omega, v, 0.0])
