"""Charged Chaplygin sleigh steered by a magnetic field.

Modules:

- ``numerics``: adaptive Dormand-Prince integrator, Brent root finder, AGM
  elliptic integral, quadrature wrapper.
- ``sleigh``: full-level and reduced dynamics, energy, pose reconstruction.
- ``lie_poisson``: constrained magnetic Lie-Poisson equations on a Lie algebra.
- ``optimal_control``: costate flows and equilibria of the minimum-field problem.
- ``planner``: fixed-time turnaround, cost sweeps, phase portrait data.
- ``cli``: the ``magsleigh`` command.
"""

__version__ = "0.1.0"
