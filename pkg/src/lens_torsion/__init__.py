"""Constrained torsion on lens domains inside the upper half-ball.

Modules: ``geometry`` (domains, distances, cone and parallel-set checks),
``mesh`` (triangulation, refinement, quadrature), ``fem`` (quadratic elements),
``oracle`` (closed-form solution and mesh-free identities), ``identities``
(derived quantities and residual reports), ``stability`` (sweeps and theorem
certificates) and ``cli``.
"""

__version__ = "0.1.0"
