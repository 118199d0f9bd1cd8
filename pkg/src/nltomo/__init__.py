"""Steady-current simulation and monotonicity-based imaging for nonlinear conductors.

Subpackage map:

- ``mesh``: 2-D simplicial meshes with explicit boundary structure, phantoms.
- ``constitutive``: nonlinear conductivity laws sigma(x, E) and their admissibility checks.
- ``forward``: energy-minimizing solver for the nonlinear steady-current problem.
- ``boundary_ops``: boundary flux operator, its alpha-averaged variant, power products.
- ``imaging``: inclusion testing and shape reconstruction from averaged power data.
- ``verify``: executable property checks with a machine-readable report.
- ``cli``: command-line front end (``nltomo <subcommand> --config ...``).
"""

from nltomo.errors import ConfigurationError, NonConvergenceError, QuadratureNotConvergedError

__all__ = [
    "ConfigurationError",
    "NonConvergenceError",
    "QuadratureNotConvergedError",
]

__version__ = "0.1.0"
