"""Numerical laboratory for damped magnetic Schrodinger semigroups.

The package discretizes the magnetic Laplacian on interval and rectangle
grids, assembles the conservative and damped generators, time-integrates
their semigroups, and measures the quantitative objects attached to them:
energy dissipation laws, decay rates, imaginary-axis resolvent growth,
observability constants, multiplier identities, and Carleman weight
admissibility margins.
"""

__version__ = "0.1.0"

from . import mesh, magop, evolve, spectra, obsgram, multiplier, weights

__all__ = [
    "mesh",
    "magop",
    "evolve",
    "spectra",
    "obsgram",
    "multiplier",
    "weights",
    "__version__",
]
