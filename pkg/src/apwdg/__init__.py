"""Mixed-basis discontinuous Galerkin eigensolver for periodic Coulomb problems."""

__version__ = "0.1.0"
