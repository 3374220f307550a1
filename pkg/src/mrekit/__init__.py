"""Shear-wave displacement extraction, learned complex-wavenumber
estimation, and shear modulus mapping on regular grids."""

__version__ = "0.1.0"

from .grid import ComplexGrid, GridGeom

__all__ = ["ComplexGrid", "GridGeom", "__version__"]
