"""Regular-grid geometry and complex-valued fields.

Array axes are ordered (y, x) in 2D and (z, y, x) in 3D, so axis -1 is
always x. Physical vector components (direction cosines, coordinates)
are ordered (x, y) / (x, y, z); ``coords`` below returns them that way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridGeom:
    """Pixel counts and physical spacing of a regular 2D or 3D grid."""

    dims: tuple[int, ...]
    spacing_mm: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing_mm)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing_mm", spacing)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got dims={dims}")
        if len(spacing) != len(dims):
            raise ValueError("spacing_mm must have one entry per axis")
        if any(d < 1 for d in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        if any(not (s > 0) for s in spacing):
            raise ValueError(f"spacing_mm must be positive, got {spacing}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def spacing_m(self) -> tuple[float, ...]:
        return tuple(s * 1e-3 for s in self.spacing_mm)

    @property
    def n_pixels(self) -> int:
        return int(np.prod(self.dims))

    def coords(self) -> np.ndarray:
        """Physical coordinates of every pixel, relative to the grid center.

        Returns shape ``dims + (ndim,)`` in meters, components ordered
        (x, y) or (x, y, z). Center is the mean of the pixel positions,
        so a 3x3 patch runs from -spacing to +spacing on each axis.
        """
        axes_1d = []
        for n, h in zip(self.dims, self.spacing_m):
            # exact zero at the center pixel of odd-length axes
            axes_1d.append((np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * h)
        mesh = np.meshgrid(*axes_1d, indexing="ij")
        # mesh is in array-axis order (z, y, x); flip to components (x, y, z)
        return np.stack(mesh[::-1], axis=-1)


@dataclass
class ComplexGrid:
    """A complex128 field sampled on a :class:`GridGeom`."""

    values: np.ndarray
    geom: GridGeom

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.geom.dims:
            raise ValueError(
                f"values shape {self.values.shape} does not match geom dims {self.geom.dims}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def copy(self) -> "ComplexGrid":
        return ComplexGrid(self.values.copy(), self.geom)


def geoms_compatible(a: GridGeom, b: GridGeom, rel_tol: float = 0.01) -> bool:
    """Same dims, spacing equal within a relative tolerance per axis."""
    if a.dims != b.dims:
        return False
    return all(
        abs(sa - sb) <= rel_tol * max(sa, sb)
        for sa, sb in zip(a.spacing_mm, b.spacing_mm)
    )


def spacing_compatible(a: GridGeom, b: GridGeom, rel_tol: float = 0.01) -> bool:
    """Spacing (not dims) equal within a relative tolerance per axis."""
    if a.ndim != b.ndim:
        return False
    return all(
        abs(sa - sb) <= rel_tol * max(sa, sb)
        for sa, sb in zip(a.spacing_mm, b.spacing_mm)
    )
