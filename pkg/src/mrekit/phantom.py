"""Finite-difference Helmholtz phantom: labeled regions with complex
shear moduli, one driven edge, absorbing boundaries elsewhere.

The steady-state field solves laplacian(u) + k(r)^2 u = 0 on a 5-point
stencil. Per region, k = omega * conj(sqrt(rho / G*)), which has k' > 0
and k'' >= 0, so the solution is built from waves exp(i k' s - k'' s)
that travel away from the source while decaying; the same convention
the wavenumber estimators are trained on, and the one inverted by
G* = rho / (k~' - i k~'')^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import ComplexGrid, GridGeom

EDGES = ("left", "right", "top", "bottom")  # top = row 0, left = column 0


class SolverConvergenceError(RuntimeError):
    def __init__(self, residual: float, rtol: float, iterations: int):
        super().__init__(
            f"Helmholtz solve stalled at relative residual {residual:.3e} "
            f"(target {rtol:.1e}) after {iterations} iterations"
        )
        self.residual = residual


@dataclass(frozen=True)
class SourceSpec:
    """Dirichlet excitation: a whole edge or a single interior pixel."""

    kind: str = "edge"
    edge: str = "left"
    index: tuple[int, int] | None = None   # (iy, ix) for kind="point"
    amplitude: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.kind not in ("edge", "point"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "edge" and self.edge not in EDGES:
            raise ValueError(f"unknown edge {self.edge!r}, expected one of {EDGES}")
        if self.kind == "point" and self.index is None:
            raise ValueError("point source needs an index")


@dataclass
class SceneSpec:
    """Label grid plus per-label complex shear moduli in Pa."""

    labels: np.ndarray
    moduli: dict
    density: float
    omega: float
    source: SourceSpec = field(default_factory=SourceSpec)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError("phantom scenes are 2D")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        present = set(int(v) for v in np.unique(self.labels))
        missing = present - set(int(k) for k in self.moduli)
        if missing:
            raise ValueError(f"labels {sorted(missing)} have no modulus assigned")
        for lab, g in self.moduli.items():
            g = complex(g)
            if not g.real > 0 or g.imag < 0:
                raise ValueError(f"label {lab}: need G' > 0 and G'' >= 0, got {g}")
        if not self.density > 0:
            raise ValueError("density must be positive")
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    def modulus_grids(self) -> tuple[np.ndarray, np.ndarray]:
        """Ground-truth G' and G'' maps in Pa."""
        g_re = np.zeros(self.labels.shape)
        g_im = np.zeros(self.labels.shape)
        for lab, g in self.moduli.items():
            g = complex(g)
            m = self.labels == int(lab)
            g_re[m] = g.real
            g_im[m] = g.imag
        return g_re, g_im

    def k_tilde_grid(self) -> np.ndarray:
        """Ground-truth normalized wavenumber map (s/m, complex)."""
        kt = np.zeros(self.labels.shape, dtype=np.complex128)
        for lab, g in self.moduli.items():
            kt[self.labels == int(lab)] = material_k_tilde(complex(g), self.density)
        return kt


def material_k_tilde(modulus: complex, density: float) -> complex:
    """Normalized wavenumber k/omega = conj(sqrt(rho/G*)): k' > 0, k'' >= 0."""
    return np.conj(np.sqrt(complex(density) / complex(modulus)))


def make_inclusion_scene(geom: GridGeom, background: complex, inclusions,
                         density: float, omega: float,
                         source: SourceSpec | None = None) -> SceneSpec:
    """Circular inclusions on a uniform background.

    inclusions: iterable of (center_xy_mm, radius_mm, modulus_pa); centers
    are measured from the grid center, x right and y down.
    """
    if geom.ndim != 2:
        raise ValueError("phantom scenes are 2D")
    coords = geom.coords() * 1e3  # mm, components (x, y)
    labels = np.zeros(geom.dims, dtype=np.int32)
    moduli = {0: complex(background)}
    for i, (center, radius, modulus) in enumerate(inclusions, start=1):
        cx, cy = float(center[0]), float(center[1])
        d2 = (coords[..., 0] - cx) ** 2 + (coords[..., 1] - cy) ** 2
        labels[d2 <= float(radius) ** 2] = i
        moduli[i] = complex(modulus)
    return SceneSpec(labels, moduli, float(density), float(omega),
                     source or SourceSpec())


def _source_mask(scene: SceneSpec, dims) -> np.ndarray:
    ny, nx = dims
    m = np.zeros(dims, dtype=bool)
    if scene.source.kind == "edge":
        e = scene.source.edge
        if e == "left":
            m[:, 0] = True
        elif e == "right":
            m[:, -1] = True
        elif e == "top":
            m[0, :] = True
        else:
            m[-1, :] = True
    else:
        iy, ix = scene.source.index
        if not (0 <= iy < ny and 0 <= ix < nx):
            raise ValueError(f"point source {scene.source.index} outside grid {dims}")
        m[iy, ix] = True
    return m


def solve_helmholtz_phantom(scene: SceneSpec, geom: GridGeom, *,
                            rtol: float = 1e-8, max_iterations: int = 4000) -> ComplexGrid:
    """Solve the phantom field with an ILU-preconditioned GMRES iteration.

    Interior rows are the 5-point stencil scaled by hx^2; non-source
    boundary pixels carry a first-order absorbing row
    (1 - i k h) u_B - u_inner = 0 along the outward normal (corners use
    their x-normal). Raises SolverConvergenceError if the true relative
    residual stays above rtol.
    """
    if geom.ndim != 2:
        raise ValueError("phantom scenes are 2D")
    if scene.labels.shape != geom.dims:
        raise ValueError(
            f"scene labels {scene.labels.shape} do not cover grid {geom.dims}"
        )
    ny, nx = geom.dims
    hy, hx = geom.spacing_m
    k_grid = scene.omega * scene.k_tilde_grid()
    src = _source_mask(scene, geom.dims)
    amp = complex(scene.source.amplitude)

    n = ny * nx
    idx = np.arange(n).reshape(ny, nx)
    rows, cols, vals = [], [], []
    rhs = np.zeros(n, dtype=np.complex128)

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    ry2 = (hx / hy) ** 2
    for iy in range(ny):
        for ix in range(nx):
            r = idx[iy, ix]
            if src[iy, ix]:
                add(r, r, 1.0 + 0.0j)
                rhs[r] = amp
                continue
            on_x = ix == 0 or ix == nx - 1
            on_y = iy == 0 or iy == ny - 1
            if on_x or on_y:
                if on_x:
                    inner = idx[iy, 1] if ix == 0 else idx[iy, nx - 2]
                    h = hx
                else:
                    inner = idx[1, ix] if iy == 0 else idx[ny - 2, ix]
                    h = hy
                k = k_grid[iy, ix]
                add(r, r, 1.0 - 1j * k * h)
                add(r, inner, -1.0 + 0.0j)
                continue
            k = k_grid[iy, ix]
            add(r, r, -2.0 - 2.0 * ry2 + (hx * k) ** 2)
            add(r, idx[iy, ix - 1], 1.0)
            add(r, idx[iy, ix + 1], 1.0)
            add(r, idx[iy - 1, ix], ry2)
            add(r, idx[iy + 1, ix], ry2)

    a = sp.csr_matrix(
        (np.asarray(vals, dtype=np.complex128), (rows, cols)), shape=(n, n)
    )
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return ComplexGrid(np.zeros(geom.dims, dtype=np.complex128), geom)

    ilu = spla.spilu(a.tocsc(), drop_tol=1e-6, fill_factor=30)
    m = spla.LinearOperator((n, n), matvec=ilu.solve, dtype=np.complex128)
    x, info = spla.gmres(a, rhs, M=m, rtol=rtol * 0.1, atol=0.0,
                         restart=60, maxiter=max_iterations)
    residual = float(np.linalg.norm(rhs - a @ x)) / bnorm
    if residual > rtol:
        raise SolverConvergenceError(residual, rtol, max_iterations)
    return ComplexGrid(x.reshape(ny, nx), geom)


def fit_edge_wavenumber(u: ComplexGrid, *, axis: int = 1, lo: int = 5, hi: int = 25):
    """Mean phase-step wavenumber along an axis over a column band.

    For a clean traveling wave exp(i k x) the phase of
    u[x+1] * conj(u[x]) is exactly k*h, independent of h. Returns k'
    in rad/m averaged over the band [lo, hi).
    """
    h = u.geom.spacing_m[axis]
    sl_a = [slice(None)] * u.values.ndim
    sl_b = [slice(None)] * u.values.ndim
    sl_a[axis] = slice(lo + 1, hi + 1)
    sl_b[axis] = slice(lo, hi)
    step = u.values[tuple(sl_a)] * np.conj(u.values[tuple(sl_b)])
    return float(np.mean(np.angle(step))) / h
