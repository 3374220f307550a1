"""Wrapped-phase displacement extraction.

Recovers the complex principal displacement U* = U' + iU'' from a
series of wrapped multi-offset MR images by minimizing a two-term data
consistency objective: a phasor-mismatch term built from cross ratios
of image pairs, plus a weighted mismatch between the spatial gradient
of U and gradient targets computed wrap-free from the image phasors.
Both terms are L2 norms (roots, not squared), softened by eps = 1e-12
inside the root; ADAM minimizes from U = 0 by default. For series whose
phase range extends well past pi, init="integral" starts from the
least-squares integral of the gradient targets instead, which lands in
the correct basin and leaves ADAM a local polish.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .cnet import AdamState, adam_step
from .grid import ComplexGrid
from .synth import PhaseOffsetSeries

EPS_NORM = 1e-12


class UnwrapDivergedError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"objective became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class UnwrapConfig:
    """Optimizer settings; init is "zero" or "integral"."""

    learning_rate: float = 0.005
    gradient_weight: float = 1000.0
    max_iterations: int = 4000
    init: str = "zero"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.gradient_weight < 0:
            raise ValueError("gradient_weight must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.init not in ("zero", "integral"):
            raise ValueError(f"unknown initialization mode {self.init!r}")


@dataclass
class CrossDiffSet:
    """Phase-only pairwise image ratios with their offset coefficients.

    ratios is (P, *dims); row p holds I_p * conj(I_q) normalized to unit
    modulus for the pair (p, q). e and f are the offset coefficients
    cos(phi_p) - cos(phi_q) and -sin(phi_p) + sin(phi_q).
    """

    ratios: np.ndarray
    e: np.ndarray
    f: np.ndarray
    pairs: list
    mask: np.ndarray
    n_excluded: int


@dataclass
class PhaseGradientTarget:
    """Per-axis gradient targets in radians/pixel, array-axis order
    (so index 0 differentiates along array axis 0)."""

    d_re: np.ndarray  # (ndim, *dims)
    d_im: np.ndarray
    mask: np.ndarray


def cross_phase_ratios(series: PhaseOffsetSeries) -> CrossDiffSet:
    images = series.images
    offsets = series.phase_offsets
    j = series.n_offsets
    mags = np.abs(images)
    mask = np.all(mags > 0.0, axis=0)
    n_excluded = int(mask.size - mask.sum())
    if n_excluded:
        warnings.warn(
            f"{n_excluded} zero-magnitude pixels excluded from the unwrap mask",
            stacklevel=2,
        )
    pairs = [(p, q) for p in range(j) for q in range(p + 1, j)]
    ratios = np.zeros((len(pairs),) + images.shape[1:], dtype=np.complex128)
    e = np.empty(len(pairs))
    f = np.empty(len(pairs))
    for idx, (p, q) in enumerate(pairs):
        prod = images[p] * np.conj(images[q])
        mag = np.abs(prod)
        safe = np.where(mag > 0.0, mag, 1.0)
        ratios[idx] = np.where(mask, prod / safe, 0.0)
        e[idx] = np.cos(offsets[p]) - np.cos(offsets[q])
        f[idx] = -np.sin(offsets[p]) + np.sin(offsets[q])
    return CrossDiffSet(ratios, e, f, pairs, mask, n_excluded)


def central_diff(u: np.ndarray, axis: int) -> np.ndarray:
    """Centered differences on the interior, one-sided at the two ends.

    Unit pixel spacing; works on any array with >= 2 entries along axis.
    """
    if u.shape[axis] < 2:
        raise ValueError("need at least two samples along the axis")
    out = np.empty_like(u)
    sl = [slice(None)] * u.ndim

    def at(i):
        s = list(sl)
        s[axis] = i
        return tuple(s)

    out[at(slice(1, -1))] = (u[at(slice(2, None))] - u[at(slice(None, -2))]) / 2.0
    out[at(0)] = u[at(1)] - u[at(0)]
    out[at(-1)] = u[at(-1)] - u[at(-2)]
    return out


def central_diff_adjoint(y: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of central_diff, so <D u, y> == <u, D^T y> exactly."""
    if y.shape[axis] < 2:
        raise ValueError("need at least two samples along the axis")
    out = np.zeros_like(y)
    sl = [slice(None)] * y.ndim

    def at(i):
        s = list(sl)
        s[axis] = i
        return tuple(s)

    mid = y[at(slice(1, -1))] / 2.0
    out[at(slice(2, None))] += mid
    out[at(slice(None, -2))] -= mid
    out[at(0)] -= y[at(0)]
    out[at(1)] += y[at(0)]
    out[at(-1)] += y[at(-1)]
    out[at(-2)] -= y[at(-1)]
    return out


def wrapped_phase_gradient(series: PhaseOffsetSeries) -> PhaseGradientTarget:
    """Per-pixel least-squares gradient targets from the image phasors.

    The phasor P_j = I_j / |I_j| is differentiated directly, so wraps in
    the stored phase produce no spikes; a constant background phase
    cancels in the ratio dP/P. The per-axis, per-pixel observations
    g_j = Re(-i (dP_j) / P_j) are reduced to (dU'/dx, dU''/dx) through
    the 2-column model [cos(phi_j), -sin(phi_j)].
    """
    offsets = series.phase_offsets
    h = np.stack([np.cos(offsets), -np.sin(offsets)], axis=1)  # (J, 2)
    gram = h.T @ h
    det = float(np.linalg.det(gram))
    if abs(det) < 1e-9 * max(1.0, float(np.trace(gram)) ** 2):
        raise ValueError(
            f"phase offsets {np.round(offsets, 6).tolist()} give a rank-deficient "
            "gradient model; vary the offsets"
        )
    solve = np.linalg.inv(gram) @ h.T  # (2, J)

    images = series.images
    mags = np.abs(images)
    mask = np.all(mags > 0.0, axis=0)
    safe = np.where(mags > 0.0, mags, 1.0)
    phasors = np.where(mags > 0.0, images / safe, 1.0)

    ndim = images.ndim - 1
    dims = images.shape[1:]
    d_re = np.zeros((ndim,) + dims)
    d_im = np.zeros((ndim,) + dims)
    for a in range(ndim):
        dp = central_diff(phasors, axis=1 + a)
        g = np.real(-1j * dp / phasors)  # (J, *dims), imaginary leakage dropped
        d_re[a] = np.tensordot(solve[0], g, axes=(0, 0))
        d_im[a] = np.tensordot(solve[1], g, axes=(0, 0))
    d_re = np.where(mask, d_re, 0.0)
    d_im = np.where(mask, d_im, 0.0)
    return PhaseGradientTarget(d_re, d_im, mask)


@dataclass
class ObjectiveEval:
    value: float
    dc1: float
    dc2: float     # unweighted sum of the gradient-mismatch norms
    g_re: np.ndarray
    g_im: np.ndarray


def dual_dc_objective(u_re: np.ndarray, u_im: np.ndarray, cross: CrossDiffSet,
                      targets: PhaseGradientTarget, weight: float) -> ObjectiveEval:
    """Objective value and its analytic gradient.

    value = sum_pairs ||R - exp(i(E U' + F U''))||_2
          + weight * sum_{comp, axis} ||D U_comp - target||_2
    with every L2 norm taken over the valid mask and softened as
    sqrt(sum + 1e-12). The gradient of the second term uses the exact
    adjoint of the difference stencil.
    """
    mask = cross.mask & targets.mask
    maskf = mask.astype(np.float64)

    theta = (cross.e[:, None, None] * u_re[None] + cross.f[:, None, None] * u_im[None]
             if u_re.ndim == 2 else
             cross.e[:, None, None, None] * u_re[None] + cross.f[:, None, None, None] * u_im[None])
    w = np.exp(1j * theta)
    resid = (cross.ratios - w) * maskf
    s_pair = np.sum(np.abs(resid) ** 2, axis=tuple(range(1, resid.ndim)))
    t_pair = np.sqrt(s_pair + EPS_NORM)
    dc1 = float(t_pair.sum())
    # d/dtheta of sum |R - e^{i theta}|^2 is 2 Im(conj(R) e^{i theta})
    coef = maskf * np.imag(np.conj(cross.ratios) * w) / t_pair.reshape(
        (-1,) + (1,) * (resid.ndim - 1))
    g_re = np.tensordot(cross.e, coef, axes=(0, 0))
    g_im = np.tensordot(cross.f, coef, axes=(0, 0))

    dc2 = 0.0
    for comp, u_c, tgt, g_c in (("re", u_re, targets.d_re, g_re),
                                ("im", u_im, targets.d_im, g_im)):
        for a in range(u_re.ndim):
            r = (central_diff(u_c, a) - tgt[a]) * maskf
            t = float(np.sqrt(np.sum(r * r) + EPS_NORM))
            dc2 += t
            g_c += weight * central_diff_adjoint(r / t, a)

    value = dc1 + weight * dc2
    return ObjectiveEval(value, dc1, dc2, g_re, g_im)


@dataclass
class UnwrapResult:
    displacement: ComplexGrid
    history: np.ndarray  # rows (iteration, dc1, dc2, total)
    mask: np.ndarray
    n_excluded: int


def _integrate_component(grads: np.ndarray, max_iterations: int = 2000) -> np.ndarray:
    # conjugate gradients on the normal equations D^T D u = D^T g; the
    # stencil is the exact adjoint pair used by the objective, so the
    # result is the least-squares integral of the targets
    dims = grads.shape[1:]
    ndim = grads.shape[0]

    def normal_op(x):
        out = np.zeros_like(x)
        for ax in range(ndim):
            out += central_diff_adjoint(central_diff(x, ax), ax)
        return out

    b = np.zeros(dims)
    for ax in range(ndim):
        b += central_diff_adjoint(grads[ax], ax)
    x = np.zeros(dims)
    r = b.copy()
    p = r.copy()
    rs = float((r * r).sum())
    rs0 = rs
    for _ in range(max_iterations):
        ap = normal_op(p)
        curv = float((p * ap).sum())
        if curv <= 0.0:
            break
        alpha = rs / curv
        x += alpha * p
        r -= alpha * ap
        rs_new = float((r * r).sum())
        if rs_new < 1e-24 * rs0:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def integral_init(targets: PhaseGradientTarget) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares integrals of the gradient targets, per component."""
    return (_integrate_component(targets.d_re),
            _integrate_component(targets.d_im))


def unwrap(series: PhaseOffsetSeries, config: UnwrapConfig | None = None) -> UnwrapResult:
    """Minimize the two-term objective with ADAM."""
    if config is None:
        config = UnwrapConfig()
    cross = cross_phase_ratios(series)
    targets = wrapped_phase_gradient(series)
    dims = series.geom.dims
    if config.init == "integral":
        u_re, u_im = integral_init(targets)
    else:
        u_re = np.zeros(dims)
        u_im = np.zeros(dims)
    params = [u_re, u_im]
    state = AdamState.for_params(params, config.learning_rate)

    history = np.empty((config.max_iterations + 1, 4))
    for it in range(config.max_iterations):
        ev = dual_dc_objective(u_re, u_im, cross, targets, config.gradient_weight)
        if not np.isfinite(ev.value):
            raise UnwrapDivergedError(it)
        history[it] = (it, ev.dc1, ev.dc2, ev.value)
        adam_step(params, [ev.g_re, ev.g_im], state)
    ev = dual_dc_objective(u_re, u_im, cross, targets, config.gradient_weight)
    if not np.isfinite(ev.value):
        raise UnwrapDivergedError(config.max_iterations)
    history[-1] = (config.max_iterations, ev.dc1, ev.dc2, ev.value)

    return UnwrapResult(
        displacement=ComplexGrid(u_re + 1j * u_im, series.geom),
        history=history,
        mask=cross.mask & targets.mask,
        n_excluded=cross.n_excluded,
    )


def gauge_aligned(estimate: ComplexGrid, reference: ComplexGrid,
                  mask: np.ndarray | None = None) -> ComplexGrid:
    """Shift the estimate by the masked mean difference to the reference.

    The objective tolerates certain global constants (for evenly spaced
    offsets a +2*pi shift of U' changes nothing), so comparisons against
    ground truth remove the mean offset component-wise first.
    """
    diff = estimate.values - reference.values
    if mask is None:
        shift = diff.mean()
    else:
        if not np.any(mask):
            raise ValueError("empty mask")
        shift = diff[mask].mean()
    return ComplexGrid(estimate.values - shift, estimate.geom)
