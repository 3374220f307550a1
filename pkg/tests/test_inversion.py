import numpy as np
import pytest

from mrekit.grid import ComplexGrid, GridGeom
from mrekit.inversion import (ModulusMap, WavenumberMap, direct_inversion,
                              estimate_wavenumber_map, fuse_modulus,
                              median_filter_3x3)
from mrekit.synth import plane_wave

OMEGA = 2.0 * np.pi * 60.0
RHO = 1000.0


def _stencil_ksq(k_tilde, direction, h_m):
    # exact discrete response of the 5-point Laplacian to exp(i k.x)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    k = (k_tilde.real + 1j * k_tilde.imag) * OMEGA
    return sum((4.0 / h_m**2) * np.sin(k * dc * h_m / 2.0) ** 2 for dc in d)


@pytest.mark.parametrize("k_tilde,direction", [
    (0.5 + 0.0j, (1.0, 0.0)),
    (0.9 + 0.0j, (0.0, 1.0)),
    (0.707 + 0.0j, (0.6, 0.8)),
    (0.8 + 0.1j, (1.0, 0.0)),
])
def test_direct_inversion_matches_stencil_response(k_tilde, direction):
    geom = GridGeom((24, 24), (2.0, 2.0))
    field = plane_wave(geom, k_tilde, OMEGA, direction)
    est = direct_inversion(field, OMEGA)
    expected = np.sqrt(_stencil_ksq(k_tilde, direction, geom.spacing_m[0])) / OMEGA
    assert est.n_clamped == 0
    m = est.mask
    assert np.allclose(est.k_re[m], expected.real, rtol=1e-10)
    assert np.allclose(est.k_im[m], expected.imag, rtol=1e-10, atol=1e-12)


def test_direct_inversion_clamps_growing_waves():
    geom = GridGeom((12, 12), (2.0, 2.0))
    x = geom.coords()[..., 0]
    k = 0.6 * OMEGA
    u = ComplexGrid(np.exp((1j * k + 40.0) * x), geom)
    est = direct_inversion(u, OMEGA)
    assert est.n_clamped == int(est.mask.sum())
    assert np.all(est.k_im[est.mask] == 0.0)


def test_direct_inversion_masks_dead_pixels():
    geom = GridGeom((16, 16), (2.0, 2.0))
    field = plane_wave(geom, 0.7 + 0.0j, OMEGA, (1.0, 0.0))
    vals = field.values.copy()
    vals[8, 8] = 0.0
    est = direct_inversion(ComplexGrid(vals, geom), OMEGA)
    assert not est.mask[8, 8]
    assert not est.mask[0].any() and not est.mask[:, -1].any()
    with pytest.raises(ValueError, match="omega"):
        direct_inversion(field, 0.0)


def test_wavenumber_map_validation():
    geom = GridGeom((4, 4), (1.0, 1.0))
    WavenumberMap(np.ones((4, 4)), np.zeros((4, 4)), geom, OMEGA)
    with pytest.raises(ValueError, match="geometry"):
        WavenumberMap(np.ones((3, 4)), np.zeros((4, 4)), geom, OMEGA)
    with pytest.raises(ValueError, match="mask"):
        WavenumberMap(np.ones((4, 4)), np.zeros((4, 4)), geom, OMEGA,
                      mask=np.ones((2, 2), dtype=bool))
    with pytest.raises(ValueError, match="negative wavenumber"):
        WavenumberMap(-np.ones((4, 4)), np.zeros((4, 4)), geom, OMEGA)
    # negative values outside the mask are tolerated
    k = np.ones((4, 4))
    k[0, 0] = -1.0
    mask = np.ones((4, 4), dtype=bool)
    mask[0, 0] = False
    m = WavenumberMap(k, np.zeros((4, 4)), geom, OMEGA, mask=mask)
    assert m.k_complex[1, 1] == 1.0 + 0.0j


def test_estimate_wavenumber_map_mechanics(tiny_model):
    geom = GridGeom((10, 12), (1.5, 1.5))
    field = plane_wave(geom, 0.7 + 0.0j, OMEGA, (1.0, 0.0))
    est = estimate_wavenumber_map(tiny_model, field, OMEGA)
    interior = np.zeros((10, 12), dtype=bool)
    interior[1:-1, 1:-1] = True
    assert np.array_equal(est.mask, interior)
    assert np.all(est.k_re[interior] >= 0) and np.all(est.k_im[interior] >= 0)
    assert np.all(est.k_re[~interior] == 0)

    scaled = estimate_wavenumber_map(
        tiny_model, ComplexGrid(field.values * 10.0, geom), OMEGA)
    assert np.allclose(scaled.k_re, est.k_re, rtol=1e-9)
    assert np.allclose(scaled.k_im, est.k_im, rtol=1e-9, atol=1e-15)


def test_estimate_wavenumber_map_rejects_mismatches(tiny_model):
    good = GridGeom((8, 8), (1.5, 1.5))
    field = plane_wave(good, 0.7 + 0.0j, OMEGA, (1.0, 0.0))
    with pytest.raises(ValueError, match="frequency"):
        estimate_wavenumber_map(tiny_model, field, OMEGA * 1.5)
    bad_spacing = plane_wave(GridGeom((8, 8), (2.0, 2.0)), 0.7, OMEGA, (1.0, 0.0))
    with pytest.raises(ValueError, match="spacing"):
        estimate_wavenumber_map(tiny_model, bad_spacing, OMEGA)
    tiny = plane_wave(GridGeom((2, 8), (1.5, 1.5)), 0.7, OMEGA, (1.0, 0.0))
    with pytest.raises(ValueError, match="smaller than one model patch"):
        estimate_wavenumber_map(tiny_model, tiny, OMEGA)


def test_median_filter_removes_outlier():
    grid = np.ones((5, 5))
    grid[2, 2] = 100.0
    out = median_filter_3x3(grid)
    assert out[2, 2] == 1.0
    assert np.allclose(median_filter_3x3(np.full((4, 4), 3.7)), 3.7)
    with pytest.raises(ValueError, match="2D"):
        median_filter_3x3(np.ones(5))


def test_median_filter_ignores_invalid_neighbors():
    grid = np.ones((5, 5))
    grid[2, 2] = 100.0
    mask = np.ones((5, 5), dtype=bool)
    mask[2, 2] = False
    out = median_filter_3x3(grid, mask)
    assert np.allclose(out, 1.0)     # outlier never enters any window

    nothing_valid = np.zeros((5, 5), dtype=bool)
    out = median_filter_3x3(grid, nothing_valid)
    assert np.array_equal(out, grid)
    with pytest.raises(ValueError, match="mask"):
        median_filter_3x3(grid, np.ones((3, 3), dtype=bool))


def test_fuse_modulus_hand_values():
    geom = GridGeom((8, 8), (1.0, 1.0))
    kmap = WavenumberMap(np.full((8, 8), 0.5), np.full((8, 8), 0.1), geom, OMEGA)
    fused = fuse_modulus([kmap], rho=1000.0)
    assert fused.mask.all()
    assert np.allclose(fused.g_re, 3550.2959, atol=1e-3)
    assert np.allclose(fused.g_im, 1479.2899, atol=1e-3)
    assert fused.sources == [(OMEGA, "z")]


def test_fuse_modulus_averages_before_inversion():
    geom = GridGeom((6, 6), (1.0, 1.0))
    a = WavenumberMap(np.full((6, 6), 0.6), np.zeros((6, 6)), geom, OMEGA)
    b = WavenumberMap(np.full((6, 6), 0.8), np.zeros((6, 6)), geom, 2 * OMEGA)
    fused = fuse_modulus([a, b], rho=1000.0)
    assert np.allclose(fused.g_re, 1000.0 / 0.7**2)
    assert np.all(fused.g_im == 0.0)
    assert fused.g_im_raw is not None and np.all(fused.g_im_raw == 0.0)


def test_fuse_modulus_permutation_invariant():
    geom = GridGeom((6, 6), (1.0, 1.0))
    rng = np.random.default_rng(0)
    maps = [WavenumberMap(rng.uniform(0.4, 1.0, (6, 6)),
                          rng.uniform(0.0, 0.2, (6, 6)), geom, OMEGA)
            for _ in range(3)]
    f12 = fuse_modulus([maps[0], maps[1]])
    f21 = fuse_modulus([maps[1], maps[0]])
    assert np.array_equal(f12.g_re, f21.g_re)
    assert np.array_equal(f12.g_im, f21.g_im)
    fabc = fuse_modulus(maps)
    fcba = fuse_modulus(maps[::-1])
    assert np.allclose(fabc.g_re, fcba.g_re, rtol=1e-12)


def test_fuse_modulus_mask_and_validation():
    geom = GridGeom((5, 5), (1.0, 1.0))
    mask_a = np.ones((5, 5), dtype=bool)
    mask_a[0, 0] = False
    k_re_a = np.full((5, 5), 0.5)
    k_re_a[4, 4] = 0.0
    a = WavenumberMap(k_re_a, np.zeros((5, 5)), geom, OMEGA, mask=mask_a)
    k_re_b = np.full((5, 5), 0.5)
    k_re_b[4, 4] = 0.0               # zero average cannot be inverted
    b = WavenumberMap(k_re_b, np.zeros((5, 5)), geom, OMEGA)
    fused = fuse_modulus([a, b])
    assert not fused.mask[0, 0] and not fused.mask[4, 4]
    assert fused.g_re[0, 0] == 0.0
    assert fused.mask.sum() == 23

    with pytest.raises(ValueError, match="at least one"):
        fuse_modulus([])
    with pytest.raises(ValueError, match="density"):
        fuse_modulus([a], rho=0.0)
    other = WavenumberMap(np.ones((4, 4)), np.zeros((4, 4)),
                          GridGeom((4, 4), (1.0, 1.0)), OMEGA)
    with pytest.raises(ValueError, match="geometry"):
        fuse_modulus([a, other])
    none_valid = WavenumberMap(np.ones((5, 5)), np.zeros((5, 5)), geom, OMEGA,
                               mask=~mask_a)
    crossed = WavenumberMap(np.ones((5, 5)), np.zeros((5, 5)), geom, OMEGA,
                            mask=np.zeros((5, 5), dtype=bool))
    with pytest.raises(ValueError, match="no pixel"):
        fuse_modulus([a, crossed])
    assert none_valid.mask.sum() == 1


def test_modulus_map_validation():
    geom = GridGeom((3, 3), (1.0, 1.0))
    ones = np.ones((3, 3))
    mask = np.ones((3, 3), dtype=bool)
    ModulusMap(ones, ones, 1000.0, geom, mask)
    with pytest.raises(ValueError, match="geometry"):
        ModulusMap(np.ones((2, 3)), ones, 1000.0, geom, mask)
    with pytest.raises(ValueError, match="storage"):
        ModulusMap(np.zeros((3, 3)), ones, 1000.0, geom, mask)
    with pytest.raises(ValueError, match="loss"):
        ModulusMap(ones, -ones, 1000.0, geom, mask)
