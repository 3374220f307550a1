"""
Phantom simulation and direct inversion
=======================================

A stiff circular inclusion in a softer lossy background, driven from
one edge, solved with the finite-difference Helmholtz solver. This
demo:

1) builds the scene and solves for the steady-state displacement,
2) adds complex noise at a target SNR,
3) inverts with the algebraic estimator and reads region statistics.
"""

import numpy as np

from mrekit.grid import GridGeom
from mrekit.inversion import direct_inversion, fuse_modulus
from mrekit.phantom import make_inclusion_scene, solve_helmholtz_phantom
from mrekit.synth import add_complex_noise, new_rng

OMEGA = 2.0 * np.pi * 100.0
RHO = 1000.0

# the source drives the left edge, so keep the inclusion near it: the
# lossy background eats an e^{-k'' omega x} factor on the way in
geom = GridGeom((72, 72), (1.5, 1.5))
scene = make_inclusion_scene(geom, 2000.0 + 200.0j,
                             [((-15.0, 0.0), 18.0, 6000.0 + 840.0j)],
                             RHO, OMEGA)
field = solve_helmholtz_phantom(scene, geom)
print(f"solved {geom.dims} phantom at {OMEGA / (2 * np.pi):g} Hz, "
      f"|u| range {np.abs(field.values).min():.3f}.."
      f"{np.abs(field.values).max():.3f}")

noisy = add_complex_noise(field, snr_db=28.0, rng=new_rng(0))
kmap = direct_inversion(noisy, OMEGA)
fused = fuse_modulus([kmap], rho=RHO)

for name, label in (("background", 0), ("inclusion", 1)):
    mask = (scene.labels == label) & fused.mask
    print(f"  {name:10s} mean G' {fused.g_re[mask].mean():7.1f} Pa "
          f"over {int(mask.sum())} pixels")
print("(truth: background 2000 Pa, inclusion 6000 Pa; the learned "
      "estimator in the phantom experiment narrows this gap)")
