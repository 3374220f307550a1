import numpy as np
import pytest

from mrekit.cnet import TrainConfig, train
from mrekit.grid import GridGeom
from mrekit.synth import NoiseSpec, make_sampling_config

OMEGA_60 = 2.0 * np.pi * 60.0
PATCH_GEOM_15 = GridGeom((3, 3), (1.5, 1.5))


@pytest.fixture(scope="session")
def tiny_model():
    """Cheap 3x3 model at 1.5 mm / 60 Hz for mechanics tests.

    Too few steps to be accurate; tests using it only exercise shapes,
    masks, and invariances.
    """
    sampling = make_sampling_config(OMEGA_60, noise=NoiseSpec.intensity(0.001))
    cfg = TrainConfig(seed=7, steps=40, batch_size=32, widths=(6, 4, 1))
    return train(OMEGA_60, PATCH_GEOM_15, sampling, cfg)
