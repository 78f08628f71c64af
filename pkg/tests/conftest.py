import numpy as np
import pytest
from scipy import ndimage

from labelflow.data import MovingShape, SynthScene, generate_synth


def textured_pair(shift=(3, 0), size=64, seed=0):
    """Random multi-scale texture and its integer-translated copy.

    Returns (i_a, i_b, (dx, dy)) with i_b equal to i_a shifted by (dx, dy),
    generated by cropping a larger canvas so the translation is exact.
    """
    dx, dy = shift
    pad = max(abs(dx), abs(dy)) + 8
    rng = np.random.default_rng(seed)
    big_shape = (size + 2 * pad, size + 2 * pad)
    fine = ndimage.gaussian_filter(rng.uniform(0, 1, big_shape), 1.2)
    coarse = ndimage.gaussian_filter(rng.uniform(0, 1, big_shape), 5.0)
    big = fine / np.ptp(fine) + coarse / np.ptp(coarse)
    big = (big - big.min()) / np.ptp(big) * 160 + 40
    i_a = big[pad:pad + size, pad:pad + size]
    i_b = big[pad - dy:pad - dy + size, pad - dx:pad - dx + size]
    return i_a, i_b, (dx, dy)


@pytest.fixture(scope="session")
def translating_scene():
    v = (1.0, 0.0)
    return SynthScene(
        n_frames=31, key_period=30, seed=0, background_velocity=v,
        shapes=(MovingShape("disk", 1, (14.0, 32.0), (8.0, 0.0), v),
                MovingShape("rect", 2, (20.0, 14.0), (10.0, 8.0), v)))


@pytest.fixture(scope="session")
def translating_synth(translating_scene):
    return generate_synth(translating_scene)


@pytest.fixture(scope="session")
def occlusion_scene():
    # two shapes crossing over a labeled background
    return SynthScene(
        n_frames=11, key_period=10, seed=3, background_label=0,
        shapes=(MovingShape("rect", 1, (16.0, 32.0), (10.0, 10.0), (2.0, 0.0)),
                MovingShape("disk", 2, (46.0, 32.0), (7.0, 0.0), (-2.0, 0.0))))
