import numpy as np
import pytest

from fdl import SceneSpec, synthesize_lightfield


def smooth_texture(rng, h, w, cutoff=0.02):
    """Low-pass filtered noise normalized to [0, 1]; photo-like spectrum."""
    tex = rng.uniform(0, 1, (h, w))
    fx = np.fft.rfftfreq(w)
    fy = np.fft.fftfreq(h)
    lp = 1.0 / (1.0 + (fx[None, :] ** 2 + fy[:, None] ** 2) / cutoff)
    tex = np.fft.irfft2(np.fft.rfft2(tex) * lp, s=(h, w))
    return (tex - tex.min()) / np.ptp(tex)


def quadrant_masks(h, w, k):
    """k disjoint covering region masks with decreasing areas."""
    labels = np.zeros((h, w), int)
    if k > 1:
        labels[:, w // 2 :] = 1
    if k > 2:
        labels[h // 2 :, : w // 2] = 2
    if k > 3:
        labels[: h // 4, : w // 4] = 3
    return np.stack([labels == i for i in range(k)])


def grid_coords(side=3, spacing=1.0):
    g = (np.arange(side) - (side - 1) / 2) * spacing
    return np.array([(u, v) for v in g for u in g])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def lambertian_scene(rng):
    """4-layer 64x64 scene with disparities {-1, 0, 1, 2}."""
    h = w = 64
    return SceneSpec(
        masks=quadrant_masks(h, w, 4),
        disparities=[-1.0, 0.0, 1.0, 2.0],
        texture=smooth_texture(rng, h, w),
    )


@pytest.fixture
def lambertian_views(lambertian_scene):
    return synthesize_lightfield(lambertian_scene, grid_coords(3))
