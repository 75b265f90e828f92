"""Shared fixtures: synthetic scenes and expensive estimation results."""

import numpy as np
import pytest

from mvskit.patchmatch import PatchMatchConfig, estimate_single_scale
from mvskit.synthetic import make_plane_scene


@pytest.fixture(scope="session")
def plane_scene():
    """Small 2-view textured plane scene with analytic ground truth."""
    return make_plane_scene(width=160, height=120)


@pytest.fixture(scope="session")
def plane_config(plane_scene):
    return PatchMatchConfig(depth_range=plane_scene.depth_range, levels=1)


@pytest.fixture(scope="session")
def plane_estimate(plane_scene, plane_config):
    """Single-scale PatchMatch result on the small scene (shared; ~7 s)."""
    return estimate_single_scale(plane_scene.views, 0, plane_config, seed=3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
