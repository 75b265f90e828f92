"""Synthetic exported dataset built through the core toolkit's exporter."""

import numpy as np
import pytest

from mvskit.confidence import export_training_sample
from mvskit.consistency import CounterMap, LabelMap
from mvskit.formats import LABEL_INLIER, LABEL_OUTLIER
from mvskit.synthetic import make_plane_scene

N_SOURCES = 3


def _blocky_counts(rng, h, w, cell=8):
    coarse = rng.integers(0, N_SOURCES + 1, size=(h // cell, w // cell))
    return np.repeat(np.repeat(coarse, cell, axis=0), cell, axis=1).astype(np.int32)


@pytest.fixture(scope="session")
def exported_dataset(tmp_path_factory):
    """Four 64x64 views whose labels follow a counter-threshold rule.

    The rule (inlier iff at least 2 of 3 sources verify) is a function of the
    counter input channel, so a correctly wired network can overfit it.
    """
    out = tmp_path_factory.mktemp("train_data")
    scene = make_plane_scene(width=64, height=64, n_views=4)
    rng = np.random.default_rng(3)
    for view, gt in zip(scene.views, scene.gt_maps):
        counts = _blocky_counts(rng, 64, 64)
        counter = CounterMap(count=counts, n_sources=N_SOURCES)
        labels = LabelMap(
            labels=np.where(counts >= 2, LABEL_INLIER, LABEL_OUTLIER).astype(np.uint8)
        )
        export_training_sample(view, gt, counter, labels, out)
    return out / "manifest.json"


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def overfit_run(exported_dataset, tmp_path_factory):
    """100-epoch overfit on the 4-view dataset (shared; ~1 minute)."""
    from mvskit_trainer.train import TrainConfig, train

    out = tmp_path_factory.mktemp("overfit")
    config = TrainConfig(
        epochs=100, learning_rate=1e-3, batch_size=4, crop=None, augment=False, seed=1
    )
    return train(exported_dataset, out, config), out
