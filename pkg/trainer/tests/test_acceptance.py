"""Trainer acceptance: one test per release criterion with a PASS/FAIL line."""

import contextlib

import numpy as np
import pytest
import torch

from mvskit import formats
from mvskit.confidence import balanced_l2_loss as core_balanced
from mvskit.confidence import roc_auc
from mvskit.consistency import LabelMap

from mvskit_trainer.data import load_manifest
from mvskit_trainer.losses import balanced_l2_loss
from mvskit_trainer.model import build_model, encoder_widths
from mvskit_trainer.predict import predict


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except Exception:
        print(f"FAIL: {name}")
        raise
    print(f"PASS: {name}")


class TestSecondaryAcceptance:
    def test_model_forward_and_widths(self):
        with criterion("model: 64x64 inputs -> 64x64 output in (0,1); encoder widths "
                       "32/64/128/256 by parameter inspection"):
            model = build_model()
            model.eval()
            g = torch.Generator().manual_seed(0)
            with torch.no_grad():
                out = model(
                    torch.rand((1, 3, 64, 64), generator=g),
                    torch.rand((1, 2, 64, 64), generator=g),
                    torch.rand((1, 1, 64, 64), generator=g),
                )
            assert out.shape == (1, 1, 64, 64)
            assert float(out.min()) > 0.0 and float(out.max()) < 1.0
            for name in ("image", "normal", "counter"):
                assert encoder_widths(model, name) == [32, 64, 128, 256]

    def test_loss_cross_check(self, rng):
        with criterion("loss: trainer balanced loss equals the core implementation "
                       "on shared vectors to 1e-5"):
            for _ in range(100):
                pred = rng.random((16, 16)).astype(np.float32)
                labels = rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
                labels[0, 0], labels[0, 1] = 1, 0
                got = float(balanced_l2_loss(torch.from_numpy(pred), torch.from_numpy(labels)))
                want = core_balanced(pred.astype(np.float64), LabelMap(labels=labels))
                assert got == pytest.approx(want, abs=1e-5)

    def test_overfit_and_auc(self, exported_dataset, overfit_run):
        result, out = overfit_run
        with criterion("training: 4 synthetic views overfit to loss < 0.05 within "
                       "100 epochs; predicted confidence AUC > 0.95 (core roc_auc "
                       "on the written PFMs)"):
            assert min(result["curve"]) < 0.05
            conf_dir = out / "conf_accept"
            predict(result["best"], exported_dataset, conf_dir)
            aucs = []
            for record in load_manifest(exported_dataset):
                name = record["image"].replace(".png", "")
                conf = formats.read_pfm(conf_dir / f"{name}.pfm").astype(np.float64)
                labels = LabelMap(
                    labels=formats.read_label_png(record["_root"] / record["label"])
                )
                aucs.append(roc_auc(conf, labels))
            assert float(np.mean(aucs)) > 0.95
