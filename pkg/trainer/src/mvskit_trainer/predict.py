"""Inference: write per-view confidence PFMs in the core exchange format."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from mvskit import formats

from .data import load_manifest, load_sample
from .model import ConfidenceNet
from .train import load_checkpoint

logger = logging.getLogger(__name__)


def predict_tensor(
    model: ConfidenceNet, image: torch.Tensor, normal: torch.Tensor, counter: torch.Tensor
) -> torch.Tensor:
    """Forward one sample of arbitrary size; returns an (H, W) confidence map.

    Inputs whose sides are not divisible by the network's spatial divisor are
    reflect-padded up and the output cropped back; exactly divisible inputs
    run unpadded.
    """
    d = model.spec.divisor
    h, w = image.shape[-2:]
    pad_h = (-h) % d
    pad_w = (-w) % d
    batch = [t[None] for t in (image, normal, counter)]
    if pad_h or pad_w:
        batch = [F.pad(t, (0, pad_w, 0, pad_h), mode="reflect") for t in batch]
    with torch.no_grad():
        out = model(*batch)
    return out[0, 0, :h, :w]


def predict(checkpoint_path, manifest_path, out_dir) -> list[Path]:
    """Predict confidence maps for every manifest record into out_dir/."""
    model = load_checkpoint(checkpoint_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for record in load_manifest(manifest_path):
        sample = load_sample(record)
        conf = predict_tensor(model, sample.image, sample.normal, sample.counter)
        path = out_dir / f"{sample.name}.pfm"
        formats.write_pfm(path, conf.numpy().astype(np.float32))
        written.append(path)
        logger.info("predicted %s (mean confidence %.3f)", path.name, float(conf.mean()))
    return written
