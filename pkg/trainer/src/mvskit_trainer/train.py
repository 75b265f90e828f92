"""Training loop: Adam over the selected loss, checkpoints every epoch."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .data import ManifestDataset
from .losses import LOSSES
from .model import ConfidenceNet, NetworkSpec, build_model

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    # the published learning rate reads "10e-1", which diverges immediately
    # for this architecture; 1e-4 is the working default (tunable)
    learning_rate: float = 1e-4
    batch_size: int = 2
    crop: int | None = 512
    augment: bool = True
    loss: str = "balanced"  # balanced | bce | wbce
    fusion: str = "middle"  # middle | early
    seed: int = 0
    num_workers: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}")


class SingleClassDataset(ValueError):
    """The dataset's defined labels contain only one class."""


class EmptyDataset(ValueError):
    """The manifest has no records."""


def train(manifest_path, out_dir, config: TrainConfig | None = None) -> dict:
    """Train the confidence network on an exported dataset.

    Writes checkpoints/latest.pt after every epoch, checkpoints/best.pt on
    improvement, and training_log.json with the loss curve. Returns a summary
    with the checkpoint paths and the curve.
    """
    config = config or TrainConfig()
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    try:
        dataset = ManifestDataset(
            manifest_path, crop=config.crop, augment=config.augment, seed=config.seed
        )
    except ValueError as exc:
        raise EmptyDataset(str(exc)) from exc
    pos, neg = dataset.class_counts()
    if pos == 0 or neg == 0:
        raise SingleClassDataset(f"labels have {pos} inliers / {neg} outliers")

    spec = NetworkSpec(fusion=config.fusion)
    model = build_model(spec)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_fn = LOSSES[config.loss]
    loader = DataLoader(
        dataset,
        batch_size=config.batch_size,
        shuffle=True,
        num_workers=config.num_workers,
        generator=torch.Generator().manual_seed(config.seed),
        drop_last=False,
    )

    curve = []
    step_losses = []
    best = float("inf")
    for epoch in range(1, config.epochs + 1):
        epoch_total = 0.0
        n_batches = 0
        for batch in loader:
            optimizer.zero_grad()
            pred = model(batch["image"], batch["normal"], batch["counter"])
            loss = loss_fn(pred[:, 0], batch["labels"])
            loss.backward()
            optimizer.step()
            value = float(loss.detach())
            step_losses.append(value)
            epoch_total += value
            n_batches += 1
        epoch_loss = epoch_total / max(1, n_batches)
        curve.append(epoch_loss)

        checkpoint = {
            "model": model.state_dict(),
            "spec": asdict(spec),
            "config": asdict(config),
            "epoch": epoch,
            "loss": epoch_loss,
        }
        torch.save(checkpoint, out_dir / "checkpoints" / "latest.pt")
        if epoch_loss < best:
            best = epoch_loss
            torch.save(checkpoint, out_dir / "checkpoints" / "best.pt")
        if epoch == 1 or epoch % 10 == 0 or epoch == config.epochs:
            logger.info("epoch %d/%d: loss %.5f", epoch, config.epochs, epoch_loss)

    log = {"epoch_loss": curve, "step_loss": step_losses, "config": asdict(config)}
    (out_dir / "training_log.json").write_text(json.dumps(log, indent=2) + "\n")
    return {
        "latest": out_dir / "checkpoints" / "latest.pt",
        "best": out_dir / "checkpoints" / "best.pt",
        "log": out_dir / "training_log.json",
        "curve": curve,
        "step_losses": step_losses,
    }


def load_checkpoint(path) -> ConfidenceNet:
    checkpoint = torch.load(path, map_location="cpu", weights_only=False)
    spec = NetworkSpec(**checkpoint["spec"])
    model = build_model(spec)
    model.load_state_dict(checkpoint["model"])
    model.eval()
    return model
