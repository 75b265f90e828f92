"""Dataset over the core toolkit's exported training samples.

Consumes manifest.json plus the PFM/PNG files verbatim through the mvskit
readers. The counter channel is normalized by the record's source count so
its values land in [0, 1] regardless of how many views a scene has.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset

from mvskit import formats


@dataclass
class Sample:
    name: str
    image: torch.Tensor  # (3, H, W) in [0, 1]
    normal: torch.Tensor  # (2, H, W) polar angles
    counter: torch.Tensor  # (1, H, W) normalized to [0, 1]
    labels: torch.Tensor  # (H, W) int64 {0, 1, 2}


def load_manifest(manifest_path) -> list[dict]:
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text())
    records = data["records"]
    for r in records:
        r["_root"] = manifest_path.parent
    return records


def load_sample(record: dict) -> Sample:
    root = record["_root"]
    image = formats.read_image_png(root / record["image"]).astype(np.float32) / 255.0
    polar = formats.read_two_channel_pfm(root / record["normal"]).astype(np.float32)
    counter = formats.read_pfm(root / record["counter"]).astype(np.float32)
    labels = formats.read_label_png(root / record["label"]).astype(np.int64)
    n_sources = max(1, int(record.get("n_sources", counter.max() or 1)))
    counter = np.clip(counter / n_sources, 0.0, 1.0)
    return Sample(
        name=Path(record["image"]).stem,
        image=torch.from_numpy(image).permute(2, 0, 1).contiguous(),
        normal=torch.from_numpy(polar).permute(2, 0, 1).contiguous(),
        counter=torch.from_numpy(counter)[None],
        labels=torch.from_numpy(labels),
    )


class ManifestDataset(Dataset):
    """Exported views with optional random square crops and flips.

    Crops never exceed the image; sizes are rounded down to the network's
    spatial divisor. Augmentation draws from a torch.Generator, so epochs are
    reproducible for a fixed seed.
    """

    def __init__(self, manifest_path, crop: int | None = 512, augment: bool = True,
                 divisor: int = 16, seed: int = 0):
        self.records = load_manifest(manifest_path)
        if not self.records:
            raise ValueError("empty dataset manifest")
        self.samples = [load_sample(r) for r in self.records]
        self.crop = crop
        self.augment = augment
        self.divisor = divisor
        self.generator = torch.Generator().manual_seed(seed)

    def __len__(self) -> int:
        return len(self.samples)

    def _rand(self, hi: int) -> int:
        if hi <= 0:
            return 0
        return int(torch.randint(0, hi + 1, (1,), generator=self.generator).item())

    def __getitem__(self, idx: int) -> dict:
        s = self.samples[idx]
        h, w = s.labels.shape
        ch = cw = None
        if self.crop is not None:
            ch = min(self.crop, h) // self.divisor * self.divisor
            cw = min(self.crop, w) // self.divisor * self.divisor
        else:
            ch = h // self.divisor * self.divisor
            cw = w // self.divisor * self.divisor
        y0 = self._rand(h - ch) if self.augment else (h - ch) // 2
        x0 = self._rand(w - cw) if self.augment else (w - cw) // 2

        def cut(t):
            return t[..., y0 : y0 + ch, x0 : x0 + cw]

        image, normal, counter, labels = cut(s.image), cut(s.normal), cut(s.counter), cut(s.labels)
        if self.augment and self._rand(1) == 1:
            image = torch.flip(image, dims=[-1])
            normal = torch.flip(normal, dims=[-1])
            counter = torch.flip(counter, dims=[-1])
            labels = torch.flip(labels, dims=[-1])
        return {"image": image, "normal": normal, "counter": counter, "labels": labels}

    def class_counts(self) -> tuple[int, int]:
        pos = sum(int((s.labels == 1).sum()) for s in self.samples)
        neg = sum(int((s.labels == 0).sum()) for s in self.samples)
        return pos, neg
