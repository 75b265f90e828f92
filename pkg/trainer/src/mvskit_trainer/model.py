"""Confidence prediction network: a U-Net with three middle-fused encoders.

Each input modality (RGB image, polar normal map, normalized counter map)
gets its own encoder of four blocks; a block is two conv-BN-ReLU sub-blocks
followed by a 2x max-pool, with widths 32, 64, 128, 256. The decoder is
symmetric with a single sub-block per level; at every level the three
encoders' skip features are concatenated into the decoder path. A final
convolution plus sigmoid yields the per-pixel confidence in (0, 1).

An early-fusion variant (single encoder over the concatenated 6-channel
input) exists for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture parameters; the defaults are the published configuration."""

    base_width: int = 32
    num_blocks: int = 4
    fusion: str = "middle"  # "middle" | "early"

    def __post_init__(self):
        if self.fusion not in ("middle", "early"):
            raise ValueError(f"fusion must be 'middle' or 'early', got {self.fusion!r}")
        if self.base_width < 1 or self.num_blocks < 1:
            raise ValueError("base_width and num_blocks must be positive")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * (2**b) for b in range(self.num_blocks)]

    @property
    def divisor(self) -> int:
        return 2**self.num_blocks


IN_CHANNELS = {"image": 3, "normal": 2, "counter": 1}


def _sub_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class Encoder(nn.Module):
    """Four double-conv blocks, each followed by a 2x down-sampling."""

    def __init__(self, in_channels: int, widths: list[int]):
        super().__init__()
        self.blocks = nn.ModuleList()
        c = in_channels
        for w in widths:
            self.blocks.append(nn.Sequential(_sub_block(c, w), _sub_block(w, w)))
            c = w
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Returns per-level skip features plus the pooled bottom tensor last."""
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        skips.append(x)
        return skips


class ConfidenceNet(nn.Module):
    """Maps (image, normal, counter) tensors to a confidence map in (0, 1)."""

    def __init__(self, spec: NetworkSpec | None = None):
        super().__init__()
        self.spec = spec or NetworkSpec()
        widths = self.spec.widths
        if self.spec.fusion == "middle":
            self.encoders = nn.ModuleDict(
                {name: Encoder(c, widths) for name, c in IN_CHANNELS.items()}
            )
            n_enc = len(IN_CHANNELS)
        else:
            self.encoders = nn.ModuleDict(
                {"early": Encoder(sum(IN_CHANNELS.values()), widths)}
            )
            n_enc = 1

        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.decoder = nn.ModuleList()
        c = n_enc * widths[-1]  # concatenated bottom features
        for w in reversed(widths):
            self.decoder.append(_sub_block(c + n_enc * w, w))
            c = w
        self.head = nn.Conv2d(widths[0], 1, kernel_size=3, padding=1)

    def forward(
        self, image: torch.Tensor, normal: torch.Tensor, counter: torch.Tensor
    ) -> torch.Tensor:
        """image (N,3,H,W), normal (N,2,H,W), counter (N,1,H,W) -> (N,1,H,W).

        H and W must be divisible by 2^num_blocks (16 by default).
        """
        h, w = image.shape[-2:]
        d = self.spec.divisor
        if h % d or w % d:
            raise ValueError(f"spatial size {h}x{w} must be divisible by {d}")
        if self.spec.fusion == "middle":
            inputs = {"image": image, "normal": normal, "counter": counter}
            all_skips = [self.encoders[name](inputs[name]) for name in IN_CHANNELS]
        else:
            stacked = torch.cat([image, normal, counter], dim=1)
            all_skips = [self.encoders["early"](stacked)]

        x = torch.cat([skips[-1] for skips in all_skips], dim=1)
        n_levels = len(self.decoder)
        for i, block in enumerate(self.decoder):
            level = n_levels - 1 - i
            x = self.up(x)
            x = torch.cat([x] + [skips[level] for skips in all_skips], dim=1)
            x = block(x)
        return torch.sigmoid(self.head(x))


def build_model(spec: NetworkSpec | None = None) -> ConfidenceNet:
    return ConfidenceNet(spec)


def encoder_widths(model: ConfidenceNet, encoder: str = "image") -> list[int]:
    """Per-block output widths of one encoder, read off the conv parameters."""
    enc = model.encoders[encoder]
    widths = []
    for block in enc.blocks:
        convs = [m for m in block.modules() if isinstance(m, nn.Conv2d)]
        widths.append(convs[-1].out_channels)
    return widths
