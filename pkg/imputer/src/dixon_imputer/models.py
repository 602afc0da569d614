"""Generator and discriminator for the translation GAN.

The generator is an encoder-decoder with skip connections (U-Net shape);
the discriminator classifies overlapping patches as real or fake.  Widths
and depth are configuration, not contract.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def _down(in_ch: int, out_ch: int, norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1)]
    if norm:
        layers.append(nn.InstanceNorm2d(out_ch))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _up(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class UNetGenerator(nn.Module):
    """Skip-connected encoder-decoder; linear output head.

    Inputs must have sides divisible by 2**depth; callers pad and crop.
    """

    def __init__(self, in_channels: int, out_channels: int, base_width: int = 48, depth: int = 4):
        super().__init__()
        if depth < 2:
            raise ValueError("depth must be >= 2")
        self.depth = depth
        widths = [min(base_width * (2**i), base_width * 8) for i in range(depth)]
        downs = [_down(in_channels, widths[0], norm=False)]
        for i in range(1, depth):
            downs.append(_down(widths[i - 1], widths[i]))
        self.downs = nn.ModuleList(downs)
        ups = []
        for i in range(depth - 1, 0, -1):
            in_ch = widths[i] + (widths[i] if i < depth - 1 else 0)
            ups.append(_up(in_ch, widths[i - 1]))
        self.ups = nn.ModuleList(ups)
        self.head = nn.ConvTranspose2d(widths[0] * 2, out_channels, 4, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = skips[-1]
        for i, up in enumerate(self.ups):
            if i > 0:
                x = torch.cat([x, skips[self.depth - 1 - i]], dim=1)
            x = up(x)
        x = torch.cat([x, skips[0]], dim=1)
        return self.head(x)


class PatchDiscriminator(nn.Module):
    """Patch-level real/fake classifier over (input, target) pairs."""

    def __init__(self, in_channels: int, base_width: int = 48):
        super().__init__()
        w = base_width
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * w, 4 * w, 4, stride=1, padding=1),
            nn.InstanceNorm2d(4 * w),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * w, 1, 4, stride=1, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Zero-pad bottom/right so spatial sides divide ``multiple``."""
    rows, cols = x.shape[-2:]
    pad_r = (-rows) % multiple
    pad_c = (-cols) % multiple
    if pad_r or pad_c:
        x = nn.functional.pad(x, (0, pad_c, 0, pad_r))
    return x, (rows, cols)


def crop_back(x: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    return x[..., : shape[0], : shape[1]]
