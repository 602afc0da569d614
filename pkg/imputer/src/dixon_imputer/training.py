"""Adversarial training loop with reconstruction-weighted generator loss.

Least-squares GAN objective plus ``lambda_l1`` times the L1 reconstruction
term; validation L1 is computed on full slices every ``val_every`` epochs
and the checkpoint minimizing it is marked selected.  Checkpoints are
written atomically (temp + rename).
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
from torch.utils.data import DataLoader

from .data import INPUT_CHANNELS, VARIANT_TARGETS, PairedSliceDataset
from .models import PatchDiscriminator, UNetGenerator, crop_back, pad_to_multiple

__all__ = ["TrainSpec", "Checkpoint", "train", "load_checkpoint", "build_generator"]


@dataclass(frozen=True)
class TrainSpec:
    """Training configuration; defaults follow the standard translation-GAN
    recipe with the reconstruction weight fixed at 25."""

    variant: str = "multi_task"
    lambda_l1: float = 25.0
    batch_size: int = 2
    max_epochs: int = 500
    val_every: int = 5
    learning_rate: float = 2e-4
    beta1: float = 0.5
    base_width: int = 48
    depth: int = 4
    crop: int | None = None
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.variant not in VARIANT_TARGETS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lambda_l1 <= 0:
            raise ValueError("lambda_l1 must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.val_every < 1:
            raise ValueError("batch_size, max_epochs, and val_every must be >= 1")

    @property
    def target_channels(self) -> tuple[str, ...]:
        return VARIANT_TARGETS[self.variant]


@dataclass
class Checkpoint:
    """One saved generator state with its validation score."""

    epoch: int
    val_l1: float
    selected: bool
    path: Path
    spec: TrainSpec


def build_generator(spec: TrainSpec) -> UNetGenerator:
    return UNetGenerator(
        in_channels=len(INPUT_CHANNELS),
        out_channels=len(spec.target_channels),
        base_width=spec.base_width,
        depth=spec.depth,
    )


def _atomic_save(payload: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def _save_checkpoint(
    generator: nn.Module, spec: TrainSpec, epoch: int, val_l1: float, selected: bool, path: Path
) -> None:
    _atomic_save(
        {
            "epoch": epoch,
            "val_l1": val_l1,
            "selected": selected,
            "spec": dataclasses.asdict(spec),
            "generator": generator.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[UNetGenerator, Checkpoint]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    spec_dict = dict(payload["spec"])
    if isinstance(spec_dict.get("crop"), (list, tuple)):
        spec_dict["crop"] = spec_dict["crop"][0]
    spec = TrainSpec(**spec_dict)
    generator = build_generator(spec)
    generator.load_state_dict(payload["generator"])
    generator.eval()
    info = Checkpoint(
        epoch=int(payload["epoch"]),
        val_l1=float(payload["val_l1"]),
        selected=bool(payload["selected"]),
        path=Path(path),
        spec=spec,
    )
    return generator, info


@torch.no_grad()
def _validation_l1(generator: nn.Module, loader: DataLoader, device: str, depth: int) -> float:
    generator.eval()
    total = 0.0
    count = 0
    for x, y in loader:
        x = x.to(device)
        y = y.to(device)
        xp, shape = pad_to_multiple(x, 2**depth)
        pred = crop_back(generator(xp), shape)
        total += float(torch.abs(pred - y).mean().item()) * x.shape[0]
        count += x.shape[0]
    generator.train()
    return total / count


def train(dataset_dir: str | Path, spec: TrainSpec, out_dir: str | Path) -> Checkpoint:
    """Run the full loop; returns the selected checkpoint.

    Writes ``checkpoints/epoch_****.pt`` at every validation point, marks
    the best one ``selected`` (also copied to ``checkpoints/selected.pt``),
    and logs ``training_curve.csv`` with epoch, gen_loss, disc_loss, val_l1.
    """
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    device = spec.device

    torch.manual_seed(spec.seed)
    train_set = PairedSliceDataset(dataset_dir, "train", spec.variant, crop=spec.crop, seed=spec.seed)
    val_set = PairedSliceDataset(dataset_dir, "val", spec.variant, crop=None, seed=spec.seed)
    sampler_gen = torch.Generator().manual_seed(spec.seed)
    train_loader = DataLoader(
        train_set, batch_size=spec.batch_size, shuffle=True, generator=sampler_gen, drop_last=False
    )
    val_loader = DataLoader(val_set, batch_size=1, shuffle=False)

    generator = build_generator(spec).to(device)
    discriminator = PatchDiscriminator(
        in_channels=len(INPUT_CHANNELS) + len(spec.target_channels), base_width=spec.base_width
    ).to(device)
    opt_g = torch.optim.Adam(generator.parameters(), lr=spec.learning_rate, betas=(spec.beta1, 0.999))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=spec.learning_rate, betas=(spec.beta1, 0.999))
    adv_loss = nn.MSELoss()  # least-squares GAN
    l1_loss = nn.L1Loss()

    curve: list[tuple[int, float, float, float | None]] = []
    validated: list[tuple[float, int, Path]] = []
    multiple = 2**spec.depth

    generator.train()
    discriminator.train()
    for epoch in range(1, spec.max_epochs + 1):
        g_total = 0.0
        d_total = 0.0
        batches = 0
        for x, y in train_loader:
            x = x.to(device)
            y = y.to(device)
            xp, shape = pad_to_multiple(x, multiple)
            fake = crop_back(generator(xp), shape)

            # discriminator: real pair vs detached fake pair
            opt_d.zero_grad(set_to_none=True)
            pred_real = discriminator(torch.cat([x, y], dim=1))
            pred_fake = discriminator(torch.cat([x, fake.detach()], dim=1))
            loss_d = 0.5 * (
                adv_loss(pred_real, torch.ones_like(pred_real))
                + adv_loss(pred_fake, torch.zeros_like(pred_fake))
            )
            loss_d.backward()
            opt_d.step()

            # generator: fool the discriminator + weighted reconstruction
            opt_g.zero_grad(set_to_none=True)
            pred_fake = discriminator(torch.cat([x, fake], dim=1))
            loss_g = adv_loss(pred_fake, torch.ones_like(pred_fake)) + spec.lambda_l1 * l1_loss(fake, y)
            loss_g.backward()
            opt_g.step()

            g_total += float(loss_g.item())
            d_total += float(loss_d.item())
            batches += 1

        val_l1: float | None = None
        if epoch % spec.val_every == 0 or epoch == spec.max_epochs:
            val_l1 = _validation_l1(generator, val_loader, device, spec.depth)
            path = ckpt_dir / f"epoch_{epoch:04d}.pt"
            _save_checkpoint(generator, spec, epoch, val_l1, selected=False, path=path)
            validated.append((val_l1, epoch, path))
        curve.append((epoch, g_total / batches, d_total / batches, val_l1))

    # mark the minimum-validation checkpoint; earlier epoch wins ties
    best_val, best_epoch, best_path = min(validated, key=lambda t: (t[0], t[1]))
    gen_best, _ = load_checkpoint(best_path)
    _save_checkpoint(gen_best, spec, best_epoch, best_val, selected=True, path=best_path)
    _save_checkpoint(gen_best, spec, best_epoch, best_val, selected=True, path=ckpt_dir / "selected.pt")

    with (out / "training_curve.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "gen_loss", "disc_loss", "val_l1"])
        for epoch, g, d, v in curve:
            # shortest-roundtrip floats keep the selected-checkpoint
            # validation score exactly recoverable from the log
            writer.writerow([epoch, repr(g), repr(d), "" if v is None else repr(v)])

    return Checkpoint(
        epoch=best_epoch, val_l1=best_val, selected=True, path=ckpt_dir / "selected.pt", spec=spec
    )
