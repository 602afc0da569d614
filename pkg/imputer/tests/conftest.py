import json

import numpy as np
import pytest

from dixon_imputer.rasters import Raster, write_raster

INPUT_CHANNELS = ("in_phase", "opposed_phase", "water", "fat")
TARGET_CHANNELS = ("pdff", "r2star")


def _smooth(rng, shape, scale):
    field = rng.normal(size=shape)
    kernel = np.ones(5) / 5
    for axis in (0, 1):
        field = np.apply_along_axis(lambda v: np.convolve(v, kernel, mode="same"), axis, field)
    return scale * (field - field.min()) / (np.ptp(field) + 1e-9)


def make_sample(root, sid, split, rng, rows=48, cols=48):
    pdff = _smooth(rng, (rows, cols), 45.0)
    r2s = _smooth(rng, (rows, cols), 400.0)
    density = 0.5 + _smooth(rng, (rows, cols), 0.8)
    # simple deterministic forward: targets are recoverable from the inputs
    in_phase = density * np.exp(-r2s * 0.0046)
    opposed = density * np.abs(1 - 2 * pdff / 100) * np.exp(-r2s * 0.0023)
    water = 0.5 * (in_phase + opposed)
    fat = np.maximum(0.5 * (in_phase - opposed), 0.0)
    inp = Raster(
        data=np.stack([in_phase, opposed, water, fat]).astype(np.float32),
        channel_names=INPUT_CHANNELS,
        spacing_mm=(1.7, 1.7),
        slice_thickness_mm=10.0,
    )
    tgt = Raster(
        data=np.stack([pdff, r2s]).astype(np.float32),
        channel_names=TARGET_CHANNELS,
        spacing_mm=(1.7, 1.7),
        slice_thickness_mm=10.0,
    )
    mask = Raster(
        data=(density > 0.8).astype(np.float32)[None],
        channel_names=("mask",),
        spacing_mm=(1.7, 1.7),
        slice_thickness_mm=10.0,
    )
    split_dir = root / split
    split_dir.mkdir(parents=True, exist_ok=True)
    write_raster(inp, split_dir / f"{sid}_input")
    write_raster(tgt, split_dir / f"{sid}_target")
    write_raster(mask, split_dir / f"{sid}_mask")
    return {
        "subject_id": sid,
        "split": split,
        "input": f"{split}/{sid}_input",
        "target": f"{split}/{sid}_target",
        "mask": f"{split}/{sid}_mask",
        "mi_score": 1.0,
    }


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Six synthetic paired samples (4 train, 1 val, 1 test) on a 48x48 grid."""
    root = tmp_path_factory.mktemp("tinyds")
    rng = np.random.default_rng(5)
    samples = []
    for i in range(4):
        samples.append(make_sample(root, f"T{i:03d}", "train", rng))
    samples.append(make_sample(root, "V000", "val", rng))
    samples.append(make_sample(root, "X000", "test", rng))
    (root / "split_index.json").write_text(json.dumps({"format_version": 1, "samples": samples}))
    return root
