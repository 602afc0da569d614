"""2D multi-channel raster images and their on-disk format.

A raster is a stack of float32 planes with physical geometry metadata.  On
disk it is a two-file pair: ``<name>.json`` (human-readable header) plus
``<name>.raw`` (planes concatenated channel-major, row-major within a plane,
little-endian float32).  The header carries a sha256 of the raw payload so
corruption is detected on read.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "RasterImage",
    "BinaryMask",
    "RasterFormatError",
    "write_raster",
    "read_raster",
    "export_png",
]

FORMAT_VERSION = 1


class RasterFormatError(ValueError):
    """Malformed, truncated, or version-incompatible raster file."""


@dataclass
class RasterImage:
    """Float32 image planes with shape (channels, rows, cols) plus geometry."""

    data: np.ndarray
    spacing_mm: tuple[float, float] = (1.7, 1.7)
    slice_thickness_mm: float = 10.0
    channel_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"raster data must be (channels, rows, cols), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster data must be finite")
        if not self.channel_names:
            self.channel_names = tuple(f"ch{i}" for i in range(arr.shape[0]))
        if len(self.channel_names) != arr.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {arr.shape[0]} channels"
            )
        sy, sx = self.spacing_mm
        if sy <= 0 or sx <= 0 or self.slice_thickness_mm <= 0:
            raise ValueError("spacing and slice thickness must be positive")
        self.data = arr
        self.spacing_mm = (float(sy), float(sx))
        self.slice_thickness_mm = float(self.slice_thickness_mm)
        self.channel_names = tuple(self.channel_names)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    def channel(self, name: str) -> np.ndarray:
        """2D view of the named channel."""
        try:
            idx = self.channel_names.index(name)
        except ValueError:
            raise KeyError(f"no channel {name!r}; have {self.channel_names}") from None
        return self.data[idx]

    def same_geometry(self, other: "RasterImage | BinaryMask") -> bool:
        return (self.rows, self.cols) == (other.rows, other.cols)

    def with_data(self, data: np.ndarray, channel_names: tuple[str, ...]) -> "RasterImage":
        """New raster with this geometry but different planes."""
        return RasterImage(
            data=data,
            spacing_mm=self.spacing_mm,
            slice_thickness_mm=self.slice_thickness_mm,
            channel_names=channel_names,
        )


@dataclass
class BinaryMask:
    """Boolean per-voxel mask with the geometry of the image it gates."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {arr.shape}")
        self.data = arr.astype(bool)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def to_raster(self, like: RasterImage) -> RasterImage:
        return like.with_data(self.data.astype(np.float32), ("mask",))

    @classmethod
    def from_raster(cls, img: RasterImage, channel: str = "mask") -> "BinaryMask":
        return cls(data=img.channel(channel) > 0.5)


def write_raster(img: RasterImage, path_base: str | Path) -> Path:
    """Write ``<path_base>.json`` + ``<path_base>.raw``; returns the json path.

    Refuses non-finite data.  The raw payload is float32 little-endian,
    channel-major; its sha256 goes into the header.
    """
    base = Path(path_base)
    if not np.all(np.isfinite(img.data)):
        raise ValueError("refusing to write non-finite raster data")
    raw = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
    header = {
        "format_version": FORMAT_VERSION,
        "rows": img.rows,
        "cols": img.cols,
        "channels": img.n_channels,
        "channel_names": list(img.channel_names),
        "spacing_mm": [img.spacing_mm[0], img.spacing_mm[1]],
        "slice_thickness_mm": img.slice_thickness_mm,
        "dtype": "f32le",
        "data_file": base.name + ".raw",
        "sha256": hashlib.sha256(raw).hexdigest(),
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    (base.parent / (base.name + ".raw")).write_bytes(raw)
    json_path = base.parent / (base.name + ".json")
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return json_path


def read_raster(path: str | Path) -> RasterImage:
    """Read a raster pair written by :func:`write_raster`.

    ``path`` may be the json sidecar, the raw file, or the bare base path.
    Raises RasterFormatError on version mismatch, truncation, bad checksum,
    or a malformed header.
    """
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    json_path = p.parent / (p.name + ".json")
    try:
        header = json.loads(json_path.read_text())
    except FileNotFoundError:
        raise RasterFormatError(f"missing header {json_path}") from None
    except json.JSONDecodeError as e:
        raise RasterFormatError(f"malformed header {json_path}: {e}") from None

    try:
        version = header["format_version"]
        rows, cols, channels = header["rows"], header["cols"], header["channels"]
        names = tuple(header["channel_names"])
        spacing = tuple(header["spacing_mm"])
        thickness = header["slice_thickness_mm"]
        dtype = header["dtype"]
        data_file = header["data_file"]
        digest = header["sha256"]
    except KeyError as e:
        raise RasterFormatError(f"header {json_path} missing key {e}") from None
    if version != FORMAT_VERSION:
        raise RasterFormatError(f"unsupported format_version {version!r}")
    if dtype != "f32le":
        raise RasterFormatError(f"unsupported dtype {dtype!r}")

    raw = (json_path.parent / data_file).read_bytes()
    expected = rows * cols * channels * 4
    if len(raw) != expected:
        raise RasterFormatError(
            f"{data_file}: expected {expected} bytes, found {len(raw)} (truncated or corrupt)"
        )
    if hashlib.sha256(raw).hexdigest() != digest:
        raise RasterFormatError(f"{data_file}: sha256 mismatch, data corrupt")
    data = np.frombuffer(raw, dtype="<f4").reshape(channels, rows, cols).copy()
    return RasterImage(
        data=data,
        spacing_mm=(spacing[0], spacing[1]),
        slice_thickness_mm=thickness,
        channel_names=names,
    )


def export_png(
    plane: np.ndarray, out_dir: str | Path, stem: str, window: tuple[float, float]
) -> Path:
    """8-bit windowed PNG export for qualitative figures.

    The window is recorded in the filename so figures stay self-describing.
    """
    lo, hi = window
    if not hi > lo:
        raise ValueError(f"window must satisfy hi > lo, got {window!r}")
    arr = np.asarray(plane, dtype=np.float64)
    scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    img8 = (scaled * 255.0 + 0.5).astype(np.uint8)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}_w{lo:g}-{hi:g}.png"
    Image.fromarray(img8, mode="L").save(path)
    return path
