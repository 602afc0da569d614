"""Reader/writer for the paired json+raw float32 raster format.

Independent implementation of the dataset toolkit's on-disk contract so the
trainer depends only on files: ``<name>.json`` header plus ``<name>.raw``
little-endian float32 planes, channel-major, sha256-checked.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class RasterError(ValueError):
    """Missing, malformed, or corrupt raster pair."""


@dataclass
class Raster:
    data: np.ndarray  # (channels, rows, cols) float32
    channel_names: tuple[str, ...]
    spacing_mm: tuple[float, float]
    slice_thickness_mm: float

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.channel_names.index(name)]


def read_raster(path: str | Path) -> Raster:
    base = Path(path)
    if base.suffix in (".json", ".raw"):
        base = base.with_suffix("")
    header_path = base.parent / (base.name + ".json")
    try:
        header = json.loads(header_path.read_text())
    except FileNotFoundError:
        raise RasterError(f"missing raster header {header_path}") from None
    except json.JSONDecodeError as e:
        raise RasterError(f"malformed raster header {header_path}: {e}") from None
    if header.get("format_version") != FORMAT_VERSION or header.get("dtype") != "f32le":
        raise RasterError(f"unsupported raster format in {header_path}")
    raw = (header_path.parent / header["data_file"]).read_bytes()
    rows, cols, channels = header["rows"], header["cols"], header["channels"]
    if len(raw) != rows * cols * channels * 4:
        raise RasterError(f"{header['data_file']}: wrong payload size")
    if hashlib.sha256(raw).hexdigest() != header["sha256"]:
        raise RasterError(f"{header['data_file']}: checksum mismatch")
    data = np.frombuffer(raw, dtype="<f4").reshape(channels, rows, cols).copy()
    return Raster(
        data=data,
        channel_names=tuple(header["channel_names"]),
        spacing_mm=(header["spacing_mm"][0], header["spacing_mm"][1]),
        slice_thickness_mm=header["slice_thickness_mm"],
    )


def write_raster(raster: Raster, path_base: str | Path) -> Path:
    base = Path(path_base)
    data = np.ascontiguousarray(raster.data, dtype="<f4")
    if data.ndim != 3 or not np.all(np.isfinite(data)):
        raise RasterError("raster data must be finite (channels, rows, cols)")
    raw = data.tobytes()
    header = {
        "format_version": FORMAT_VERSION,
        "rows": int(data.shape[1]),
        "cols": int(data.shape[2]),
        "channels": int(data.shape[0]),
        "channel_names": list(raster.channel_names),
        "spacing_mm": [raster.spacing_mm[0], raster.spacing_mm[1]],
        "slice_thickness_mm": raster.slice_thickness_mm,
        "dtype": "f32le",
        "data_file": base.name + ".raw",
        "sha256": hashlib.sha256(raw).hexdigest(),
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    (base.parent / (base.name + ".raw")).write_bytes(raw)
    out = base.parent / (base.name + ".json")
    out.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return out
