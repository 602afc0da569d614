"""End-to-end construction of paired two-point/multi-echo samples.

Per subject: generate a phantom, render the 6-echo reference and a
two-point acquisition at its own coarser geometry (with through-plane
partial volume), misalign the two-point channels by a random subvoxel
translation, resample to the reference grid, register back, fit the
multi-echo ground truth, and serialize everything in the raster format.
The manifest records enough to reproduce every byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .estimators import DIXON_CHANNELS, TARGET_CHANNELS, NllsConfig, echo_channel_names, fit_map
from .image_ops import (
    RegistrationError,
    mutual_information,
    register_translation,
    resample_linear,
    translate,
)
from .phantom import (
    PHANTOM_CHANNELS,
    PhantomConfig,
    PhantomSlice,
    _dixon_channels_from_complex,
    dixon_complex_pair,
    generate_phantom,
    render_ideal_echoes,
)
from .raster import BinaryMask, RasterImage, read_raster, write_raster
from .signal_model import (
    LIVER_FAT_AMPLITUDES,
    LIVER_FAT_PEAKS_PPM,
    EchoSchedule,
    FatSpectrum,
)

__all__ = [
    "PipelineConfig",
    "SampleRecord",
    "DatasetManifest",
    "ManifestError",
    "build_cohort",
    "mi_quality_filter",
    "split_dataset",
    "export_ml",
    "write_manifest",
    "read_manifest",
    "validate_manifest",
    "load_eval_samples",
    "config_hash",
]

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    """Inconsistent manifest contents or raster contract violations."""


@dataclass(frozen=True)
class PipelineConfig:
    """Cohort-level settings; phantom and solver settings ride along nested."""

    seed: int = 0
    field_strength_t: float = 1.5
    fat_peaks_ppm: tuple[float, ...] = LIVER_FAT_PEAKS_PPM
    fat_amplitudes: tuple[float, ...] = LIVER_FAT_AMPLITUDES
    n_ideal_echoes: int = 6
    dixon_times_s: tuple[float, float] | None = None  # None: in/opposed defaults
    ideal_times_s: tuple[float, ...] | None = None
    dixon_rows: int = 224
    dixon_cols: int = 174
    subslice_offsets_vox: tuple[float, ...] = (-0.7, 0.0, 0.7)
    max_shift_vox: float = 4.0
    search_radius: int = 8
    mi_bins: int = 64
    mi_filter_quantile: float = 0.10
    split_fractions: tuple[float, float, float] = (0.70, 0.20, 0.10)
    support_sigma_mult: float = 5.0
    nlls: NllsConfig = field(default_factory=NllsConfig)

    def spectrum(self) -> FatSpectrum:
        return FatSpectrum.from_ppm(
            self.fat_peaks_ppm, self.fat_amplitudes, self.field_strength_t
        )

    def dixon_schedule(self) -> EchoSchedule:
        if self.dixon_times_s is not None:
            return EchoSchedule(times_s=tuple(self.dixon_times_s))
        return EchoSchedule.dixon(self.field_strength_t)

    def ideal_schedule(self) -> EchoSchedule:
        if self.ideal_times_s is not None:
            return EchoSchedule(times_s=tuple(self.ideal_times_s))
        return EchoSchedule.ideal(self.field_strength_t, self.n_ideal_echoes)


@dataclass
class SampleRecord:
    """One subject's file set; paths are relative to the manifest directory.

    The injected misalignment and the registration's answer are recorded for
    provenance; a successful registration has reg ~ -injected.
    """

    subject_id: str
    input: str
    target: str
    mask: str
    echoes: str
    phantom: str
    mi_score: float
    split: str = ""
    seed: int = 0
    config_hash: str = ""
    injected_dy: float = 0.0
    injected_dx: float = 0.0
    reg_dy: float = 0.0
    reg_dx: float = 0.0


@dataclass
class DatasetManifest:
    """Sample list plus the fully resolved configuration that produced it."""

    config: dict
    samples: list[SampleRecord]
    mi_filter_applied: bool = False
    mi_filter_quantile: float | None = None
    split_seed: int | None = None
    format_version: int = MANIFEST_VERSION

    def split_ids(self, split: str) -> list[str]:
        return [s.subject_id for s in self.samples if s.split == split]

    def sample(self, subject_id: str) -> SampleRecord:
        for s in self.samples:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)


def _dataclass_to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def _coerce(value):
    """Recursively rebuild tuples (JSON stores them as lists)."""
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def dataclass_from_dict(cls, data: dict):
    """Strict dict -> dataclass conversion; unknown keys are an error."""
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in field_map:
            raise ValueError(f"unknown config key {cls.__name__}.{key}")
        f = field_map[key]
        nested = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if isinstance(value, dict) and nested is not None and dataclasses.is_dataclass(nested):
            value = dataclass_from_dict(nested, value)
        else:
            value = _coerce(value)
        kwargs[key] = value
    return cls(**kwargs)


def canonical_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(canonical_json(resolved).encode()).hexdigest()[:16]


def resolved_cohort_config(
    n_subjects: int, phantom_cfg: PhantomConfig, pipeline_cfg: PipelineConfig
) -> dict:
    return {
        "n_subjects": n_subjects,
        "phantom": _dataclass_to_dict(phantom_cfg),
        "pipeline": _dataclass_to_dict(pipeline_cfg),
    }


def subject_seed(master: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([master, index, stream]).generate_state(1)[0])


def _dixon_geometry(ph_cfg: PhantomConfig, cfg: PipelineConfig) -> tuple[float, float]:
    """Two-point-grid spacing covering the same field of view as the phantom."""
    sy = ph_cfg.rows * ph_cfg.spacing_mm[0] / cfg.dixon_rows
    sx = ph_cfg.cols * ph_cfg.spacing_mm[1] / cfg.dixon_cols
    return sy, sx


def _render_dixon_stack(
    ph: PhantomSlice,
    cfg: PipelineConfig,
    ph_cfg: PhantomConfig,
    noise_seed: int,
) -> RasterImage:
    """Two-point channels at the coarser acquisition grid.

    The thick slice is modeled as the complex average of a few thin
    sub-slices offset through-plane (realized as small in-plane shifts of
    the tissue maps), detected to magnitudes after noise.
    """
    spectrum = cfg.spectrum()
    dixon_sched = cfg.dixon_schedule()
    sy, sx = _dixon_geometry(ph_cfg, cfg)
    maps = RasterImage(
        data=np.stack([ph.density_map, ph.pdff_map, ph.r2star_map]),
        spacing_mm=ph.spacing_mm,
        slice_thickness_mm=ph.slice_thickness_mm,
        channel_names=("density", "pdff", "r2star"),
    )
    acc_op = np.zeros((cfg.dixon_rows, cfg.dixon_cols), dtype=np.complex128)
    acc_in = np.zeros_like(acc_op)
    offsets = cfg.subslice_offsets_vox
    for off in offsets:
        shifted = translate(maps, off, 0.0) if off != 0.0 else maps
        coarse = resample_linear(shifted, cfg.dixon_rows, cfg.dixon_cols, (sy, sx))
        density = coarse.channel("density").astype(np.float64)
        pdff = np.clip(coarse.channel("pdff").astype(np.float64), 0.0, 100.0)
        r2s = np.clip(coarse.channel("r2star").astype(np.float64), 0.0, None)
        water = density * (1.0 - pdff / 100.0)
        fat = density * pdff / 100.0
        s_op, s_in = dixon_complex_pair(water, fat, r2s, spectrum, dixon_sched)
        acc_op += s_op
        acc_in += s_in
    acc_op /= len(offsets)
    acc_in /= len(offsets)
    data = _dixon_channels_from_complex(acc_op, acc_in, ph_cfg.noise_sigma, noise_seed)
    return RasterImage(
        data=data,
        spacing_mm=(sy, sx),
        slice_thickness_mm=ph.slice_thickness_mm,
        channel_names=DIXON_CHANNELS,
    )


def _echo1_magnitude(ideal: RasterImage) -> RasterImage:
    mag = np.hypot(
        ideal.channel("echo1_re").astype(np.float64),
        ideal.channel("echo1_im").astype(np.float64),
    )
    return ideal.with_data(mag[None], ("echo1_mag",))


def _build_subject(args: tuple) -> SampleRecord:
    index, phantom_cfg, cfg, out_dir, cfg_hash = args
    out = Path(out_dir)
    sid = f"S{index:04d}"
    seed_phantom = subject_seed(cfg.seed, index, 0)
    seed_ideal = subject_seed(cfg.seed, index, 1)
    seed_dixon = subject_seed(cfg.seed, index, 2)
    seed_shift = subject_seed(cfg.seed, index, 3)

    ph_cfg = replace(phantom_cfg, rng_seed=seed_phantom)
    ph = generate_phantom(ph_cfg)
    spectrum = cfg.spectrum()
    ideal = render_ideal_echoes(ph, spectrum, cfg.ideal_schedule(), ph_cfg.noise_sigma, seed_ideal)
    dixon_native = _render_dixon_stack(ph, cfg, ph_cfg, seed_dixon)

    # misalign, move to the reference grid, and register back
    shift_rng = np.random.default_rng(seed_shift)
    vy, vx = shift_rng.uniform(-cfg.max_shift_vox, cfg.max_shift_vox, size=2)
    on_ref = resample_linear(dixon_native, ph.rows, ph.cols, ph.spacing_mm)
    moving = translate(on_ref, vy, vx)
    fixed = _echo1_magnitude(ideal)
    moving_in_phase = moving.with_data(moving.channel("in_phase")[None], ("in_phase",))
    try:
        dy, dx, _ = register_translation(
            moving_in_phase, fixed, search_radius=cfg.search_radius, bins=cfg.mi_bins
        )
        registered = translate(moving, dy, dx)
        # the recorded score is the plain MI of the registered in-phase
        # channel against the first-echo magnitude, not the registration
        # objective
        mi = mutual_information(
            registered.with_data(registered.channel("in_phase")[None], ("in_phase",)),
            fixed,
            bins=cfg.mi_bins,
        )
    except RegistrationError:
        dy = dx = 0.0
        mi = 0.0
        registered = moving

    support = cfg.support_sigma_mult * ph_cfg.noise_sigma
    target = fit_map(
        ideal,
        "nlls",
        ideal_schedule=cfg.ideal_schedule(),
        spectrum=spectrum,
        nlls_config=cfg.nlls,
        support_threshold=support,
    )
    mask = BinaryMask(ph.liver_mask)

    write_raster(registered, out / f"{sid}_input")
    write_raster(target, out / f"{sid}_target")
    write_raster(mask.to_raster(target), out / f"{sid}_mask")
    write_raster(ideal, out / f"{sid}_echoes")
    write_raster(ph.to_raster(), out / f"{sid}_phantom")

    return SampleRecord(
        subject_id=sid,
        input=f"{sid}_input",
        target=f"{sid}_target",
        mask=f"{sid}_mask",
        echoes=f"{sid}_echoes",
        phantom=f"{sid}_phantom",
        mi_score=float(mi),
        seed=seed_phantom,
        config_hash=cfg_hash,
        injected_dy=float(vy),
        injected_dx=float(vx),
        reg_dy=float(dy),
        reg_dx=float(dx),
    )


def build_cohort(
    n_subjects: int,
    phantom_cfg: PhantomConfig,
    pipeline_cfg: PipelineConfig,
    out_dir: str | Path,
    jobs: int = 1,
) -> DatasetManifest:
    """Simulate, misalign, register, and fit a cohort; write all rasters.

    Deterministic per (seed, config): every subject derives its own seeds
    from the pipeline seed and subject index, so the result is independent
    of ``jobs``.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = resolved_cohort_config(n_subjects, phantom_cfg, pipeline_cfg)
    chash = config_hash(resolved)
    tasks = [(i, phantom_cfg, pipeline_cfg, str(out), chash) for i in range(n_subjects)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_build_subject, tasks))
    else:
        records = [_build_subject(t) for t in tasks]
    records.sort(key=lambda r: r.subject_id)
    return DatasetManifest(config=resolved, samples=records)


def mi_quality_filter(manifest: DatasetManifest, quantile: float = 0.10) -> DatasetManifest:
    """Drop the floor(quantile * n) samples with the lowest MI scores.

    Ties are broken by removing the larger subject_id first.  Returns a new
    manifest flagged as filtered.
    """
    if not manifest.samples:
        raise ManifestError("manifest has no samples")
    if not 0.0 <= quantile < 1.0:
        raise ValueError(f"quantile must be in [0, 1), got {quantile!r}")
    n_remove = int(np.floor(quantile * len(manifest.samples)))
    # ascending MI; among ties the larger subject_id goes first (stable sort)
    by_id_desc = sorted(manifest.samples, key=lambda s: s.subject_id, reverse=True)
    doomed = sorted(by_id_desc, key=lambda s: s.mi_score)
    removed_ids = {s.subject_id for s in doomed[:n_remove]}
    kept = [s for s in manifest.samples if s.subject_id not in removed_ids]
    return DatasetManifest(
        config=manifest.config,
        samples=kept,
        mi_filter_applied=True,
        mi_filter_quantile=quantile,
        split_seed=manifest.split_seed,
        format_version=manifest.format_version,
    )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_dataset(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float] = (0.70, 0.20, 0.10),
    seed: int = 0,
) -> DatasetManifest:
    """Assign train/val/test by a seeded shuffle and half-up rounded counts."""
    n = len(manifest.samples)
    if n < 3:
        raise ManifestError(f"need at least 3 samples to split, got {n}")
    f1, f2, f3 = fractions
    if min(f1, f2, f3) <= 0 or abs(f1 + f2 + f3 - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    n_train = min(_round_half_up(f1 * n), n)
    n_val = min(_round_half_up(f2 * n), n - n_train)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    samples = [dataclasses.replace(s) for s in manifest.samples]
    for rank, idx in enumerate(order):
        if rank < n_train:
            samples[idx].split = "train"
        elif rank < n_train + n_val:
            samples[idx].split = "val"
        else:
            samples[idx].split = "test"
    return DatasetManifest(
        config=manifest.config,
        samples=samples,
        mi_filter_applied=manifest.mi_filter_applied,
        mi_filter_quantile=manifest.mi_filter_quantile,
        split_seed=seed,
        format_version=manifest.format_version,
    )


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    p = Path(path)
    doc = {
        "format_version": manifest.format_version,
        "config": manifest.config,
        "mi_filter_applied": manifest.mi_filter_applied,
        "mi_filter_quantile": manifest.mi_filter_quantile,
        "split_seed": manifest.split_seed,
        "samples": [dataclasses.asdict(s) for s in manifest.samples],
    }
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(canonical_json(doc))
    return p


def read_manifest(path: str | Path) -> DatasetManifest:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"malformed manifest {p}: {e}") from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {doc.get('format_version')!r}")
    samples = [SampleRecord(**s) for s in doc["samples"]]
    return DatasetManifest(
        config=doc["config"],
        samples=samples,
        mi_filter_applied=doc.get("mi_filter_applied", False),
        mi_filter_quantile=doc.get("mi_filter_quantile"),
        split_seed=doc.get("split_seed"),
    )


def validate_manifest(manifest: DatasetManifest, root: str | Path, check_rasters: bool = True) -> None:
    """Check split integrity and every referenced raster's channel contract."""
    ids = [s.subject_id for s in manifest.samples]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate subject ids")
    assigned = [s for s in manifest.samples if s.split]
    for s in assigned:
        if s.split not in SPLITS:
            raise ManifestError(f"{s.subject_id}: bad split {s.split!r}")
    if assigned and len(assigned) != len(manifest.samples):
        raise ManifestError("split must be assigned to all samples or none")
    if not check_rasters:
        return
    root = Path(root)
    n_echo = manifest.config["pipeline"]["n_ideal_echoes"]
    expected = {
        "input": DIXON_CHANNELS,
        "target": TARGET_CHANNELS,
        "mask": ("mask",),
        "echoes": echo_channel_names(n_echo),
        "phantom": PHANTOM_CHANNELS,
    }
    for s in manifest.samples:
        for kind, channels in expected.items():
            base = root / getattr(s, kind)
            header_path = base.parent / (base.name + ".json")
            try:
                header = json.loads(header_path.read_text())
            except FileNotFoundError:
                raise ManifestError(f"{s.subject_id}: missing raster {header_path}") from None
            found = tuple(header.get("channel_names", ()))
            if found != tuple(channels):
                raise ManifestError(
                    f"{s.subject_id}/{kind}: channel contract violated: "
                    f"expected {tuple(channels)}, found {found}"
                )


def export_ml(
    manifest: DatasetManifest,
    manifest_dir: str | Path,
    out_dir: str | Path,
    allow_unfiltered: bool = False,
) -> Path:
    """Materialize train/val/test directories of paired rasters.

    Refuses manifests that skipped the MI gate unless explicitly allowed.
    Returns the path of the split index file.
    """
    if not manifest.mi_filter_applied and not allow_unfiltered:
        raise ManifestError(
            "manifest is unfiltered (MI gate not applied); pass allow_unfiltered to override"
        )
    if not all(s.split for s in manifest.samples):
        raise ManifestError("manifest has unassigned splits; run split_dataset first")
    src_root = Path(manifest_dir)
    out = Path(out_dir)
    index = {"format_version": 1, "config": manifest.config, "samples": []}
    for s in sorted(manifest.samples, key=lambda r: r.subject_id):
        split_dir = out / s.split
        split_dir.mkdir(parents=True, exist_ok=True)
        entry = {"subject_id": s.subject_id, "split": s.split, "mi_score": s.mi_score}
        for kind in ("input", "target", "mask"):
            base = getattr(s, kind)
            for ext in (".json", ".raw"):
                shutil.copyfile(src_root / (base + ext), split_dir / (base + ext))
            entry[kind] = f"{s.split}/{base}"
        index["samples"].append(entry)
    index_path = out / "split_index.json"
    index_path.write_text(canonical_json(index))
    return index_path


def load_eval_samples(
    manifest: DatasetManifest,
    root: str | Path,
    methods: list[str],
    pred_dir: str | Path,
    split: str | None = "test",
) -> list[dict]:
    """Assemble metric inputs for :func:`dixonkit.metrics.build_report`.

    The pseudo-method "target" evaluates the ground truth against itself.
    Missing prediction files are enumerated in one error.
    """
    root = Path(root)
    pred_root = Path(pred_dir)
    chosen = [s for s in manifest.samples if split is None or s.split == split]
    if not chosen:
        raise ManifestError(f"no samples in split {split!r}")
    missing: list[str] = []
    samples = []
    for s in chosen:
        target = read_raster(root / s.target)
        mask = BinaryMask.from_raster(read_raster(root / s.mask))
        truth = {q: target.channel(q) for q in TARGET_CHANNELS}
        pred: dict[str, dict] = {}
        for method in methods:
            pred[method] = {}
            if method == "target":
                pred[method] = dict(truth)
                continue
            for q in TARGET_CHANNELS:
                base = pred_root / f"{s.subject_id}_{method}_{q}"
                if (base.parent / (base.name + ".json")).exists():
                    pred[method][q] = read_raster(base).channel(q)
            if not pred[method]:
                missing.append(f"{s.subject_id}: no predictions for method {method!r}")
        samples.append(
            {"sample_id": s.subject_id, "truth": truth, "mask": mask, "pred": pred}
        )
    if missing:
        raise ManifestError("missing predictions:\n  " + "\n  ".join(missing))
    return samples
