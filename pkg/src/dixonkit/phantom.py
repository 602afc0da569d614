"""Synthetic single-slice abdominal phantoms and their simulated acquisitions.

A phantom is a set of ground-truth maps (fat fraction, R2*, proton density,
liver mask) on the multi-echo reference grid.  Rendering turns those maps
into the two acquisition products: a 6-echo complex raster and a 4-channel
two-point raster whose water/fat channels are derived from the simulated
magnitudes the way a vendor reconstruction would, decay confound included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .estimators import DIXON_CHANNELS, echo_channel_names
from .raster import RasterImage
from .signal_model import (
    EchoSchedule,
    FatSpectrum,
    add_complex_noise,
    simulate_multi_echo_map,
)

__all__ = [
    "PhantomConfig",
    "PhantomSlice",
    "generate_phantom",
    "render_acquisitions",
    "render_ideal_echoes",
    "render_dixon_channels",
    "dixon_complex_pair",
    "PHANTOM_CHANNELS",
]

PHANTOM_CHANNELS = ("pdff", "r2star", "density", "liver_mask")

MIN_GRID = 64


@dataclass(frozen=True)
class PhantomConfig:
    """Knobs of the subject generator; one seed fixes one subject."""

    rng_seed: int = 0
    rows: int = 232
    cols: int = 256
    spacing_mm: tuple[float, float] = (1.7, 1.7)
    slice_thickness_mm: float = 10.0
    pdff_range: tuple[float, float] = (1.0, 45.0)  # liver mean, percent
    r2star_range: tuple[float, float] = (20.0, 400.0)  # liver mean, 1/s
    texture_smoothness_vox: float = 8.0
    vessel_count_range: tuple[int, int] = (0, 6)
    noise_sigma: float = 0.02

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("pdff_range", self.pdff_range),
            ("r2star_range", self.r2star_range),
        ):
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a non-empty, non-negative range")
        v0, v1 = self.vessel_count_range
        if v0 < 0 or v1 < v0:
            raise ValueError("vessel_count_range must be a non-empty, non-negative range")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.texture_smoothness_vox <= 0:
            raise ValueError("texture_smoothness_vox must be positive")


@dataclass
class PhantomSlice:
    """Ground-truth maps on a shared grid plus the liver region."""

    pdff_map: np.ndarray  # percent, [0, 100]
    r2star_map: np.ndarray  # 1/s, >= 0
    density_map: np.ndarray  # arbitrary units, >= 0; 0 outside the body
    liver_mask: np.ndarray  # bool
    spacing_mm: tuple[float, float]
    slice_thickness_mm: float
    liver_pdff_mean: float  # subject mean the generator drew
    liver_r2star_mean: float

    @property
    def rows(self) -> int:
        return self.pdff_map.shape[0]

    @property
    def cols(self) -> int:
        return self.pdff_map.shape[1]

    def water_fat(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-voxel water and fat densities implied by pdff and density."""
        frac = self.pdff_map / 100.0
        return self.density_map * (1.0 - frac), self.density_map * frac

    def to_raster(self) -> RasterImage:
        data = np.stack(
            [
                self.pdff_map,
                self.r2star_map,
                self.density_map,
                self.liver_mask.astype(np.float64),
            ]
        )
        return RasterImage(
            data=data,
            spacing_mm=self.spacing_mm,
            slice_thickness_mm=self.slice_thickness_mm,
            channel_names=PHANTOM_CHANNELS,
        )

    @classmethod
    def from_raster(cls, img: RasterImage) -> "PhantomSlice":
        if img.channel_names != PHANTOM_CHANNELS:
            raise ValueError(f"not a phantom raster: channels {img.channel_names}")
        pdff = img.channel("pdff").astype(np.float64)
        r2s = img.channel("r2star").astype(np.float64)
        dens = img.channel("density").astype(np.float64)
        mask = img.channel("liver_mask") > 0.5
        liver_pdff = float(pdff[mask].mean()) if mask.any() else 0.0
        liver_r2s = float(r2s[mask].mean()) if mask.any() else 0.0
        return cls(
            pdff_map=pdff,
            r2star_map=r2s,
            density_map=dens,
            liver_mask=mask,
            spacing_mm=img.spacing_mm,
            slice_thickness_mm=img.slice_thickness_mm,
            liver_pdff_mean=liver_pdff,
            liver_r2star_mean=liver_r2s,
        )


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, int], length_scale: float) -> np.ndarray:
    """Band-limited unit-variance texture field."""
    white = rng.standard_normal(shape)
    smooth = ndimage.gaussian_filter(white, sigma=length_scale, mode="reflect")
    sd = smooth.std()
    return smooth / sd if sd > 0 else smooth


def _harmonic_boundary(rng: np.random.Generator, theta: np.ndarray, amp: float, order: int = 5) -> np.ndarray:
    """Low-frequency radial perturbation 1 + sum_k eps_k cos(k theta + phi_k)."""
    wobble = np.ones_like(theta)
    for k in range(2, order + 1):
        eps = rng.uniform(0.0, amp)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        wobble += eps * np.cos(k * theta + phi)
    return wobble


def generate_phantom(cfg: PhantomConfig) -> PhantomSlice:
    """Deterministic synthetic subject for a given config and seed.

    Body: perturbed ellipse with a subcutaneous fat rim.  Liver: smooth blob
    in the upper-left quadrant sized to 15-35% of the body area, carrying the
    subject's mean fat fraction and R2* plus smooth texture.  Vessels reduce
    proton density only, keeping the quantitative maps piecewise smooth.
    """
    rows, cols = cfg.rows, cfg.cols
    if rows < MIN_GRID or cols < MIN_GRID:
        raise ValueError(f"grid {rows}x{cols} too small to place organs (min {MIN_GRID})")
    rng = np.random.default_rng(cfg.rng_seed)

    yy, xx = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij")
    cy, cx = (rows - 1) / 2.0, (cols - 1) / 2.0

    # body outline
    semi_r = rows * rng.uniform(0.33, 0.38)
    semi_c = cols * rng.uniform(0.38, 0.43)
    ny = (yy - cy) / semi_r
    nx = (xx - cx) / semi_c
    rho = np.hypot(ny, nx)
    theta = np.arctan2(ny, nx)
    boundary = _harmonic_boundary(rng, theta, amp=0.03)
    body = rho <= boundary
    rim_width = rng.uniform(0.05, 0.09)
    rim = body & (rho >= (1.0 - rim_width) * boundary)
    interior = body & ~rim

    # textures (one per quantity, regions rescale them)
    tex_pdff = _smooth_noise(rng, (rows, cols), cfg.texture_smoothness_vox)
    tex_r2s = _smooth_noise(rng, (rows, cols), cfg.texture_smoothness_vox)
    tex_dens = _smooth_noise(rng, (rows, cols), cfg.texture_smoothness_vox)

    # background tissue (non-liver interior)
    base_pdff = rng.uniform(1.0, 6.0)
    base_r2s = rng.uniform(25.0, 60.0)
    rim_pdff = rng.uniform(84.0, 94.0)
    rim_r2s = rng.uniform(30.0, 80.0)

    # subject-level liver draws
    liver_pdff_mean = rng.uniform(*cfg.pdff_range)
    liver_r2s_mean = rng.uniform(*cfg.r2star_range)

    # liver blob in the upper-left anatomical quadrant, sized iteratively
    target_frac = rng.uniform(0.18, 0.32)
    body_area = int(body.sum())
    lcy = cy - 0.22 * semi_r + rng.uniform(-0.04, 0.04) * semi_r
    lcx = cx - 0.30 * semi_c + rng.uniform(-0.04, 0.04) * semi_c
    aspect = rng.uniform(0.75, 1.15)
    l_wobble = _harmonic_boundary(rng, theta, amp=0.05)
    area0 = target_frac * body_area
    lr = np.sqrt(area0 * aspect / np.pi)
    lc = np.sqrt(area0 / (aspect * np.pi))
    room = ndimage.binary_erosion(interior, iterations=2)
    liver = np.zeros((rows, cols), dtype=bool)
    for _ in range(12):
        lrho = np.hypot((yy - lcy) / lr, (xx - lcx) / lc)
        liver = (lrho <= l_wobble) & room
        frac = liver.sum() / body_area
        if 0.15 <= frac <= 0.35:
            break
        adjust = np.sqrt(target_frac / max(frac, 1e-6))
        lr *= adjust
        lc *= adjust
    frac = liver.sum() / body_area
    if not 0.15 <= frac <= 0.35:
        raise RuntimeError(f"liver sizing failed: {frac:.3f} of body area")

    # quantitative maps; liver texture is demeaned over the liver so the
    # drawn subject mean is the actual liver mean (modulo clamping)
    pdff = np.zeros((rows, cols))
    r2star = np.zeros((rows, cols))
    pdff[interior] = base_pdff * (1.0 + 0.15 * tex_pdff[interior])
    r2star[interior] = base_r2s * (1.0 + 0.10 * tex_r2s[interior])
    liver_tex_p = tex_pdff[liver] - tex_pdff[liver].mean()
    liver_tex_k = tex_r2s[liver] - tex_r2s[liver].mean()
    pdff[liver] = liver_pdff_mean * (1.0 + 0.12 * liver_tex_p)
    r2star[liver] = liver_r2s_mean * (1.0 + 0.10 * liver_tex_k)
    pdff[rim] = rim_pdff * (1.0 + 0.04 * tex_pdff[rim])
    r2star[rim] = rim_r2s * (1.0 + 0.10 * tex_r2s[rim])
    pdff = np.clip(pdff, 0.0, 100.0)
    pdff[rim] = np.clip(pdff[rim], 80.0, 100.0)
    r2star = np.clip(r2star, 0.0, None)

    density = np.zeros((rows, cols))
    base_density = rng.uniform(0.85, 1.05)
    density[body] = base_density * (1.0 + 0.08 * tex_dens[body])
    density[body] = np.clip(density[body], 0.05, None)

    # vessels: density-only disks inside the liver
    v0, v1 = cfg.vessel_count_range
    n_vessels = int(rng.integers(v0, v1 + 1))
    liver_idx = np.flatnonzero(liver)
    for _ in range(n_vessels):
        if liver_idx.size == 0:
            break
        at = liver_idx[int(rng.integers(0, liver_idx.size))]
        vy, vx = divmod(at, cols)
        radius = rng.uniform(1.5, 4.0)
        reduction = rng.uniform(0.6, 0.9)
        disk = (yy - vy) ** 2 + (xx - vx) ** 2 <= radius**2
        density[disk & liver] *= 1.0 - reduction

    pdff[~body] = 0.0
    r2star[~body] = 0.0

    return PhantomSlice(
        pdff_map=pdff,
        r2star_map=r2star,
        density_map=density,
        liver_mask=liver,
        spacing_mm=cfg.spacing_mm,
        slice_thickness_mm=cfg.slice_thickness_mm,
        liver_pdff_mean=float(liver_pdff_mean),
        liver_r2star_mean=float(liver_r2s_mean),
    )


def dixon_complex_pair(
    water: np.ndarray,
    fat: np.ndarray,
    r2star: np.ndarray,
    spectrum: FatSpectrum,
    dixon_schedule: EchoSchedule,
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free complex signals at the (opposed, in) two-point times.

    The earlier echo is the opposed-phase one per the default schedule
    convention; callers average these over sub-slices before detection.
    """
    if dixon_schedule.n_echoes != 2:
        raise ValueError("two-point schedule must have exactly 2 echoes")
    t_op, t_in = dixon_schedule.times_s
    c = spectrum.phasor(np.array([t_op, t_in]))
    decay_op = np.exp(-r2star * t_op)
    decay_in = np.exp(-r2star * t_in)
    s_op = (water + fat * c[0]) * decay_op
    s_in = (water + fat * c[1]) * decay_in
    return s_op, s_in


def _dixon_channels_from_complex(
    s_op: np.ndarray, s_in: np.ndarray, sigma: float, rng_seed: int
) -> np.ndarray:
    """Detect magnitudes, then rebuild water/fat the two-point way.

    Noise is complex Gaussian before magnitude detection (Rician
    magnitudes).  The derived fat channel is clamped at zero like a vendor
    reconstruction; channel order follows DIXON_CHANNELS.
    """
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, sigma, size=(2,) + s_op.shape + (2,)) if sigma > 0 else None
    if noise is not None:
        s_op = s_op + noise[0, ..., 0] + 1j * noise[0, ..., 1]
        s_in = s_in + noise[1, ..., 0] + 1j * noise[1, ..., 1]
    mag_op = np.abs(s_op)
    mag_in = np.abs(s_in)
    water = 0.5 * (mag_in + mag_op)
    fat = np.maximum(0.5 * (mag_in - mag_op), 0.0)
    return np.stack([mag_in, mag_op, water, fat])


def render_dixon_channels(
    ph: PhantomSlice,
    spectrum: FatSpectrum,
    dixon_schedule: EchoSchedule,
    sigma: float,
    rng_seed: int,
) -> RasterImage:
    """4-channel two-point raster (in, opposed, water, fat) on the phantom grid."""
    water, fat = ph.water_fat()
    s_op, s_in = dixon_complex_pair(water, fat, ph.r2star_map, spectrum, dixon_schedule)
    data = _dixon_channels_from_complex(s_op, s_in, sigma, rng_seed)
    return RasterImage(
        data=data,
        spacing_mm=ph.spacing_mm,
        slice_thickness_mm=ph.slice_thickness_mm,
        channel_names=DIXON_CHANNELS,
    )


def render_ideal_echoes(
    ph: PhantomSlice,
    spectrum: FatSpectrum,
    ideal_schedule: EchoSchedule,
    sigma: float,
    rng_seed: int,
) -> RasterImage:
    """Complex multi-echo raster (re/im channel pairs) on the phantom grid."""
    water, fat = ph.water_fat()
    signal = simulate_multi_echo_map(water, fat, ph.r2star_map, spectrum, ideal_schedule)
    signal = add_complex_noise(signal, sigma, rng_seed)
    n_echo = ideal_schedule.n_echoes
    planes = np.empty((2 * n_echo,) + water.shape)
    planes[0::2] = np.moveaxis(signal.real, -1, 0)
    planes[1::2] = np.moveaxis(signal.imag, -1, 0)
    return RasterImage(
        data=planes,
        spacing_mm=ph.spacing_mm,
        slice_thickness_mm=ph.slice_thickness_mm,
        channel_names=echo_channel_names(n_echo),
    )


def render_acquisitions(
    ph: PhantomSlice,
    spectrum: FatSpectrum,
    dixon_schedule: EchoSchedule,
    ideal_schedule: EchoSchedule,
    sigma: float,
    rng_seed: int,
) -> tuple[RasterImage, RasterImage]:
    """Render both acquisition products on the phantom grid.

    Returns (dixon_channels, ideal_echoes).  Noise draws for the two
    products come from independent child seeds of ``rng_seed``.
    """
    seed_ideal, seed_dixon = _child_seeds(rng_seed, 2)
    ideal = render_ideal_echoes(ph, spectrum, ideal_schedule, sigma, seed_ideal)
    dixon = render_dixon_channels(ph, spectrum, dixon_schedule, sigma, seed_dixon)
    return dixon, ideal


def _child_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s) for s in ss.generate_state(n)]
