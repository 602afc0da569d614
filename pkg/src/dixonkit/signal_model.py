"""Forward MR signal models for water-fat imaging.

Three model families, in increasing fidelity: the simple two-point sum and
difference model, the two-point model with R2* decay, and the complex
multi-peak model sampled at an arbitrary echo train.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GAMMA_BAR_MHZ_PER_T",
    "DEFAULT_FIELD_STRENGTH_T",
    "LIVER_FAT_PEAKS_PPM",
    "LIVER_FAT_AMPLITUDES",
    "TissueParams",
    "FatSpectrum",
    "EchoSchedule",
    "simulate_simple_dixon",
    "simulate_two_point_r2star",
    "simulate_multi_echo",
    "simulate_multi_echo_map",
    "in_opposed_echo_times",
    "add_complex_noise",
]

# Proton gyromagnetic ratio over 2*pi, MHz/T.
GAMMA_BAR_MHZ_PER_T = 42.577478

# typical clinical liver protocol field; all ppm -> Hz conversions default here
DEFAULT_FIELD_STRENGTH_T = 1.5

# Chemical shift of the main water-fat separation, ppm.
MAIN_FAT_PEAK_PPM = 3.4

# Six-peak liver fat spectrum: offsets relative to water (ppm) and relative
# amplitudes summing to one.  A widely used liver parameterization shipped as
# an overridable default, not a fitted quantity.
LIVER_FAT_PEAKS_PPM = (-3.80, -3.40, -2.60, -1.94, -0.39, 0.60)
LIVER_FAT_AMPLITUDES = (0.087, 0.693, 0.128, 0.004, 0.039, 0.048)


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class TissueParams:
    """Per-voxel unknowns: water and fat proton density plus R2* decay.

    Densities are in arbitrary signal units, ``r2star`` in 1/s.  All three
    must be finite and non-negative.
    """

    water: float
    fat: float
    r2star: float = 0.0

    def __post_init__(self) -> None:
        for name in ("water", "fat", "r2star"):
            value = getattr(self, name)
            _require_finite(name, value)
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value!r}")

    @property
    def pdff_percent(self) -> float:
        total = self.water + self.fat
        return 100.0 * self.fat / total if total > 0 else 0.0


@dataclass(frozen=True)
class FatSpectrum:
    """Multi-peak fat model: resonance offsets in Hz and relative amplitudes.

    Amplitudes are dimensionless weights summing to one; each peak's absolute
    amplitude is ``alpha_i * fat``.  Offsets are relative to water (negative
    means the peak precesses slower than water).
    """

    frequencies_hz: tuple[float, ...]
    amplitudes: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.frequencies_hz) < 1:
            raise ValueError("spectrum needs at least one peak")
        if len(self.frequencies_hz) != len(self.amplitudes):
            raise ValueError("frequencies and amplitudes must have equal length")
        for f, a in zip(self.frequencies_hz, self.amplitudes):
            _require_finite("frequency", f)
            _require_finite("amplitude", a)
            if a < 0:
                raise ValueError(f"amplitudes must be >= 0, got {a!r}")
        if abs(sum(self.amplitudes) - 1.0) > 1e-9:
            raise ValueError(
                f"amplitudes must sum to 1 within 1e-9, got {sum(self.amplitudes)!r}"
            )

    @property
    def n_peaks(self) -> int:
        return len(self.frequencies_hz)

    @classmethod
    def from_ppm(
        cls,
        peaks_ppm: tuple[float, ...],
        amplitudes: tuple[float, ...],
        field_strength_t: float = DEFAULT_FIELD_STRENGTH_T,
    ) -> "FatSpectrum":
        """Build from ppm offsets; amplitudes are normalized to unit sum."""
        if field_strength_t <= 0:
            raise ValueError("field strength must be positive")
        total = sum(amplitudes)
        if total <= 0:
            raise ValueError("amplitudes must have a positive sum")
        hz_per_ppm = GAMMA_BAR_MHZ_PER_T * field_strength_t
        freqs = tuple(hz_per_ppm * p for p in peaks_ppm)
        return cls(frequencies_hz=freqs, amplitudes=tuple(a / total for a in amplitudes))

    @classmethod
    def liver_6peak(
        cls, field_strength_t: float = DEFAULT_FIELD_STRENGTH_T
    ) -> "FatSpectrum":
        """Default six-peak liver spectrum at the given field strength."""
        return cls.from_ppm(LIVER_FAT_PEAKS_PPM, LIVER_FAT_AMPLITUDES, field_strength_t)

    @classmethod
    def single_peak(
        cls,
        field_strength_t: float = DEFAULT_FIELD_STRENGTH_T,
        offset_ppm: float = -MAIN_FAT_PEAK_PPM,
    ) -> "FatSpectrum":
        """Idealized single-resonance fat, the textbook Dixon assumption."""
        return cls.from_ppm((offset_ppm,), (1.0,), field_strength_t)

    def phasor(self, times_s: np.ndarray) -> np.ndarray:
        """Net fat phasor sum(alpha_i * exp(-j 2 pi f_i t)) at each time."""
        t = np.asarray(times_s, dtype=np.float64)
        f = np.array(self.frequencies_hz, dtype=np.float64)
        a = np.array(self.amplitudes, dtype=np.float64)
        phase = -2.0 * np.pi * t[..., None] * f
        return (a * np.exp(1j * phase)).sum(axis=-1)


@dataclass(frozen=True)
class EchoSchedule:
    """Acquisition times t_1..t_M in seconds, strictly increasing, positive."""

    times_s: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.times_s) < 2:
            raise ValueError("schedule needs at least two echoes")
        for t in self.times_s:
            _require_finite("echo time", t)
            if t <= 0:
                raise ValueError(f"echo times must be positive, got {t!r}")
        diffs = np.diff(self.times_s)
        if not np.all(diffs > 0):
            raise ValueError("echo times must be strictly increasing")

    @property
    def n_echoes(self) -> int:
        return len(self.times_s)

    @classmethod
    def dixon(
        cls,
        field_strength_t: float = DEFAULT_FIELD_STRENGTH_T,
        delta_ppm: float = MAIN_FAT_PEAK_PPM,
    ) -> "EchoSchedule":
        """Two-echo schedule at the opposed-phase and in-phase times."""
        t_opposed, t_in = in_opposed_echo_times(field_strength_t, delta_ppm)
        return cls(times_s=(t_opposed, t_in))

    @classmethod
    def ideal(
        cls,
        field_strength_t: float = DEFAULT_FIELD_STRENGTH_T,
        n_echoes: int = 6,
        delta_ppm: float = MAIN_FAT_PEAK_PPM,
    ) -> "EchoSchedule":
        """Multi-echo schedule at multiples of the opposed-phase time.

        Consecutive echoes alternate the main fat peak between opposed and
        in phase, which conditions the three-parameter fit well.
        """
        if n_echoes < 2:
            raise ValueError("need at least two echoes")
        t_opposed, _ = in_opposed_echo_times(field_strength_t, delta_ppm)
        return cls(times_s=tuple(t_opposed * m for m in range(1, n_echoes + 1)))


def in_opposed_echo_times(
    field_strength_t: float, delta_ppm: float = MAIN_FAT_PEAK_PPM
) -> tuple[float, float]:
    """Opposed-phase and in-phase echo times for the main fat resonance.

    The water-fat frequency separation is gamma_bar * B0 * delta_ppm; the
    phasor first reaches -1 at half its period and +1 at the full period.
    """
    if field_strength_t <= 0:
        raise ValueError("field strength must be positive")
    delta_hz = GAMMA_BAR_MHZ_PER_T * field_strength_t * abs(delta_ppm)
    if delta_hz <= 0:
        raise ValueError("chemical shift separation must be non-zero")
    return 0.5 / delta_hz, 1.0 / delta_hz


def simulate_simple_dixon(p: TissueParams) -> tuple[float, float]:
    """Two-point magnitudes ignoring decay: (water + fat, water - fat).

    The second value is signed; it goes negative when fat exceeds water.
    """
    return p.water + p.fat, p.water - p.fat


def simulate_two_point_r2star(
    p: TissueParams, t1: float, t2: float
) -> tuple[float, float]:
    """Two-point signals with mono-exponential R2* decay applied.

    Returns ((water+fat)*exp(-t1*r2star), (water-fat)*exp(-t2*r2star)).
    """
    if not 0 < t1 < t2:
        raise ValueError(f"need 0 < t1 < t2, got t1={t1!r}, t2={t2!r}")
    s1 = (p.water + p.fat) * math.exp(-t1 * p.r2star)
    s2 = (p.water - p.fat) * math.exp(-t2 * p.r2star)
    return s1, s2


def simulate_multi_echo(
    p: TissueParams, spectrum: FatSpectrum, schedule: EchoSchedule
) -> np.ndarray:
    """Complex multi-peak signal at each echo of the schedule.

    S(t_m) = (water + fat * sum_i alpha_i exp(-j 2 pi f_i t_m)) * exp(-t_m r2star)

    Returns a complex128 array of length ``schedule.n_echoes``.
    """
    t = np.array(schedule.times_s, dtype=np.float64)
    return (p.water + p.fat * spectrum.phasor(t)) * np.exp(-p.r2star * t)


def simulate_multi_echo_map(
    water: np.ndarray,
    fat: np.ndarray,
    r2star: np.ndarray,
    spectrum: FatSpectrum,
    schedule: EchoSchedule,
) -> np.ndarray:
    """Vectorized multi-peak signal for maps of tissue parameters.

    Inputs broadcast against each other; output has one trailing echo axis.
    """
    w = np.asarray(water, dtype=np.float64)[..., None]
    f = np.asarray(fat, dtype=np.float64)[..., None]
    k = np.asarray(r2star, dtype=np.float64)[..., None]
    t = np.array(schedule.times_s, dtype=np.float64)
    c = spectrum.phasor(t)
    return (w + f * c) * np.exp(-k * t)


def add_complex_noise(
    signals: np.ndarray, sigma: float, rng_seed: int
) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise to real and imaginary parts.

    Magnitudes of the result are Rician-distributed.  Deterministic for a
    fixed seed; ``sigma`` is in the same units as the signal.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma!r}")
    s = np.asarray(signals, dtype=np.complex128)
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, sigma, size=s.shape + (2,))
    return s + noise[..., 0] + 1j * noise[..., 1]
