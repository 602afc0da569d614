"""Parameter estimation: two-point decomposition, the two-point exponential
R2* baseline, and regularized nonlinear least squares on multi-echo data.

The NLLS fit is separable: for any candidate decay rate the water and fat
amplitudes solve a 2-unknown non-negative linear least-squares problem
against the complex model basis (variable projection).  The rate is then
refined by a damped Gauss-Newton loop started from a small grid, and the
best start wins.  All of it is vectorized over voxels; the single-voxel API
is a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .raster import BinaryMask, RasterImage
from .signal_model import EchoSchedule, FatSpectrum

__all__ = [
    "DIXON_CHANNELS",
    "TARGET_CHANNELS",
    "FitResult",
    "NllsConfig",
    "dixon_decompose",
    "dixon_fat_fraction",
    "baseline_r2star_fit",
    "nlls_fit_voxel",
    "nlls_fit_batch",
    "nlls_residual_jacobian",
    "fit_map",
    "echo_channel_names",
]

# Fixed channel-order contract for Dixon input rasters.
DIXON_CHANNELS = ("in_phase", "opposed_phase", "water", "fat")
TARGET_CHANNELS = ("pdff", "r2star")

# The r2star penalty applies to the rate scaled into 1/ms, keeping the
# penalty term dimensionless against unit-normalized signals.
PENALTY_RATE_SCALE_S = 1e-3

# Relative share of the per-image 99th percentile of water+fat below which a
# voxel's fat fraction is treated as degenerate (background rejection).
PDFF_GUARD_REL = 1e-6


def echo_channel_names(n_echoes: int) -> tuple[str, ...]:
    """Channel names for a complex echo raster: echo1_re, echo1_im, ..."""
    names: list[str] = []
    for m in range(1, n_echoes + 1):
        names.extend((f"echo{m}_re", f"echo{m}_im"))
    return tuple(names)


@dataclass(frozen=True)
class FitResult:
    """Outcome of a voxel fit; densities in signal units, r2star in 1/s."""

    water: float
    fat: float
    r2star: float
    pdff: float
    residual_norm: float
    converged: bool
    iterations: int
    degenerate: bool = False


@dataclass(frozen=True)
class NllsConfig:
    """Solver settings for the regularized multi-echo fit.

    ``lambda_r`` weights the squared, millisecond-scaled decay rate; when
    None it resolves to 1e-6 per echo.  ``tol`` is the relative step size on
    r2star below which a lane stops.
    """

    r2star_init_grid: tuple[float, ...] = (0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0)
    max_iterations: int = 50
    tol: float = 1e-8
    lambda_r: float | None = None
    r2star_bounds: tuple[float, float] = (0.0, 1000.0)
    lm_damping_init: float = 1e-3

    def __post_init__(self) -> None:
        if len(self.r2star_init_grid) < 1:
            raise ValueError("r2star_init_grid must be non-empty")
        lo, hi = self.r2star_bounds
        if not lo < hi:
            raise ValueError("r2star_bounds must be ordered")
        if self.tol <= 0 or self.max_iterations < 1 or self.lm_damping_init <= 0:
            raise ValueError("tolerances, iteration limit, and damping must be positive")

    def resolved_lambda(self, n_echoes: int) -> float:
        return self.lambda_r if self.lambda_r is not None else 1e-6 * n_echoes


def dixon_decompose(s1: float, s2: float) -> tuple[float, float]:
    """Water and fat from in-phase and opposed-phase signals: half sum/diff."""
    return 0.5 * (s1 + s2), 0.5 * (s1 - s2)


def dixon_fat_fraction(water: float, fat: float, eps: float = 0.0) -> tuple[float, bool]:
    """Fat fraction in percent, clamped to [0, 100].

    Returns (pdff, degenerate); the degenerate flag marks voxels whose total
    signal does not exceed ``eps``, for which pdff is reported as 0.
    """
    total = water + fat
    if not total > eps:
        return 0.0, True
    return float(np.clip(100.0 * fat / total, 0.0, 100.0)), False


def baseline_r2star_fit(mag1: float, mag2: float, t1: float, t2: float) -> float:
    """Two-point exponential decay rate ln(mag1/mag2)/(t2-t1).

    Deliberately unclamped: fat in-growth between the echoes makes the
    second magnitude larger and the result negative.
    """
    if not t2 > t1:
        raise ValueError(f"need t2 > t1, got t1={t1!r}, t2={t2!r}")
    if mag1 <= 0 or mag2 <= 0:
        raise ValueError("magnitudes must be positive")
    return math.log(mag1 / mag2) / (t2 - t1)


def _varpro_nnls(
    kappa: np.ndarray, s: np.ndarray, t: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Exact non-negative 2-variable linear solve for each lane.

    kappa: (L,) rates; s: (L, M) complex signals; t: (M,); c: (M,) fat
    phasor.  Returns per-lane water, fat, the data misfit sum |r|^2, and the
    normal-matrix entries (n11, n12, n22) of the real-coefficient basis,
    which the rate refinement reuses for its projected Jacobian.
    """
    e = np.exp(-kappa[:, None] * t)
    e2 = e * e
    abs_c2 = c.real**2 + c.imag**2
    # elementwise-then-sum keeps reductions identical for any batch size
    n11 = e2.sum(axis=-1)
    n12 = (e2 * c.real).sum(axis=-1)
    n22 = (e2 * abs_c2).sum(axis=-1)
    b1 = (e * s.real).sum(axis=-1)
    b2 = (e * (c.real * s.real + c.imag * s.imag)).sum(axis=-1)
    ss = (s.real**2 + s.imag**2).sum(axis=-1)

    def objective(w: np.ndarray, f: np.ndarray) -> np.ndarray:
        return ss - 2.0 * (w * b1 + f * b2) + w * w * n11 + 2.0 * w * f * n12 + f * f * n22

    with np.errstate(divide="ignore", invalid="ignore"):
        det = n11 * n22 - n12 * n12
        interior = det > 1e-300
        wd = np.where(interior, (n22 * b1 - n12 * b2) / np.where(interior, det, 1.0), 0.0)
        fd = np.where(interior, (n11 * b2 - n12 * b1) / np.where(interior, det, 1.0), 0.0)
        feasible = interior & (wd >= 0.0) & (fd >= 0.0)
        q_int = np.where(feasible, objective(wd, fd), np.inf)

        w_edge = np.where(n11 > 0, np.maximum(b1 / np.where(n11 > 0, n11, 1.0), 0.0), 0.0)
        f_edge = np.where(n22 > 0, np.maximum(b2 / np.where(n22 > 0, n22, 1.0), 0.0), 0.0)
    zeros = np.zeros_like(w_edge)
    q_w = objective(w_edge, zeros)
    q_f = objective(zeros, f_edge)

    # best of interior optimum and the two axis-constrained optima
    w = np.where(q_w <= q_f, w_edge, 0.0)
    f = np.where(q_w <= q_f, 0.0, f_edge)
    q = np.minimum(q_w, q_f)
    take_int = q_int < q
    w = np.where(take_int, wd, w)
    f = np.where(take_int, fd, f)
    q = np.where(take_int, q_int, q)
    return w, f, np.maximum(q, 0.0), (n11, n12, n22)


def nlls_fit_batch(
    echoes: np.ndarray,
    schedule: EchoSchedule,
    spectrum: FatSpectrum,
    cfg: NllsConfig | None = None,
    collect_history: bool = False,
) -> dict[str, np.ndarray]:
    """Regularized NLLS over a batch of voxels.

    ``echoes`` is (V, M) complex.  Returns arrays of shape (V,): water, fat,
    r2star, residual_norm (data part, original units), converged, iterations,
    degenerate; plus optional per-lane objective history under "history"
    (list of [initial objs, then one (lane_idx, obj) pair array per accepted
    step]) used by tests.
    """
    cfg = cfg or NllsConfig()
    s_in = np.asarray(echoes, dtype=np.complex128)
    if s_in.ndim != 2:
        raise ValueError(f"echoes must be (voxels, echoes), got shape {s_in.shape}")
    n_vox, n_echo = s_in.shape
    if n_echo != schedule.n_echoes:
        raise ValueError(
            f"{n_echo} echoes but schedule has {schedule.n_echoes} times"
        )
    if n_echo < 3:
        raise ValueError("need at least 3 echoes for a 3-parameter fit")

    t = np.array(schedule.times_s, dtype=np.float64)
    c = spectrum.phasor(t)
    lam = cfg.resolved_lambda(n_echo)
    tu = PENALTY_RATE_SCALE_S
    lo, hi = cfg.r2star_bounds

    scale = np.abs(s_in).max(axis=-1)
    degenerate = scale <= 0.0
    live = np.flatnonzero(~degenerate)

    out = {
        "water": np.zeros(n_vox),
        "fat": np.zeros(n_vox),
        "r2star": np.zeros(n_vox),
        "residual_norm": np.zeros(n_vox),
        "converged": np.ones(n_vox, dtype=bool),
        "iterations": np.zeros(n_vox, dtype=np.int64),
        "degenerate": degenerate.copy(),
    }
    if collect_history:
        out["history"] = []
    if live.size == 0:
        return out

    s = s_in[live] / scale[live, None]
    nv = live.size
    grid = np.clip(np.array(cfg.r2star_init_grid, dtype=np.float64), lo, hi)
    n_grid = grid.size

    # lane state, flattened (voxel, grid start)
    kappa = np.repeat(grid[None, :], nv, axis=0).reshape(-1)
    vox_of_lane = np.repeat(np.arange(nv), n_grid)
    w_lane, f_lane, obj_data, (n11, n12, n22) = _varpro_nnls(kappa, s[vox_of_lane], t, c)

    def penalty(k: np.ndarray) -> np.ndarray:
        return lam * (tu * k) ** 2

    obj = obj_data + penalty(kappa)
    if collect_history:
        out["history"].append(obj.copy())

    mu = np.full(kappa.shape, cfg.lm_damping_init)
    stopped = np.zeros(kappa.shape, dtype=bool)
    conv_lane = np.zeros(kappa.shape, dtype=bool)
    iters = np.zeros(kappa.shape, dtype=np.int64)

    for _ in range(cfg.max_iterations):
        idx = np.flatnonzero(~stopped)
        if idx.size == 0:
            break
        k = kappa[idx]
        w = w_lane[idx]
        f = f_lane[idx]
        sv = s[vox_of_lane[idx]]
        e = np.exp(-k[:, None] * t)
        model = (w[:, None] + f[:, None] * c) * e
        r = sv - model
        u = t * model  # d residual / d kappa holding the amplitudes fixed
        u2 = (u.real**2 + u.imag**2).sum(axis=-1)
        jtr = (u.real * r.real + u.imag * r.imag).sum(axis=-1) + lam * tu * tu * k

        # Variable-projection curvature: remove the part of u that the linear
        # solve would absorb, restricted to the columns free of their
        # non-negativity constraint (Kaufman approximation).
        g1 = (e * u.real).sum(axis=-1)
        ce = c * e
        g2 = (ce.real * u.real + ce.imag * u.imag).sum(axis=-1)
        m11, m12, m22 = n11[idx], n12[idx], n22[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            det = m11 * m22 - m12 * m12
            ok = det > 1e-300
            beta1 = np.where(ok, (m22 * g1 - m12 * g2) / np.where(ok, det, 1.0), 0.0)
            beta2 = np.where(ok, (m11 * g2 - m12 * g1) / np.where(ok, det, 1.0), 0.0)
            proj_both = np.where(ok, beta1 * g1 + beta2 * g2, 0.0)
            proj_w = np.where(m11 > 0, g1 * g1 / np.where(m11 > 0, m11, 1.0), 0.0)
            proj_f = np.where(m22 > 0, g2 * g2 / np.where(m22 > 0, m22, 1.0), 0.0)
        free_w = w > 0
        free_f = f > 0
        proj = np.where(
            free_w & free_f, proj_both, np.where(free_w, proj_w, np.where(free_f, proj_f, 0.0))
        )
        jtj = np.maximum(u2 - proj, 1e-300) + lam * tu * tu

        delta = -jtr / (jtj * (1.0 + mu[idx]))
        k_try = np.clip(k + delta, lo, hi)
        small = np.abs(k_try - k) <= cfg.tol * np.maximum(1.0, np.abs(k))

        w_try, f_try, od_try, nm_try = _varpro_nnls(k_try, sv, t, c)
        o_try = od_try + penalty(k_try)
        accept = o_try < obj[idx]

        acc = idx[accept]
        kappa[acc] = k_try[accept]
        w_lane[acc] = w_try[accept]
        f_lane[acc] = f_try[accept]
        obj_data[acc] = od_try[accept]
        obj[acc] = o_try[accept]
        n11[acc] = nm_try[0][accept]
        n12[acc] = nm_try[1][accept]
        n22[acc] = nm_try[2][accept]
        mu[acc] = np.maximum(mu[acc] * 0.3, 1e-12)
        rej = idx[~accept]
        mu[rej] = np.minimum(mu[rej] * 10.0, 1e15)

        iters[idx] += 1
        done = idx[small]
        stopped[done] = True
        conv_lane[done] = True
        if collect_history and acc.size:
            out["history"].append((acc.copy(), o_try[accept].copy()))

    # winner per voxel: lowest objective, ties to the lowest rate
    obj_vg = obj.reshape(nv, n_grid)
    kappa_vg = kappa.reshape(nv, n_grid)
    best_obj = obj_vg.min(axis=1, keepdims=True)
    tied_kappa = np.where(obj_vg == best_obj, kappa_vg, np.inf)
    win = tied_kappa.argmin(axis=1)
    lane_idx = np.arange(nv) * n_grid + win

    k_fin = kappa[lane_idx]
    w_fin = w_lane[lane_idx] * scale[live]
    f_fin = f_lane[lane_idx] * scale[live]
    # recompute the data residual directly for an accurate norm
    e = np.exp(-k_fin[:, None] * t)
    model = (w_lane[lane_idx, None] + f_lane[lane_idx, None] * c) * e
    r = s - model
    rn = np.sqrt((r.real**2 + r.imag**2).sum(axis=-1)) * scale[live]

    out["water"][live] = w_fin
    out["fat"][live] = f_fin
    out["r2star"][live] = k_fin
    out["residual_norm"][live] = rn
    out["converged"][live] = conv_lane[lane_idx]
    out["iterations"][live] = iters[lane_idx]
    if collect_history:
        out["winner_lanes"] = lane_idx
    return out


def nlls_fit_voxel(
    echoes: np.ndarray,
    schedule: EchoSchedule,
    spectrum: FatSpectrum,
    cfg: NllsConfig | None = None,
    trace: list | None = None,
) -> FitResult:
    """Fit one voxel's complex echoes; see :func:`nlls_fit_batch`.

    When ``trace`` is a list, the winning lane's objective after each
    accepted step (starting from its grid initialization) is appended.
    """
    s = np.asarray(echoes, dtype=np.complex128).reshape(1, -1)
    if not np.all(np.isfinite(s.view(np.float64))):
        raise ValueError("echoes must be finite")
    res = nlls_fit_batch(s, schedule, spectrum, cfg, collect_history=trace is not None)
    if trace is not None:
        lane = int(res["winner_lanes"][0])
        history = res["history"]
        trace.append(float(history[0][lane]))
        for acc, objs in history[1:]:
            hit = np.flatnonzero(acc == lane)
            if hit.size:
                trace.append(float(objs[hit[0]]))
    water = float(res["water"][0])
    fat = float(res["fat"][0])
    scale = float(np.abs(s).max())
    pdff, degen_pdff = dixon_fat_fraction(water, fat, eps=1e-12 * scale)
    return FitResult(
        water=water,
        fat=fat,
        r2star=float(res["r2star"][0]),
        pdff=pdff,
        residual_norm=float(res["residual_norm"][0]),
        converged=bool(res["converged"][0]),
        iterations=int(res["iterations"][0]),
        degenerate=bool(res["degenerate"][0]) or degen_pdff,
    )


def nlls_residual_jacobian(
    params: tuple[float, float, float],
    echoes: np.ndarray,
    schedule: EchoSchedule,
    spectrum: FatSpectrum,
    cfg: NllsConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked real residual and its analytic Jacobian at (water, fat, r2star).

    The residual stacks [Re(S - model); Im(S - model); penalty row]; its
    squared norm is the NLLS objective.  The Jacobian is (2M+1, 3) with
    columns for water, fat, and r2star.
    """
    cfg = cfg or NllsConfig()
    w, f, k = params
    s = np.asarray(echoes, dtype=np.complex128).reshape(-1)
    n_echo = s.size
    if n_echo != schedule.n_echoes:
        raise ValueError("echo count does not match schedule")
    t = np.array(schedule.times_s, dtype=np.float64)
    c = spectrum.phasor(t)
    lam = cfg.resolved_lambda(n_echo)
    tu = PENALTY_RATE_SCALE_S

    e = np.exp(-k * t)
    model = (w + f * c) * e
    r_c = s - model
    d_w = -e  # d residual / d water (real basis)
    d_f = -c * e
    d_k = t * model

    r = np.concatenate([r_c.real, r_c.imag, [math.sqrt(lam) * tu * k]])
    jac = np.zeros((2 * n_echo + 1, 3))
    jac[:n_echo, 0] = d_w
    jac[n_echo : 2 * n_echo, 0] = 0.0
    jac[:n_echo, 1] = d_f.real
    jac[n_echo : 2 * n_echo, 1] = d_f.imag
    jac[:n_echo, 2] = d_k.real
    jac[n_echo : 2 * n_echo, 2] = d_k.imag
    jac[2 * n_echo, 2] = math.sqrt(lam) * tu
    return r, jac


def _pdff_map(water: np.ndarray, fat: np.ndarray) -> np.ndarray:
    """Vectorized fat fraction with the scale-invariant background guard."""
    total = water + fat
    ref = np.percentile(total, 99.0)
    eps = PDFF_GUARD_REL * max(ref, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pdff = np.where(total > eps, 100.0 * fat / np.where(total > eps, total, 1.0), 0.0)
    return np.clip(pdff, 0.0, 100.0)


def fit_map(
    image: RasterImage,
    method: str,
    *,
    dixon_schedule: EchoSchedule | None = None,
    ideal_schedule: EchoSchedule | None = None,
    spectrum: FatSpectrum | None = None,
    nlls_config: NllsConfig | None = None,
    mask: BinaryMask | None = None,
    support_threshold: float = 0.0,
) -> RasterImage:
    """Apply a voxel-wise estimator across a slice.

    Methods: "dixon" (4-channel input, pdff output), "baseline_r2s"
    (4-channel input, r2star output, negative values preserved), "nlls"
    (2M-channel complex echo input, pdff + r2star output).  Voxels with no
    signal, or outside ``mask`` when given, yield zeros.
    """
    if mask is not None and (image.rows, image.cols) != (mask.rows, mask.cols):
        raise ValueError("mask geometry does not match image")
    keep = mask.data if mask is not None else np.ones((image.rows, image.cols), bool)

    if method == "dixon":
        _require_channels(image, DIXON_CHANNELS)
        water = image.channel("water").astype(np.float64)
        fat = image.channel("fat").astype(np.float64)
        pdff = _pdff_map(water, fat) * keep
        return image.with_data(pdff[None], ("pdff",))

    if method == "baseline_r2s":
        _require_channels(image, DIXON_CHANNELS)
        sched = dixon_schedule or EchoSchedule.dixon()
        if sched.n_echoes != 2:
            raise ValueError("baseline_r2s needs a two-echo schedule")
        t1, t2 = sched.times_s
        mag1 = image.channel("opposed_phase").astype(np.float64)  # earlier echo
        mag2 = image.channel("in_phase").astype(np.float64)
        valid = (mag1 > 0) & (mag2 > 0) & keep
        with np.errstate(divide="ignore", invalid="ignore"):
            r2s = np.where(valid, np.log(np.where(valid, mag1, 1.0) / np.where(valid, mag2, 1.0)), 0.0)
        r2s = r2s / (t2 - t1)
        return image.with_data(r2s[None], ("r2star",))

    if method == "nlls":
        if spectrum is None:
            raise ValueError("nlls requires a fat spectrum")
        n_echo = image.n_channels // 2
        sched = ideal_schedule
        if sched is None:
            raise ValueError("nlls requires the echo schedule")
        _require_channels(image, echo_channel_names(sched.n_echoes))
        if n_echo != sched.n_echoes:
            raise ValueError("channel count does not match schedule")
        planes = image.data.astype(np.float64)
        cplx = planes[0::2] + 1j * planes[1::2]  # (M, rows, cols)
        flat = cplx.reshape(n_echo, -1).T  # (V, M)
        scale = np.abs(flat).max(axis=-1)
        active = (scale > support_threshold) & keep.reshape(-1)
        res = nlls_fit_batch(flat[active], sched, spectrum, nlls_config)
        water = np.zeros(flat.shape[0])
        fat = np.zeros(flat.shape[0])
        r2s = np.zeros(flat.shape[0])
        water[active] = res["water"]
        fat[active] = res["fat"]
        r2s[active] = res["r2star"]
        shape = (image.rows, image.cols)
        pdff = _pdff_map(water, fat).reshape(shape)
        data = np.stack([pdff, r2s.reshape(shape)])
        return image.with_data(data, TARGET_CHANNELS)

    raise ValueError(f"unknown method {method!r}; expected dixon, baseline_r2s, or nlls")


def _require_channels(image: RasterImage, expected: tuple[str, ...]) -> None:
    if image.channel_names != tuple(expected):
        raise ValueError(
            f"channel contract violated: expected {expected}, got {image.channel_names}"
        )
