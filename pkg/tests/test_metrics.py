import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dixonkit.metrics import (
    MetricsError,
    build_report,
    masked_mae,
    mean_region_value,
    regression_r2,
    write_report_files,
)
from dixonkit.raster import BinaryMask


def naive_masked_mae(pred, truth, mask=None):
    """Reference implementation: explicit loops, truth-zero exclusion."""
    total = 0.0
    n = 0
    for i in range(truth.shape[0]):
        for j in range(truth.shape[1]):
            if truth[i, j] == 0.0:
                continue
            if mask is not None and not mask[i, j]:
                continue
            total += abs(pred[i, j] - truth[i, j])
            n += 1
    if n == 0:
        raise ZeroDivisionError
    return total / n


def naive_regression(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    syy = sum((y - my) ** 2 for y in ys)
    slope = sxy / sxx
    intercept = my - slope * mx
    r2 = sxy * sxy / (sxx * syy)
    return slope, intercept, r2


def test_masked_mae_examples():
    t = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert masked_mae(t, t) == 0.0
    assert masked_mae(t + 2.0, t) == 2.0
    truth = np.array([[1.0, 0.0, 3.0]])
    pred = np.array([[2.0, 5.0, 1.0]])
    assert masked_mae(pred, truth) == pytest.approx(1.5)


def test_masked_mae_errors():
    t = np.ones((2, 2))
    with pytest.raises(MetricsError):
        masked_mae(np.ones((2, 3)), t)
    with pytest.raises(MetricsError):
        masked_mae(t, np.zeros((2, 2)))
    with pytest.raises(MetricsError):
        masked_mae(t, t, BinaryMask(np.zeros((2, 2), bool)))


def test_masked_mae_symmetry(rng):
    a = rng.normal(size=(6, 6))
    b = rng.normal(size=(6, 6))
    b[0, 0] = 0.0
    # symmetry holds whenever the zero patterns agree
    a[b == 0] = 0.0
    b[a == 0] = 0.0
    assert masked_mae(a, b) == pytest.approx(masked_mae(b, a), rel=1e-15)


def test_masked_mae_permutation_invariance(rng):
    a = rng.normal(size=(5, 5))
    b = rng.normal(size=(5, 5)) + 1.0
    perm = rng.permutation(25)
    ap = a.ravel()[perm].reshape(5, 5)
    bp = b.ravel()[perm].reshape(5, 5)
    assert masked_mae(a, b) == pytest.approx(masked_mae(ap, bp), rel=1e-12)


def test_mean_region_value_cases(small_phantom):
    const = np.full((4, 4), 2.5)
    assert mean_region_value(const) == 2.5
    half = np.zeros((4, 4))
    half[:2] = 5.0
    assert mean_region_value(half) == 2.5
    with pytest.raises(MetricsError):
        mean_region_value(const, BinaryMask(np.zeros((4, 4), bool)))
    # generator oracle: liver mean matches the drawn subject mean
    ph = small_phantom
    got = mean_region_value(ph.pdff_map, BinaryMask(ph.liver_mask))
    assert got == pytest.approx(ph.liver_pdff_mean, abs=1.0)


def test_regression_exact_line():
    xs = np.array([0.0, 1.0, 2.0, 3.0])
    slope, intercept, r2 = regression_r2(xs, 2 * xs + 1)
    assert (slope, intercept, r2) == (pytest.approx(2.0), pytest.approx(1.0), pytest.approx(1.0))


def test_regression_null_case(rng):
    xs = rng.normal(size=100_000)
    ys = rng.normal(size=100_000)
    _, _, r2 = regression_r2(xs, ys)
    assert r2 < 0.01


def test_regression_errors():
    with pytest.raises(MetricsError):
        regression_r2([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(MetricsError):
        regression_r2([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_metrics_match_naive_reference(seed):
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    truth = rng.normal(size=shape)
    truth[rng.uniform(size=shape) < 0.2] = 0.0
    pred = rng.normal(size=shape)
    mask = rng.uniform(size=shape) < 0.7
    if (truth != 0).any():
        got = masked_mae(pred, truth)
        assert got == pytest.approx(naive_masked_mae(pred, truth), rel=1e-12)
    if ((truth != 0) & mask).any():
        got = masked_mae(pred, truth, BinaryMask(mask))
        assert got == pytest.approx(naive_masked_mae(pred, truth, mask), rel=1e-12)
    xs = rng.normal(size=8)
    ys = rng.normal(size=8)
    got = regression_r2(xs, ys)
    ref = naive_regression(list(xs), list(ys))
    for g, r in zip(got, ref):
        assert g == pytest.approx(r, rel=1e-9)


@given(
    scale_x=st.floats(0.1, 10.0),
    off_x=st.floats(-5.0, 5.0),
    scale_y=st.floats(0.1, 10.0),
    off_y=st.floats(-5.0, 5.0),
)
@settings(max_examples=50, deadline=None)
def test_r2_affine_invariance(scale_x, off_x, scale_y, off_y):
    rng = np.random.default_rng(0)
    xs = rng.normal(size=50)
    ys = 0.5 * xs + rng.normal(size=50)
    _, _, r2a = regression_r2(xs, ys)
    _, _, r2b = regression_r2(scale_x * xs + off_x, scale_y * ys + off_y)
    assert r2a == pytest.approx(r2b, rel=1e-9, abs=1e-12)


def _sample(sid, truth_p, pred_maps, mask):
    return {
        "sample_id": sid,
        "truth": {"pdff": truth_p, "r2star": truth_p * 10},
        "mask": mask,
        "pred": pred_maps,
    }


def test_build_report_self_comparison(rng, tmp_path):
    truth = rng.uniform(1, 40, size=(6, 6))
    mask = BinaryMask(rng.uniform(size=(6, 6)) < 0.5)
    samples = [
        _sample(f"S{i}", truth + i, {"target": {"pdff": truth + i, "r2star": (truth + i) * 10}}, mask)
        for i in range(4)
    ]
    report = build_report(samples, ["target"], out_dir=tmp_path)
    assert report.mae["target"]["pdff_mae"] == 0.0
    assert report.mae["target"]["liver_r2star_mae"] == 0.0
    assert report.regression["target"]["pdff"]["r_squared"] == pytest.approx(1.0)
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "scatter.csv").exists()


def test_build_report_hand_arithmetic():
    truth = np.array([[2.0, 0.0], [4.0, 6.0]])
    pred = np.array([[3.0, 9.0], [2.0, 6.0]])
    mask = BinaryMask(np.array([[True, False], [True, False]]))
    samples = [
        {
            "sample_id": "S0",
            "truth": {"pdff": truth, "r2star": truth},
            "mask": mask,
            "pred": {"m": {"pdff": pred, "r2star": pred}},
        }
    ] * 1
    report = build_report(samples, ["m"])
    # slice: zeros excluded -> |3-2|,|2-4|,|6-6| = (1+2+0)/3
    assert report.mae["m"]["pdff_mae"] == pytest.approx(1.0)
    # liver: truth nonzero and mask -> voxels (0,0) and (1,0)
    assert report.mae["m"]["liver_pdff_mae"] == pytest.approx(1.5)
    # single sample's report equals its per-sample metrics exactly
    assert report.n_samples == 1


def test_build_report_deterministic_outputs(rng, tmp_path):
    truth = rng.uniform(1, 40, size=(5, 5))
    mask = BinaryMask(np.ones((5, 5), bool))
    samples = [
        _sample(
            f"S{i}",
            truth,
            {"m": {"pdff": truth + rng.normal(size=(5, 5)), "r2star": truth * 10}},
            mask,
        )
        for i in range(3)
    ]
    report = build_report(samples, ["m"])
    write_report_files(report, tmp_path / "a")
    write_report_files(report, tmp_path / "b")
    assert (tmp_path / "a/report.csv").read_bytes() == (tmp_path / "b/report.csv").read_bytes()
    assert (tmp_path / "a/scatter.csv").read_bytes() == (tmp_path / "b/scatter.csv").read_bytes()
