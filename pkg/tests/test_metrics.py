import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import ConfigError, DimensionError
from src.metrics import (
    REPORT_COLUMNS,
    SSIM_K1,
    SSIM_K2,
    SSIM_RADIUS,
    SSIM_SIGMA,
    EvalReport,
    evaluate,
    psnr,
    psnr_per_frame,
    spectrum_profile,
    ssim,
    write_reports_csv,
)


# ------------------------------------------------------------------------ PSNR
def test_psnr_identical_is_inf():
    a = np.random.default_rng(0).random((4, 4, 2))
    assert psnr(a, a) == float("inf")


@pytest.mark.parametrize("diff, expected", [(0.1, 20.0), (1.0, 0.0)])
def test_psnr_constant_difference(diff, expected):
    a = np.zeros((4, 4, 3))
    assert psnr(a, a + diff) == pytest.approx(expected, abs=1e-12)


def test_psnr_is_mean_of_frames():
    a = np.zeros((4, 4, 2))
    b = a.copy()
    b[..., 0] += 0.1
    b[..., 1] += 0.01
    assert psnr_per_frame(a, b) == pytest.approx([20.0, 40.0])
    assert psnr(a, b) == pytest.approx(30.0)


def test_psnr_decreases_with_noise_amplitude():
    rng = np.random.default_rng(1)
    ref = rng.random((16, 16, 2))
    noise = rng.normal(size=ref.shape)
    values = [psnr(ref, ref + amp * noise) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_errors():
    with pytest.raises(DimensionError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ConfigError):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)), peak=0.0)


# ------------------------------------------------------------------------ SSIM
def scalar_loop_ssim(a, b, peak=1.0):
    offsets = np.arange(-SSIM_RADIUS, SSIM_RADIUS + 1)
    k1 = np.exp(-0.5 * offsets ** 2 / SSIM_SIGMA ** 2)
    k1 /= k1.sum()
    window = np.outer(k1, k1)
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    values = []
    for i in range(SSIM_RADIUS, a.shape[0] - SSIM_RADIUS):
        for j in range(SSIM_RADIUS, a.shape[1] - SSIM_RADIUS):
            pa = a[i - SSIM_RADIUS:i + SSIM_RADIUS + 1, j - SSIM_RADIUS:j + SSIM_RADIUS + 1]
            pb = b[i - SSIM_RADIUS:i + SSIM_RADIUS + 1, j - SSIM_RADIUS:j + SSIM_RADIUS + 1]
            mu_a, mu_b = np.sum(window * pa), np.sum(window * pb)
            var_a = np.sum(window * pa * pa) - mu_a ** 2
            var_b = np.sum(window * pb * pb) - mu_b ** 2
            cov = np.sum(window * pa * pb) - mu_a * mu_b
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def test_ssim_identical_is_one():
    a = np.random.default_rng(2).random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_scalar_loop_on_shift():
    a = np.random.default_rng(3).random((16, 16))
    assert ssim(a, a + 0.5) == pytest.approx(scalar_loop_ssim(a, a + 0.5), abs=1e-10)


def test_ssim_averages_frames():
    rng = np.random.default_rng(4)
    a, b = rng.random((12, 12, 2)), rng.random((12, 12, 2))
    expected = np.mean([ssim(a[..., t], b[..., t]) for t in range(2)])
    assert ssim(a, b) == pytest.approx(expected)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((11, 11)), rng.random((11, 11))
    value = ssim(a, b)
    assert value == ssim(b, a)
    assert -1.0 <= value <= 1.0


def test_ssim_rejects_small_frames():
    with pytest.raises(ConfigError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# -------------------------------------------------------------------- spectrum
def test_constant_frame_energy_in_dc():
    profile = spectrum_profile(np.full((8, 8), 0.5))
    assert profile.profile[0] == pytest.approx(0.5 * 64)
    np.testing.assert_allclose(profile.profile[1:], 0.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_sinusoid_peaks_at_its_frequency(k):
    cols = np.arange(16)
    frame = np.tile(np.cos(2 * np.pi * k * cols / 16), (16, 1))
    assert spectrum_profile(frame).peak_bin == k


def test_parseval_identity():
    frame = np.random.default_rng(5).normal(size=(12, 10))
    profile = spectrum_profile(frame)
    assert np.sum(profile.magnitude ** 2) / frame.size == pytest.approx(np.sum(frame ** 2), rel=1e-8)


def test_spectrum_needs_2d():
    with pytest.raises(DimensionError):
        spectrum_profile(np.zeros((2, 2, 2)))


# --------------------------------------------------------------------- reports
def test_evaluate_report_means():
    rng = np.random.default_rng(6)
    truth = rng.random((12, 12, 3))
    recon = truth + 0.01 * rng.normal(size=truth.shape)
    report = evaluate(recon, truth, runtime_s=1.5, op_counts={"BDA": (10, 10)})
    assert report.frames == 3
    assert report.psnr_mean == pytest.approx(np.mean(report.per_frame_psnr))
    assert 0.0 < report.ssim_mean <= 1.0
    assert report.op_counts == {"BDA": (10, 10)}


def test_evaluate_small_frames_reports_nan_ssim():
    a = np.zeros((4, 4, 2))
    report = evaluate(a + 0.1, a)
    assert np.isnan(report.ssim_mean)
    assert report.psnr_mean == pytest.approx(20.0)


def test_report_csv_column_order(tmp_path):
    reports = {
        "0000": EvalReport([20.0, 30.0], 25.0, 0.9, 0.5),
        "0001": EvalReport([10.0], 10.0, float("nan"), 0.1),
    }
    path = write_reports_csv(reports, tmp_path / "nested" / "report.csv")
    assert path.read_text().splitlines()[0] == ",".join(REPORT_COLUMNS)
    frame = pd.read_csv(path, dtype={"name": str})
    assert list(frame["name"]) == ["0000", "0001"]
    assert list(frame["frames"]) == [2, 1]


def test_report_to_frame():
    frame = EvalReport([20.0], 20.0, 0.5).to_frame("x")
    assert list(frame.columns) == REPORT_COLUMNS
    assert frame.iloc[0]["name"] == "x"
