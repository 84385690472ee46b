"""
Quality Metrics
PSNR, SSIM, frequency-domain profiles and evaluation reports
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import ndimage

from src.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5, an 11-tap window
SSIM_RADIUS = 5

REPORT_COLUMNS = ["name", "frames", "psnr_mean", "ssim_mean", "runtime_s"]


def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _frame_psnr(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / mse))


def psnr_per_frame(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> List[float]:
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        return [_frame_psnr(a, b, peak)]
    return [_frame_psnr(a[..., t], b[..., t], peak) for t in range(a.shape[-1])]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """
    Peak signal-to-noise ratio in dB

    2D inputs give the frame PSNR; H×W×T inputs give the mean of per-frame
    PSNRs. Identical inputs give +inf.
    """
    if not peak > 0:
        raise ConfigError(f"peak must be > 0, got {peak}")
    return float(np.mean(psnr_per_frame(a, b, peak)))


def _gaussian(x: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")


def _frame_ssim(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    if min(a.shape) < 2 * SSIM_RADIUS + 1:
        raise ConfigError(f"frame {a.shape} is smaller than the {2 * SSIM_RADIUS + 1}-tap SSIM window")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _gaussian(a), _gaussian(b)
    var_a = _gaussian(a * a) - mu_a * mu_a
    var_b = _gaussian(b * b) - mu_b * mu_b
    cov = _gaussian(a * b) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    ssim_map = numerator / denominator
    # Only pixels whose window lies fully inside the frame
    inner = ssim_map[SSIM_RADIUS:-SSIM_RADIUS, SSIM_RADIUS:-SSIM_RADIUS]
    return float(inner.mean())


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Structural similarity with an 11-tap sigma=1.5 Gaussian window, averaged over frames"""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        return _frame_ssim(a, b, peak)
    return float(np.mean([_frame_ssim(a[..., t], b[..., t], peak) for t in range(a.shape[-1])]))


@dataclass
class SpectrumProfile:
    """Radially averaged magnitude of the unnormalized 2D DFT (DC = sum of the frame)"""

    radii: np.ndarray
    profile: np.ndarray
    magnitude: np.ndarray

    @property
    def peak_bin(self) -> int:
        return int(self.radii[1:][np.argmax(self.profile[1:])]) if len(self.radii) > 1 else 0


def spectrum_profile(frame: np.ndarray) -> SpectrumProfile:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise DimensionError(f"spectrum_profile expects a 2D frame, got {frame.shape}")
    magnitude = np.abs(np.fft.fft2(frame))
    ky = np.fft.fftfreq(frame.shape[0]) * frame.shape[0]
    kx = np.fft.fftfreq(frame.shape[1]) * frame.shape[1]
    radius = np.rint(np.hypot(ky[:, None], kx[None, :])).astype(int)
    counts = np.bincount(radius.ravel())
    sums = np.bincount(radius.ravel(), weights=magnitude.ravel())
    present = counts > 0
    radii = np.nonzero(present)[0]
    return SpectrumProfile(radii=radii, profile=sums[present] / counts[present], magnitude=magnitude)


@dataclass
class EvalReport:
    per_frame_psnr: List[float]
    psnr_mean: float
    ssim_mean: float
    runtime_s: float = 0.0
    op_counts: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return len(self.per_frame_psnr)

    def to_row(self, name: str) -> Dict[str, Union[str, int, float]]:
        return {
            "name": name,
            "frames": self.frames,
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "runtime_s": self.runtime_s,
        }

    def to_frame(self, name: str) -> pd.DataFrame:
        return reports_frame([self.to_row(name)])


def evaluate(
    recon: np.ndarray,
    truth: np.ndarray,
    runtime_s: float = 0.0,
    op_counts: Optional[Dict[str, Tuple[int, int]]] = None,
) -> EvalReport:
    """Per-frame PSNR plus mean PSNR/SSIM of a reconstruction"""
    per_frame = psnr_per_frame(recon, truth)
    try:
        ssim_mean = ssim(recon, truth)
    except ConfigError:
        logger.warning("frames too small for SSIM; reporting NaN")
        ssim_mean = float("nan")
    return EvalReport(
        per_frame_psnr=per_frame,
        psnr_mean=float(np.mean(per_frame)),
        ssim_mean=ssim_mean,
        runtime_s=runtime_s,
        op_counts=dict(op_counts or {}),
    )


def reports_frame(rows: Sequence[Dict[str, Union[str, int, float]]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=REPORT_COLUMNS)


def write_reports_csv(reports: Dict[str, EvalReport], path: Union[str, Path]) -> Path:
    """CSV with the fixed column order name,frames,psnr_mean,ssim_mean,runtime_s"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reports_frame([report.to_row(name) for name, report in reports.items()]).to_csv(path, index=False)
    return path
