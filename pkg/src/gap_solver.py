"""
GAP Solver
Exact projection onto {x : Phi x = y}, anisotropic TV denoising, the GAP-TV
baseline and the unfolding loop that runs learned priors between projections
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from config.settings import GapTvConfig
from src.errors import ContractError, DomainError
from src.forward_model import (
    MaskSet,
    Measurement,
    Values,
    VideoCube,
    normalized_measurement,
    phi_adjoint,
    phi_apply,
    reference_frames,
)
from src.metrics import psnr

logger = logging.getLogger(__name__)

Prior = Callable[[Values, Optional[Values]], Values]

TV_STEP = 0.125  # 1 / ||D||^2 for 2D forward differences


@dataclass
class PhaseState:
    """Projection output x and prior output v of phase j"""

    x: Values
    v: Values
    phase_index: int


@dataclass
class GapTvResult:
    cube: VideoCube
    history: List[Dict[str, float]] = field(default_factory=list)
    runtime_s: float = 0.0


def _measurement_values(y: Union[Measurement, np.ndarray]) -> np.ndarray:
    return y.values if isinstance(y, Measurement) else np.asarray(y)


def _checked_r(m: MaskSet) -> np.ndarray:
    r = m.r
    dead = np.argwhere(r == 0)
    if len(dead):
        row, col = dead[0]
        raise DomainError(f"R is zero at pixel (row={row}, col={col}); projection undefined")
    return r


def gap_project(v: Values, y: Union[Measurement, np.ndarray], m: MaskSet) -> Values:
    """
    Euclidean projection of v onto {x : Phi x = y}

    x = v + Phi^T (Phi Phi^T)^{-1} (y - Phi v), with Phi Phi^T = diag(R) so the
    inverse is a pixelwise division. Affine in v, hence differentiable when v
    is a Tensor.
    """
    r = _checked_r(m)
    residual = _measurement_values(y) - phi_apply(v, m)
    return v + phi_adjoint(residual / r, m)


def total_variation(v: np.ndarray) -> float:
    """Anisotropic spatial TV summed over frames"""
    v = np.asarray(v)
    return float(np.abs(np.diff(v, axis=0)).sum() + np.abs(np.diff(v, axis=1)).sum())


def _divergence_adjoint(p_rows: np.ndarray, p_cols: np.ndarray) -> np.ndarray:
    """D^T p for forward differences along rows (axis 0) and columns (axis 1)"""
    zero_row = np.zeros_like(p_rows[:1])
    zero_col = np.zeros_like(p_cols[:, :1])
    rows = np.concatenate([zero_row, p_rows], axis=0) - np.concatenate([p_rows, zero_row], axis=0)
    cols = np.concatenate([zero_col, p_cols], axis=1) - np.concatenate([p_cols, zero_col], axis=1)
    return rows + cols


def tv_denoise(v: np.ndarray, weight: float, iters: int) -> np.ndarray:
    """
    Anisotropic TV denoising per frame by iterative clipping of the dual variable

    Solves min_u 0.5 ||u - v||^2 + weight * (|D_rows u|_1 + |D_cols u|_1) with
    projected gradient on the dual p in [-1, 1]; u = v - weight * D^T p.

    Args:
        v: H×W×T (or H×W) values
        weight: TV weight (> 0)
        iters: dual iterations (>= 1)
    """
    if not weight > 0:
        raise DomainError(f"tv weight must be > 0, got {weight}")
    if iters < 1:
        raise DomainError(f"tv iterations must be >= 1, got {iters}")
    v = np.asarray(v, dtype=np.float64)
    p_rows = np.zeros((v.shape[0] - 1,) + v.shape[1:])
    p_cols = np.zeros((v.shape[0], v.shape[1] - 1) + v.shape[2:])
    u = v
    scale = TV_STEP / weight
    for _ in range(iters):
        p_rows = np.clip(p_rows + scale * np.diff(u, axis=0), -1.0, 1.0)
        p_cols = np.clip(p_cols + scale * np.diff(u, axis=1), -1.0, 1.0)
        u = v - weight * _divergence_adjoint(p_rows, p_cols)
    return u


def initial_estimate(y: Union[Measurement, np.ndarray], m: MaskSet, kind: str = "rf") -> np.ndarray:
    """Starting point v^(0): 'rf' reference frames, 'nm' normalized measurement per frame, 'adjoint' Phi^T y"""
    values = _measurement_values(y)
    if kind == "adjoint":
        return phi_adjoint(values, m)
    nm = normalized_measurement(values, m)
    if kind == "nm":
        return np.repeat(nm[..., None], m.shape[-1], axis=-1)
    if kind == "rf":
        return reference_frames(nm, m)
    raise ContractError(f"unknown initial estimate: {kind}")


def gap_tv_reconstruct(
    y: Union[Measurement, np.ndarray],
    m: MaskSet,
    cfg: Optional[GapTvConfig] = None,
    truth: Optional[VideoCube] = None,
) -> GapTvResult:
    """
    Classical GAP-TV: alternate exact projection and TV denoising

    Args:
        y: measurement
        m: masks
        cfg: iteration counts, TV weight, clip range, acceleration, init
        truth: optional ground truth for the per-iteration PSNR history

    Returns:
        GapTvResult whose cube is the last projection output
    """
    cfg = (cfg or GapTvConfig()).validate()
    start = time.perf_counter()
    values = _measurement_values(y)
    r = _checked_r(m)
    v = initial_estimate(values, m, cfg.init)
    accumulated = np.zeros_like(values)
    history = []

    progress = tqdm(range(cfg.outer_iters), desc="GAP-TV", disable=not logger.isEnabledFor(logging.INFO), leave=False)
    for it in progress:
        if cfg.accelerate:
            projected = phi_apply(v, m)
            accumulated = accumulated + (values - projected)
            x = v + phi_adjoint((accumulated - projected) / r, m)
        else:
            x = gap_project(v, values, m)
        fidelity = float(np.max(np.abs(phi_apply(x, m) - values)))
        v = np.clip(tv_denoise(x, cfg.tv_weight, cfg.tv_iters), cfg.clip_min, cfg.clip_max)

        entry = {"iteration": it + 1, "fidelity": fidelity}
        if truth is not None:
            entry["psnr"] = psnr(truth.values, x)
            progress.set_postfix(psnr=f"{entry['psnr']:.2f}")
        history.append(entry)

    runtime = time.perf_counter() - start
    logger.info("GAP-TV finished %d iterations in %.2fs", cfg.outer_iters, runtime)
    return GapTvResult(VideoCube(x), history, runtime)


def unfold_run(
    y: Union[Measurement, np.ndarray],
    m: MaskSet,
    phases: Sequence[Prior],
    um_features: Optional[Sequence[Optional[Values]]] = None,
    v0: Optional[Values] = None,
    states: Optional[List[PhaseState]] = None,
) -> Values:
    """
    Deep-unfolding loop: x^(j) = P(v^(j-1)); v^(j) = Theta_j([x^(j), Gamma_j])

    Args:
        y: measurement
        m: masks
        phases: one prior per phase, called as phase(x, gamma)
        um_features: per-phase auxiliary stacks Gamma_j (None entries allowed)
        v0: starting estimate; defaults to the reference frames
        states: when given, receives one PhaseState per phase

    Returns:
        v^(J), same H×W×T shape as the masks
    """
    if not phases:
        raise ContractError("unfold_run needs at least one phase")
    if um_features is not None and len(um_features) != len(phases):
        raise ContractError(f"{len(um_features)} auxiliary stacks for {len(phases)} phases")
    v = initial_estimate(y, m, "rf") if v0 is None else v0
    for j, phase in enumerate(phases):
        x = gap_project(v, y, m)
        gamma = um_features[j] if um_features is not None else None
        v = phase(x, gamma)
        if tuple(v.shape) != m.shape:
            raise ContractError(f"phase {j} returned shape {tuple(v.shape)}, expected {m.shape}")
        if states is not None:
            states.append(PhaseState(x=x, v=v, phase_index=j))
    return v
