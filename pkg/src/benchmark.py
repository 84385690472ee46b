"""
Attention Complexity Benchmark
Analytic vs instrumented MAC counts for full, blocked dense and dilated sparse
attention, with wall-clock timing of the BDA/DSA blocks
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import CtmConfig
from src.ctm_network import ATTENTION_MODES, BdaBlock, DsaBlock, count_ops
from src.errors import DimensionError
from src.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

BENCH_COLUMNS = [
    "name", "mode", "width", "height", "frames", "channels",
    "window", "group", "analytic", "measured", "match", "runtime_s",
]


@dataclass(frozen=True)
class BenchCase:
    width: int
    height: int
    frames: int
    channels: int
    window_size: int
    window_frames: int
    group_size: int
    group_frames: int
    heads: int = 2

    @property
    def name(self) -> str:
        return f"{self.width}x{self.height}x{self.frames}-C{self.channels}"

    def config(self) -> CtmConfig:
        return CtmConfig(
            channels=self.channels,
            heads=self.heads,
            window_size=self.window_size,
            window_frames=self.window_frames,
            group_size=self.group_size,
            group_frames=self.group_frames,
        )


DEFAULT_GRID = (
    BenchCase(2, 2, 2, 4, 2, 2, 2, 2),
    BenchCase(4, 4, 2, 4, 2, 2, 2, 2),
    BenchCase(4, 4, 4, 8, 2, 2, 2, 2),
    BenchCase(8, 8, 4, 8, 4, 2, 4, 2),
    BenchCase(8, 8, 4, 8, 4, 2, 2, 2),
    BenchCase(8, 8, 8, 8, 4, 4, 4, 4),
    BenchCase(8, 8, 8, 8, 4, 4, 4, 2),
    BenchCase(8, 8, 8, 4, 2, 2, 4, 4),
    BenchCase(16, 16, 4, 8, 4, 2, 4, 2),
    BenchCase(16, 8, 4, 8, 4, 2, 8, 4),
    BenchCase(8, 16, 2, 8, 4, 2, 4, 2),
    BenchCase(12, 12, 4, 8, 4, 2, 6, 2),
)


def time_block(case: BenchCase, mode: str, repeats: int = 1, seed: int = 0) -> float:
    """Mean wall-clock seconds of one BDA or DSA block forward"""
    rng = np.random.default_rng(seed)
    cfg = case.config()
    block = BdaBlock(cfg, rng) if mode == "BDA" else DsaBlock(cfg, rng)
    volume = Tensor(rng.normal(size=(case.channels, case.frames, case.height, case.width)))
    with no_grad():
        start = time.perf_counter()
        for _ in range(repeats):
            block(volume)
    return (time.perf_counter() - start) / repeats


def bench_attention(
    grid: Iterable[BenchCase] = DEFAULT_GRID,
    modes: Iterable[str] = ATTENTION_MODES,
    repeats: int = 1,
    timing: bool = True,
) -> pd.DataFrame:
    """
    One row per (case, mode) with analytic and measured MAC counts

    Cases whose extents are not multiples of a window/group are skipped for
    that mode with a warning.
    """
    rows: List[Dict] = []
    for case in grid:
        cfg = case.config()
        for mode in modes:
            try:
                ops = count_ops(cfg, case.width, case.height, case.frames, case.channels, mode)
            except DimensionError as e:
                logger.warning("skipping %s %s: %s", case.name, mode, e)
                continue
            runtime: Optional[float] = None
            if timing and mode in ("BDA", "DSA"):
                runtime = time_block(case, mode, repeats)
            rows.append({
                "name": case.name,
                "mode": mode,
                "width": case.width,
                "height": case.height,
                "frames": case.frames,
                "channels": case.channels,
                "window": f"{case.window_size}x{case.window_size}x{case.window_frames}",
                "group": f"{case.group_size}x{case.group_size}x{case.group_frames}",
                "analytic": ops.analytic,
                "measured": ops.measured,
                "match": ops.match,
                "runtime_s": np.nan if runtime is None else runtime,
            })
            if not ops.match:
                logger.error("%s %s: analytic %d != measured %d", case.name, mode, ops.analytic, ops.measured)
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def model_op_counts(
    cfg: CtmConfig,
    width: int,
    height: int,
    frames: int,
    modes: Iterable[str] = ("BDA", "DSA"),
) -> Dict[str, Tuple[int, int]]:
    """
    mode -> (analytic, measured) attention MACs of one layer of a model at
    this extent; modes whose window/group does not divide it are left out
    """
    counts = {}
    for mode in modes:
        try:
            ops = count_ops(cfg, width, height, frames, cfg.channels, mode)
        except DimensionError as e:
            logger.debug("no %s count at %dx%dx%d: %s", mode, width, height, frames, e)
            continue
        counts[mode] = (ops.analytic, ops.measured)
    return counts


def scaled(case: BenchCase, factor: int) -> BenchCase:
    """Same windows and groups on a frame `factor` times taller"""
    return replace(case, height=case.height * factor)
