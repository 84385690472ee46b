import numpy as np
import pytest

from config.settings import CtmConfig
from src.benchmark import BENCH_COLUMNS, DEFAULT_GRID, BenchCase, bench_attention, model_op_counts, scaled, time_block
from src.ctm_network import analytic_ops


def test_default_grid_counts_match():
    frame = bench_attention(DEFAULT_GRID, timing=False)
    assert list(frame.columns) == BENCH_COLUMNS
    assert len(DEFAULT_GRID) == 12
    assert len(frame) == 3 * len(DEFAULT_GRID)
    assert frame["match"].all()
    assert frame["runtime_s"].isna().all()


def test_non_divisible_case_is_skipped_per_mode():
    case = BenchCase(6, 6, 2, 4, 4, 2, 2, 2)
    frame = bench_attention([case], timing=False)
    assert list(frame["mode"]) == ["FSA", "DSA"]


def test_timing_only_for_local_modes():
    frame = bench_attention([BenchCase(4, 4, 2, 4, 2, 2, 2, 2)], repeats=2)
    timed = frame.set_index("mode")["runtime_s"]
    assert np.isnan(timed["FSA"])
    assert timed["BDA"] >= 0.0 and timed["DSA"] >= 0.0


def test_time_block_is_positive():
    assert time_block(BenchCase(4, 4, 2, 4, 2, 2, 2, 2), "DSA") > 0.0


def test_case_name_and_config():
    case = BenchCase(16, 8, 4, 8, 4, 2, 8, 4)
    assert case.name == "16x8x4-C8"
    cfg = case.config().validate()
    assert (cfg.window_size, cfg.group_frames, cfg.heads) == (4, 4, 2)


@pytest.mark.parametrize("factor", [2, 4])
def test_local_attention_scales_linearly(factor):
    base = BenchCase(8, 8, 2, 4, 2, 2, 2, 2)
    frame = bench_attention([base, scaled(base, factor)], modes=["BDA", "DSA", "FSA"], timing=False)
    small, large = (frame[frame["height"] == h].set_index("mode")["measured"] for h in (8, 8 * factor))
    for mode in ("BDA", "DSA"):
        assert large[mode] == factor * small[mode]
    assert large["FSA"] > factor * small["FSA"]


def test_windowed_cost_below_full_attention():
    case = BenchCase(16, 16, 4, 8, 4, 2, 4, 2)
    cfg = case.config()
    fsa = analytic_ops("FSA", 16, 16, 4, 8, cfg)
    assert analytic_ops("BDA", 16, 16, 4, 8, cfg) < fsa
    assert analytic_ops("DSA", 16, 16, 4, 8, cfg) < fsa


def test_model_op_counts_at_sample_extent():
    cfg = CtmConfig()
    counts = model_op_counts(cfg, 8, 8, 4)
    assert set(counts) == {"BDA", "DSA"}
    for mode, (analytic, measured) in counts.items():
        assert analytic == measured == analytic_ops(mode, 8, 8, 4, cfg.channels, cfg)


def test_model_op_counts_leave_out_non_divisible_modes():
    assert model_op_counts(CtmConfig(), 6, 6, 4) == {}
    assert set(model_op_counts(CtmConfig(group_size=2), 6, 6, 4)) == {"DSA"}
