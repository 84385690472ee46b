"""
Command-Line Interface
Dataset generation, training, reconstruction, uncertainty maps, evaluation and
the attention benchmark

Exit codes: 0 success, 1 usage error (bad flag, missing file), 2 runtime failure.
"""

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import AppSettings, GapTvConfig, build_configs, configure_logging, load_key_values
from src.benchmark import DEFAULT_GRID, BenchCase, bench_attention, model_op_counts
from src.errors import SciError
from src.forward_model import MASK_KINDS, SCENE_KINDS, Sample, augment, make_scene, simulate
from src.gap_solver import gap_tv_reconstruct
from src.metrics import EvalReport, evaluate, reports_frame, write_reports_csv
from src.sct_io import load_checkpoint, read_cube, read_dataset, save_checkpoint, sct_read, sct_write, write_dataset
from src.training import build_model, phase_sweep, train_schedule

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class CliParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers
def _report_path(out: Path, report: Optional[str]) -> Path:
    return Path(report) if report else out.with_suffix(".csv")


def _print_reports(reports: Dict[str, EvalReport]) -> None:
    frame = reports_frame([report.to_row(name) for name, report in reports.items()])
    print(frame.to_string(index=False))


def _load_configs(path: Optional[str], extra_keys: Sequence[str] = ()):
    values = load_key_values(path) if path else {}
    return build_configs(values, extra_keys=extra_keys)


# ---------------------------------------------------------------- commands
def cmd_gen_data(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    imported = None
    if args.import_raw:
        path, _, record = args.import_raw.partition(":")
        imported = read_cube(path, record or None)

    samples: List[Sample] = []
    for index in range(args.samples):
        scene_seed, mask_seed, noise_seed = (int(s) for s in rng.integers(0, 2 ** 31, size=3))
        if imported is not None:
            cube, scene = imported, "imported"
        else:
            cube, scene = make_scene(args.scene, args.w, args.h, args.t, scene_seed), args.scene
        if args.augment:
            cube = augment(cube, rng)
        samples.append(simulate(cube, args.mask_kind, mask_seed, args.noise, noise_seed, scene=scene))

    path = write_dataset(args.out, samples)
    logger.info("wrote %d sample(s) to %s", len(samples), path)
    return EXIT_OK


def cmd_reconstruct_gaptv(args: argparse.Namespace) -> int:
    _, cfg, _, _ = _load_configs(args.config)
    flags = {"outer_iters": args.outer, "tv_iters": args.tv_iters, "tv_weight": args.tv_weight,
             "accelerate": args.accelerate, "init": args.init}
    cfg = replace(cfg, **{key: value for key, value in flags.items() if value is not None}).validate()
    samples = read_dataset(args.input)
    records, reports = [], {}
    for sample in samples:
        result = gap_tv_reconstruct(sample.measurement, sample.masks, cfg)
        records.append((f"{sample.scene}/recon", result.cube.values))
        reports[sample.scene] = evaluate(result.cube.values, sample.cube.values, result.runtime_s)

    out = sct_write(args.out, records)
    write_reports_csv(reports, _report_path(out, args.report))
    _print_reports(reports)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    ctm, _, train, _ = _load_configs(args.config)
    if args.seed is not None:
        ctm.init_seed = train.seed = args.seed
    dataset = read_dataset(args.data)
    model = build_model(ctm, train)
    result = train_schedule(model, dataset, train)

    ckpt = Path(args.out_ckpt)
    curve = Path(args.curve) if args.curve else ckpt.with_suffix(".curve.csv")
    result.history.write_csv(curve)
    if result.diverged is not None:
        print(f"divergence guard fired: {result.diverged}", file=sys.stderr)
        return EXIT_FAILURE
    save_checkpoint(ckpt, model, ctm, train)
    logger.info("checkpoint %s, curve %s", ckpt, curve)
    return EXIT_OK


def cmd_reconstruct(args: argparse.Namespace) -> int:
    model, ctm, _ = load_checkpoint(args.ckpt)
    samples = read_dataset(args.input)
    records, reports = [], {}
    op_counts = {}
    for sample in samples:
        start = time.perf_counter()
        recon = model.reconstruct(sample.measurement, sample.masks, active_phases=args.phases)
        runtime = time.perf_counter() - start
        extent = (sample.cube.width, sample.cube.height, sample.cube.frames)
        if extent not in op_counts:
            op_counts[extent] = model_op_counts(ctm, *extent)
        records.append((f"{sample.scene}/recon", recon))
        reports[sample.scene] = evaluate(recon, sample.cube.values, runtime, op_counts[extent])

    out = sct_write(args.out, records)
    write_reports_csv(reports, _report_path(out, args.report))
    _print_reports(reports)
    return EXIT_OK


def cmd_uncertainty_map(args: argparse.Namespace) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    if not model.with_uncertainty:
        raise SciError(f"checkpoint {args.ckpt} has no uncertainty network")
    records = []
    for sample in read_dataset(args.input):
        um = model.uncertainty_map(sample.measurement, sample.masks)
        records.extend([
            (f"{sample.scene}/beta", um.beta),
            (f"{sample.scene}/sigma2", um.sigma2),
            (f"{sample.scene}/binarized", um.binarized.astype(np.uint8)),
        ])
        logger.info("%s: %.1f%% of pixels above mean variance", sample.scene, 100 * um.binarized.mean())
    sct_write(args.out, records)
    return EXIT_OK


def _read_grid(path: Optional[str]) -> Sequence[BenchCase]:
    if not path:
        return DEFAULT_GRID
    frame = pd.read_csv(path)
    return [BenchCase(**{key: int(value) for key, value in row.items()}) for row in frame.to_dict("records")]


def cmd_bench_attn(args: argparse.Namespace) -> int:
    frame = bench_attention(_read_grid(args.grid), repeats=args.repeats, timing=not args.no_timing)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    print(frame.to_string(index=False))
    mismatched = int((~frame["match"]).sum())
    if mismatched:
        print(f"{mismatched} row(s) where analytic != measured", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    recon = sct_read(args.recon)
    reports = {}
    for sample in read_dataset(args.truth):
        name = f"{sample.scene}/recon"
        if name not in recon:
            raise SciError(f"{args.recon} has no record {name!r}")
        reports[sample.scene] = evaluate(recon[name], sample.cube.values)
    if args.out:
        write_reports_csv(reports, args.out)
    _print_reports(reports)
    return EXIT_OK


def cmd_phase_sweep(args: argparse.Namespace) -> int:
    ctm, _, train, _ = _load_configs(args.config)
    if args.seed is not None:
        ctm.init_seed = train.seed = args.seed
    frame = phase_sweep(read_dataset(args.data), ctm, train, args.max_phases)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    print(frame.to_string(index=False))
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> CliParser:
    parser = CliParser(prog="sci_cli", description="Video snapshot compressive imaging toolkit")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ... (default from settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate masks and measurements for synthetic scenes")
    p.add_argument("--w", type=int, default=32)
    p.add_argument("--h", type=int, default=32)
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--scene", choices=SCENE_KINDS, default="moving-square")
    p.add_argument("--mask-kind", choices=MASK_KINDS, default="bernoulli-half")
    p.add_argument("--noise", type=float, default=0.0, help="measurement noise sigma")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--augment", action="store_true", help="random rotations and flips per sample")
    p.add_argument("--import-raw", metavar="PATH[:RECORD]", help="use a cube from an SCT file instead of a scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_data, inputs=())

    p = sub.add_parser("reconstruct-gaptv", help="classical GAP-TV baseline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", help="key=value config file; gaptv.* keys apply, flags override them")
    p.add_argument("--lambda", dest="tv_weight", type=float, default=None,
                   help=f"TV weight (default {GapTvConfig.tv_weight})")
    p.add_argument("--outer", type=int, default=None, help=f"outer iterations (default {GapTvConfig.outer_iters})")
    p.add_argument("--tv-iters", type=int, default=None, help=f"TV iterations (default {GapTvConfig.tv_iters})")
    p.add_argument("--init", choices=("nm", "rf", "adjoint"), default=None)
    p.add_argument("--accelerate", action="store_true", default=None)
    p.add_argument("--report", help="report CSV (default: <out>.csv)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_reconstruct_gaptv, inputs=("input", "config"))

    p = sub.add_parser("train", help="staged training of the unfolding model")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--curve", help="training curve CSV (default: <ckpt>.curve.csv)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_train, inputs=("config", "data"))

    p = sub.add_parser("reconstruct", help="reconstruct with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--phases", type=int, default=None, help="run only the first N phases")
    p.add_argument("--report", help="report CSV (default: <out>.csv)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_reconstruct, inputs=("ckpt", "input"))

    p = sub.add_parser("uncertainty-map", help="beta, sigma2 and binarized uncertainty maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_uncertainty_map, inputs=("ckpt", "input"))

    p = sub.add_parser("bench-attn", help="attention MAC counts and timings")
    p.add_argument("--grid", help="CSV of cases (width,height,frames,channels,window_size,...)")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_bench_attn, inputs=("grid",))

    p = sub.add_parser("eval", help="score reconstructions against a dataset")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="report CSV")
    p.set_defaults(handler=cmd_eval, inputs=("recon", "truth"))

    p = sub.add_parser("phase-sweep", help="train and score models with 1..N phases")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--max-phases", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_phase_sweep, inputs=("config", "data"))
    return parser


def _missing_inputs(args: argparse.Namespace) -> List[str]:
    missing = []
    for attr in args.inputs:
        value = getattr(args, attr, None)
        if value and not Path(value).exists():
            missing.append(value)
    if getattr(args, "ckpt", None) and Path(args.ckpt).exists() and not Path(f"{args.ckpt}.cfg").exists():
        missing.append(f"{args.ckpt}.cfg")
    if getattr(args, "import_raw", None):
        raw = args.import_raw.partition(":")[0]
        if not Path(raw).exists():
            missing.append(raw)
    return missing


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    settings = AppSettings(create_dirs=False)
    configure_logging(args.log_level or settings.LOG_LEVEL)
    settings.apply()

    missing = _missing_inputs(args)
    if missing:
        print(f"{parser.prog} {args.command}: error: file not found: {', '.join(missing)}", file=sys.stderr)
        return EXIT_USAGE

    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (SciError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"{parser.prog} {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
