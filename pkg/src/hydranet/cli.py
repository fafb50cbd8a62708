"""Operator entry point wiring the pipeline end to end.

Subcommands: tensorize, train, forecast, evaluate, report. Exit codes: 0 on
success, 2 on validation or configuration errors, 3 on month misalignment.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_run_config, schema_help
from .evaluation import EvalReport, METRIC_NAMES, RegionMask, TASKS, evaluate_forecast, no_change_baseline
from .forecasting import forecast_posterior, read_cube, summarize, write_cube
from .ingest import (
    GridSpec,
    ValidationError,
    VolumeCorruptionError,
    VolumeFormatError,
    VolumeMetadataError,
    ZStackVolume,
    build_volume,
    deserialize_volume,
    partition,
    read_events,
    serialize_volume,
)
from .plots import save_metric_plots
from .synthetic import KINDS, SynthSpec, generate_events
from .training import fit

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISALIGNED = 3

_INPUT_ERRORS = (
    ValidationError,
    ConfigError,
    CheckpointError,
    VolumeFormatError,
    VolumeCorruptionError,
    VolumeMetadataError,
    FileNotFoundError,
    IsADirectoryError,
)


def _fail(message: str, code: int = EXIT_VALIDATION) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _grid_from_args(args) -> GridSpec:
    year, _, month = args.month0.partition("-")
    return GridSpec(
        height=args.height,
        width=args.width,
        cell_size_deg=args.cell_size,
        origin_lat=args.origin_lat,
        origin_lon=args.origin_lon,
        month0=(int(year), int(month)),
        row_order=args.row_order,
    )


def _print_volume_summary(volume: ZStackVolume) -> None:
    t, c, h, w = volume.data.shape
    print(f"volume shape: [{t} months x {c} channels x {h} x {w}]")
    if t:
        print(f"months: {volume.month_ids[0]}..{volume.month_ids[-1]}")
        for i, name in enumerate(volume.channel_names):
            prevalence = float((volume.data[:, i] > 0).mean())
            print(f"prevalence {name}: {prevalence:.6f}")


def cmd_tensorize(args) -> int:
    grid = _grid_from_args(args)
    if args.synthetic is not None:
        spec = SynthSpec(
            kind=args.synthetic,
            height=args.height,
            width=args.width,
            months=args.months,
            seed=args.seed,
            blob_size=args.blob_size,
            blob_fatalities=args.blob_fatalities,
            persist_prob=args.persist_prob,
            ignite_prob=args.ignite_prob,
            init_prob=args.init_prob,
            fatality_mean=args.fatality_mean,
            hotspot_count=args.hotspot_count,
            hotspot_mean=args.hotspot_mean,
        )
        events = generate_events(spec)
        months = (0, args.months - 1)
    else:
        if args.events is None:
            return _fail("one of --events or --synthetic is required")
        events = read_events(args.events)
        if not events and (args.first_month is None or args.last_month is None):
            return _fail("empty event file needs explicit --first-month/--last-month")
        first = args.first_month if args.first_month is not None else min(e.month_id for e in events)
        last = args.last_month if args.last_month is not None else max(e.month_id for e in events)
        months = (first, last)
    volume = build_volume(events, grid, months)
    serialize_volume(volume, args.out)
    _print_volume_summary(volume)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = []
    if args.seed is not None:
        overrides.append(("train", "seed", str(args.seed)))
    config = load_run_config(args.config, overrides=overrides)
    volume = deserialize_volume(args.volume)
    scheme = config.partition_for(volume.month_ids)
    train_volume, test_volume = partition(volume, scheme)
    print(
        f"partition {scheme.name}: train {train_volume.months} months, "
        f"test {test_volume.months} months"
    )
    ckpt = fit(
        train_volume,
        config.model,
        config.loss,
        config.train,
        args.out,
        schedule=config.schedule,
        resume=args.resume,
        extras={"partition": scheme.name, "test_months": scheme.test_months},
    )
    print(f"checkpoint: {ckpt}")
    print(f"train log: {Path(args.out) / 'train_log.jsonl'}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    volume = deserialize_volume(args.volume)
    span = ckpt.extras.get("train_months")
    if span is not None:
        observed = volume.select_months(int(span[0]), int(span[1]))
    else:
        observed = volume
    mode = "deterministic" if args.deterministic else "mc_inference"
    cube = forecast_posterior(
        model, observed, horizon=args.horizon, n_samples=args.samples, seed=args.seed, mode=mode
    )
    write_cube(cube, args.out)
    summary = summarize(cube, tuple(float(q) for q in args.quantiles.split(",")))
    summary_path = args.summary or str(args.out) + ".summary.npz"
    np.savez(
        summary_path,
        mean=summary.mean,
        std=summary.std,
        quantile_levels=np.array(sorted(summary.quantiles)),
        quantile_maps=np.stack([summary.quantiles[q] for q in sorted(summary.quantiles)]),
        first_forecast_month_id=np.array(summary.first_forecast_month_id),
        head_names=np.array(summary.head_names),
    )
    print(f"cube: {args.out} (samples={cube.samples.shape[0]}, horizon={cube.samples.shape[1]})")
    print(f"summary: {summary_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cube = read_cube(args.forecast)
    truth_full = deserialize_volume(args.truth)
    first = cube.first_forecast_month_id
    last = first + cube.samples.shape[1] - 1
    have = set(truth_full.month_ids)
    needed = set(range(first - 1, last + 1))
    if not needed.issubset(have):
        missing = sorted(needed - have)
        return _fail(
            f"truth volume lacks months {missing} required to score forecast "
            f"{first}..{last} (the month before the forecast feeds the no-change baseline)",
            EXIT_MISALIGNED,
        )
    truth = truth_full.select_months(first, last)
    observed_tail = truth_full.select_months(first - 1, first - 1)
    baseline = no_change_baseline(observed_tail, cube.samples.shape[1])
    mask = RegionMask.from_file(args.mask, truth.grid) if args.mask else None
    summary = summarize(cube)
    report = evaluate_forecast(summary, truth, mask, baseline)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.csv"
    report.to_csv(report_path)
    plot_paths = save_metric_plots(report, out_dir)
    print(f"scored {report.masked_cells} cells per month (mask: {report.mask_name})")
    _print_means({"this run": report})
    print(f"report: {report_path}")
    for p in plot_paths:
        print(f"plot: {p}")
    return EXIT_OK


def _print_means(reports: dict[str, EvalReport]) -> None:
    names = list(reports)
    header = ["task", "metric"]
    for name in names:
        header += [f"{name}:model", f"{name}:baseline"]
    print("  ".join(f"{h:>16}" for h in header))
    all_means = {name: rep.means() for name, rep in reports.items()}
    for task in TASKS:
        for metric in METRIC_NAMES:
            if all((task, metric) not in m for m in all_means.values()):
                continue
            cells = [f"{task:>16}", f"{metric:>16}"]
            for name in names:
                entry = all_means[name].get((task, metric))
                if entry is None:
                    cells += [f"{'-':>16}", f"{'-':>16}"]
                else:
                    cells += [f"{entry[0]:>16.6f}", f"{entry[1]:>16.6f}"]
            print("  ".join(cells))


def cmd_report(args) -> int:
    reports: dict[str, EvalReport] = {}
    for directory in args.eval_dirs:
        path = Path(directory) / "report.csv"
        if not path.exists():
            return _fail(f"no report.csv under {directory}")
        reports[Path(directory).name] = EvalReport.from_csv(path)
    keysets = {name: set(m.keys()) for name, m in ((n, r.means()) for n, r in reports.items())}
    first = next(iter(keysets.values()))
    for name, keys in keysets.items():
        if keys != first:
            return _fail(f"report {name} covers different task/metric cells than the first report")
    _print_means(reports)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydranet",
        description="Spatiotemporal conflict-grid forecasting pipeline",
        epilog=schema_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"hydranet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tensorize", help="events or synthetic data -> volume file")
    p.add_argument("--events", help="delimited event file (row,col,month_id,sb,ns,os)")
    p.add_argument("--synthetic", choices=KINDS, help="generate events instead of reading a file")
    p.add_argument("--out", required=True, help="output volume path (.zstk)")
    p.add_argument("--height", type=int, default=180)
    p.add_argument("--width", type=int, default=180)
    p.add_argument("--cell-size", type=float, default=0.5)
    p.add_argument("--origin-lat", type=float, default=40.0)
    p.add_argument("--origin-lon", type=float, default=-19.0)
    p.add_argument("--month0", default="1990-01", help="calendar anchor of month 0 (YYYY-MM)")
    p.add_argument("--row-order", choices=("north_first", "south_first"), default="north_first")
    p.add_argument("--first-month", type=int, help="first month id (events mode)")
    p.add_argument("--last-month", type=int, help="last month id (events mode)")
    p.add_argument("--months", type=int, default=60, help="synthetic months")
    p.add_argument("--seed", type=int, default=0, help="synthetic seed")
    p.add_argument("--blob-size", type=int, default=4)
    p.add_argument("--blob-fatalities", type=int, default=20)
    p.add_argument("--persist-prob", type=float, default=0.75)
    p.add_argument("--ignite-prob", type=float, default=0.10)
    p.add_argument("--init-prob", type=float, default=0.02)
    p.add_argument("--fatality-mean", type=float, default=8.0)
    p.add_argument("--hotspot-count", type=int, default=5)
    p.add_argument("--hotspot-mean", type=float, default=10.0)
    p.set_defaults(func=cmd_tensorize)

    p = sub.add_parser("train", help="partition a volume and fit the model")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    p.add_argument("--config", help="INI-style run configuration")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="posterior rollout from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True, help="volume containing the training months")
    p.add_argument("--out", required=True, help="output cube path")
    p.add_argument("--summary", help="summary npz path (default: <out>.summary.npz)")
    p.add_argument("--horizon", type=int, default=36)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quantiles", default="0.05,0.95")
    p.add_argument("--deterministic", action="store_true", help="disable dropout during rollout")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score a forecast cube against a truth volume")
    p.add_argument("--forecast", required=True, help="forecast cube path")
    p.add_argument("--truth", required=True, help="volume containing the forecast months and the month before")
    p.add_argument("--mask", help="row,col include-list file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="side-by-side means across evaluation directories")
    p.add_argument("eval_dirs", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except _INPUT_ERRORS as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
