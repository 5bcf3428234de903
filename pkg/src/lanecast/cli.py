"""Command line interface: synthesize data, train, evaluate, sweep, heatmap.

Every command is deterministic given its config and seed. Exit codes:
0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .config import load_run_config
from .errors import ConfigError, DataError, NumericError
from .fileio import atomic_write_bytes, atomic_write_text
from .model import SingleStreamModel, TwoStreamModel, load_bundle, save_bundle
from .pipeline import (
    build_samples,
    fit_normalization,
    group_records,
    read_records,
    split_dataset,
    train_count,
    window_origins,
    write_records,
)
from .synth import generate
from .training import evaluate, sweep, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DAY_SECONDS = 86400


class _Parser(argparse.ArgumentParser):
    # Route argparse usage failures through the normal error mapping
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="lanecast",
        description="Lane-level traffic speed forecasting with a two-stream convolutional network.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="generate a synthetic corridor CSV")
    synth.add_argument("--config", help="run config JSON")
    synth.add_argument("--seed", type=int, help="override every config seed")
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.set_defaults(func=cmd_synth)

    trainp = sub.add_parser("train", help="fit a model on a record CSV and save the bundle")
    trainp.add_argument("--config", help="run config JSON")
    trainp.add_argument("--seed", type=int, help="override every config seed")
    trainp.add_argument("--data", help="input record CSV")
    trainp.add_argument("--bundle", help="output model bundle path")
    trainp.set_defaults(func=cmd_train)

    evalp = sub.add_parser("evaluate", help="score a bundle on a record CSV")
    evalp.add_argument("--bundle", required=True, help="model bundle path")
    evalp.add_argument("--data", required=True, help="input record CSV")
    evalp.add_argument("--horizons", default="1,2,3", help="comma list of forecast steps")
    evalp.add_argument("--out", help="output prefix for report CSVs (default: <bundle>.eval)")
    evalp.set_defaults(func=cmd_evaluate)

    sweepp = sub.add_parser("sweep", help="train once per value of a hyperparameter")
    sweepp.add_argument("--config", help="run config JSON")
    sweepp.add_argument("--seed", type=int, help="override every config seed")
    sweepp.add_argument("--data", help="input record CSV")
    sweepp.add_argument("--axis", required=True, choices=["lambda", "lr"],
                        help="swept parameter: volume loss weight or learning rate")
    sweepp.add_argument("--values", required=True, help="comma list of values")
    sweepp.add_argument("--out", help="output CSV path")
    sweepp.set_defaults(func=cmd_sweep)

    heat = sub.add_parser("heatmap", help="emit truth/prediction grids per lane")
    heat.add_argument("--bundle", required=True, help="model bundle path")
    heat.add_argument("--data", required=True, help="input record CSV")
    heat.add_argument("--days", default="0:1", help="day range start:end relative to the data start")
    heat.add_argument("--out", required=True, help="output file prefix")
    heat.set_defaults(func=cmd_heatmap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _required(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required (flag or config paths entry)")
    return value


def _fmt(x) -> str:
    """Shortest round-trip decimal; blank for NaN so CSV consumers notice."""
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def _parse_values(text, flag, kind=float):
    items = [v for v in text.split(",") if v.strip()]
    if not items:
        raise ConfigError(f"{flag} needs at least one value")
    try:
        return [kind(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from exc


def _make_model(config):
    if config.model == "single_stream":
        return SingleStreamModel(config.architecture)
    return TwoStreamModel(config.architecture)


def _prepare_dataset(records, config):
    """Fit normalization on the training range, build and split samples."""
    shape = config.corridor
    origins, _ = window_origins(records, shape)
    if not origins:
        raise DataError("no complete windows in the input data")
    n_train = train_count(len(origins), config.split_fraction)
    boundary = origins[n_train - 1] + shape.interval
    norm = fit_normalization(records, end=boundary)
    samples = build_samples(records, shape, norm)
    train_set, test_set = split_dataset(samples, config.split_fraction)
    return norm, train_set, test_set


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    config = load_run_config(args.config, seed=args.seed)
    records = generate(config.synth)
    write_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out} (seed {config.synth.seed})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args.config, seed=args.seed)
    data_path = _required(args.data or config.data, "--data")
    bundle_path = _required(args.bundle or config.bundle, "--bundle")
    records = read_records(data_path)
    norm, train_set, test_set = _prepare_dataset(records, config)
    model = _make_model(config)
    curve = train(model, train_set, config.training, eval_samples=test_set)
    save_bundle(bundle_path, model, norm)
    loss_path = f"{bundle_path}.loss.csv"
    lines = ["epoch,train_loss,test_loss"]
    for row in curve:
        test = _fmt(row.test_loss) if row.test_loss is not None else ""
        lines.append(f"{row.epoch},{_fmt(row.train_loss)},{test}")
    atomic_write_text(loss_path, "\n".join(lines) + "\n")
    final = curve[-1] if curve else None
    summary = (
        f"trained {model.kind} on {len(train_set)} samples ({len(test_set)} held out); "
        f"final train loss {final.train_loss:.6g}, test loss {final.test_loss:.6g}; "
        if final
        else f"trained {model.kind} for 0 epochs; "
    )
    print(summary + f"bundle {bundle_path}, loss curve {loss_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, norm = load_bundle(args.bundle)
    records = read_records(args.data)
    shape = model.config.shape
    horizons = _parse_values(args.horizons, "--horizons", kind=int)
    samples = build_samples(records, shape, norm)
    if not samples:
        raise DataError("no complete windows in the input data")
    report = evaluate(model, samples, horizons, norm, shape)
    out_prefix = args.out or f"{args.bundle}.eval"

    lines = ["horizon,accuracy_percent,samples_evaluated,samples_skipped,values_excluded"]
    for h in report.horizons:
        lines.append(
            f"{h},{_fmt(report.accuracy[h])},{report.evaluated[h]},"
            f"{report.skipped[h]},{report.excluded[h]}"
        )
    atomic_write_text(f"{out_prefix}_report.csv", "\n".join(lines) + "\n")

    lane_lines = ["horizon,lane,accuracy_percent"]
    for h in report.horizons:
        for lane, value in enumerate(report.per_lane[h], start=1):
            lane_lines.append(f"{h},{lane},{_fmt(value)}")
    atomic_write_text(f"{out_prefix}_lanes.csv", "\n".join(lane_lines) + "\n")

    det_lines = ["horizon,detector,accuracy_percent"]
    for h in report.horizons:
        for det, value in enumerate(report.per_detector[h], start=1):
            det_lines.append(f"{h},{det},{_fmt(value)}")
    atomic_write_text(f"{out_prefix}_detectors.csv", "\n".join(det_lines) + "\n")

    header = "horizon    " + "".join(f"{h:>10d}" for h in report.horizons)
    row = "accuracy % " + "".join(f"{report.accuracy[h]:>10.2f}" for h in report.horizons)
    print(header)
    print(row)
    print(f"reports written with prefix {out_prefix}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_run_config(args.config, seed=args.seed)
    data_path = _required(args.data or config.data, "--data")
    out_path = _required(args.out or config.out, "--out")
    values = _parse_values(args.values, "--values")
    records = read_records(data_path)
    norm, train_set, test_set = _prepare_dataset(records, config)
    rows = sweep(
        args.axis, values, lambda: _make_model(config), train_set, test_set,
        config.training, norm, config.corridor,
    )
    lines = ["value,accuracy_h1,final_train_loss,status"]
    for row in rows:
        lines.append(f"{_fmt(row.value)},{_fmt(row.accuracy_h1)},{_fmt(row.final_train_loss)},{row.status}")
        print(f"{args.axis}={row.value:g}: accuracy_h1={row.accuracy_h1:.3f} "
              f"final_train_loss={row.final_train_loss:.6g} [{row.status}]")
    atomic_write_text(out_path, "\n".join(lines) + "\n")
    print(f"sweep table written to {out_path}")
    return EXIT_OK


def _pgm_bytes(grid, vmax: float) -> bytes:
    """P5 grayscale: header then rows of bytes, values scaled over [0, vmax]."""
    scaled = np.rint(255.0 * np.clip(grid, 0.0, vmax) / vmax).astype(np.uint8)
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    return header + scaled.tobytes()


def _grid_csv(path, grid, timestamps) -> None:
    lines = ["detector," + ",".join(str(t) for t in timestamps)]
    for i in range(grid.shape[0]):
        lines.append(f"{i + 1}," + ",".join(_fmt(float(v)) for v in grid[i]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_heatmap(args) -> int:
    model, norm = load_bundle(args.bundle)
    shape = model.config.shape
    records = read_records(args.data)
    timestamps, speed, volume, complete = group_records(records, shape)
    try:
        start_day, end_day = (int(p) for p in args.days.split(":"))
    except ValueError as exc:
        raise ConfigError(f"--days must be start:end integers, got {args.days!r}") from exc
    if end_day <= start_day:
        raise ConfigError(f"--days range is empty: {args.days}")
    base = timestamps[0]
    grid_ts = list(range(base + start_day * DAY_SECONDS,
                         base + end_day * DAY_SECONDS, shape.interval))
    dt = shape.interval
    history_needed = range(shape.steps)
    for t in grid_ts:
        if t not in complete:
            raise DataError(f"heatmap range needs complete data at timestamp {t}")
        if any((t - dt - j * dt) not in complete for j in history_needed):
            raise DataError(
                f"prediction at timestamp {t} needs {shape.steps} complete history "
                f"steps before it; extend the data or shift --days"
            )

    truth = np.stack([speed[t] for t in grid_ts])  # (time, detectors, lanes)
    windows_u = np.stack([
        np.stack([norm.normalize_speed(speed[t - (shape.steps - j) * dt]) for j in range(shape.steps)], axis=1)
        for t in grid_ts
    ])
    windows_q = np.stack([
        np.stack([norm.normalize_volume(volume[t - (shape.steps - j) * dt]) for j in range(shape.steps)], axis=1)
        for t in grid_ts
    ])
    pred_n, _ = model.predict_batch(windows_u, windows_q)
    pred = norm.denormalize_speed(pred_n).reshape(len(grid_ts), shape.detectors, shape.lanes)

    for lane in range(shape.lanes):
        truth_grid = truth[:, :, lane].T  # (detectors, time)
        pred_grid = pred[:, :, lane].T
        tag = f"{args.out}_lane{lane + 1}"
        _grid_csv(f"{tag}_truth.csv", truth_grid, grid_ts)
        _grid_csv(f"{tag}_pred.csv", pred_grid, grid_ts)
        atomic_write_bytes(f"{tag}_truth.pgm", _pgm_bytes(truth_grid, norm.speed_max))
        atomic_write_bytes(f"{tag}_pred.pgm", _pgm_bytes(pred_grid, norm.speed_max))
        for det in range(shape.detectors):
            lines = ["timestamp,truth,prediction"]
            for ti, t in enumerate(grid_ts):
                lines.append(f"{t},{_fmt(float(truth_grid[det, ti]))},{_fmt(float(pred_grid[det, ti]))}")
            atomic_write_text(f"{tag}_detector{det + 1}.csv", "\n".join(lines) + "\n")

    print(
        f"wrote {shape.lanes} lane grids ({shape.detectors}x{len(grid_ts)}) "
        f"and {shape.lanes * shape.detectors} detector curves with prefix {args.out}"
    )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
