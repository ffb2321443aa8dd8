"""Command-line interface: data generation, training, evaluation, prediction.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All commands are batch-mode and deterministic given their inputs and seeds;
report paths receive delimited files plus rendered figures.
"""
from __future__ import annotations

import os
import sys
from pathlib import Path

import click
import numpy as np

from .checkpoint import CheckpointError
from .fields import gen_random_fields
from .gcsd import DatasetFormatError, read_dataset, write_dataset
from .records import ScalarParams
from .schedule import NAMED_SUBSETS, snapshot_schedule
from .simulator import GridSpec, SimulationError, simulate_case
from .training import (
    ExperimentConfig,
    TrainingDivergedError,
    evaluate_unseen_time,
    model_from_checkpoint,
    case_arrays,
    predict_norm,
    resolve_time_subset,
    train,
)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DataError(click.ClickException):
    exit_code = EXIT_DATA


class NumericError(click.ClickException):
    exit_code = EXIT_NUMERIC


def max_workers() -> int:
    cap = os.environ.get("FMIONET_THREADS")
    if cap:
        try:
            return max(1, int(cap))
        except ValueError:
            raise click.UsageError(f"FMIONET_THREADS must be an integer, got {cap!r}")
    return 1


@click.group()
def cli():
    """Neural-operator surrogate toolkit for multiphase flow in porous media."""


def _parse_time_subset(text):
    if text is None:
        return None
    if text in NAMED_SUBSETS:
        return text
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise click.UsageError(
            f"--time-subset must name a preset ({', '.join(sorted(NAMED_SUBSETS))}) "
            f"or list indices in [0, 23], got {text!r}")


def _simulate_one(args):
    case_seed, nz, nr, schedule = args
    rng = np.random.default_rng(case_seed)
    thickness = float(rng.uniform(12.5, 200.0))
    fields = gen_random_fields(rng, nz, nr, thickness=thickness)
    scalars = ScalarParams.sample(rng, thickness=thickness)
    return simulate_case(fields, scalars, schedule, GridSpec(nz=nz, nr=nr))


def _simulate_one_safe(args):
    try:
        return _simulate_one(args)
    except (SimulationError, ValueError) as exc:
        return str(exc)


@cli.command("gen-data")
@click.option("--n-cases", type=int, required=True, help="Number of cases to simulate.")
@click.option("--nz", type=int, default=32, show_default=True)
@click.option("--nr", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--schedule", "schedule_name", default="full", show_default=True,
              help="Snapshot schedule preset or comma-separated indices.")
def cmd_gen_data(n_cases, nz, nr, seed, out, schedule_name):
    """Simulate synthetic reservoir cases into a GCSD dataset."""
    if n_cases <= 0:
        raise click.UsageError("--n-cases must be positive")
    try:
        sched = snapshot_schedule(_parse_time_subset(schedule_name))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    jobs = [(seed * 1_000_003 + i, nz, nr, sched) for i in range(n_cases)]
    workers = min(max_workers(), n_cases)
    results = []
    if workers > 1:
        # parallel simulation; results keep case order by construction
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            for i, outcome in enumerate(pool.imap(_simulate_one_safe, jobs)):
                results.append((i, outcome))
    else:
        results = [(i, _simulate_one_safe(job)) for i, job in enumerate(jobs)]
    records = []
    failures = []
    for i, outcome in results:
        if isinstance(outcome, str):
            failures.append(i)
            click.echo(f"case {i} (seed {jobs[i][0]}) failed: {outcome}", err=True)
        else:
            records.append(outcome)
    if len(failures) > 0.05 * n_cases:
        raise NumericError(f"{len(failures)}/{n_cases} cases failed to simulate")
    write_dataset(out, records)
    click.echo(f"wrote {len(records)} records to {out}")
    click.echo(f"manifest: seed={seed} grid=({nz},{nr}) schedule={schedule_name} "
               f"snapshots={len(sched)} thickness=[12.5,200]m "
               f"kx=[0.001,10000]mD failures={len(failures)}")


CONFIG_KEYS = {
    "data": str, "model": str, "target": str, "batch_case": int, "batch_time": int,
    "time_subset": str, "epochs": int, "lr": float, "decay": float, "seed": int,
    "out": str, "val_cases": int, "patience": int, "max_seconds": float,
}


def parse_config_file(path) -> dict:
    """Flat key=value file with # comments; unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise click.UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise click.UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}")
    return values


def _load_records(path):
    try:
        records = read_dataset(path)
    except (DatasetFormatError, OSError) as exc:
        raise DataError(str(exc))
    if not records:
        raise DataError(f"{path}: dataset holds no records")
    return records


@cli.command("import-data")
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--adapter", "adapter_spec", required=True,
              help="Import adapter as 'module:function' mapping the source "
                   "to SampleRecords (the upstream layout is not pinned here).")
def cmd_import_data(source, out, adapter_spec):
    """Convert an external dataset into GCSD via a user-supplied adapter."""
    import importlib

    from .gcsd import import_external_dataset

    if ":" not in adapter_spec:
        raise click.UsageError("--adapter must look like module:function")
    mod_name, func_name = adapter_spec.split(":", 1)
    try:
        adapter = getattr(importlib.import_module(mod_name), func_name)
    except (ImportError, AttributeError) as exc:
        raise click.UsageError(f"cannot load adapter {adapter_spec!r}: {exc}")
    try:
        n = import_external_dataset(source, out, adapter)
    except (ValueError, OSError) as exc:
        raise DataError(str(exc))
    click.echo(f"imported {n} records into {out}")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="key=value config file; flags override its values.")
@click.option("--data", type=click.Path(dir_okay=False))
@click.option("--model", "model_kind",
              type=click.Choice(["fmionet", "ufno", "mionet", "mionet-fnn"]))
@click.option("--target", type=click.Choice(["sg", "dp"]))
@click.option("--batch-case", type=int)
@click.option("--batch-time", type=int)
@click.option("--time-subset", type=str)
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--decay", type=float)
@click.option("--seed", type=int)
@click.option("--val-cases", type=int)
@click.option("--patience", type=int)
@click.option("--max-seconds", type=float)
@click.option("--out", type=click.Path(file_okay=False))
def cmd_train(config_path, data, model_kind, target, batch_case, batch_time,
              time_subset, epochs, lr, decay, seed, val_cases, patience,
              max_seconds, out):
    """Train a surrogate; writes checkpoint, metrics CSV and training curve."""
    values = parse_config_file(config_path) if config_path else {}
    overrides = {"data": data, "model": model_kind, "target": target,
                 "batch_case": batch_case, "batch_time": batch_time,
                 "time_subset": time_subset, "epochs": epochs, "lr": lr,
                 "decay": decay, "seed": seed, "val_cases": val_cases,
                 "patience": patience, "max_seconds": max_seconds, "out": out}
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "data" not in values:
        raise click.UsageError("a dataset is required (--data or config 'data=')")
    out_dir = Path(values.get("out", "runs/latest"))

    try:
        subset = _parse_time_subset(values.get("time_subset"))
        resolve_time_subset(subset)
    except ValueError as exc:
        raise click.UsageError(
            f"{exc}; valid indices are 0..23 or presets {', '.join(sorted(NAMED_SUBSETS))}")

    cfg = ExperimentConfig(
        model=values.get("model", "fmionet"), target=values.get("target", "sg"),
        epochs=values.get("epochs", 40), batch_case=values.get("batch_case", 4),
        batch_time=values.get("batch_time", 8), time_subset=subset,
        lr=values.get("lr", 1e-3), lr_decay=values.get("decay", 0.9),
        seed=values.get("seed", 0), val_cases=values.get("val_cases", 0),
        patience=values.get("patience", 10),
        max_seconds=values.get("max_seconds"))

    records = _load_records(values["data"])
    try:
        result = train(records, cfg, out_dir)
    except TrainingDivergedError as exc:
        raise NumericError(str(exc))

    from .report import training_curve

    result.report.to_csv(out_dir / "metrics.csv")
    training_curve(result.history, out_dir / "training_curve.png")
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"metrics: {out_dir / 'metrics.csv'} (pooled R2 {result.report.r2_all:.4f})")
    click.echo(f"stop reason: {result.stop_reason}")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(dir_okay=False), required=True)
@click.option("--report-dir", type=click.Path(file_okay=False), required=True)
def cmd_eval(checkpoint, data, report_dir):
    """Evaluate a checkpoint: seen/unseen metrics CSV plus R2 plot."""
    records = _load_records(data)
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    try:
        report = evaluate_unseen_time(checkpoint, records)
    except (CheckpointError, ValueError) as exc:
        raise DataError(str(exc))

    from .report import r2_per_snapshot

    report.to_csv(report_dir / "metrics.csv")
    r2_per_snapshot(report, report_dir / "r2_per_snapshot.png")
    click.echo(f"pooled R2: all={report.r2_all:.4f} seen={report.r2_seen:.4f} "
               f"unseen={report.r2_unseen:.4f}")
    click.echo(f"wrote {report_dir / 'metrics.csv'} and r2_per_snapshot.png")


@cli.command("predict")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(dir_okay=False), required=True)
@click.option("--case-index", type=int, default=0, show_default=True)
@click.option("--times", default="2664.5,10950", show_default=True,
              help="Comma-separated times in days (7.3y and 30y by default).")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def cmd_predict(checkpoint, data, case_index, times, out):
    """Predict fields at arbitrary times; writes raw float32 + error maps."""
    records = _load_records(data)
    if not 0 <= case_index < len(records):
        raise DataError(f"case index {case_index} outside dataset of {len(records)}")
    try:
        days = np.array([float(t) for t in times.split(",")])
    except ValueError:
        raise click.UsageError(f"--times must be comma-separated days, got {times!r}")
    try:
        model, normalizer, exp, _ = model_from_checkpoint(checkpoint)
    except (CheckpointError, ValueError) as exc:
        raise DataError(str(exc))
    rec = records[case_index]
    if rec.grid_shape != tuple(getattr(model.cfg, "native_shape")):
        raise DataError(f"checkpoint expects grid {model.cfg.native_shape}, "
                        f"dataset has {rec.grid_shape}")

    arrays = case_arrays(records, normalizer, exp.target)
    if exp.model == "ufno":
        # joint-snapshot baseline: only the 24 trained channels exist
        pred_norm = predict_norm(model, exp.model, arrays,
                                 np.array([case_index]), _nearest_indices(arrays, days))
    else:
        # continuous trunk: evaluate at the exact requested times
        pred_norm = model.predict(arrays["fields"][[case_index]],
                                  arrays["scalars"][[case_index]], days)
    pred = normalizer.invert_target(pred_norm.astype(np.float64), exp.target)[0]
    pred *= rec.mask

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    raw = out / f"pred_{exp.target}_case{case_index}.f32"
    pred.astype("<f4").tofile(raw)
    (out / "pred_meta.txt").write_text(
        f"shape={pred.shape}\ntimes_days={','.join(str(d) for d in days)}\n"
        f"target={exp.target}\ndtype=float32-le\n", encoding="utf-8")

    from .report import field_maps

    truth = _truth_at(rec, days, exp.target)
    field_maps(truth, pred, days, out / f"pred_{exp.target}_case{case_index}.png",
               value_label="gas saturation" if exp.target == "sg" else "pressure buildup (bar)")
    click.echo(f"wrote {raw} and error maps for times {days.tolist()} d")


def _nearest_indices(arrays, days):
    return [int(np.argmin(np.abs(arrays["times"] - d))) for d in days]


def _truth_at(rec, days, target):
    stack = rec.sg if target == "sg" else rec.dp
    times = np.asarray(rec.times_days)
    return np.stack([stack[int(np.argmin(np.abs(times - d)))] for d in days])


def main():
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(exc.exit_code)
    except (DatasetFormatError, CheckpointError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except (SimulationError, TrainingDivergedError, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    except click.Abort:
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
