"""Command-line entry point: ``fairtp <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataio, harness, reports
from .errors import ConfigError, DataError, FairTPError, InvalidInputError, TrainingDivergenceError
from .statekit import ThresholdSchedule

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

RUN_RECORDS = ("manifest.json", "report.json", "schedule.json", "sweep.csv", "series.csv")

log = logging.getLogger("fairtp")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairtp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--force", action="store_true", help="overwrite existing run records")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        if data:
            sp.add_argument("--series", help="wide series CSV (rows=time, columns=sensors)")
            sp.add_argument("--partition", help="partition CSV with header sensor_id,region_id")
            sp.add_argument("--synthetic", help="synthetic city spec JSON")

    common(sub.add_parser("generate", help="write a synthetic city as CSV"), data=False)
    common(sub.add_parser("reference-run", help="record the threshold schedule"))
    tr = sub.add_parser("train", help="fairness-aware training")
    common(tr)
    tr.add_argument("--schedule", help="threshold schedule JSON (default: run the reference)")
    ev = sub.add_parser("evaluate", help="evaluate a checkpoint")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("validation", "test"), default="test")
    sw = sub.add_parser("sweep", help="sweep T_d or N_sam")
    common(sw)
    sw.add_argument("--param", required=True, choices=harness.SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma-separated integers")
    return p


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def _training_config(args) -> harness.TrainingConfig:
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    return harness.TrainingConfig.from_dict(doc)


def _load_data(args, config: harness.TrainingConfig):
    if args.series or args.partition:
        if not (args.series and args.partition):
            raise ConfigError("--series and --partition must be given together")
        return dataio.ingest_csv(args.series, args.partition, config.lookback, config.horizon), \
            {"series": args.series, "partition": args.partition}
    if args.synthetic:
        spec = dataio.SyntheticSpec.from_dict(_read_json(args.synthetic))
    else:
        spec = dataio.SyntheticSpec(seed=config.seed)
    return dataio.generate(spec, config.lookback, config.horizon), {"synthetic": spec.to_dict()}


def _prepare_out(out, force: bool) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    existing = [n for n in RUN_RECORDS if (out / n).exists()]
    if existing and not force:
        raise ConfigError(f"{out} already holds run records ({', '.join(existing)}); "
                          "pass --force to overwrite")
    return out


def _manifest(args, out: Path, config=None, data=None, files=(), extra=None):
    doc = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config.to_dict() if config is not None else None,
        "seed": config.seed if config is not None else None,
        "data": data,
        "files": list(files),
        "versions": {"fairtp": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    doc.update(extra or {})
    reports.dump_json(doc, out / "manifest.json")


def _cmd_generate(args):
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = dataio.SyntheticSpec.from_dict(doc)
    out = _prepare_out(args.out, args.force)
    network, series = dataio.generate(spec)
    dataio.write_series_csv(series, out / "series.csv")
    dataio.write_partition_csv(network, out / "partition.csv")
    dataio.save_spec(spec, out / "spec.json")
    _manifest(args, out, data={"synthetic": spec.to_dict()},
              files=["series.csv", "partition.csv", "spec.json"], extra={"seed": spec.seed})


def _cmd_reference_run(args):
    config = _training_config(args)
    (network, series), data = _load_data(args, config)
    out = _prepare_out(args.out, args.force)
    schedule = harness.reference_run(series, network, config)
    schedule.save(out / "schedule.json")
    _manifest(args, out, config, data, ["schedule.json"])


def _cmd_train(args):
    config = _training_config(args)
    (network, series), data = _load_data(args, config)
    out = _prepare_out(args.out, args.force)
    schedule = ThresholdSchedule.load(args.schedule) if args.schedule else None
    record = harness.run_pipeline(series, network, config, schedule)
    files = reports.write_run(record, out)
    _manifest(args, out, config, data, files, {"duration_s": record.duration_s,
                                               "effective_N_sam": record.effective_n_sam})
    log.info("test rsf_loss=%.6f sdf_loss=%.6f mae=%.4f", record.test_report.rsf_loss,
             record.test_report.sdf_loss, record.test_report.overall.mae)


def _cmd_evaluate(args):
    config = _training_config(args)
    (network, series), data = _load_data(args, config)
    out = _prepare_out(args.out, args.force)
    try:
        ckpt = harness.Checkpoint.load(args.checkpoint)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{args.checkpoint}: unreadable checkpoint ({exc})") from exc
    _, val, test = dataio.split(series, config.split_ratios)
    report = harness.evaluate(ckpt, test if args.split == "test" else val, network, config)
    reports.dump_json(report.to_dict(), out / "report.json")
    reports.write_rows(reports.region_rows(report, split=args.split), out / "regions.csv")
    _manifest(args, out, config, data, ["report.json", "regions.csv"],
              {"checkpoint": args.checkpoint, "split": args.split})


def _cmd_sweep(args):
    config = _training_config(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"values: expected comma-separated integers, got {args.values!r}")
    for v in values:
        try:
            config.replace(**{args.param: v})
        except ConfigError as exc:
            raise ConfigError(f"values: {exc}") from exc
    (network, series), data = _load_data(args, config)
    out = _prepare_out(args.out, args.force)
    rows = harness.sweep(args.param, values, config, series, network)
    files = reports.write_sweep(args.param, rows, out)
    _manifest(args, out, config, data, files, {"param": args.param, "values": values})


COMMANDS = {
    "generate": _cmd_generate,
    "reference-run": _cmd_reference_run,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
}


def _fail(kind: str, exc: Exception, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except TrainingDivergenceError as exc:
        return _fail("divergence", exc, EXIT_DIVERGED)
    except (DataError, InvalidInputError, FairTPError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except OSError as exc:
        return _fail("io", exc, EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
