"""JSON and CSV writers for run records, schedules and sweep tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, List

from .harness import RunRecord, SweepRow
from .metrics import FairnessReport


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def region_rows(report: FairnessReport, **extra) -> List[dict]:
    return [{**extra, "region": r, "mae": s.mae, "rmse": s.rmse, "mape": s.mape,
             "masked_count": s.masked_count}
            for r, s in sorted(report.per_region.items())]


def write_rows(rows: Iterable[dict], path) -> None:
    rows = list(rows)
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_run(record: RunRecord, out_dir) -> List[str]:
    """Write every artefact of a training run; returns the file names."""
    out = Path(out_dir)
    dump_json(record.to_dict(), out / "report.json")
    dump_json(record.traces, out / "samples_trace.json")
    (out / "schedule.json").write_text(record.schedule.to_json() + "\n")
    record.checkpoint.save(out / "checkpoint.json")

    rows = []
    for epoch, rep in enumerate(record.epoch_reports):
        rows += region_rows(rep, split="validation", epoch=epoch)
    rows += region_rows(record.test_report, split="test", epoch=len(record.epoch_reports) - 1)
    write_rows(rows, out / "regions.csv")

    curve = [{"epoch": e, "rsf_loss": rep.rsf_loss, "sdf_loss": rep.sdf_loss,
              "mae": rep.overall.mae, "L_train": h["L"], "L_acc_train": h["L_acc"]}
             for e, (rep, h) in enumerate(zip(record.epoch_reports, record.train_history))]
    write_rows(curve, out / "curves.csv")
    return ["report.json", "samples_trace.json", "schedule.json", "checkpoint.json",
            "regions.csv", "curves.csv"]


def write_sweep(param: str, rows: List[SweepRow], out_dir) -> List[str]:
    out = Path(out_dir)
    flat = [r.flat(param) for r in rows]
    write_rows(flat, out / "sweep.csv")
    dump_json({"param": param, "rows": [{**r.flat(param), "report": r.report.to_dict()}
                                        for r in rows]}, out / "sweep.json")
    return ["sweep.csv", "sweep.json"]
