"""Artifact files of one run: metrics.json plus the CSV traces."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from ..control import TRAJECTORY_COLUMNS
from ..protocol import write_packet_trace
from ..smart import write_m_trace

AOI_COLUMNS = ("slot", "src", "dst", "aoi")
METRICS_SCHEMA_VERSION = 1


def _clean(obj):
    """JSON-safe copy: non-finite floats become None, tuples become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def metrics_document(result) -> dict:
    return {"schema_version": METRICS_SCHEMA_VERSION,
            "config": _clean({k: v for k, v in vars(result.config).items()}),
            "metrics": _clean(result.metrics)}


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run(result, out_dir) -> list[Path]:
    """Write the config echo, metrics.json and the four traces into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / n for n in ("config.txt", "metrics.json", "trajectories.csv",
                               "packets.csv", "aoi.csv", "m_trace.csv")]
    result.config.save(paths[0])
    write_json(paths[1], metrics_document(result))
    write_rows(paths[2], TRAJECTORY_COLUMNS, result.trajectories)
    write_packet_trace(paths[3], result.packets)
    write_rows(paths[4], AOI_COLUMNS, result.aoi)
    write_m_trace(paths[5], result.m_trace)
    return paths
