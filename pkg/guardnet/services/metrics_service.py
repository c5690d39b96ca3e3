"""
Measurement logs: per-node CSV files, the merged run log, and the per-mode
aggregates reported by `metrics`.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np
from pydantic import ValidationError

from guardnet.exceptions import ParamError, SchemaError
from guardnet.schemas.simulation import CSV_COLUMNS, LogEvent, LogRecord, MetricsSummary, ModeSummary

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

QUERIES = ("latency", "compute", "msgsize", "hops", "rejects")
ACCEPT = "accept"


def write_node_log(path: PathLike, records: Iterable[LogRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow(record.as_row())
    return path


def read_log(path: PathLike) -> List[LogRecord]:
    """Records of one CSV log; a header other than the documented one is a SchemaError."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        return []
    if rows[0] != CSV_COLUMNS:
        raise SchemaError(f"{path}: header {rows[0]} does not match {CSV_COLUMNS}")
    records = []
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            raise SchemaError(f"{path}:{number}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        try:
            records.append(LogRecord.from_row(row))
        except ValidationError as exc:
            raise SchemaError(f"{path}:{number}: {exc.errors()[0]['msg']}") from exc
    return records


def merge_logs(paths: Sequence[PathLike], out_path: PathLike) -> Path:
    """Every record of every file exactly once, stably sorted by (ts_us, node_id)."""
    merged: List[LogRecord] = []
    for path in paths:
        merged.extend(read_log(path))
    merged.sort(key=lambda record: (record.ts_us, record.node_id))
    out = write_node_log(out_path, merged)
    logger.info(f"Merged {len(paths)} logs into {out} ({len(merged)} records)")
    return out


def _mean(values: List[int]) -> float:
    return float(np.mean(values)) if values else 0.0


def compute_metrics(records: Sequence[LogRecord]) -> MetricsSummary:
    summary = MetricsSummary(records=len(records))
    modes = sorted({record.mode for record in records if record.mode})
    for mode in modes:
        done = [r for r in records if r.mode == mode and r.event == LogEvent.SEARCH_DONE]
        accepted = [r for r in done if r.detail == ACCEPT]
        hops = [r for r in records if r.mode == mode and r.event == LogEvent.HOP]
        counts: Dict[int, int] = {}
        if accepted:
            values, freq = np.unique(np.array([r.hop_count for r in accepted]), return_counts=True)
            counts = {int(v): int(c) for v, c in zip(values, freq)}
        summary.modes[mode] = ModeSummary(
            searches=len(done),
            accepted=len(accepted),
            rejected=len(done) - len(accepted),
            avg_query_latency_us=_mean([r.latency_us for r in accepted]),
            avg_compute_us=_mean([r.compute_us for r in hops]),
            avg_msg_bytes=_mean([r.msg_bytes for r in accepted]),
            avg_hops=_mean([r.hop_count for r in accepted]),
            hop_histogram=counts,
        )
    return summary


def metrics(csv_path: PathLike, query: str = "latency") -> MetricsSummary:
    if query not in QUERIES:
        raise ParamError(f"unknown metrics query {query!r}; choose from {', '.join(QUERIES)}")
    return compute_metrics(read_log(csv_path))


def format_table(summary: MetricsSummary, query: str) -> str:
    if query not in QUERIES:
        raise ParamError(f"unknown metrics query {query!r}; choose from {', '.join(QUERIES)}")
    header = {
        "latency": "mode,avg_query_latency_us",
        "compute": "mode,avg_compute_us",
        "msgsize": "mode,avg_msg_bytes",
        "hops": "mode,avg_hops,histogram",
        "rejects": "mode,searches,accepted,rejected",
    }[query]
    lines = [header]
    for mode, row in sorted(summary.modes.items()):
        if query == "latency":
            lines.append(f"{mode},{row.avg_query_latency_us:.2f}")
        elif query == "compute":
            lines.append(f"{mode},{row.avg_compute_us:.2f}")
        elif query == "msgsize":
            lines.append(f"{mode},{row.avg_msg_bytes:.2f}")
        elif query == "hops":
            histogram = " ".join(f"{h}:{c}" for h, c in sorted(row.hop_histogram.items()))
            lines.append(f"{mode},{row.avg_hops:.2f},{histogram}")
        else:
            lines.append(f"{mode},{row.searches},{row.accepted},{row.rejected}")
    return "\n".join(lines)
