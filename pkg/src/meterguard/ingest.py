"""Turning raw metering records into clean per-instant samples.

Raw telemetry arrives as one record per (timestamp, resource, meter,
value). Meters come in two flavours: gauges already expressed as rates
(the ``*.rate`` meters plus ``cpu_util``) and cumulative counters that
must be reduced to rates first. :func:`parse_samples` reads the records,
:func:`cumulative_to_rate` reduces one counter series,
:func:`assemble_samples` lines everything up per sampling instant, and
:func:`filter_resources` trims the result to an allowlist.

Malformed input never aborts a whole file: parse and assembly report
per-row / per-instant problems alongside their results and keep going.
Genuinely corrupt series (time running backwards) raise instead.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from .telemetry import (
    CLASS_NAMES,
    FEATURE_NAMES,
    Dataset,
    LabeledSample,
    MetricSample,
    WorkloadClass,
)

#: Rate meters as they appear in raw telemetry, keyed to canonical feature names.
METER_TO_FEATURE: dict[str, str] = {
    "cpu_util": "cpu_util",
    "disk.read.requests.rate": "disk_read_requests_rate",
    "disk.read.bytes.rate": "disk_read_bytes_rate",
    "disk.write.requests.rate": "disk_write_requests_rate",
    "disk.write.bytes.rate": "disk_write_bytes_rate",
    "network.incoming.bytes.rate": "net_incoming_bytes_rate",
    "network.incoming.packets.rate": "net_incoming_packets_rate",
    "network.outgoing.bytes.rate": "net_outgoing_bytes_rate",
    "network.outgoing.packets.rate": "net_outgoing_packets_rate",
}

#: Cumulative counter meters and the rate meter each one reduces to.
#: cpu_util is a gauge with no counter form, so it has no entry here.
CUMULATIVE_TO_RATE: dict[str, str] = {
    name[: -len(".rate")]: name for name in METER_TO_FEATURE if name != "cpu_util"
}

KNOWN_METERS = frozenset(METER_TO_FEATURE) | frozenset(CUMULATIVE_TO_RATE)


@dataclass(frozen=True)
class RawRecord:
    """One metering data point as read from disk, not yet assembled."""

    timestamp: float
    resource_id: str
    meter: str
    value: float


class MalformedRow(Exception):
    """A raw input row that could not be understood.

    Collected by :func:`parse_samples` rather than raised, so one bad
    row does not discard the rest of the file.
    """

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class InsufficientData(Exception):
    """A cumulative series too short to produce even one rate."""


class NonMonotonicTime(Exception):
    """Timestamps in a series moved backwards or repeated."""


class IncompleteWindow(Exception):
    """A sampling instant that is missing some of the nine meters."""

    def __init__(self, resource_id: str, timestamp: float, missing: tuple[str, ...]):
        super().__init__(
            f"resource {resource_id!r} at t={timestamp}: missing {', '.join(missing)}"
        )
        self.resource_id = resource_id
        self.timestamp = timestamp
        self.missing = missing


def _record_from_parts(
    line_no: int, timestamp: str, resource_id: str, meter: str, value: str
) -> RawRecord:
    try:
        ts = float(timestamp)
    except (TypeError, ValueError):
        raise MalformedRow(line_no, f"bad timestamp {timestamp!r}")
    if ts != ts or ts in (float("inf"), float("-inf")):
        raise MalformedRow(line_no, f"bad timestamp {timestamp!r}")
    if not resource_id:
        raise MalformedRow(line_no, "empty resource_id")
    if meter not in KNOWN_METERS:
        raise MalformedRow(line_no, f"unknown meter {meter!r}")
    try:
        val = float(value)
    except (TypeError, ValueError):
        raise MalformedRow(line_no, f"bad value {value!r}")
    if not (val == val and val >= 0.0 and val != float("inf")):
        raise MalformedRow(line_no, f"value must be finite and >= 0, got {value!r}")
    return RawRecord(ts, resource_id, meter, val)


def parse_samples(
    stream: TextIO | Iterable[str], fmt: str = "csv"
) -> tuple[list[RawRecord], list[MalformedRow]]:
    """Read raw metering records from a CSV or JSONL stream.

    CSV rows are ``timestamp,resource_id,meter,value`` (a header row
    with those exact names is skipped if present). JSONL objects carry
    the same four keys. Returns the good records in input order plus a
    list of :class:`MalformedRow` describing every rejected line.
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"fmt must be 'csv' or 'jsonl', got {fmt!r}")
    records: list[RawRecord] = []
    errors: list[MalformedRow] = []
    if fmt == "csv":
        reader = csv.reader(stream)
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if line_no == 1 and row[:4] == ["timestamp", "resource_id", "meter", "value"]:
                continue
            if len(row) != 4:
                errors.append(MalformedRow(line_no, f"expected 4 fields, got {len(row)}"))
                continue
            try:
                records.append(_record_from_parts(line_no, *row))
            except MalformedRow as err:
                errors.append(err)
    else:
        for line_no, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                errors.append(MalformedRow(line_no, "invalid JSON"))
                continue
            if not isinstance(obj, dict):
                errors.append(MalformedRow(line_no, "expected a JSON object"))
                continue
            missing = [k for k in ("timestamp", "resource_id", "meter", "value") if k not in obj]
            if missing:
                errors.append(MalformedRow(line_no, f"missing keys: {', '.join(missing)}"))
                continue
            try:
                records.append(
                    _record_from_parts(
                        line_no,
                        str(obj["timestamp"]),
                        str(obj["resource_id"]),
                        str(obj["meter"]),
                        str(obj["value"]),
                    )
                )
            except MalformedRow as err:
                errors.append(err)
    return records, errors


def cumulative_to_rate(
    series: Sequence[tuple[float, float]]
) -> list[tuple[float, float]]:
    """Reduce a cumulative counter series to per-second rates.

    Each consecutive pair (t0, v0), (t1, v1) yields one point
    (t1, (v1 - v0) / (t1 - t0)), so the output is one element shorter
    than the input. A value drop is treated as a counter reset and
    yields rate 0.0 rather than a negative rate.

    Raises InsufficientData for series shorter than two points and
    NonMonotonicTime if timestamps fail to strictly increase.
    """
    if len(series) < 2:
        raise InsufficientData(f"need at least 2 points, got {len(series)}")
    out: list[tuple[float, float]] = []
    for (t0, v0), (t1, v1) in zip(series, series[1:]):
        if t1 <= t0:
            raise NonMonotonicTime(f"timestamp {t1} does not follow {t0}")
        rate = 0.0 if v1 < v0 else (v1 - v0) / (t1 - t0)
        out.append((t1, rate))
    return out


def assemble_samples(
    records: Iterable[RawRecord],
) -> tuple[list[MetricSample], list[IncompleteWindow]]:
    """Combine raw records into complete per-instant samples.

    Cumulative counter meters are reduced with :func:`cumulative_to_rate`
    first (their rates land on the timestamp of the later endpoint).
    Every (resource, timestamp) pair that ends up with all nine metrics
    becomes a MetricSample; the rest are reported as IncompleteWindow
    issues. Counter series too short to reduce simply contribute
    nothing, which surfaces through those same issues.

    Samples come back sorted by (resource_id, timestamp). A series whose
    timestamps move backwards raises NonMonotonicTime.
    """
    by_series: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for rec in records:
        by_series.setdefault((rec.resource_id, rec.meter), []).append(
            (rec.timestamp, rec.value)
        )

    # (resource, timestamp) -> {feature_name: value}
    cells: dict[tuple[str, float], dict[str, float]] = {}
    for (resource_id, meter), points in sorted(by_series.items()):
        points.sort(key=lambda p: p[0])
        for t0, t1 in zip(points, points[1:]):
            if t1[0] <= t0[0]:
                raise NonMonotonicTime(
                    f"resource {resource_id!r} meter {meter!r}: "
                    f"timestamp {t1[0]} does not follow {t0[0]}"
                )
        if meter in CUMULATIVE_TO_RATE:
            feature = METER_TO_FEATURE[CUMULATIVE_TO_RATE[meter]]
            try:
                points = cumulative_to_rate(points)
            except InsufficientData:
                continue
        elif meter in METER_TO_FEATURE:
            feature = METER_TO_FEATURE[meter]
        else:
            # telemetry streams carry plenty of meters this pipeline does
            # not consume (memory, instance state, ...); skip them
            continue
        for ts, value in points:
            cells.setdefault((resource_id, ts), {})[feature] = value

    samples: list[MetricSample] = []
    issues: list[IncompleteWindow] = []
    for (resource_id, ts), values in sorted(cells.items()):
        missing = tuple(name for name in FEATURE_NAMES if name not in values)
        if missing:
            issues.append(IncompleteWindow(resource_id, ts, missing))
            continue
        samples.append(
            MetricSample(ts, resource_id, *(values[name] for name in FEATURE_NAMES))
        )
    return samples, issues


def filter_resources(
    samples: Iterable[MetricSample], allowlist: Iterable[str]
) -> list[MetricSample]:
    """Keep only samples whose resource_id is in the allowlist."""
    keep = frozenset(allowlist)
    return [s for s in samples if s.resource_id in keep]


# ---------------------------------------------------------------------------
# Dataset CSV format: one row per sample, floats written with repr() so a
# read-back is bit-identical.

_BASE_HEADER = ("timestamp", "resource_id")


def _float_str(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, stream: TextIO) -> None:
    """Write a labeled dataset as CSV with a label column."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_BASE_HEADER + ("label",) + FEATURE_NAMES)
    for row in dataset.rows:
        s = row.sample
        writer.writerow(
            [_float_str(s.timestamp), s.resource_id, row.label.name]
            + [_float_str(getattr(s, name)) for name in FEATURE_NAMES]
        )


def write_samples(samples: Iterable[MetricSample], stream: TextIO) -> None:
    """Write unlabeled samples as CSV (no label column)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_BASE_HEADER + FEATURE_NAMES)
    for s in samples:
        writer.writerow(
            [_float_str(s.timestamp), s.resource_id]
            + [_float_str(getattr(s, name)) for name in FEATURE_NAMES]
        )


def read_table(
    stream: TextIO,
) -> tuple[list[MetricSample], list[WorkloadClass] | None]:
    """Read a samples CSV, labeled or not.

    Returns (samples, labels) where labels is None when the file has no
    label column. Raises MalformedRow on structural problems; the header
    decides which layout applies to the whole file.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow(0, "empty file")
    labeled = tuple(header) == _BASE_HEADER + ("label",) + FEATURE_NAMES
    if not labeled and tuple(header) != _BASE_HEADER + FEATURE_NAMES:
        raise MalformedRow(1, "unrecognized header")
    n_cols = len(header)
    samples: list[MetricSample] = []
    labels: list[WorkloadClass] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != n_cols:
            raise MalformedRow(line_no, f"expected {n_cols} fields, got {len(row)}")
        try:
            ts = float(row[0])
            values = [float(v) for v in row[3 if labeled else 2 :]]
        except ValueError as err:
            raise MalformedRow(line_no, str(err))
        if labeled:
            if row[2] not in CLASS_NAMES:
                raise MalformedRow(line_no, f"unknown class {row[2]!r}")
            labels.append(WorkloadClass[row[2]])
        try:
            samples.append(MetricSample(ts, row[1], *values))
        except ValueError as err:
            raise MalformedRow(line_no, str(err))
    return samples, (labels if labeled else None)


def read_dataset(stream: TextIO) -> Dataset:
    """Read a labeled dataset CSV written by :func:`write_dataset`."""
    samples, labels = read_table(stream)
    if labels is None:
        raise MalformedRow(1, "dataset file has no label column")
    return Dataset.from_rows(
        LabeledSample(s, c) for s, c in zip(samples, labels)
    )


def dataset_to_string(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_dataset(dataset, buf)
    return buf.getvalue()
