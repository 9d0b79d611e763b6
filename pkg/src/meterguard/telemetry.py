"""Core domain types for 5-second telemetry aggregates.

Every record the rest of the package touches is one of the types below:
a :class:`MetricSample` holding the nine per-resource metric readings for
one sampling instant, optionally tagged with a :class:`WorkloadClass` to
form a :class:`LabeledSample`, and bundled into a :class:`Dataset` for
training and evaluation.

The metric order in :data:`FEATURE_NAMES` is canonical. Feature vectors,
CSV columns, model files and importance reports all use this order, so
changing it is a format break.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, fields
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

FEATURE_NAMES: tuple[str, ...] = (
    "cpu_util",
    "disk_read_requests_rate",
    "disk_read_bytes_rate",
    "disk_write_requests_rate",
    "disk_write_bytes_rate",
    "net_incoming_bytes_rate",
    "net_incoming_packets_rate",
    "net_outgoing_bytes_rate",
    "net_outgoing_packets_rate",
)

FEATURE_COUNT = len(FEATURE_NAMES)

FEATURE_INDEX: dict[str, int] = {name: i for i, name in enumerate(FEATURE_NAMES)}

#: Column indices of the four network traffic features.
NETWORK_FEATURES: tuple[int, ...] = tuple(
    i for i, n in enumerate(FEATURE_NAMES) if n.startswith("net_")
)


class WorkloadClass(enum.IntEnum):
    """Workload categories a resource can be running.

    Ordinal values are stable: they define label encoding in feature
    arrays, row/column order in confusion matrices and the tie-break
    order for forest votes.
    """

    Hadoop = 0
    CpuIntensive = 1
    Ddos = 2
    CryptoMining = 3
    NetworkFailure = 4


CLASS_NAMES: tuple[str, ...] = tuple(c.name for c in WorkloadClass)
CLASS_COUNT = len(CLASS_NAMES)


@dataclass(frozen=True)
class MetricSample:
    """One resource's nine metric readings at a single sampling instant.

    All rates are per-second values already reduced from raw counters;
    cpu_util is a percentage. Values must be finite and non-negative,
    which is enforced at construction so downstream code never checks.
    """

    timestamp: float
    resource_id: str
    cpu_util: float
    disk_read_requests_rate: float
    disk_read_bytes_rate: float
    disk_write_requests_rate: float
    disk_write_bytes_rate: float
    net_incoming_bytes_rate: float
    net_incoming_packets_rate: float
    net_outgoing_bytes_rate: float
    net_outgoing_packets_rate: float

    def __post_init__(self) -> None:
        if not self.resource_id:
            raise ValueError("resource_id must be non-empty")
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        for name in FEATURE_NAMES:
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")


# Sanity check: MetricSample fields after the two metadata ones must match
# the canonical feature order exactly.
assert tuple(f.name for f in fields(MetricSample))[2:] == FEATURE_NAMES


def feature_vector(sample: MetricSample) -> tuple[float, ...]:
    """Return the sample's metrics as a tuple in canonical feature order."""
    return tuple(getattr(sample, name) for name in FEATURE_NAMES)


def sample_from_vector(
    timestamp: float, resource_id: str, vector: Sequence[float]
) -> MetricSample:
    """Inverse of :func:`feature_vector`; vector must have 9 entries."""
    if len(vector) != FEATURE_COUNT:
        raise ValueError(f"expected {FEATURE_COUNT} features, got {len(vector)}")
    return MetricSample(timestamp, resource_id, *(float(v) for v in vector))


@dataclass(frozen=True)
class LabeledSample:
    sample: MetricSample
    label: WorkloadClass


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of labeled samples plus cached array views.

    Use :meth:`from_rows` rather than the bare constructor; it checks
    that timestamps are strictly increasing within each resource's
    series, an invariant the windowing stages rely on.
    """

    rows: tuple[LabeledSample, ...]

    @classmethod
    def from_rows(cls, rows: Iterable[LabeledSample]) -> "Dataset":
        rows = tuple(rows)
        last_seen: dict[str, float] = {}
        for row in rows:
            s = row.sample
            prev = last_seen.get(s.resource_id)
            if prev is not None and s.timestamp <= prev:
                raise ValueError(
                    f"timestamps for resource {s.resource_id!r} must be strictly "
                    f"increasing ({s.timestamp} follows {prev})"
                )
            last_seen[s.resource_id] = s.timestamp
        return cls(rows)

    def __len__(self) -> int:
        return len(self.rows)

    @cached_property
    def class_counts(self) -> tuple[int, ...]:
        """Number of rows per class, indexed by WorkloadClass ordinal."""
        tally = Counter(int(row.label) for row in self.rows)
        return tuple(tally.get(c, 0) for c in range(CLASS_COUNT))

    @cached_property
    def _matrix(self) -> np.ndarray:
        out = np.empty((len(self.rows), FEATURE_COUNT), dtype=np.float64)
        for i, row in enumerate(self.rows):
            out[i] = feature_vector(row.sample)
        out.setflags(write=False)
        return out

    @cached_property
    def _labels(self) -> np.ndarray:
        out = np.fromiter(
            (int(row.label) for row in self.rows), dtype=np.int64, count=len(self.rows)
        )
        out.setflags(write=False)
        return out

    def feature_matrix(self) -> np.ndarray:
        """(n_rows, 9) float array of the rows in canonical feature order."""
        return self._matrix

    def labels(self) -> np.ndarray:
        """(n_rows,) int array of WorkloadClass ordinals."""
        return self._labels
