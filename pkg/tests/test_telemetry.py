import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meterguard.telemetry import (
    CLASS_NAMES,
    FEATURE_INDEX,
    FEATURE_NAMES,
    NETWORK_FEATURES,
    Dataset,
    LabeledSample,
    MetricSample,
    WorkloadClass,
    feature_vector,
    sample_from_vector,
)

CANONICAL = (
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


def make_sample(ts=0.0, rid="vm-1", **overrides):
    values = {name: 1.0 for name in FEATURE_NAMES}
    values.update(overrides)
    return MetricSample(timestamp=ts, resource_id=rid, **values)


def test_feature_order_is_canonical():
    assert FEATURE_NAMES == CANONICAL
    assert [FEATURE_INDEX[n] for n in FEATURE_NAMES] == list(range(9))


def test_network_features_are_net_columns():
    assert NETWORK_FEATURES == (5, 6, 7, 8)
    assert all(FEATURE_NAMES[i].startswith("net_") for i in NETWORK_FEATURES)


def test_class_ordinals():
    assert [c.value for c in WorkloadClass] == [0, 1, 2, 3, 4]
    assert CLASS_NAMES == (
        "Hadoop", "CpuIntensive", "Ddos", "CryptoMining", "NetworkFailure",
    )
    assert WorkloadClass.Hadoop == 0
    assert WorkloadClass.NetworkFailure == 4


@pytest.mark.parametrize("bad", [
    {"cpu_util": -0.5},
    {"net_incoming_bytes_rate": float("nan")},
    {"disk_read_bytes_rate": float("inf")},
])
def test_sample_rejects_bad_metrics(bad):
    with pytest.raises(ValueError):
        make_sample(**bad)


def test_sample_rejects_bad_identity():
    with pytest.raises(ValueError):
        make_sample(rid="")
    with pytest.raises(ValueError):
        make_sample(ts=float("nan"))


def test_feature_vector_follows_field_order():
    s = make_sample(**{n: float(i) for i, n in enumerate(FEATURE_NAMES)})
    assert feature_vector(s) == tuple(float(i) for i in range(9))


@given(st.lists(
    st.floats(min_value=0.0, max_value=1e12, allow_nan=False),
    min_size=9, max_size=9,
))
def test_vector_round_trip(values):
    s = sample_from_vector(12.5, "box", values)
    assert feature_vector(s) == tuple(values)
    assert s.timestamp == 12.5 and s.resource_id == "box"


def test_sample_from_vector_wrong_length():
    with pytest.raises(ValueError):
        sample_from_vector(0.0, "box", [1.0] * 8)


def _rows(layout):
    """layout: list of (resource, ts, class) -> LabeledSample list."""
    return [
        LabeledSample(make_sample(ts=ts, rid=rid), cls)
        for rid, ts, cls in layout
    ]


def test_dataset_requires_increasing_time_per_resource():
    rows = _rows([("a", 0.0, WorkloadClass.Hadoop),
                  ("a", 5.0, WorkloadClass.Hadoop),
                  ("b", 0.0, WorkloadClass.Ddos)])
    ds = Dataset.from_rows(rows)
    assert len(ds) == 3

    with pytest.raises(ValueError):
        Dataset.from_rows(_rows([("a", 5.0, WorkloadClass.Hadoop),
                                 ("a", 5.0, WorkloadClass.Hadoop)]))
    with pytest.raises(ValueError):
        Dataset.from_rows(_rows([("a", 5.0, WorkloadClass.Hadoop),
                                 ("a", 0.0, WorkloadClass.Hadoop)]))


def test_dataset_counts_and_arrays():
    rows = _rows([("a", 0.0, WorkloadClass.Hadoop),
                  ("a", 5.0, WorkloadClass.Ddos),
                  ("b", 0.0, WorkloadClass.Ddos)])
    ds = Dataset.from_rows(rows)
    assert ds.class_counts[WorkloadClass.Hadoop] == 1
    assert ds.class_counts[WorkloadClass.Ddos] == 2

    X = ds.feature_matrix()
    y = ds.labels()
    assert X.shape == (3, 9) and X.dtype == np.float64
    assert y.tolist() == [0, 2, 2]
    assert not X.flags.writeable and not y.flags.writeable
    for i, row in enumerate(rows):
        assert tuple(X[i]) == feature_vector(row.sample)


def test_dataset_empty():
    ds = Dataset.from_rows([])
    assert len(ds) == 0
    assert ds.feature_matrix().shape == (0, 9)


def test_metric_values_survive_as_given():
    v = [math.pi, 1e-300, 0.0, 7.25, 1e9, 3.3, 2.2, 1.1, 9.9]
    s = sample_from_vector(0.0, "x", v)
    assert list(feature_vector(s)) == v
