"""Workload classification from periodic cloud telemetry aggregates.

The package turns streams of 5-second metric aggregates into workload
labels per resource: ``synth``/``ingest`` produce datasets, ``forest``
trains and applies a random forest of CART trees, ``evaluate`` runs
cross-validation, and ``meta`` aggregates per-sample predictions into
hourly alarm decisions.
"""

from .evaluate import (
    EvaluationReport,
    cross_validate,
    majority_accuracy,
    stratified_folds,
)
from .forest import (
    CorruptModel,
    EmptyNode,
    ForestParams,
    RandomForest,
    Split,
    TooFewSamples,
    TreeNode,
    TreeParams,
    VersionMismatch,
    best_split,
    dump_tree,
    feature_importance,
    fit_forest,
    fit_tree,
    forest_votes,
    gini_impurity,
    load_model,
    predict_forest,
    predict_tree,
    save_model,
)
from .ingest import (
    IncompleteWindow,
    InsufficientData,
    MalformedRow,
    NonMonotonicTime,
    RawRecord,
    assemble_samples,
    cumulative_to_rate,
    parse_samples,
    read_dataset,
    read_table,
    write_dataset,
    write_samples,
)
from .meta import (
    EmptyWindow,
    NoValidThreshold,
    PredictionEvent,
    Window,
    WindowDecision,
    decide_window,
    threshold_search,
    windowize,
    write_decisions,
)
from .synth import (
    ClassProfile,
    InvalidProfile,
    Profile,
    SynthConfig,
    default_profile,
    export_scatter,
    load_profile,
    parse_profile,
    synthesize,
)
from .telemetry import (
    CLASS_NAMES,
    FEATURE_NAMES,
    Dataset,
    LabeledSample,
    MetricSample,
    WorkloadClass,
    feature_vector,
    sample_from_vector,
)

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "ClassProfile",
    "CorruptModel",
    "Dataset",
    "EmptyNode",
    "EmptyWindow",
    "EvaluationReport",
    "FEATURE_NAMES",
    "ForestParams",
    "IncompleteWindow",
    "InsufficientData",
    "InvalidProfile",
    "LabeledSample",
    "MalformedRow",
    "MetricSample",
    "NoValidThreshold",
    "NonMonotonicTime",
    "PredictionEvent",
    "Profile",
    "RandomForest",
    "RawRecord",
    "Split",
    "SynthConfig",
    "TooFewSamples",
    "TreeNode",
    "TreeParams",
    "VersionMismatch",
    "Window",
    "WindowDecision",
    "WorkloadClass",
    "assemble_samples",
    "best_split",
    "cross_validate",
    "cumulative_to_rate",
    "decide_window",
    "default_profile",
    "dump_tree",
    "export_scatter",
    "feature_importance",
    "feature_vector",
    "fit_forest",
    "fit_tree",
    "forest_votes",
    "gini_impurity",
    "load_model",
    "load_profile",
    "majority_accuracy",
    "parse_profile",
    "parse_samples",
    "predict_forest",
    "predict_tree",
    "read_dataset",
    "read_table",
    "sample_from_vector",
    "save_model",
    "stratified_folds",
    "synthesize",
    "threshold_search",
    "windowize",
    "write_dataset",
    "write_decisions",
    "write_samples",
    "__version__",
]
