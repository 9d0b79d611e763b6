"""Command line entry points.

Subcommands cover the full pipeline: synth -> crossval / train ->
predict -> meta / threshold-search, plus export-scatter and dump-tree
for inspection. Options resolve in three layers: built-in defaults,
then an optional ``--config`` file of ``key = value`` lines, then
explicit flags.

Exit codes: 0 success, 1 unexpected failure, 2 usage problems,
3 unreadable or inconsistent data, 4 unusable model file, 5 no valid
dissent threshold exists. All file outputs are written to a temp file
and renamed into place, so readers never observe a half-written file.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from . import evaluate, forest, ingest, meta, synth
from .telemetry import (
    FEATURE_INDEX,
    FEATURE_NAMES,
    MetricSample,
    WorkloadClass,
    feature_vector,
)


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Option schema: every option is declared once, with its converter, so
# values from the config file and from flags go through identical parsing.


class _Opt:
    def __init__(self, name, convert, default=None, required=False, help=""):
        self.name = name
        self.convert = convert
        self.default = default
        self.required = required
        self.help = help


def _c_int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise _UsageError(f"expected an integer, got {raw!r}")


def _c_pos_int(raw: str) -> int:
    v = _c_int(raw)
    if v < 1:
        raise _UsageError(f"expected a positive integer, got {raw!r}")
    return v


def _c_float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise _UsageError(f"expected a number, got {raw!r}")


def _c_bool(raw: str) -> bool:
    if raw in ("true", "false"):
        return raw == "true"
    raise _UsageError(f"expected true or false, got {raw!r}")


def _c_fps(raw: str) -> int | str:
    return "all" if raw == "all" else _c_pos_int(raw)


def _c_depth(raw: str) -> int | None:
    if raw == "none":
        return None
    v = _c_int(raw)
    if v < 0:
        raise _UsageError(f"depth cannot be negative, got {raw!r}")
    return v


def _c_str(raw: str) -> str:
    return raw


_FOREST_OPTS = [
    _Opt("trees", _c_pos_int, 100, help="number of trees in the forest"),
    _Opt("features-per-split", _c_fps, 3,
         help="features drawn per split: a count or 'all'"),
    _Opt("bootstrap", _c_bool, True,
         help="true to train each tree on a bootstrap resample"),
    _Opt("max-depth", _c_depth, None, help="depth limit, or 'none'"),
    _Opt("min-samples-split", _c_pos_int, 2,
         help="smallest node that may still split"),
    _Opt("min-samples-leaf", _c_pos_int, 1, help="smallest allowed leaf"),
    _Opt("seed", _c_int, 1, help="RNG seed"),
]

_WINDOW_OPTS = [
    _Opt("window", _c_float, 3600.0, help="window duration in seconds"),
    _Opt("cadence", _c_float, 5.0, help="sampling interval in seconds"),
    _Opt("step", _c_float, None,
         help="window start spacing for sliding mode (default: tumbling)"),
]

_COMMANDS: dict[str, tuple[str, list[_Opt]]] = {
    "synth": ("generate a labeled synthetic dataset", [
        _Opt("out", _c_str, required=True, help="output dataset CSV"),
        _Opt("samples-per-class", _c_pos_int, 7201),
        _Opt("resources-per-class", _c_pos_int, 1),
        _Opt("cadence", _c_float, 5.0, help="sampling interval in seconds"),
        _Opt("seed", _c_int, 1, help="RNG seed"),
        _Opt("profile", _c_str, None, help="profile file (default: built-in)"),
    ]),
    "crossval": ("cross-validate a forest configuration", [
        _Opt("data", _c_str, required=True, help="labeled dataset CSV"),
        _Opt("out-dir", _c_str, required=True, help="directory for report CSVs"),
        _Opt("folds", _c_pos_int, 10),
        *_FOREST_OPTS,
    ]),
    "train": ("fit a forest and save it", [
        _Opt("data", _c_str, required=True, help="labeled dataset CSV"),
        _Opt("model-out", _c_str, required=True, help="output model file"),
        *_FOREST_OPTS,
    ]),
    "predict": ("classify samples with a saved model", [
        _Opt("model", _c_str, required=True, help="model file from train"),
        _Opt("data", _c_str, required=True, help="samples CSV, labeled or not"),
        _Opt("out", _c_str, required=True, help="output predictions CSV"),
    ]),
    "meta": ("reduce predictions to per-window alarm decisions", [
        _Opt("predictions", _c_str, required=True, help="CSV from predict"),
        _Opt("out", _c_str, required=True, help="output decisions CSV"),
        _Opt("threshold", _c_float, 0.05, help="dissent threshold in [0, 1]"),
        *_WINDOW_OPTS,
    ]),
    "threshold-search": ("find the tightest dissent threshold that decides "
                         "every labeled window correctly", [
        _Opt("predictions", _c_str, required=True,
             help="CSV from predict, with true classes"),
        _Opt("out", _c_str, None, help="optional decisions CSV"),
        *_WINDOW_OPTS,
    ]),
    "export-scatter": ("dump two metric columns per class for plotting", [
        _Opt("data", _c_str, required=True, help="labeled dataset CSV"),
        _Opt("x", _c_str, required=True, help="feature for the x axis"),
        _Opt("y", _c_str, required=True, help="feature for the y axis"),
        _Opt("out", _c_str, required=True, help="output scatter CSV"),
    ]),
    "dump-tree": ("print one tree of a saved model", [
        _Opt("model", _c_str, required=True, help="model file from train"),
        _Opt("tree", _c_int, 0, help="tree index"),
        _Opt("depth", _c_depth, None, help="levels to show, or 'none' for all"),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meterguard",
        description="workload classification from 5-second telemetry aggregates",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (blurb, opts) in _COMMANDS.items():
        p = sub.add_parser(name, help=blurb, description=blurb)
        p.add_argument("--config", default=None, metavar="FILE",
                       help="file of key = value option defaults")
        for opt in opts:
            p.add_argument(
                f"--{opt.name}",
                dest=opt.name.replace("-", "_"),
                default=argparse.SUPPRESS,
                metavar="V",
                help=opt.help + (" (required)" if opt.required else
                                 f" (default {opt.default})" if opt.default is not None
                                 else ""),
            )
    return parser


def _read_config_pairs(path: str) -> list[tuple[str, str]]:
    pairs = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise _UsageError(f"cannot read config file: {err}")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise _UsageError(f"config line {line_no}: expected key = value")
        pairs.append((key.strip().replace("-", "_"), value.strip()))
    return pairs


def _resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags; convert and validate."""
    opts = {o.name.replace("-", "_"): o for o in _COMMANDS[command][1]}
    values = {k: o.default for k, o in opts.items()}
    if args.config is not None:
        for key, raw in _read_config_pairs(args.config):
            if key not in opts:
                raise _UsageError(f"config: unknown option {key!r} for {command}")
            values[key] = opts[key].convert(raw)
    for key, raw in vars(args).items():
        if key in ("command", "config", "func"):
            continue
        values[key] = opts[key].convert(raw)
    missing = [k for k, o in opts.items() if o.required and values[k] is None]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise _UsageError(f"{command}: missing required option(s): {flags}")
    return values


# ---------------------------------------------------------------------------
# Shared I/O helpers


def _atomic_write(path_text: str, render: Callable[[TextIO], None]) -> None:
    path = Path(path_text)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fd = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", newline="", dir=path.parent or ".",
        prefix=path.name + ".", suffix=".tmp", delete=False,
    )
    try:
        with fd:
            render(fd)
        os.replace(fd.name, path)
    except BaseException:
        try:
            os.unlink(fd.name)
        except OSError:
            pass
        raise


def _forest_params(v: dict) -> forest.ForestParams:
    try:
        return forest.ForestParams(
            n_trees=v["trees"],
            bootstrap=v["bootstrap"],
            tree=forest.TreeParams(
                max_depth=v["max_depth"],
                min_samples_split=v["min_samples_split"],
                min_samples_leaf=v["min_samples_leaf"],
                features_per_split=v["features_per_split"],
            ),
        )
    except ValueError as err:
        raise _UsageError(str(err))


def _read_dataset(path: str):
    with open(path, encoding="utf-8", newline="") as f:
        return ingest.read_dataset(f)


def _load_model(path: str) -> forest.RandomForest:
    with open(path, encoding="utf-8") as f:
        return forest.load_model(f)


def _matrix_of(samples: list[MetricSample]) -> np.ndarray:
    out = np.empty((len(samples), len(FEATURE_NAMES)), dtype=np.float64)
    for i, s in enumerate(samples):
        out[i] = feature_vector(s)
    return out


_PRED_HEADER = ("timestamp", "resource_id", "predicted_class", "vote_fraction")


def _read_predictions(path: str) -> list[meta.PredictionEvent]:
    import csv

    events: list[meta.PredictionEvent] = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ingest.MalformedRow(0, "empty predictions file")
        if header == _PRED_HEADER:
            labeled = False
        elif header == _PRED_HEADER + ("true_class",):
            labeled = True
        else:
            raise ingest.MalformedRow(1, "unrecognized predictions header")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ingest.MalformedRow(
                    line_no, f"expected {len(header)} fields, got {len(row)}"
                )
            try:
                ts = float(row[0])
            except ValueError:
                raise ingest.MalformedRow(line_no, f"bad timestamp {row[0]!r}")
            for cell in (row[2],) + ((row[4],) if labeled else ()):
                if cell not in WorkloadClass.__members__:
                    raise ingest.MalformedRow(line_no, f"unknown class {cell!r}")
            events.append(
                meta.PredictionEvent(
                    timestamp=ts,
                    resource_id=row[1],
                    predicted=WorkloadClass[row[2]],
                    truth=WorkloadClass[row[4]] if labeled else None,
                )
            )
    return events


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(v: dict) -> int:
    if v["profile"] is not None:
        with open(v["profile"], encoding="utf-8") as f:
            profile = synth.load_profile(f)
    else:
        profile = synth.default_profile()
    try:
        config = synth.SynthConfig(
            samples_per_class=v["samples_per_class"],
            resources_per_class=v["resources_per_class"],
            cadence=v["cadence"],
            seed=v["seed"],
        )
    except ValueError as err:
        raise _UsageError(str(err))
    dataset = synth.synthesize(config, profile)
    _atomic_write(v["out"], lambda f: ingest.write_dataset(dataset, f))
    print(f"wrote {len(dataset)} rows to {v['out']}")
    return 0


def cmd_crossval(v: dict) -> int:
    dataset = _read_dataset(v["data"])
    params = _forest_params(v)
    report = evaluate.cross_validate(
        dataset.feature_matrix(), dataset.labels(),
        params, k=v["folds"], rng_seed=v["seed"],
    )
    out_dir = Path(v["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(str(out_dir / "confusion.csv"),
                  lambda f: evaluate.write_confusion(report.confusion, f))
    _atomic_write(str(out_dir / "folds.csv"),
                  lambda f: evaluate.write_fold_accuracies(report.fold_accuracies, f))
    _atomic_write(str(out_dir / "importances.csv"),
                  lambda f: evaluate.write_importances(report.importances, f))
    baseline = evaluate.majority_accuracy(dataset.labels())
    sys.stdout.write(evaluate.render_summary(report, baseline))
    print(f"reports written to {out_dir}")
    return 0


def cmd_train(v: dict) -> int:
    dataset = _read_dataset(v["data"])
    params = _forest_params(v)
    model = forest.fit_forest(
        dataset.feature_matrix(), dataset.labels(), params, v["seed"]
    )
    _atomic_write(v["model_out"], lambda f: forest.save_model(model, f))
    print(f"trained {model.n_trees} trees on {len(dataset)} rows "
          f"-> {v['model_out']}")
    return 0


def cmd_predict(v: dict) -> int:
    model = _load_model(v["model"])
    with open(v["data"], encoding="utf-8", newline="") as f:
        samples, labels = ingest.read_table(f)
    if not samples:
        raise ingest.MalformedRow(1, "no samples to classify")
    votes = forest.forest_votes(model, _matrix_of(samples))
    preds = np.argmax(votes, axis=1)
    frac = votes[np.arange(len(samples)), preds] / model.n_trees

    def render(f: TextIO) -> None:
        f.write(",".join(_PRED_HEADER))
        f.write(",true_class\n" if labels is not None else "\n")
        for i, s in enumerate(samples):
            row = (f"{s.timestamp!r},{s.resource_id},"
                   f"{WorkloadClass(int(preds[i])).name},{float(frac[i])!r}")
            if labels is not None:
                row += f",{labels[i].name}"
            f.write(row + "\n")

    _atomic_write(v["out"], render)
    print(f"classified {len(samples)} samples -> {v['out']}")
    return 0


def _windows_from(v: dict) -> list[meta.Window]:
    events = _read_predictions(v["predictions"])
    return meta.windowize(
        events, duration=v["window"], cadence=v["cadence"], step=v["step"]
    )


def cmd_meta(v: dict) -> int:
    if not 0.0 <= v["threshold"] <= 1.0:
        raise _UsageError("threshold must be within [0, 1]")
    windows = _windows_from(v)
    decisions = [meta.decide_window(w, v["threshold"]) for w in windows]
    _atomic_write(v["out"], lambda f: meta.write_decisions(decisions, f))
    decided = sum(d.decided for d in decisions)
    print(f"{decided}/{len(decisions)} windows decided -> {v['out']}")
    return 0


def cmd_threshold_search(v: dict) -> int:
    windows = _windows_from(v)
    theta_star, decisions = meta.threshold_search(windows)
    if v["out"] is not None:
        _atomic_write(v["out"], lambda f: meta.write_decisions(decisions, f))
    print(f"theta_star {theta_star!r} over {len(decisions)} windows")
    return 0


def cmd_export_scatter(v: dict) -> int:
    for axis in ("x", "y"):
        if v[axis] not in FEATURE_INDEX:
            raise _UsageError(
                f"unknown feature {v[axis]!r}; choose from: "
                + ", ".join(FEATURE_NAMES)
            )
    dataset = _read_dataset(v["data"])
    _atomic_write(v["out"],
                  lambda f: synth.export_scatter(dataset, v["x"], v["y"], f))
    print(f"wrote scatter data to {v['out']}")
    return 0


def cmd_dump_tree(v: dict) -> int:
    model = _load_model(v["model"])
    if not 0 <= v["tree"] < model.n_trees:
        raise _UsageError(
            f"tree index {v['tree']} out of range (model has {model.n_trees})"
        )
    sys.stdout.write(forest.dump_tree(model.trees[v["tree"]], v["depth"]))
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "crossval": cmd_crossval,
    "train": cmd_train,
    "predict": cmd_predict,
    "meta": cmd_meta,
    "threshold-search": cmd_threshold_search,
    "export-scatter": cmd_export_scatter,
    "dump-tree": cmd_dump_tree,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = _resolve_options(args.command, args)
        return _DISPATCH[args.command](values)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (forest.VersionMismatch, forest.CorruptModel) as err:
        print(f"model error: {err}", file=sys.stderr)
        return 4
    except meta.NoValidThreshold as err:
        print(f"threshold search failed: {err}", file=sys.stderr)
        return 5
    except (
        ingest.MalformedRow,
        ingest.InsufficientData,
        ingest.NonMonotonicTime,
        ingest.IncompleteWindow,
        synth.InvalidProfile,
        forest.EmptyNode,
        forest.TooFewSamples,
        meta.EmptyWindow,
        ValueError,
        OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except Exception as err:  # pragma: no cover - defensive
        print(f"internal error: {err!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
