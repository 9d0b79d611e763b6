"""Synthetic telemetry generation from class profiles.

A profile file declares, per workload class, how each of the nine
metrics is distributed, optionally as a mixture of weighted modes (for
behaviours like intermittent data loss). :func:`parse_profile` turns the
text into a :class:`Profile`, :func:`synthesize` draws a balanced
labeled dataset from it, and :func:`export_scatter` dumps two metric
columns per class for plotting.

Mixture weights are honoured exactly: mode and level counts come from a
largest-remainder apportionment of the row budget, so a 3% mode is
never 3.4% of a run by accident. Randomness only decides which rows get
which mode and the values within each mode.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Sequence, TextIO

import numpy as np

from .randomness import DOMAIN_SYNTH, substream
from .telemetry import (
    FEATURE_INDEX,
    FEATURE_NAMES,
    CLASS_NAMES,
    Dataset,
    LabeledSample,
    WorkloadClass,
    sample_from_vector,
)


class InvalidProfile(Exception):
    """A profile file that cannot be used for synthesis."""


# ---------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def validate(self, where: str) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise InvalidProfile(f"{where}: bounds must be finite")
        if self.lo < 0:
            raise InvalidProfile(f"{where}: metrics are non-negative, lo must be >= 0")
        if not self.lo < self.hi:
            raise InvalidProfile(f"{where}: need lo < hi")

    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def draw(self, rng: np.random.Generator, n: int, columns: dict) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, n)


@dataclass(frozen=True)
class LogUniform:
    """Uniform in log space: all decades between lo and hi equally likely."""

    lo: float
    hi: float

    def validate(self, where: str) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise InvalidProfile(f"{where}: bounds must be finite")
        if not 0 < self.lo < self.hi:
            raise InvalidProfile(f"{where}: need 0 < lo < hi")

    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def draw(self, rng: np.random.Generator, n: int, columns: dict) -> np.ndarray:
        return np.exp(rng.uniform(math.log(self.lo), math.log(self.hi), n))


@dataclass(frozen=True)
class Normal:
    """Gaussian; draws below zero are clamped to zero."""

    mean: float
    sd: float

    def validate(self, where: str) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.sd)):
            raise InvalidProfile(f"{where}: parameters must be finite")
        if self.sd <= 0:
            raise InvalidProfile(f"{where}: need sd > 0")

    def support(self) -> tuple[float, float]:
        return (0.0, math.inf)

    def draw(self, rng: np.random.Generator, n: int, columns: dict) -> np.ndarray:
        return np.maximum(rng.normal(self.mean, self.sd, n), 0.0)


@dataclass(frozen=True)
class Levels:
    """Discrete plateaus with relative jitter.

    Each row picks one of the level values (weights apportioned exactly,
    equal by default) and scales it by (1 + u) with u uniform in
    [-jitter, +jitter].
    """

    values: tuple[float, ...]
    jitter: float = 0.0
    weights: tuple[float, ...] | None = None

    def validate(self, where: str) -> None:
        if not self.values:
            raise InvalidProfile(f"{where}: need at least one level")
        for v in self.values:
            if not math.isfinite(v) or v < 0:
                raise InvalidProfile(f"{where}: levels must be finite and >= 0")
        if not 0 <= self.jitter < 1:
            raise InvalidProfile(f"{where}: jitter must be in [0, 1)")
        if self.weights is not None:
            if len(self.weights) != len(self.values):
                raise InvalidProfile(f"{where}: {len(self.values)} levels but "
                                     f"{len(self.weights)} weights")
            if any(w <= 0 for w in self.weights):
                raise InvalidProfile(f"{where}: weights must be positive")
            if abs(sum(self.weights) - 1.0) > 1e-9:
                raise InvalidProfile(f"{where}: weights must sum to 1")

    def support(self) -> tuple[float, float]:
        return (min(self.values) * (1 - self.jitter),
                max(self.values) * (1 + self.jitter))

    def draw(self, rng: np.random.Generator, n: int, columns: dict) -> np.ndarray:
        weights = self.weights or (1.0 / len(self.values),) * len(self.values)
        counts = mixture_counts(weights, n)
        base = np.repeat(np.asarray(self.values, dtype=np.float64), counts)
        base = base[rng.permutation(n)]
        if self.jitter:
            base = base * (1.0 + rng.uniform(-self.jitter, self.jitter, n))
        return base


@dataclass(frozen=True)
class Ratio:
    """A metric derived by dividing an earlier metric by a random factor.

    Used for packet rates, where the factor plays the role of a
    bytes-per-packet size. The source must come earlier in canonical
    feature order so its column exists when this one is drawn.
    """

    source: str
    divisor: "Distribution"

    def validate(self, where: str) -> None:
        if self.source not in FEATURE_INDEX:
            raise InvalidProfile(f"{where}: unknown source metric {self.source!r}")
        if isinstance(self.divisor, Ratio):
            raise InvalidProfile(f"{where}: ratio divisors cannot nest")
        self.divisor.validate(where + " divisor")
        lo, _ = self.divisor.support()
        if lo <= 0:
            raise InvalidProfile(f"{where}: divisor support must exclude zero")

    def support(self) -> tuple[float, float]:
        raise NotImplementedError("resolved per-mode via Mode.support")

    def draw(self, rng: np.random.Generator, n: int, columns: dict) -> np.ndarray:
        return columns[self.source] / self.divisor.draw(rng, n, columns)


Distribution = Uniform | LogUniform | Normal | Levels | Ratio

_DIST_NAMES = {
    "uniform": Uniform,
    "log_uniform": LogUniform,
    "normal": Normal,
    "levels": Levels,
    "ratio": Ratio,
}


def mixture_counts(weights: Sequence[float], n: int) -> list[int]:
    """Apportion n items to weights exactly (largest remainder).

    Counts always sum to n; ties in remainder go to the earlier entry.
    """
    quotas = [w * n for w in weights]
    counts = [math.floor(q) for q in quotas]
    short = n - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


# ---------------------------------------------------------------------------
# Profile text format


@dataclass(frozen=True)
class Mode:
    weight: float
    dists: dict[str, Distribution]

    def support(self, feature: str) -> tuple[float, float]:
        """Smallest interval guaranteed to contain every draw of `feature`."""
        dist = self.dists[feature]
        if isinstance(dist, Ratio):
            src_lo, src_hi = self.support(dist.source)
            div_lo, div_hi = dist.divisor.support()
            return (src_lo / div_hi, src_hi / div_lo)
        return dist.support()


@dataclass(frozen=True)
class ClassProfile:
    modes: tuple[Mode, ...]


@dataclass(frozen=True)
class Profile:
    classes: dict[WorkloadClass, ClassProfile]


_KEY_RE = re.compile(r"^(\w+)(?:\[(\d+)\])?\.(\w+)$")


def _parse_dist(text: str, where: str) -> Distribution:
    text = text.strip()
    m = re.match(r"^(\w+)\((.*)\)$", text, re.DOTALL)
    if not m:
        raise InvalidProfile(f"{where}: cannot parse distribution {text!r}")
    name, inner = m.group(1), m.group(2).strip()
    cls = _DIST_NAMES.get(name)
    if cls is None:
        raise InvalidProfile(f"{where}: unknown distribution {name!r}")

    if cls is Ratio:
        head, sep, rest = inner.partition(",")
        if not sep:
            raise InvalidProfile(f"{where}: ratio needs (source, divisor)")
        dist = _parse_dist(rest, where)
        return Ratio(head.strip(), dist)

    parts = [p.strip() for p in inner.split(";")]
    try:
        positional = [float(v) for v in parts[0].split(",") if v.strip()]
    except ValueError:
        raise InvalidProfile(f"{where}: bad numeric arguments in {text!r}")
    options: dict[str, str] = {}
    for part in parts[1:]:
        key, sep, val = part.partition("=")
        if not sep:
            raise InvalidProfile(f"{where}: expected key=value, got {part!r}")
        options[key.strip()] = val.strip()

    if cls is Levels:
        kwargs = {}
        if "jitter" in options:
            try:
                kwargs["jitter"] = float(options.pop("jitter"))
            except ValueError:
                raise InvalidProfile(f"{where}: bad jitter value")
        if "weights" in options:
            try:
                kwargs["weights"] = tuple(
                    float(v) for v in options.pop("weights").split(",")
                )
            except ValueError:
                raise InvalidProfile(f"{where}: bad weights value")
        if options:
            raise InvalidProfile(f"{where}: unknown options {sorted(options)}")
        return Levels(tuple(positional), **kwargs)

    if options:
        raise InvalidProfile(f"{where}: {name} takes no options")
    if len(positional) != 2:
        raise InvalidProfile(f"{where}: {name} takes exactly 2 arguments")
    return cls(*positional)


def parse_profile(text: str) -> Profile:
    """Parse profile text; raises InvalidProfile with the offending line."""
    # (class, mode) -> {metric: dist}, plus explicit mode weights
    dists: dict[tuple[str, int], dict[str, Distribution]] = {}
    weights: dict[tuple[str, int], float] = {}
    seen: set[str] = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {line_no}"
        key_text, sep, value_text = line.partition("=")
        if not sep:
            raise InvalidProfile(f"{where}: expected key = value")
        key_text = key_text.strip()
        if key_text in seen:
            raise InvalidProfile(f"{where}: duplicate key {key_text!r}")
        seen.add(key_text)
        m = _KEY_RE.match(key_text)
        if not m:
            raise InvalidProfile(f"{where}: cannot parse key {key_text!r}")
        class_name, mode_text, metric = m.groups()
        if class_name not in CLASS_NAMES:
            raise InvalidProfile(f"{where}: unknown class {class_name!r}")
        mode = int(mode_text) if mode_text is not None else 0
        if metric == "weight":
            if mode == 0:
                raise InvalidProfile(
                    f"{where}: mode 0 weight is implicit (1 minus the others)"
                )
            try:
                weights[(class_name, mode)] = float(value_text.strip())
            except ValueError:
                raise InvalidProfile(f"{where}: bad weight value")
            continue
        if metric not in FEATURE_INDEX:
            raise InvalidProfile(f"{where}: unknown metric {metric!r}")
        dist = _parse_dist(value_text, where)
        dist.validate(where)
        dists.setdefault((class_name, mode), {})[metric] = dist

    classes: dict[WorkloadClass, ClassProfile] = {}
    for cls in WorkloadClass:
        mode_ids = sorted(m for (c, m) in dists if c == cls.name)
        if not mode_ids:
            raise InvalidProfile(f"class {cls.name} has no entries")
        if mode_ids != list(range(len(mode_ids))):
            raise InvalidProfile(
                f"class {cls.name}: mode indices must be contiguous from 0, "
                f"got {mode_ids}"
            )
        modes = []
        total_extra = 0.0
        for mode in mode_ids:
            mode_dists = dists[(cls.name, mode)]
            missing = [f for f in FEATURE_NAMES if f not in mode_dists]
            if missing:
                raise InvalidProfile(
                    f"class {cls.name} mode {mode}: missing {', '.join(missing)}"
                )
            for metric, dist in mode_dists.items():
                if isinstance(dist, Ratio):
                    if dist.source not in mode_dists:
                        raise InvalidProfile(
                            f"class {cls.name} mode {mode} {metric}: "
                            f"ratio source {dist.source!r} not defined"
                        )
                    if FEATURE_INDEX[dist.source] >= FEATURE_INDEX[metric]:
                        raise InvalidProfile(
                            f"class {cls.name} mode {mode} {metric}: ratio source "
                            f"must come earlier in canonical feature order"
                        )
            if mode == 0:
                if (cls.name, 0) in weights:
                    raise InvalidProfile(f"class {cls.name}: mode 0 cannot set weight")
                modes.append(Mode(0.0, mode_dists))  # weight fixed up below
            else:
                w = weights.pop((cls.name, mode), None)
                if w is None:
                    raise InvalidProfile(
                        f"class {cls.name} mode {mode}: missing weight"
                    )
                if not 0 < w < 1:
                    raise InvalidProfile(
                        f"class {cls.name} mode {mode}: weight must be in (0, 1)"
                    )
                total_extra += w
                modes.append(Mode(w, mode_dists))
        if total_extra >= 1.0:
            raise InvalidProfile(f"class {cls.name}: mode weights sum to >= 1")
        modes[0] = Mode(1.0 - total_extra, modes[0].dists)
        classes[cls] = ClassProfile(tuple(modes))

    stray = [f"{c} mode {m}" for (c, m) in weights]
    if stray:
        raise InvalidProfile(f"weight for undefined mode(s): {', '.join(stray)}")
    return Profile(classes)


def load_profile(stream: TextIO) -> Profile:
    return parse_profile(stream.read())


def default_profile() -> Profile:
    """The built-in profile shipped with the package."""
    text = (
        resources.files("meterguard")
        .joinpath("profiles/default.profile")
        .read_text(encoding="utf-8")
    )
    return parse_profile(text)


# ---------------------------------------------------------------------------
# Generation


@dataclass(frozen=True)
class SynthConfig:
    samples_per_class: int = 7201
    resources_per_class: int = 1
    cadence: float = 5.0
    seed: int = 1

    def __post_init__(self) -> None:
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if not 1 <= self.resources_per_class <= self.samples_per_class:
            raise ValueError("resources_per_class must be in [1, samples_per_class]")
        if self.cadence <= 0:
            raise ValueError("cadence must be positive")


def _class_matrix(
    profile: ClassProfile, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw an (n, 9) matrix for one class in canonical feature order."""
    counts = mixture_counts([m.weight for m in profile.modes], n)
    mode_of_row = np.repeat(np.arange(len(profile.modes)), counts)
    mode_of_row = mode_of_row[rng.permutation(n)]
    out = np.empty((n, len(FEATURE_NAMES)), dtype=np.float64)
    for k, mode in enumerate(profile.modes):
        rows = np.flatnonzero(mode_of_row == k)
        columns: dict[str, np.ndarray] = {}
        for name in FEATURE_NAMES:
            columns[name] = mode.dists[name].draw(rng, rows.size, columns)
        for j, name in enumerate(FEATURE_NAMES):
            out[rows, j] = columns[name]
    return out


def synthesize(config: SynthConfig, profile: Profile | None = None) -> Dataset:
    """Draw a balanced labeled dataset: samples_per_class rows per class.

    Rows are ordered by class ordinal, then resource, then time. Each
    resource's series starts at t=0 and advances by the cadence. Each
    class consumes an independent RNG substream of config.seed, so
    editing one class's profile leaves the other classes' draws alone.
    """
    if profile is None:
        profile = default_profile()
    rows: list[LabeledSample] = []
    n = config.samples_per_class
    per_resource = mixture_counts(
        [1.0 / config.resources_per_class] * config.resources_per_class, n
    )
    for cls in WorkloadClass:
        rng = substream(config.seed, DOMAIN_SYNTH, int(cls))
        matrix = _class_matrix(profile.classes[cls], n, rng)
        row = 0
        for r, count in enumerate(per_resource):
            resource_id = f"{cls.name.lower()}-{r:02d}"
            for i in range(count):
                rows.append(
                    LabeledSample(
                        sample_from_vector(
                            i * config.cadence, resource_id, matrix[row]
                        ),
                        cls,
                    )
                )
                row += 1
    return Dataset.from_rows(rows)


def export_scatter(
    dataset: Dataset, feature_x: str, feature_y: str, stream: TextIO
) -> None:
    """Write label,x,y CSV rows for plotting one metric against another."""
    for name in (feature_x, feature_y):
        if name not in FEATURE_INDEX:
            raise ValueError(f"unknown feature {name!r}")
    stream.write(f"label,{feature_x},{feature_y}\n")
    xi, yi = FEATURE_INDEX[feature_x], FEATURE_INDEX[feature_y]
    matrix = dataset.feature_matrix()
    labels = dataset.labels()
    for i in range(len(dataset)):
        stream.write(
            f"{WorkloadClass(int(labels[i])).name},"
            f"{float(matrix[i, xi])!r},{float(matrix[i, yi])!r}\n"
        )
