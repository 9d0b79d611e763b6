"""Hourly alarm decisions on top of per-sample predictions.

Per-sample classifications are noisy; operators act on longer windows.
:func:`windowize` groups a prediction stream into epoch-aligned windows
per resource (tumbling by default, sliding when a step is given).
:func:`decide_window` reduces one window to its modal class and a
dissent score, the fraction of predictions that disagree with the mode;
the window is Decided when dissent stays within a threshold.
:func:`threshold_search` finds the tightest threshold that still
decides every labeled window correctly.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from .telemetry import WorkloadClass


class EmptyWindow(Exception):
    """A window with no predictions cannot be decided."""


class NoValidThreshold(Exception):
    """No dissent threshold can decide every window correctly.

    Raised when some window's modal class disagrees with its label, so
    relaxing the threshold can never fix it. Carries the offending
    decisions.
    """

    def __init__(self, offenders: "tuple[WindowDecision, ...]"):
        what = ", ".join(
            f"{d.resource_id}@{d.start:g} modal={d.modal_class.name}"
            f" truth={d.true_class.name}" for d in offenders
        )
        super().__init__(f"modal class wrong in {len(offenders)} window(s): {what}")
        self.offenders = offenders


@dataclass(frozen=True)
class PredictionEvent:
    """One classified sample flowing into the alarm stage."""

    timestamp: float
    resource_id: str
    predicted: WorkloadClass
    truth: WorkloadClass | None = None


@dataclass(frozen=True)
class Window:
    resource_id: str
    start: float
    duration: float
    predictions: tuple[WorkloadClass, ...]
    partial: bool
    true_class: WorkloadClass | None = None


@dataclass(frozen=True)
class WindowDecision:
    resource_id: str
    start: float
    n: int
    modal_class: WorkloadClass
    dissent: float
    decided: bool
    true_class: WorkloadClass | None = None

    @property
    def verdict(self) -> str:
        return "decided" if self.decided else "undecided"


def windowize(
    events: Iterable[PredictionEvent],
    duration: float = 3600.0,
    cadence: float = 5.0,
    step: float | None = None,
) -> list[Window]:
    """Group prediction events into per-resource windows.

    Windows are aligned to the epoch: starts are multiples of `duration`
    (tumbling, the default) or of `step` (sliding; each event then lands
    in every window [start, start + duration) covering it). A window is
    partial when it holds fewer than floor(duration / cadence) events.
    Tumbling windows partition the stream: every event lands in exactly
    one.

    Events may arrive unsorted; predictions inside a window come out in
    time order. A window mixing different truth labels is refused.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if cadence <= 0:
        raise ValueError("cadence must be positive")
    if step is not None and step <= 0:
        raise ValueError("step must be positive")

    buckets: dict[tuple[str, float], list[PredictionEvent]] = {}
    for ev in events:
        if step is None:
            starts = [math.floor(ev.timestamp / duration) * duration]
        else:
            # every step-aligned start with start <= t < start + duration
            first = (math.floor((ev.timestamp - duration) / step) + 1) * step
            starts = []
            s = first
            while s <= ev.timestamp:
                if ev.timestamp < s + duration:
                    starts.append(s)
                s += step
        for start in starts:
            buckets.setdefault((ev.resource_id, float(start)), []).append(ev)

    expected = math.floor(duration / cadence)
    windows = []
    for (resource_id, start), evs in sorted(buckets.items()):
        evs.sort(key=lambda e: e.timestamp)
        truths = {e.truth for e in evs}
        if len(truths) > 1:
            raise ValueError(
                f"window {resource_id!r}@{start:g} mixes truth labels: "
                f"{sorted(t.name if t else 'none' for t in truths)}"
            )
        windows.append(
            Window(
                resource_id=resource_id,
                start=start,
                duration=duration,
                predictions=tuple(e.predicted for e in evs),
                partial=len(evs) < expected,
                true_class=next(iter(truths)),
            )
        )
    return windows


def decide_window(window: Window, threshold: float) -> WindowDecision:
    """Reduce a window to (modal class, dissent, decided).

    Dissent is the fraction of predictions disagreeing with the modal
    class; the window is decided when dissent <= threshold. Modal ties
    resolve to the lowest class ordinal.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be within [0, 1]")
    n = len(window.predictions)
    if n == 0:
        raise EmptyWindow(f"window {window.resource_id!r}@{window.start:g} is empty")
    tally = Counter(int(p) for p in window.predictions)
    modal = min(tally, key=lambda c: (-tally[c], c))
    # count ratio rather than 1 - share: a single division stays exact
    # for clean fractions, so thresholds like 0.3 compare predictably
    dissent = (n - tally[modal]) / n
    return WindowDecision(
        resource_id=window.resource_id,
        start=window.start,
        n=n,
        modal_class=WorkloadClass(modal),
        dissent=dissent,
        decided=dissent <= threshold,
        true_class=window.true_class,
    )


def threshold_search(
    windows: Sequence[Window],
) -> tuple[float, list[WindowDecision]]:
    """Smallest threshold that decides every labeled window correctly.

    Because a window is decided exactly when its dissent is within the
    threshold, that smallest value is the maximum dissent over the
    windows, provided each window's modal class matches its label.
    Returns (theta_star, decisions evaluated at theta_star). Raises
    NoValidThreshold when some modal class is simply wrong, and
    ValueError when windows are missing labels (or none are given).
    """
    if not windows:
        raise ValueError("no windows to search over")
    if any(w.true_class is None for w in windows):
        raise ValueError("threshold search needs labeled windows")
    probe = [decide_window(w, 1.0) for w in windows]
    wrong = tuple(d for d in probe if d.modal_class != d.true_class)
    if wrong:
        raise NoValidThreshold(wrong)
    theta_star = max(d.dissent for d in probe)
    return theta_star, [decide_window(w, theta_star) for w in windows]


def write_decisions(decisions: Sequence[WindowDecision], stream: TextIO) -> None:
    """CSV rendering of window decisions, one row per window."""
    labeled = any(d.true_class is not None for d in decisions)
    header = "resource_id,window_start,n,modal_class,dissent,verdict"
    stream.write(header + (",true_class\n" if labeled else "\n"))
    for d in decisions:
        row = (
            f"{d.resource_id},{d.start!r},{d.n},{d.modal_class.name},"
            f"{d.dissent!r},{d.verdict}"
        )
        if labeled:
            row += "," + (d.true_class.name if d.true_class is not None else "")
        stream.write(row + "\n")
