"""Scoring detected motion events against ground truth.

Detections are matched one-to-one to truth events by a greedy sweep in time
order; a pair matches when its temporal overlap covers at least half of the
shorter event. From the matching:

- detection rate   DR  = matched / detected
- recognition rate RR  = correctly recognized matched / matched
  (recognition compares body-part groups)
- missing rate     MR  = unmatched truth / truth
- duration error   MAE = mean |detected duration - truth duration| over
  matched pairs

A metric with a zero denominator is reported as undefined (None), never as
zero. Raw counts are always included so alternative rate definitions can be
recomputed from the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from sleepsentry.events import GROUP_ORDER, group_of

_MIN_OVERLAP = 0.5


@dataclass(frozen=True)
class EventRecord:
    """One event for scoring: a time span plus an optional class label."""

    start: float
    end: float
    label: str | None = None

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("event ends before it starts")

    @property
    def duration(self) -> float:
        return self.end - self.start


def _overlap(a: EventRecord, b: EventRecord) -> float:
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


def _is_match(a: EventRecord, b: EventRecord) -> bool:
    shorter = min(a.duration, b.duration)
    if shorter <= 0.0:
        return _overlap(a, b) > 0.0
    return _overlap(a, b) >= _MIN_OVERLAP * shorter


def match_events(
    detected: list[EventRecord], truth: list[EventRecord]
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching in time order.

    Both lists must be sorted by start time. Returns (detected_index,
    truth_index) pairs; each event appears in at most one pair.
    """
    pairs = []
    i = j = 0
    while i < len(detected) and j < len(truth):
        d, t = detected[i], truth[j]
        if _is_match(d, t):
            pairs.append((i, j))
            i += 1
            j += 1
        elif d.end <= t.end:
            i += 1
        else:
            j += 1
    return pairs


@dataclass
class MetricsReport:
    """Scores plus the raw counts they were computed from."""

    n_truth: int
    n_detected: int
    n_matched: int
    n_missed: int
    n_spurious: int
    detection_rate: float | None
    recognition_rate: float | None
    missing_rate: float | None
    duration_mae: float | None
    confusion_rows: list[str] = field(default_factory=list)
    confusion_columns: list[str] = field(default_factory=list)
    confusion: list[list[int]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "counts": {
                "truth": self.n_truth,
                "detected": self.n_detected,
                "matched": self.n_matched,
                "missed": self.n_missed,
                "spurious": self.n_spurious,
            },
            "detection_rate": self.detection_rate,
            "recognition_rate": self.recognition_rate,
            "missing_rate": self.missing_rate,
            "duration_mae_s": self.duration_mae,
            "confusion": {
                "rows": self.confusion_rows,
                "columns": self.confusion_columns,
                "matrix": self.confusion,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    def format_table(self) -> str:
        def fmt(v, pct=True):
            if v is None:
                return "n/a"
            return f"{100 * v:.2f}%" if pct else f"{v:.3f} s"

        lines = [
            f"truth events:     {self.n_truth}",
            f"detected events:  {self.n_detected}",
            f"matched:          {self.n_matched}"
            f"  (missed {self.n_missed}, spurious {self.n_spurious})",
            f"detection rate:   {fmt(self.detection_rate)}",
            f"recognition rate: {fmt(self.recognition_rate)}",
            f"missing rate:     {fmt(self.missing_rate)}",
            f"duration MAE:     {fmt(self.duration_mae, pct=False)}",
        ]
        if self.confusion_rows:
            width = max(10, max(len(l) for l in self.confusion_columns) + 1)
            header = " " * width + "".join(
                f"{l:>{width}}" for l in self.confusion_columns
            )
            lines.append("confusion (rows = truth):")
            lines.append(header)
            for label, row in zip(self.confusion_rows, self.confusion):
                lines.append(
                    f"{label:<{width}}" + "".join(f"{v:>{width}}" for v in row)
                )
        return "\n".join(lines) + "\n"


def compute_metrics(
    detected: list[EventRecord],
    truth: list[EventRecord],
    matching: list[tuple[int, int]] | None = None,
) -> MetricsReport:
    """Score a detection run; see the module docstring for definitions."""
    detected = sorted(detected, key=lambda e: e.start)
    truth = sorted(truth, key=lambda e: e.start)
    if matching is None:
        matching = match_events(detected, truth)
    n_matched = len(matching)
    n_missed = len(truth) - n_matched
    n_spurious = len(detected) - n_matched

    dr = n_matched / len(detected) if detected else None
    mr = n_missed / len(truth) if truth else None

    correct = 0
    recognized = 0
    abs_errors = []
    for di, ti in matching:
        d, t = detected[di], truth[ti]
        abs_errors.append(abs(d.duration - t.duration))
        if d.label is not None and t.label is not None:
            recognized += 1
            if group_of(d.label) == group_of(t.label):
                correct += 1
    rr = correct / recognized if recognized else None
    mae = sum(abs_errors) / len(abs_errors) if abs_errors else None

    # Group confusion over truth events; a trailing column counts misses and
    # unlabeled matches so each row sums to that group's truth count.
    truth_groups = {group_of(t.label) for t in truth if t.label is not None}
    pred_by_truth: dict[int, str] = {}
    for di, ti in matching:
        if detected[di].label is not None:
            pred_by_truth[ti] = group_of(detected[di].label)
    present = truth_groups | set(pred_by_truth.values())
    ordered = [g for g in GROUP_ORDER if g in present]
    ordered += sorted(present - set(GROUP_ORDER))
    rows = [g for g in ordered if g in truth_groups]
    cols = ordered + ["(missed)"]
    col_index = {g: i for i, g in enumerate(ordered)}
    row_index = {g: i for i, g in enumerate(rows)}
    matrix = [[0] * len(cols) for _ in rows]
    for ti, t in enumerate(truth):
        if t.label is None:
            continue
        r = row_index[group_of(t.label)]
        pred = pred_by_truth.get(ti)
        if pred is None:
            matrix[r][-1] += 1
        else:
            matrix[r][col_index[pred]] += 1

    return MetricsReport(
        n_truth=len(truth),
        n_detected=len(detected),
        n_matched=n_matched,
        n_missed=n_missed,
        n_spurious=n_spurious,
        detection_rate=dr,
        recognition_rate=rr,
        missing_rate=mr,
        duration_mae=mae,
        confusion_rows=rows,
        confusion_columns=cols,
        confusion=matrix,
    )
