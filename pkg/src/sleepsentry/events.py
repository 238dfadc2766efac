"""Motion event segmentation, event features and k-NN classification.

Filtered foreground columns are grouped into motion events: maximal runs of
foreground columns, with runs separated by less than a merge gap fused into
one event. Each event carries

- ``duration``: temporal extent in seconds;
- ``coverage``: peak fraction of subcarriers foreground in any one column;
- ``intensity``: mean absolute amplitude change per second over the event's
  foreground pixels (mean of per-pixel successive differences across all
  antennas, scaled by the sample rate) - translation invariant by
  construction;
- ``antenna_votes``: per-antenna raw foreground pixel counts.

Events are classified into body-part motion classes by a small k-NN over
z-normalized (duration, intensity, coverage) vectors.
"""

from __future__ import annotations

import enum
import os
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

_EPS = 1e-9


class MotionClass(str, enum.Enum):
    """In-place sleep motion classes, grouped by the moving body part."""

    HEAD_SWING = "HeadSwing"
    ARM_UP_DOWN = "ArmUpDown"
    ARM_SWING = "ArmSwing"
    LEG_BEND = "LegBend"
    LEG_STRETCH = "LegStretch"
    TORSO_TWIST = "TorsoTwist"
    ROLLOVER = "Rollover"
    FULL_STRETCH = "FullStretch"


BODY_GROUPS: dict[MotionClass, str] = {
    MotionClass.HEAD_SWING: "Head",
    MotionClass.ARM_UP_DOWN: "Arm",
    MotionClass.ARM_SWING: "Arm",
    MotionClass.LEG_BEND: "Leg",
    MotionClass.LEG_STRETCH: "Leg",
    MotionClass.TORSO_TWIST: "Torso",
    MotionClass.ROLLOVER: "Multiple1",
    MotionClass.FULL_STRETCH: "Multiple2",
}

GROUP_ORDER = ["Head", "Arm", "Leg", "Torso", "Multiple1", "Multiple2"]


def group_of(label) -> str:
    """Body-part group of a class label; unknown labels group as themselves."""
    if isinstance(label, MotionClass):
        return BODY_GROUPS[label]
    try:
        return BODY_GROUPS[MotionClass(label)]
    except ValueError:
        return str(label)


@dataclass
class MotionEvent:
    """One segmented in-place motion."""

    start: float
    duration: float
    intensity: float
    coverage: float
    antenna_votes: tuple[int, ...] = ()
    label: str | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.intensity < 0:
            raise ValueError("intensity must be non-negative")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must be in (0, 1]")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def feature_vector(self) -> np.ndarray:
        return np.array([self.duration, self.intensity, self.coverage], dtype=np.float64)


FEATURE_NAMES = ("duration_s", "intensity_dbm_per_s", "coverage")


class EventSegmenter:
    """Turns a stream of filtered mask columns into motion events.

    Consecutive foreground columns extend the open event; once the run of
    empty columns since the last foreground column reaches the merge gap the
    event closes. Intensity accumulates from per-pixel absolute successive
    amplitude differences (all antennas) at the event's foreground pixels.
    """

    def __init__(
        self,
        sample_rate: float,
        n_antennas: int,
        start_time: float = 0.0,
        merge_gap: float = 0.3,
    ):
        if sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if merge_gap < 0:
            raise ValueError("merge_gap must be non-negative")
        self.sample_rate = sample_rate
        self.start_time = start_time
        self.merge_gap = merge_gap
        self.n_antennas = n_antennas
        self._gap_columns = max(1, int(np.ceil(merge_gap * sample_rate - _EPS)))
        self._col = 0
        self._open = False
        self._first = 0
        self._last_fg = 0
        self._peak = 0
        self._gap = 0
        self._diff_sum = 0.0
        self._diff_terms = 0
        self._votes = np.zeros(n_antennas, dtype=np.int64)

    def _close(self) -> MotionEvent:
        stride = 1.0 / self.sample_rate
        n_cols = self._last_fg - self._first + 1
        intensity = 0.0
        if self._diff_terms > 0:
            intensity = self._diff_sum / self._diff_terms * self.sample_rate
        event = MotionEvent(
            start=self.start_time + self._first * stride,
            duration=n_cols * stride,
            intensity=intensity,
            coverage=self._peak / max(1, self._subcarriers),
            antenna_votes=tuple(int(v) for v in self._votes),
        )
        self._open = False
        self._peak = 0
        self._gap = 0
        self._diff_sum = 0.0
        self._diff_terms = 0
        self._votes = np.zeros(self.n_antennas, dtype=np.int64)
        return event

    def push(
        self,
        grid: np.ndarray,
        diffs: np.ndarray,
        antenna_counts: np.ndarray | None = None,
    ) -> list[MotionEvent]:
        """Feed (M, n) filtered columns with aligned per-column data.

        ``diffs`` is (n, antennas, M): absolute amplitude change of each
        pixel since the previous column. ``antenna_counts`` is (n, antennas):
        raw per-antenna foreground pixel counts per column.
        """
        grid = np.asarray(grid, dtype=bool)
        self._subcarriers = grid.shape[0]
        events = []
        col_counts = grid.sum(axis=0)
        for j in range(grid.shape[1]):
            count = int(col_counts[j])
            if count > 0:
                if not self._open:
                    self._open = True
                    self._first = self._col
                self._last_fg = self._col
                self._gap = 0
                if count > self._peak:
                    self._peak = count
                fg = grid[:, j]
                self._diff_sum += float(diffs[j][:, fg].sum())
                self._diff_terms += count * diffs.shape[1]
                if antenna_counts is not None:
                    self._votes += antenna_counts[j]
            elif self._open:
                self._gap += 1
                if self._gap >= self._gap_columns:
                    events.append(self._close())
            self._col += 1
        return events

    def flush(self) -> list[MotionEvent]:
        """Close any open event at end of stream."""
        return [self._close()] if self._open else []


def segment_motions(
    mask,
    frames_by_antenna: dict[int, list],
    merge_gap: float = 0.3,
    antenna_masks: dict[int, np.ndarray] | None = None,
) -> list[MotionEvent]:
    """Batch segmentation of one filtered mask against its source frames.

    ``mask`` is a ForegroundMask whose grid spans the concatenated frames of
    every antenna in ``frames_by_antenna`` (all antennas must tile the same
    columns). ``antenna_masks`` optionally supplies per-antenna raw label
    grids of the same shape for the antenna vote counts.
    """
    antennas = sorted(frames_by_antenna)
    amps = np.stack(
        [
            np.concatenate([f.pixels for f in frames_by_antenna[a]], axis=1)
            for a in antennas
        ],
        axis=0,
    )  # (A, M, total)
    if amps.shape[1:] != mask.grid.shape:
        raise ValueError(
            f"frames span {amps.shape[1:]}, mask is {mask.grid.shape}"
        )
    diffs = np.zeros_like(amps)
    diffs[:, :, 1:] = np.abs(np.diff(amps, axis=2))
    diffs = np.moveaxis(diffs, 2, 0)  # (total, A, M)
    counts = None
    if antenna_masks is not None:
        counts = np.stack(
            [antenna_masks[a].sum(axis=0) for a in antennas], axis=1
        ).astype(np.int64)  # (total, A)
    rate = 1.0 / mask.sample_stride
    segmenter = EventSegmenter(
        sample_rate=rate,
        n_antennas=len(antennas),
        start_time=mask.start_time,
        merge_gap=merge_gap,
    )
    events = segmenter.push(mask.grid, diffs, counts)
    events.extend(segmenter.flush())
    return events


class FeatureStats:
    """Per-feature affine normalization fitted on training data only."""

    def __init__(self):
        self.mean_: np.ndarray | None = None
        self.scale_: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "FeatureStats":
        X = np.asarray(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
        self.scale_ = scale
        return self

    @property
    def fitted(self) -> bool:
        return self.mean_ is not None

    def transform(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("feature stats not fitted")
        return (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_


def extract_features(event: MotionEvent, stats: FeatureStats) -> np.ndarray:
    """Normalized (duration, intensity, coverage) vector for one event."""
    if not stats.fitted:
        raise NotFittedError("feature stats not fitted")
    return stats.transform(event.feature_vector()[None, :])[0]


class MotionKnn(BaseEstimator, ClassifierMixin):
    """k-nearest-neighbor motion classifier on z-normalized features.

    Distances are Euclidean in the normalized feature space; the predicted
    label is the majority among the k nearest training points, with vote
    ties broken by the nearest neighbor carrying one of the tied labels.
    ``k`` must be odd; equal distances rank by training order, so refitting
    on a permuted training set yields the same classification function for
    tie-free data.
    """

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, X, y) -> "MotionKnn":
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.k % 2 == 0:
            raise ValueError("k must be odd (even k makes ties ill-conditioned)")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        y = np.asarray([str(v) for v in np.asarray(y).ravel()])
        if len(y) != X.shape[0]:
            raise ValueError("X and y length mismatch")
        if X.shape[0] < self.k:
            raise ValueError(f"need at least k={self.k} training samples, got {X.shape[0]}")
        if len(set(y)) < 2:
            warnings.warn("training set has a single class", stacklevel=2)
        self.stats_ = FeatureStats().fit(X)
        self.X_raw_ = X.copy()
        self.X_ = self.stats_.transform(X)
        self.y_ = y
        self.classes_ = np.unique(y)
        return self

    def _check_fitted(self):
        if not hasattr(self, "X_"):
            raise NotFittedError("classifier not fitted")

    def _neighbor_order(self, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = np.sqrt(((self.X_ - xn) ** 2).sum(axis=1))
        return np.argsort(d, kind="stable"), d

    def predict_with_votes(self, x) -> tuple[str, list[tuple[str, float]]]:
        """Label plus the (label, distance) of each of the k neighbors."""
        self._check_fitted()
        xn = self.stats_.transform(np.asarray(x, dtype=np.float64)[None, :])[0]
        order, d = self._neighbor_order(xn)
        nearest = order[: self.k]
        votes = [(self.y_[i], float(d[i])) for i in nearest]
        labels, counts = np.unique([v[0] for v in votes], return_counts=True)
        top = counts.max()
        tied = set(labels[counts == top])
        if len(tied) == 1:
            winner = labels[counts == top][0]
        else:
            winner = next(lbl for lbl, _ in votes if lbl in tied)
        return str(winner), votes

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return np.array([self.predict_with_votes(row)[0] for row in X])

    def classify_event(self, event: MotionEvent) -> tuple[str, list[tuple[str, float]]]:
        return self.predict_with_votes(event.feature_vector())

    def export_csv(self, dest: str | os.PathLike | IO[str]) -> None:
        """Model file: a stats line, then the labeled training rows."""
        self._check_fitted()
        if isinstance(dest, (str, os.PathLike)):
            fh: IO[str] = open(dest, "w", encoding="utf-8", newline="\n")
            own = True
        else:
            fh, own = dest, False
        try:
            vals = list(self.stats_.mean_) + list(self.stats_.scale_)
            fh.write("stats," + ",".join("%.17g" % v for v in vals) + "\n")
            fh.write(",".join(FEATURE_NAMES) + ",class_label\n")
            for row, label in zip(self.X_raw_, self.y_):
                fh.write(",".join("%.17g" % v for v in row) + f",{label}\n")
        finally:
            if own:
                fh.close()

    @classmethod
    def import_csv(cls, source: str | os.PathLike | IO[str], k: int = 5) -> "MotionKnn":
        X, y, stats = _read_model_csv(source)
        model = cls(k=k).fit(X, y)
        if stats is not None:
            model.stats_.mean_ = stats[0]
            model.stats_.scale_ = stats[1]
            model.X_ = model.stats_.transform(model.X_raw_)
        return model


def _read_model_csv(source):
    if isinstance(source, (str, os.PathLike)):
        fh: IO[str] = open(source, "r", encoding="utf-8", newline="")
        own = True
    else:
        fh, own = source, False
    try:
        lines = [ln.strip() for ln in fh if ln.strip()]
    finally:
        if own:
            fh.close()
    stats = None
    if lines and lines[0].startswith("stats,"):
        vals = [float(v) for v in lines[0].split(",")[1:]]
        half = len(vals) // 2
        stats = (np.array(vals[:half]), np.array(vals[half:]))
        lines = lines[1:]
    if not lines or lines[0].split(",")[:3] != list(FEATURE_NAMES):
        raise ValueError("bad labeled-event file header")
    X, y = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields")
        X.append([float(v) for v in parts[:3]])
        y.append(parts[3])
    return np.array(X, dtype=np.float64), np.array(y), stats


def read_labeled_events(source) -> tuple[np.ndarray, np.ndarray]:
    """Training-set CSV: header then duration,intensity,coverage,label rows."""
    X, y, _ = _read_model_csv(source)
    return X, y


def write_labeled_events(dest, X, y) -> None:
    if isinstance(dest, (str, os.PathLike)):
        fh: IO[str] = open(dest, "w", encoding="utf-8", newline="\n")
        own = True
    else:
        fh, own = dest, False
    try:
        fh.write(",".join(FEATURE_NAMES) + ",class_label\n")
        for row, label in zip(np.asarray(X), y):
            fh.write(",".join("%.17g" % v for v in row) + f",{label}\n")
    finally:
        if own:
            fh.close()


# Canonical synthetic feature clusters, one class per body-part group,
# centered on what the detection pipeline measures for the default motion
# profiles. (duration mean/sd, intensity mean/sd, coverage mean/sd); the
# Torso and Rollover clusters deliberately overlap so residual confusion
# concentrates there.
CANONICAL_CLUSTERS: dict[MotionClass, tuple[tuple[float, float], ...]] = {
    MotionClass.HEAD_SWING: ((0.72, 0.10), (2105.0, 38.0), (0.78, 0.035)),
    MotionClass.ARM_SWING: ((0.93, 0.10), (2305.0, 38.0), (0.84, 0.035)),
    MotionClass.LEG_BEND: ((1.10, 0.10), (2480.0, 38.0), (0.875, 0.028)),
    MotionClass.TORSO_TWIST: ((1.58, 0.12), (2640.0, 55.0), (0.895, 0.024)),
    MotionClass.ROLLOVER: ((1.71, 0.12), (2735.0, 55.0), (0.94, 0.024)),
    MotionClass.FULL_STRETCH: ((2.23, 0.12), (3155.0, 42.0), (0.995, 0.006)),
}

CANONICAL_SEED = 1203


def canonical_feature_set(
    seed: int = CANONICAL_SEED, per_class: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic labeled feature set: 6 classes x ``per_class`` events."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for cls, ((dm, ds), (im, isd), (cm, csd)) in CANONICAL_CLUSTERS.items():
        dur = np.clip(rng.normal(dm, ds, per_class), 0.2, None)
        inten = np.clip(rng.normal(im, isd, per_class), 1.0, None)
        cov = np.clip(rng.normal(cm, csd, per_class), 0.701, 1.0)
        for d, i, c in zip(dur, inten, cov):
            rows.append([d, i, c])
            labels.append(cls.value)
    return np.array(rows, dtype=np.float64), np.array(labels)


def default_classifier(k: int = 5) -> MotionKnn:
    """k-NN fitted on the canonical synthetic feature set."""
    X, y = canonical_feature_set()
    return MotionKnn(k=k).fit(X, y)


def knn_loo_accuracy(
    X: np.ndarray, y: Sequence[str], k: int = 5
) -> tuple[float, dict[tuple[str, str], int]]:
    """Leave-one-out accuracy and confusion counts, at group granularity."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray([str(v) for v in y])
    n = X.shape[0]
    correct = 0
    confusion: dict[tuple[str, str], int] = {}
    idx = np.arange(n)
    for i in range(n):
        keep = idx != i
        model = MotionKnn(k=k).fit(X[keep], y[keep])
        pred = model.predict(X[i])[0]
        true_g, pred_g = group_of(y[i]), group_of(pred)
        confusion[(true_g, pred_g)] = confusion.get((true_g, pred_g), 0) + 1
        if pred_g == true_g:
            correct += 1
    return correct / n, confusion
