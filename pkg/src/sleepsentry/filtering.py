"""Foreground mask cleanup: antenna merging and interference filters.

The detection pipeline reduces per-antenna pixel labels to a single clean
mask in three stages, in order:

1. :func:`merge_masks` ORs the per-antenna masks so motion seen on any
   antenna survives;
2. :class:`FrequencyTemporalFilter` drops device interference: any maximal
   run of consecutive foreground columns that is too short or never covers
   enough subcarriers at once is relabeled background;
3. :class:`MotionDensityFilter` drops interference from humans outside the
   sensing path: tumbling windows whose foreground density is too low are
   cleared wholesale.

Both filters only ever flip foreground to background and are idempotent.
:class:`StreamingMaskFilter` applies the same two filters to an unbounded
column stream with bounded lookback for the online pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ForegroundMask:
    """Boolean M x N grid, True = foreground, with its time placement."""

    start_time: float
    sample_stride: float
    grid: np.ndarray

    @property
    def subcarriers(self) -> int:
        return self.grid.shape[0]

    @property
    def samples(self) -> int:
        return self.grid.shape[1]

    def foreground_count(self) -> int:
        return int(self.grid.sum())


def merge_masks(masks) -> ForegroundMask:
    """Element-wise OR across antennas; masks must be aligned and congruent."""
    masks = list(masks)
    if not masks:
        raise ValueError("no masks to merge")
    first = masks[0]
    merged = first.grid.copy()
    for mask in masks[1:]:
        if mask.grid.shape != first.grid.shape:
            raise ValueError(
                f"mask shape {mask.grid.shape} != {first.grid.shape}"
            )
        if mask.start_time != first.start_time or mask.sample_stride != first.sample_stride:
            raise ValueError("masks are not time-aligned")
        merged |= mask.grid
    return ForegroundMask(
        start_time=first.start_time, sample_stride=first.sample_stride, grid=merged
    )


def find_column_runs(column_any: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True columns as half-open (start, end) index pairs."""
    flags = np.asarray(column_any, dtype=bool)
    if flags.size == 0:
        return []
    padded = np.concatenate(([False], flags, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(edges[i]), int(edges[i + 1])) for i in range(0, len(edges), 2)]


class FrequencyTemporalFilter(BaseEstimator, TransformerMixin):
    """Removes short or frequency-narrow foreground segments.

    A segment is a maximal run of consecutive columns each containing at
    least one foreground pixel. The run is cleared when its temporal extent
    is below ``min_duration`` seconds or its peak per-column subcarrier
    coverage is below ``min_coverage`` of all subcarriers.
    """

    def __init__(self, min_duration: float = 0.1, min_coverage: float = 0.7):
        self.min_duration = min_duration
        self.min_coverage = min_coverage

    def _check_params(self):
        if self.min_duration <= 0:
            raise ValueError("min_duration must be positive")
        if not 0.0 < self.min_coverage <= 1.0:
            raise ValueError("min_coverage must be in (0, 1]")

    def fit(self, X=None, y=None):
        self._check_params()
        return self

    def transform(self, X: ForegroundMask) -> ForegroundMask:
        self._check_params()
        grid = X.grid.copy()
        stride = X.sample_stride
        m = grid.shape[0]
        col_counts = grid.sum(axis=0)
        for start, end in find_column_runs(col_counts > 0):
            duration = (end - start) * stride
            peak = int(col_counts[start:end].max())
            if duration < self.min_duration - _EPS or peak < self.min_coverage * m - _EPS:
                grid[:, start:end] = False
        return ForegroundMask(
            start_time=X.start_time, sample_stride=X.sample_stride, grid=grid
        )


class MotionDensityFilter(BaseEstimator, TransformerMixin):
    """Clears tumbling windows whose foreground density is below a floor.

    Windows are consecutive, non-overlapping ``window_seconds`` spans of
    columns anchored at the mask start; density is foreground pixels over
    all pixels of the window. A trailing partial window is evaluated over
    its actual columns.
    """

    def __init__(self, window_seconds: float = 0.5, min_density: float = 0.4):
        self.window_seconds = window_seconds
        self.min_density = min_density

    def _check_params(self):
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if not 0.0 < self.min_density <= 1.0:
            raise ValueError("min_density must be in (0, 1]")

    def fit(self, X=None, y=None):
        self._check_params()
        return self

    def window_columns(self, sample_stride: float) -> int:
        return max(1, int(round(self.window_seconds / sample_stride)))

    def transform(self, X: ForegroundMask) -> ForegroundMask:
        self._check_params()
        grid = X.grid.copy()
        span = self.window_columns(X.sample_stride)
        n = grid.shape[1]
        for start in range(0, n, span):
            window = grid[:, start : start + span]
            if window.mean() < self.min_density - _EPS:
                window[:] = False
        return ForegroundMask(
            start_time=X.start_time, sample_stride=X.sample_stride, grid=grid
        )


def mask_to_pbm(mask: ForegroundMask) -> bytes:
    """Plain PBM (P1) rendering of a mask, foreground = black."""
    grid = mask.grid
    lines = [b"P1", f"{grid.shape[1]} {grid.shape[0]}".encode()]
    for row in grid:
        lines.append(" ".join("1" if v else "0" for v in row).encode())
    return b"\n".join(lines) + b"\n"


class StreamingMaskFilter:
    """Applies both filters to an unbounded column stream, in order.

    Columns enter with consecutive global indices and leave, filtered, in
    the same order. An open foreground run is withheld until it closes or
    reaches ``horizon_columns``, after which it is force-decided from what
    has been seen (a run that old has long satisfied the duration test, so
    only its coverage peak so far decides, and the decision sticks for the
    run's remaining columns). Density windows are anchored at global column
    zero, so streaming output matches batch filtering whenever runs close
    within the horizon.
    """

    def __init__(
        self,
        temporal: FrequencyTemporalFilter,
        density: MotionDensityFilter,
        sample_stride: float,
        horizon_columns: int,
    ):
        temporal._check_params()
        density._check_params()
        self.temporal = temporal
        self.density = density
        self.sample_stride = sample_stride
        self.horizon_columns = int(horizon_columns)
        self._min_run_columns = max(
            1, int(np.ceil(temporal.min_duration / sample_stride - _EPS))
        )
        self._subcarriers: int | None = None
        # Stage 1 state: pending columns of the open run.
        self._pending: list[np.ndarray] = []
        self._run_peak = 0
        self._run_decision: bool | None = None  # sticky, set at force-decide
        # Stage 2 state: columns awaiting a full density window.
        self._window_span = density.window_columns(sample_stride)
        self._window_buf: list[np.ndarray] = []
        self._emitted = 0  # global index of the next column to leave stage 2

    def _coverage_ok(self, peak: int) -> bool:
        assert self._subcarriers is not None
        return peak >= self.temporal.min_coverage * self._subcarriers - _EPS

    def _decide_run(self) -> bool:
        ok = len(self._pending) >= self._min_run_columns and self._coverage_ok(
            self._run_peak
        )
        return ok

    def _emit_to_density(self, columns, keep: bool):
        for col in columns:
            self._window_buf.append(col if keep else np.zeros_like(col))
            if len(self._window_buf) == self._window_span:
                self._flush_window()

    def _flush_window(self):
        if not self._window_buf:
            return
        window = np.stack(self._window_buf, axis=1)
        if window.mean() < self.density.min_density - _EPS:
            window[:] = False
        self._out_chunks.append(window)
        self._emitted += window.shape[1]
        self._window_buf = []

    def push(self, grid: np.ndarray) -> list[np.ndarray]:
        """Feed (M, n) columns; returns finalized (M, k) chunks in order."""
        grid = np.asarray(grid, dtype=bool)
        if self._subcarriers is None:
            self._subcarriers = grid.shape[0]
        elif grid.shape[0] != self._subcarriers:
            raise ValueError("subcarrier count changed mid-stream")
        self._out_chunks: list[np.ndarray] = []
        for j in range(grid.shape[1]):
            col = grid[:, j].copy()
            count = int(col.sum())
            if count > 0:
                self._pending.append(col)
                self._run_peak = max(self._run_peak, count)
                if self._run_decision is not None:
                    # Run already force-decided; pass through immediately.
                    self._emit_to_density([self._pending.pop()], self._run_decision)
                elif len(self._pending) >= self.horizon_columns:
                    self._run_decision = self._coverage_ok(self._run_peak)
                    self._emit_to_density(self._pending, self._run_decision)
                    self._pending = []
            else:
                if self._pending or self._run_decision is not None:
                    keep = (
                        self._run_decision
                        if self._run_decision is not None
                        else self._decide_run()
                    )
                    self._emit_to_density(self._pending, keep)
                    self._pending = []
                    self._run_peak = 0
                    self._run_decision = None
                self._emit_to_density([col], True)
        out = self._out_chunks
        del self._out_chunks
        return out

    def flush(self) -> list[np.ndarray]:
        """Close the stream: decide the open run, flush the partial window."""
        self._out_chunks = []
        if self._pending or self._run_decision is not None:
            keep = (
                self._run_decision
                if self._run_decision is not None
                else self._decide_run()
            )
            self._emit_to_density(self._pending, keep)
            self._pending = []
            self._run_peak = 0
            self._run_decision = None
        self._flush_window()
        out = self._out_chunks
        del self._out_chunks
        return out
