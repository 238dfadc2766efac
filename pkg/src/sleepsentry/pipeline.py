"""The streaming detection pipeline.

One window at a time: per-antenna pixel labels from the background model
bank, an OR-merge across antennas, the two interference filters with
bounded lookback, then event segmentation. The same code path serves batch
detection over a trace file and live processing, so results are identical
between them for a given input.

Column bookkeeping: the mask filters delay columns (open runs, density
windows), so per-column amplitude differences and antenna label counts are
queued until their mask columns are finalized, then fed to the segmenter
in lockstep.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from sleepsentry.background import BackgroundModelBank
from sleepsentry.events import EventSegmenter, MotionEvent, MotionKnn
from sleepsentry.filtering import (
    FrequencyTemporalFilter,
    MotionDensityFilter,
    StreamingMaskFilter,
)
from sleepsentry.trace import (
    CsiSample,
    FrameAssembler,
    FrameConfig,
    TraceHeader,
    iter_trace,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineParams:
    """Every tunable of the detection pipeline, with working defaults."""

    window_seconds: float = 2.0
    n_components: int = 3
    learning_rate: float = 0.01
    background_weight_threshold: float = 0.7
    deviation_factor: float = 2.5
    variance_floor: float = 0.05
    initial_variance: float = 1.5
    min_duration: float = 0.1
    min_coverage: float = 0.7
    density_window: float = 0.5
    min_density: float = 0.4
    merge_gap: float = 0.3
    knn_k: int = 5

    def to_json_dict(self) -> dict:
        return {
            "window_seconds": self.window_seconds,
            "gmm": {
                "n_components": self.n_components,
                "learning_rate": self.learning_rate,
                "background_weight_threshold": self.background_weight_threshold,
                "deviation_factor": self.deviation_factor,
                "variance_floor": self.variance_floor,
                "initial_variance": self.initial_variance,
            },
            "filters": {
                "min_duration": self.min_duration,
                "min_coverage": self.min_coverage,
                "density_window": self.density_window,
                "min_density": self.min_density,
            },
            "segmentation": {"merge_gap": self.merge_gap},
            "knn": {"k": self.knn_k},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PipelineParams":
        p = cls()
        p.window_seconds = d.get("window_seconds", p.window_seconds)
        gmm = d.get("gmm", {})
        p.n_components = gmm.get("n_components", p.n_components)
        p.learning_rate = gmm.get("learning_rate", p.learning_rate)
        p.background_weight_threshold = gmm.get(
            "background_weight_threshold", p.background_weight_threshold
        )
        p.deviation_factor = gmm.get("deviation_factor", p.deviation_factor)
        p.variance_floor = gmm.get("variance_floor", p.variance_floor)
        p.initial_variance = gmm.get("initial_variance", p.initial_variance)
        filters = d.get("filters", {})
        p.min_duration = filters.get("min_duration", p.min_duration)
        p.min_coverage = filters.get("min_coverage", p.min_coverage)
        p.density_window = filters.get("density_window", p.density_window)
        p.min_density = filters.get("min_density", p.min_density)
        p.merge_gap = d.get("segmentation", {}).get("merge_gap", p.merge_gap)
        p.knn_k = d.get("knn", {}).get("k", p.knn_k)
        return p

    @classmethod
    def load(cls, path) -> "PipelineParams":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass
class PipelineStats:
    pixels_per_sample: int = 0
    samples: int = 0
    windows: int = 0
    raw_foreground: int = 0
    post_foreground: int = 0
    finalized_columns: int = 0
    events: int = 0
    gap_filled: int = 0
    dropped_tail: int = 0

    @property
    def raw_foreground_rate(self) -> float:
        total = self.samples * max(1, self.pixels_per_sample)
        return self.raw_foreground / total if total else 0.0

    def post_foreground_rate(self, subcarriers: int) -> float:
        total = self.finalized_columns * subcarriers
        return self.post_foreground / total if total else 0.0


class _BlockQueue:
    """FIFO of array blocks consumed a leading-axis slice at a time."""

    def __init__(self):
        self._blocks: list[np.ndarray] = []
        self._head = 0

    def push(self, block: np.ndarray) -> None:
        if block.shape[0]:
            self._blocks.append(block)

    def pop(self, count: int) -> np.ndarray:
        pieces = []
        need = count
        while need > 0:
            if not self._blocks:
                raise RuntimeError("column queue underflow")
            block = self._blocks[0]
            take = min(need, block.shape[0] - self._head)
            pieces.append(block[self._head : self._head + take])
            self._head += take
            need -= take
            if self._head == block.shape[0]:
                self._blocks.pop(0)
                self._head = 0
        return pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=0)


class MotionPipeline:
    """Streaming frames -> labels -> merged mask -> filters -> events.

    ``on_event(event, now)`` fires as each motion event closes; ``now`` is
    the trace time of the last column processed when the event was emitted,
    which is what alert timestamps are taken from.
    """

    def __init__(
        self,
        config: FrameConfig,
        params: PipelineParams | None = None,
        classifier: MotionKnn | None = None,
        on_event: Callable[[MotionEvent, float], None] | None = None,
        on_window: Callable[[int, np.ndarray], None] | None = None,
        on_mask_chunk: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
    ):
        self.config = config
        self.params = params or PipelineParams()
        self.classifier = classifier
        self.on_event = on_event
        self.on_window = on_window
        self.on_mask_chunk = on_mask_chunk
        p = self.params
        self.bank = BackgroundModelBank(
            n_antennas=config.antennas,
            n_subcarriers=config.subcarriers,
            n_components=p.n_components,
            learning_rate=p.learning_rate,
            background_weight_threshold=p.background_weight_threshold,
            deviation_factor=p.deviation_factor,
            variance_floor=p.variance_floor,
            initial_variance=p.initial_variance,
        )
        self.mask_filter = StreamingMaskFilter(
            FrequencyTemporalFilter(min_duration=p.min_duration, min_coverage=p.min_coverage),
            MotionDensityFilter(window_seconds=p.density_window, min_density=p.min_density),
            sample_stride=config.sample_stride,
            horizon_columns=2 * config.samples_per_window,
        )
        self._segmenter: EventSegmenter | None = None
        self._diffs = _BlockQueue()
        self._counts = _BlockQueue()
        self._pre_mask = _BlockQueue() if on_mask_chunk else None
        self._prev_amp: np.ndarray | None = None
        self._t0: float | None = None
        self._cols_in = 0
        self._cols_out = 0
        self.events: list[MotionEvent] = []
        self.stats = PipelineStats(pixels_per_sample=config.antennas * config.subcarriers)

    @property
    def start_time(self) -> float:
        return self._t0 if self._t0 is not None else 0.0

    def current_time(self) -> float:
        """Trace time just past the last column fed to the pipeline."""
        return self.start_time + self._cols_in * self.config.sample_stride

    def process_window(self, amps: np.ndarray, start_time: float) -> list[MotionEvent]:
        """Feed one (n, antennas, subcarriers) window of amplitudes."""
        amps = np.asarray(amps, dtype=np.float64)
        n = amps.shape[0]
        if self._t0 is None:
            self._t0 = start_time
            self._segmenter = EventSegmenter(
                sample_rate=self.config.sample_rate,
                n_antennas=self.config.antennas,
                start_time=start_time,
                merge_gap=self.params.merge_gap,
            )
        labels = self.bank.process_block(amps)
        if self.on_window is not None:
            self.on_window(self._cols_in, labels)
        self.stats.samples += n
        self.stats.windows += 1
        self.stats.raw_foreground += int(labels.sum())

        diffs = np.empty_like(amps)
        if self._prev_amp is None:
            diffs[0] = 0.0
        else:
            diffs[0] = np.abs(amps[0] - self._prev_amp)
        if n > 1:
            diffs[1:] = np.abs(np.diff(amps, axis=0))
        self._prev_amp = amps[-1]

        merged = labels.any(axis=1).T  # (M, n)
        counts = labels.sum(axis=2).astype(np.int64)  # (n, A)
        self._diffs.push(diffs)
        self._counts.push(counts)
        if self._pre_mask is not None:
            self._pre_mask.push(merged.T.copy())
        self._cols_in += n

        emitted = []
        for chunk in self.mask_filter.push(merged):
            emitted.extend(self._consume_chunk(chunk))
        return emitted

    def _consume_chunk(self, chunk: np.ndarray) -> list[MotionEvent]:
        k = chunk.shape[1]
        diffs = self._diffs.pop(k)
        counts = self._counts.pop(k)
        if self._pre_mask is not None:
            pre = self._pre_mask.pop(k)
            self.on_mask_chunk(self._cols_out, pre.T, chunk)
        self.stats.post_foreground += int(chunk.sum())
        self.stats.finalized_columns += k
        self._cols_out += k
        closed = self._segmenter.push(chunk, diffs, counts)
        return [self._emit(e) for e in closed]

    def _emit(self, event: MotionEvent) -> MotionEvent:
        if self.classifier is not None:
            event.label = self.classifier.classify_event(event)[0]
        self.events.append(event)
        self.stats.events += 1
        if self.on_event is not None:
            self.on_event(event, self.current_time())
        return event

    def finish(self) -> list[MotionEvent]:
        """Flush filters and close any open event."""
        emitted = []
        if self._segmenter is None:
            return emitted
        for chunk in self.mask_filter.flush():
            emitted.extend(self._consume_chunk(chunk))
        emitted.extend(self._emit(e) for e in self._segmenter.flush())
        return emitted


def run_blocks(
    pipeline: MotionPipeline,
    blocks: Iterable[tuple[int, np.ndarray, np.ndarray]],
) -> PipelineStats:
    """Drive a pipeline from (start_sample, times, amplitudes) blocks.

    Blocks must be window-sized; a trailing partial block is dropped, as in
    batch framing.
    """
    n_window = pipeline.config.samples_per_window
    for _, times, amps in blocks:
        if amps.shape[0] < n_window:
            pipeline.stats.dropped_tail += amps.shape[0]
            logger.warning(
                "dropping %d trailing samples (partial window)", amps.shape[0]
            )
            continue
        pipeline.process_window(amps, start_time=float(times[0]))
    pipeline.finish()
    return pipeline.stats


def iter_sample_windows(
    samples: Iterable[CsiSample], config: FrameConfig
) -> Iterator[tuple[float, np.ndarray]]:
    """Assemble a row stream into aligned (start_time, (n, A, M)) windows.

    Waits until every antenna has delivered frame k, then emits the stacked
    window. Antennas must tile the same timeline.
    """
    assembler = FrameAssembler(config)
    ready: dict[int, dict[int, np.ndarray]] = {}
    starts: dict[int, float] = {}
    next_window = 0
    counters = {a: 0 for a in range(config.antennas)}
    for sample in samples:
        for frame in assembler.push(sample):
            k = counters[frame.antenna_id]
            counters[frame.antenna_id] = k + 1
            ready.setdefault(k, {})[frame.antenna_id] = frame.pixels
            if frame.antenna_id == 0:
                starts[k] = frame.start_time
            while next_window in ready and len(ready[next_window]) == config.antennas:
                entry = ready.pop(next_window)
                start = starts.pop(next_window)
                stacked = np.stack(
                    [entry[a] for a in range(config.antennas)], axis=0
                )  # (A, M, N)
                yield start, np.moveaxis(stacked, 2, 0)  # (N, A, M)
                next_window += 1
    assembler.finish()


def run_samples(pipeline: MotionPipeline, samples: Iterable[CsiSample]) -> PipelineStats:
    for start, window in iter_sample_windows(samples, pipeline.config):
        pipeline.process_window(window, start_time=start)
    pipeline.finish()
    return pipeline.stats


def run_trace_file(
    path,
    params: PipelineParams | None = None,
    classifier: MotionKnn | None = None,
    on_event=None,
) -> tuple[MotionPipeline, TraceHeader]:
    """Batch-detect over a trace file; returns the finished pipeline."""
    it = iter_trace(path)
    header = next(it)
    params = params or PipelineParams()
    config = FrameConfig.from_header(header, window_seconds=params.window_seconds)
    pipeline = MotionPipeline(config, params, classifier=classifier, on_event=on_event)
    run_samples(pipeline, (s for s in it if isinstance(s, CsiSample)))
    return pipeline, header
