import numpy as np
import pytest

from sleepsentry.events import default_classifier
from sleepsentry.pipeline import (
    MotionPipeline,
    PipelineParams,
    run_blocks,
    run_trace_file,
)
from sleepsentry.simulate import Scenario, ScriptedEvent, generate, iter_blocks


def _scenario(duration=30.0, seed=1, events=()):
    return Scenario(name="t", duration=duration, seed=seed, events=events)


def _motion(start=10.0, duration=1.5, amplitude=14.0, coverage=0.85, cls="LegBend"):
    return ScriptedEvent(
        start=start, duration=duration, motion_class=cls,
        amplitude=amplitude, coverage=coverage,
    )


class TestPipeline:
    def test_detects_scripted_motion_accurately(self):
        sc = _scenario(events=(_motion(),))
        pipe = MotionPipeline(sc.frame_config, PipelineParams())
        run_blocks(pipe, iter_blocks(sc))
        assert len(pipe.events) == 1
        ev = pipe.events[0]
        assert ev.start == pytest.approx(10.0, abs=0.2)
        assert ev.duration == pytest.approx(1.5, abs=0.5)
        assert ev.coverage >= 0.7
        assert ev.intensity > 500.0
        assert sum(ev.antenna_votes) > 0
        # stronger antennas vote more
        assert ev.antenna_votes[0] >= ev.antenna_votes[2]

    def test_pure_noise_produces_no_events(self):
        sc = _scenario(duration=60.0)
        pipe = MotionPipeline(sc.frame_config, PipelineParams())
        stats = run_blocks(pipe, iter_blocks(sc))
        assert pipe.events == []
        assert stats.post_foreground == 0
        assert 0.0 < stats.raw_foreground_rate < 0.05

    def test_deterministic_across_runs(self):
        sc = _scenario(events=(_motion(),))
        results = []
        for _ in range(2):
            pipe = MotionPipeline(sc.frame_config, PipelineParams(), classifier=default_classifier())
            run_blocks(pipe, iter_blocks(sc))
            results.append(
                [(e.start, e.duration, e.intensity, e.coverage, e.label) for e in pipe.events]
            )
        assert results[0] == results[1]

    def test_all_columns_finalized_after_finish(self):
        sc = _scenario(duration=20.0, events=(_motion(),))
        pipe = MotionPipeline(sc.frame_config, PipelineParams())
        stats = run_blocks(pipe, iter_blocks(sc))
        assert stats.finalized_columns == stats.samples
        assert stats.samples == sc.n_samples

    def test_partial_tail_block_dropped(self):
        sc = Scenario(name="odd", duration=5.0, seed=2)  # 2.5 windows
        pipe = MotionPipeline(sc.frame_config, PipelineParams())
        stats = run_blocks(pipe, iter_blocks(sc))
        assert stats.dropped_tail == 330
        assert stats.samples == 2 * 660

    def test_event_callback_fires_with_stream_time(self):
        sc = _scenario(events=(_motion(start=6.0, duration=1.0),))
        seen = []
        pipe = MotionPipeline(
            sc.frame_config,
            PipelineParams(),
            on_event=lambda ev, now: seen.append((ev, now)),
        )
        run_blocks(pipe, iter_blocks(sc))
        assert len(seen) == 1
        event, now = seen[0]
        assert now >= event.end
        assert now - event.end <= 4.5  # bounded pipeline delay

    def test_mask_tap_aligned(self):
        sc = _scenario(duration=20.0, events=(_motion(),))
        chunks = []
        pipe = MotionPipeline(
            sc.frame_config,
            PipelineParams(),
            on_mask_chunk=lambda start, pre, post: chunks.append((start, pre, post)),
        )
        stats = run_blocks(pipe, iter_blocks(sc))
        starts = [c[0] for c in chunks]
        assert starts == sorted(starts)
        total = sum(c[1].shape[1] for c in chunks)
        assert total == stats.finalized_columns
        for _, pre, post in chunks:
            assert pre.shape == post.shape
            assert not (post & ~pre).any()  # filters only remove

    def test_trace_file_round_trip_detection(self, tmp_path):
        sc = _scenario(events=(_motion(),))
        trace_path, _ = generate(sc, tmp_path)
        pipe, header = run_trace_file(trace_path, PipelineParams(), classifier=default_classifier())
        assert header.antennas == 3
        assert len(pipe.events) == 1
        assert pipe.events[0].start == pytest.approx(10.0, abs=0.2)
        assert pipe.events[0].label is not None

    def test_trace_file_detection_deterministic(self, tmp_path):
        sc = _scenario(events=(_motion(),), duration=24.0)
        trace_path, _ = generate(sc, tmp_path)
        runs = []
        for _ in range(2):
            pipe, _ = run_trace_file(trace_path, PipelineParams())
            runs.append([(e.start, e.duration, e.intensity) for e in pipe.events])
        assert runs[0] == runs[1]


class TestParams:
    def test_json_round_trip(self):
        p = PipelineParams(learning_rate=0.02, min_density=0.35, knn_k=7)
        q = PipelineParams.from_json_dict(p.to_json_dict())
        assert q == p

    def test_invalid_params_rejected_at_construction(self):
        sc = _scenario()
        with pytest.raises(ValueError):
            MotionPipeline(sc.frame_config, PipelineParams(learning_rate=2.0))
        with pytest.raises(ValueError):
            MotionPipeline(sc.frame_config, PipelineParams(min_coverage=0.0))
