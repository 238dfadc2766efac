import io
import logging

import numpy as np
import pytest

from sleepsentry.trace import (
    CsiSample,
    FrameConfig,
    TraceFormatError,
    TraceHeader,
    build_frames,
    format_header,
    iter_trace,
    parse_header,
    read_trace,
    read_truth,
    serialize_trace,
    write_truth,
)

HEADER_3x1 = "csi,v1,M=3,A=1,rate=10\n"


def _samples_at_rate(n, rate, m=3, antennas=1, start=0.0, value=-40.0):
    out = []
    for i in range(n):
        for a in range(antennas):
            out.append(
                CsiSample(
                    timestamp=start + i / rate,
                    antenna_id=a,
                    amplitudes=np.full(m, value),
                )
            )
    return out


def test_parse_single_row():
    trace = HEADER_3x1 + "0.0,0,-40.0,-41.5,-39.8\n"
    header, samples = read_trace(io.StringIO(trace))
    assert header == TraceHeader(subcarriers=3, antennas=1, sample_rate=10.0)
    assert len(samples) == 1
    assert samples[0].timestamp == 0.0
    assert samples[0].antenna_id == 0
    assert np.array_equal(samples[0].amplitudes, [-40.0, -41.5, -39.8])


def test_parse_empty_body():
    header, samples = read_trace(io.StringIO(HEADER_3x1))
    assert header.subcarriers == 3
    assert samples == []


def test_parse_nan_rejected_with_row_number():
    trace = HEADER_3x1 + "0.0,0,-40.0,-41.5,-39.8\n0.1,0,-40.0,nan,-39.8\n"
    with pytest.raises(TraceFormatError) as err:
        read_trace(io.StringIO(trace))
    assert err.value.line == 3
    assert "line 3" in str(err.value)


@pytest.mark.parametrize(
    "row,line",
    [
        ("0.0,0,-40.0,-41.5", 2),  # arity
        ("0.0,0,-40.0,-41.5,x", 2),  # non-numeric
        ("0.0,7,-40.0,-41.5,-39.8", 2),  # antenna out of range
    ],
)
def test_parse_bad_rows(row, line):
    with pytest.raises(TraceFormatError) as err:
        read_trace(io.StringIO(HEADER_3x1 + row + "\n"))
    assert err.value.line == line


def test_parse_timestamp_regression():
    trace = HEADER_3x1 + "0.2,0,-40,-41,-39\n0.1,0,-40,-41,-39\n"
    with pytest.raises(TraceFormatError) as err:
        read_trace(io.StringIO(trace))
    assert err.value.line == 3


@pytest.mark.parametrize(
    "header",
    [
        "bogus,v1,M=3,A=1,rate=10",
        "csi,v2,M=3,A=1,rate=10",
        "csi,v1,M=0,A=1,rate=10",
        "csi,v1,M=3,A=1",
        "csi,v1,M=3,A=1,rate=-5",
    ],
)
def test_parse_bad_headers(header):
    with pytest.raises(TraceFormatError):
        read_trace(io.StringIO(header + "\n"))


def test_header_round_trip():
    header = TraceHeader(subcarriers=30, antennas=3, sample_rate=330.0)
    assert parse_header(format_header(header)) == header
    header = TraceHeader(subcarriers=4, antennas=2, sample_rate=12.5)
    assert parse_header(format_header(header)) == header


def test_serialize_parse_round_trip_is_byte_identical():
    header = TraceHeader(subcarriers=3, antennas=2, sample_rate=10.0)
    rng = np.random.default_rng(0)
    samples = []
    for i in range(40):
        for a in range(2):
            samples.append(
                CsiSample(
                    timestamp=i / 10.0,
                    antenna_id=a,
                    amplitudes=np.round(rng.uniform(-50, -30, 3), 3),
                )
            )
    text = serialize_trace(header, samples)
    header2, parsed = read_trace(io.StringIO(text))
    assert serialize_trace(header2, parsed) == text


def test_build_frames_exact_window():
    cfg = FrameConfig.for_window(2.0, 330.0, subcarriers=3, antennas=1)
    frames, stats = build_frames(_samples_at_rate(660, 330.0), cfg)
    assert len(frames[0]) == 1
    assert frames[0][0].pixels.shape == (3, 660)
    assert stats.dropped_tail == {}


def test_build_frames_drops_partial_tail_with_warning(caplog):
    cfg = FrameConfig.for_window(2.0, 330.0, subcarriers=3, antennas=1)
    with caplog.at_level(logging.WARNING):
        frames, stats = build_frames(_samples_at_rate(700, 330.0), cfg)
    assert len(frames[0]) == 1
    assert stats.dropped_tail == {0: 40}
    assert any("40" in rec.getMessage() for rec in caplog.records)


def test_frames_partition_every_sample_once():
    cfg = FrameConfig.for_window(1.0, 10.0, subcarriers=2, antennas=1)
    n = 50
    samples = [
        CsiSample(timestamp=i / 10.0, antenna_id=0, amplitudes=np.array([float(i), -i]))
        for i in range(n)
    ]
    frames, _ = build_frames(samples, cfg)
    seen = np.concatenate([f.pixels[0] for f in frames[0]])
    assert np.array_equal(seen, np.arange(50.0))
    starts = [f.start_time for f in frames[0]]
    assert starts == pytest.approx([0.0, 1.0, 2.0, 3.0, 4.0])


def test_gap_fill_counts_and_preserves_present_samples():
    cfg = FrameConfig.for_window(1.0, 10.0, subcarriers=1, antennas=1)
    samples = [
        CsiSample(timestamp=0.0, antenna_id=0, amplitudes=np.array([1.0])),
        CsiSample(timestamp=0.1, antenna_id=0, amplitudes=np.array([2.0])),
        # 3 slots missing (0.2, 0.3, 0.4)
        CsiSample(timestamp=0.5, antenna_id=0, amplitudes=np.array([3.0])),
        CsiSample(timestamp=0.6, antenna_id=0, amplitudes=np.array([4.0])),
        CsiSample(timestamp=0.7, antenna_id=0, amplitudes=np.array([5.0])),
        CsiSample(timestamp=0.8, antenna_id=0, amplitudes=np.array([6.0])),
        CsiSample(timestamp=0.9, antenna_id=0, amplitudes=np.array([7.0])),
    ]
    frames, stats = build_frames(samples, cfg)
    assert stats.gap_filled == {0: 3}
    assert np.array_equal(
        frames[0][0].pixels[0], [1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
    )


def test_simulated_ten_minutes_tiles_into_300_frames_per_antenna():
    # Count oracle: the simulator emits round(duration * rate) ticks, which
    # must tile exactly into duration / window frames per antenna.
    from sleepsentry.simulate import Scenario, iter_samples

    scenario = Scenario(name="tile", duration=600.0, seed=9, subcarriers=4)
    cfg = FrameConfig.for_window(2.0, 330.0, subcarriers=4, antennas=3)
    expected_frames = int(600.0 / 2.0)
    assert scenario.n_samples == expected_frames * cfg.samples_per_window
    frames, stats = build_frames(iter_samples(scenario), cfg)
    for antenna in range(3):
        assert len(frames[antenna]) == expected_frames
        starts = np.array([f.start_time for f in frames[antenna]])
        assert np.allclose(starts, np.arange(expected_frames) * 2.0, atol=1e-9)
    assert stats.dropped_tail == {}
    assert stats.total_gap_filled == 0


def test_truth_file_round_trip(tmp_path):
    rows = [(30.0, 32.0, "Rollover"), (40.5, 41.2, "HeadSwing")]
    path = tmp_path / "truth.csv"
    write_truth(path, rows)
    assert read_truth(path) == rows
    text = path.read_text()
    assert text.splitlines()[0] == "start_s,end_s,class_label"
    assert text.splitlines()[1] == "30.000000,32.000000,Rollover"


def test_truth_file_rejects_bad_rows(tmp_path):
    path = tmp_path / "truth.csv"
    path.write_text("start_s,end_s,class_label\n5.0,4.0,Rollover\n")
    with pytest.raises(TraceFormatError):
        read_truth(path)
