"""Trace file format, sample model and framing.

A trace is a UTF-8 CSV file carrying one amplitude vector per antenna per
sample tick:

    csi,v1,M=30,A=3,rate=330.0
    0.000000,0,-40.123,-41.500,...
    0.000000,1,-44.001,-39.870,...

The header fixes the subcarrier count ``M``, the antenna count ``A`` and the
nominal sample rate. Body rows are ``timestamp,antenna_id,a_0,...,a_{M-1}``
with timestamps non-decreasing per antenna.

Framing partitions each antenna's sample stream into consecutive windows of
``N = round(T * rate)`` samples; a frame is the resulting ``M x N`` amplitude
grid. Rate gaps are forward-filled from the previous sample of the same
antenna and counted, never altering samples that were actually present.
"""

from __future__ import annotations

import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

logger = logging.getLogger(__name__)

TRACE_MAGIC = "csi"
TRACE_VERSION = "v1"

# Canonical field formats; serialize(parse(trace)) is byte-identical for
# traces written with these.
_TS_FMT = "%.6f"
_AMP_FMT = "%.3f"


class TraceFormatError(ValueError):
    """Malformed trace input. ``line`` is the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class CsiSample:
    """One timestamped per-subcarrier amplitude vector for one antenna."""

    timestamp: float
    antenna_id: int
    amplitudes: np.ndarray


@dataclass(frozen=True)
class TraceHeader:
    """Parsed trace header line."""

    subcarriers: int
    antennas: int
    sample_rate: float
    version: str = TRACE_VERSION


@dataclass(frozen=True)
class FrameConfig:
    """Framing parameters: window length, grid shape and stream geometry."""

    window_seconds: float = 2.0
    samples_per_window: int = 660
    subcarriers: int = 30
    antennas: int = 3
    sample_rate: float = 330.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.subcarriers < 1 or self.antennas < 1:
            raise ValueError("subcarriers and antennas must be >= 1")
        if self.samples_per_window < 1:
            raise ValueError("samples_per_window must be >= 1")
        expected = int(round(self.window_seconds * self.sample_rate))
        if expected != self.samples_per_window:
            raise ValueError(
                f"samples_per_window {self.samples_per_window} != "
                f"round(window_seconds * sample_rate) = {expected}"
            )

    @classmethod
    def for_window(
        cls,
        window_seconds: float,
        sample_rate: float,
        subcarriers: int,
        antennas: int,
    ) -> "FrameConfig":
        return cls(
            window_seconds=window_seconds,
            samples_per_window=int(round(window_seconds * sample_rate)),
            subcarriers=subcarriers,
            antennas=antennas,
            sample_rate=sample_rate,
        )

    @classmethod
    def from_header(cls, header: TraceHeader, window_seconds: float = 2.0) -> "FrameConfig":
        return cls.for_window(
            window_seconds, header.sample_rate, header.subcarriers, header.antennas
        )

    @property
    def sample_stride(self) -> float:
        return 1.0 / self.sample_rate


@dataclass(frozen=True, eq=False)
class Frame:
    """M x N amplitude grid for one antenna over one window.

    ``pixels[m, n]`` is the amplitude of subcarrier ``m`` at the n-th sample
    of the window.
    """

    antenna_id: int
    start_time: float
    pixels: np.ndarray
    sample_stride: float

    @property
    def subcarriers(self) -> int:
        return self.pixels.shape[0]

    @property
    def samples(self) -> int:
        return self.pixels.shape[1]


def format_header(header: TraceHeader) -> str:
    rate = header.sample_rate
    rate_str = repr(rate) if rate != int(rate) else str(int(rate))
    return f"{TRACE_MAGIC},{header.version},M={header.subcarriers},A={header.antennas},rate={rate_str}"


def parse_header(line: str) -> TraceHeader:
    parts = line.strip().split(",")
    if len(parts) != 5 or parts[0] != TRACE_MAGIC:
        raise TraceFormatError(f"bad header {line.strip()!r}", line=1)
    if parts[1] != TRACE_VERSION:
        raise TraceFormatError(f"unsupported version {parts[1]!r}", line=1)
    fields = {}
    for part in parts[2:]:
        if "=" not in part:
            raise TraceFormatError(f"bad header field {part!r}", line=1)
        key, value = part.split("=", 1)
        fields[key] = value
    try:
        subcarriers = int(fields["M"])
        antennas = int(fields["A"])
        rate = float(fields["rate"])
    except (KeyError, ValueError) as exc:
        raise TraceFormatError(f"bad header fields: {exc}", line=1) from None
    if subcarriers < 1 or antennas < 1 or rate <= 0 or not math.isfinite(rate):
        raise TraceFormatError("header values out of range", line=1)
    return TraceHeader(subcarriers=subcarriers, antennas=antennas, sample_rate=rate)


def iter_trace(source: str | os.PathLike | IO[str]) -> Iterator[TraceHeader | CsiSample]:
    """Stream a trace: yields the header first, then samples in file order.

    Raises TraceFormatError naming the offending line for malformed rows,
    out-of-range antenna ids and per-antenna timestamp regressions.
    """
    if isinstance(source, (str, os.PathLike)):
        fh: IO[str] = open(source, "r", encoding="utf-8", newline="")
        own = True
    else:
        fh, own = source, False
    try:
        first = fh.readline()
        if not first:
            raise TraceFormatError("empty input", line=1)
        header = parse_header(first)
        yield header
        m = header.subcarriers
        last_ts = [-math.inf] * header.antennas
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != m + 2:
                raise TraceFormatError(
                    f"expected {m + 2} fields, got {len(fields)}", line=lineno
                )
            try:
                ts = float(fields[0])
                antenna = int(fields[1])
                amps = np.array([float(v) for v in fields[2:]], dtype=np.float64)
            except ValueError:
                raise TraceFormatError("non-numeric field", line=lineno) from None
            if not math.isfinite(ts) or not np.isfinite(amps).all():
                raise TraceFormatError("non-finite value", line=lineno)
            if not 0 <= antenna < header.antennas:
                raise TraceFormatError(
                    f"antenna_id {antenna} out of range [0, {header.antennas})",
                    line=lineno,
                )
            if ts < last_ts[antenna]:
                raise TraceFormatError(
                    f"timestamp regression on antenna {antenna}", line=lineno
                )
            last_ts[antenna] = ts
            yield CsiSample(timestamp=ts, antenna_id=antenna, amplitudes=amps)
    finally:
        if own:
            fh.close()


def read_trace(
    source: str | os.PathLike | IO[str],
) -> tuple[TraceHeader, list[CsiSample]]:
    """Parse a whole trace into memory."""
    it = iter_trace(source)
    header = next(it)
    assert isinstance(header, TraceHeader)
    samples = [s for s in it if isinstance(s, CsiSample)]
    return header, samples


def format_sample(sample: CsiSample) -> str:
    amps = ",".join(_AMP_FMT % a for a in sample.amplitudes)
    return f"{_TS_FMT % sample.timestamp},{sample.antenna_id},{amps}"


def write_trace(
    dest: str | os.PathLike | IO[str],
    header: TraceHeader,
    samples: Iterable[CsiSample],
) -> None:
    """Write a trace in canonical form (stable field formatting)."""
    if isinstance(dest, (str, os.PathLike)):
        fh: IO[str] = open(dest, "w", encoding="utf-8", newline="\n")
        own = True
    else:
        fh, own = dest, False
    try:
        fh.write(format_header(header) + "\n")
        for sample in samples:
            fh.write(format_sample(sample) + "\n")
    finally:
        if own:
            fh.close()


def serialize_trace(header: TraceHeader, samples: Iterable[CsiSample]) -> str:
    buf = io.StringIO()
    write_trace(buf, header, samples)
    return buf.getvalue()


@dataclass
class FramingStats:
    """Bookkeeping from framing a sample stream."""

    gap_filled: dict[int, int] = field(default_factory=dict)
    dropped_tail: dict[int, int] = field(default_factory=dict)
    frames_emitted: dict[int, int] = field(default_factory=dict)

    @property
    def total_gap_filled(self) -> int:
        return sum(self.gap_filled.values())


class FrameAssembler:
    """Incrementally partitions per-antenna sample streams into frames.

    Samples are assigned to nominal-rate slots; a jump of ``k`` slots since
    the previous sample of the same antenna forward-fills ``k - 1`` copies of
    that sample. Frame ``k`` of an antenna covers its slots
    ``[k*N, (k+1)*N)`` and is emitted once the window fills; a trailing
    partial window is withheld until filled.
    """

    def __init__(self, config: FrameConfig):
        self.config = config
        self.stats = FramingStats()
        n_ant = config.antennas
        self._buffers: list[list[np.ndarray]] = [[] for _ in range(n_ant)]
        self._last_ts: list[float | None] = [None] * n_ant
        self._last_amps: list[np.ndarray | None] = [None] * n_ant
        self._t0: list[float | None] = [None] * n_ant
        self._frame_index = [0] * n_ant

    def push(self, sample: CsiSample) -> list[Frame]:
        """Add one sample; returns any frames completed by it."""
        cfg = self.config
        a = sample.antenna_id
        if sample.amplitudes.shape != (cfg.subcarriers,):
            raise ValueError(
                f"expected {cfg.subcarriers} amplitudes, got {sample.amplitudes.shape}"
            )
        buf = self._buffers[a]
        if self._last_ts[a] is None:
            self._t0[a] = sample.timestamp
            slots = 1
        else:
            elapsed = sample.timestamp - self._last_ts[a]
            slots = max(1, int(round(elapsed * cfg.sample_rate)))
            if slots > 1:
                fill = self._last_amps[a]
                for _ in range(slots - 1):
                    buf.append(fill)
                self.stats.gap_filled[a] = self.stats.gap_filled.get(a, 0) + slots - 1
        buf.append(sample.amplitudes)
        self._last_ts[a] = sample.timestamp
        self._last_amps[a] = sample.amplitudes
        return self._drain(a)

    def _drain(self, antenna: int) -> list[Frame]:
        cfg = self.config
        n = cfg.samples_per_window
        buf = self._buffers[antenna]
        frames = []
        while len(buf) >= n:
            window, self._buffers[antenna] = buf[:n], buf[n:]
            buf = self._buffers[antenna]
            k = self._frame_index[antenna]
            self._frame_index[antenna] = k + 1
            start = self._t0[antenna] + k * n / cfg.sample_rate
            pixels = np.stack(window, axis=1)
            frames.append(
                Frame(
                    antenna_id=antenna,
                    start_time=start,
                    pixels=pixels,
                    sample_stride=cfg.sample_stride,
                )
            )
            self.stats.frames_emitted[antenna] = self._frame_index[antenna]
        return frames

    def pending(self, antenna: int) -> int:
        return len(self._buffers[antenna])

    def finish(self) -> None:
        """Drop any trailing partial windows, warning per antenna."""
        for a, buf in enumerate(self._buffers):
            if buf:
                self.stats.dropped_tail[a] = len(buf)
                logger.warning(
                    "antenna %d: dropping %d trailing samples (partial window)",
                    a,
                    len(buf),
                )
                self._buffers[a] = []


def build_frames(
    samples: Iterable[CsiSample], config: FrameConfig
) -> tuple[dict[int, list[Frame]], FramingStats]:
    """Batch framing: full windows per antenna, partial tails dropped."""
    assembler = FrameAssembler(config)
    frames: dict[int, list[Frame]] = {a: [] for a in range(config.antennas)}
    for sample in samples:
        for frame in assembler.push(sample):
            frames[frame.antenna_id].append(frame)
    assembler.finish()
    return frames, assembler.stats


# Ground-truth / detected-event file: CSV `start_s,end_s,class_label`.
TRUTH_HEADER = "start_s,end_s,class_label"


def write_truth(
    dest: str | os.PathLike | IO[str], rows: Iterable[tuple[float, float, str]]
) -> None:
    if isinstance(dest, (str, os.PathLike)):
        fh: IO[str] = open(dest, "w", encoding="utf-8", newline="\n")
        own = True
    else:
        fh, own = dest, False
    try:
        fh.write(TRUTH_HEADER + "\n")
        for start, end, label in rows:
            fh.write(f"{_TS_FMT % start},{_TS_FMT % end},{label}\n")
    finally:
        if own:
            fh.close()


def read_truth(source: str | os.PathLike | IO[str]) -> list[tuple[float, float, str]]:
    if isinstance(source, (str, os.PathLike)):
        fh: IO[str] = open(source, "r", encoding="utf-8", newline="")
        own = True
    else:
        fh, own = source, False
    rows = []
    try:
        first = fh.readline().strip()
        if first != TRUTH_HEADER:
            raise TraceFormatError(f"bad event file header {first!r}", line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise TraceFormatError("expected 3 fields", line=lineno)
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError:
                raise TraceFormatError("non-numeric field", line=lineno) from None
            if end < start:
                raise TraceFormatError("event ends before it starts", line=lineno)
            rows.append((start, end, parts[2]))
    finally:
        if own:
            fh.close()
    return rows
