"""Ground-truth-labeled synthetic amplitude trace generator.

The generator composes, per (sample, antenna, subcarrier):

    amplitude = baseline + posture step offsets + motion perturbation
                + device glitches + outside-interference spikes + noise

Motions are scripted events: a wide per-sample uniform perturbation over a
class-specific fraction of subcarriers, scaled per antenna by distinct gains
so antennas see the same motion with different strength. Envelopes:

- ``burst``: perturbation active for the whole event;
- ``periodic``: perturbation gated on for ``duty`` of every ``period``,
  producing a train of short twitches (one scripted event, many motions);
- ``step``: the per-pixel baseline shifts permanently at event start
  (posture change), optionally with a burst perturbation during the event.

Device glitches are single-sample spikes on up to three random subcarriers
of one antenna. Outside interference (e.g. a person beyond the sensing
path) is a per-pixel spike drizzle whose merged label density stays below
the density filter threshold by construction.

Everything is deterministic under the scenario seed, and the scripted
schedule (the ground truth) is part of the scenario itself, so changing the
seed changes noise and realization details but never the schedule.

All class amplitude scales are synthetic defaults chosen for class
separability in (duration, intensity, coverage) space; they are not
measurements of real channels.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from sleepsentry.events import MotionClass
from sleepsentry.trace import CsiSample, FrameConfig, TraceHeader, write_trace, write_truth

# Fixed seed for schedule jitter inside presets; run seeds must not move the
# ground-truth schedule.
_SCHEDULE_SEED = 97251

DEFAULT_ANTENNA_GAINS = (1.0, 0.75, 0.55)


@dataclass(frozen=True)
class MotionProfile:
    amplitude: float  # dBm half-range of the per-sample perturbation
    duration_mean: float
    duration_sd: float
    coverage: float  # fraction of subcarriers the motion affects


MOTION_PROFILES: dict[MotionClass, MotionProfile] = {
    MotionClass.HEAD_SWING: MotionProfile(12.0, 0.95, 0.05, 0.78),
    MotionClass.ARM_UP_DOWN: MotionProfile(13.0, 1.15, 0.06, 0.82),
    MotionClass.ARM_SWING: MotionProfile(13.0, 1.15, 0.06, 0.82),
    MotionClass.LEG_BEND: MotionProfile(14.0, 1.35, 0.07, 0.85),
    MotionClass.LEG_STRETCH: MotionProfile(14.0, 1.35, 0.07, 0.85),
    MotionClass.TORSO_TWIST: MotionProfile(15.0, 1.70, 0.08, 0.88),
    MotionClass.ROLLOVER: MotionProfile(15.5, 1.85, 0.08, 0.93),
    MotionClass.FULL_STRETCH: MotionProfile(18.0, 2.40, 0.10, 1.0),
}

# The six-motion protocol: one class per body-part group.
PROTOCOL_SEQUENCE = (
    MotionClass.HEAD_SWING,
    MotionClass.ARM_SWING,
    MotionClass.LEG_BEND,
    MotionClass.TORSO_TWIST,
    MotionClass.ROLLOVER,
    MotionClass.FULL_STRETCH,
)


@dataclass(frozen=True)
class ScriptedEvent:
    """One scheduled motion."""

    start: float
    duration: float
    motion_class: str
    amplitude: float
    coverage: float
    envelope: str = "burst"  # burst | periodic | step
    period: float = 2.0
    duty: float = 0.25
    baseline_shift: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("event duration must be positive")
        if self.envelope not in ("burst", "periodic", "step"):
            raise ValueError(f"unknown envelope {self.envelope!r}")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must be in (0, 1]")
        if self.envelope == "periodic" and (self.period <= 0 or not 0 < self.duty <= 1):
            raise ValueError("periodic envelope needs period > 0 and duty in (0, 1]")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class NlosInterference:
    """Spike drizzle from outside the sensing path."""

    density: float  # target merged foreground-label density, < filter floor
    amplitude: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.density < 1.0:
            raise ValueError("density must be in (0, 1)")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    seed: int = 0
    subcarriers: int = 30
    antennas: int = 3
    sample_rate: float = 330.0
    window_seconds: float = 2.0
    baseline_range: tuple[float, float] = (-48.0, -38.0)
    noise_sigma: float = 0.5
    antenna_gains: tuple[float, ...] = DEFAULT_ANTENNA_GAINS
    events: tuple[ScriptedEvent, ...] = ()
    glitches_per_minute: float = 0.0
    glitch_amplitude: float = 12.0
    nlos: NlosInterference | None = None
    allow_overlap: bool = False

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if len(self.antenna_gains) != self.antennas:
            raise ValueError("need one gain per antenna")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        ordered = sorted(self.events, key=lambda e: e.start)
        if not self.allow_overlap:
            for prev, cur in zip(ordered, ordered[1:]):
                if cur.start < prev.end:
                    raise ValueError(
                        f"events overlap at t={cur.start:.3f} (unflagged)"
                    )
        object.__setattr__(self, "events", tuple(ordered))

    @property
    def frame_config(self) -> FrameConfig:
        return FrameConfig.for_window(
            self.window_seconds, self.sample_rate, self.subcarriers, self.antennas
        )

    @property
    def header(self) -> TraceHeader:
        return TraceHeader(
            subcarriers=self.subcarriers,
            antennas=self.antennas,
            sample_rate=self.sample_rate,
        )

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def ground_truth(self) -> list[tuple[float, float, str]]:
        """Every scripted motion; interference is deliberately absent."""
        return [(e.start, e.end, e.motion_class) for e in self.events]

    def to_json_dict(self) -> dict:
        d = {
            "name": self.name,
            "duration": self.duration,
            "seed": self.seed,
            "subcarriers": self.subcarriers,
            "antennas": self.antennas,
            "sample_rate": self.sample_rate,
            "window_seconds": self.window_seconds,
            "baseline_range": list(self.baseline_range),
            "noise_sigma": self.noise_sigma,
            "antenna_gains": list(self.antenna_gains),
            "glitches_per_minute": self.glitches_per_minute,
            "glitch_amplitude": self.glitch_amplitude,
            "allow_overlap": self.allow_overlap,
            "events": [
                {
                    "start": e.start,
                    "duration": e.duration,
                    "class": e.motion_class,
                    "amplitude": e.amplitude,
                    "coverage": e.coverage,
                    "envelope": e.envelope,
                    "period": e.period,
                    "duty": e.duty,
                    "baseline_shift": e.baseline_shift,
                }
                for e in self.events
            ],
        }
        if self.nlos is not None:
            d["nlos"] = {"density": self.nlos.density, "amplitude": self.nlos.amplitude}
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "Scenario":
        events = tuple(
            ScriptedEvent(
                start=e["start"],
                duration=e["duration"],
                motion_class=e["class"],
                amplitude=e["amplitude"],
                coverage=e["coverage"],
                envelope=e.get("envelope", "burst"),
                period=e.get("period", 2.0),
                duty=e.get("duty", 0.25),
                baseline_shift=e.get("baseline_shift", 0.0),
            )
            for e in d.get("events", [])
        )
        nlos = None
        if "nlos" in d and d["nlos"]:
            nlos = NlosInterference(
                density=d["nlos"]["density"],
                amplitude=d["nlos"].get("amplitude", 3.0),
            )
        return cls(
            name=d["name"],
            duration=d["duration"],
            seed=d.get("seed", 0),
            subcarriers=d.get("subcarriers", 30),
            antennas=d.get("antennas", 3),
            sample_rate=d.get("sample_rate", 330.0),
            window_seconds=d.get("window_seconds", 2.0),
            baseline_range=tuple(d.get("baseline_range", (-48.0, -38.0))),
            noise_sigma=d.get("noise_sigma", 0.5),
            antenna_gains=tuple(d.get("antenna_gains", DEFAULT_ANTENNA_GAINS)),
            events=events,
            glitches_per_minute=d.get("glitches_per_minute", 0.0),
            glitch_amplitude=d.get("glitch_amplitude", 12.0),
            nlos=nlos,
            allow_overlap=d.get("allow_overlap", False),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass
class RealizedEvent:
    event: ScriptedEvent
    rows: np.ndarray  # affected subcarrier indices
    start_sample: int
    end_sample: int
    shift: np.ndarray | None = None  # (A, M) baseline offset for steps


@dataclass
class RealizedScenario:
    """Seed-dependent concrete realization of a scenario."""

    scenario: Scenario
    baseline: np.ndarray  # (A, M)
    events: list[RealizedEvent]
    glitches: list[tuple[int, int, np.ndarray, np.ndarray]] = field(default_factory=list)


def realize(scenario: Scenario) -> RealizedScenario:
    """Draw the seed-dependent parts: baseline, affected rows, glitches."""
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 1]))
    a, m = scenario.antennas, scenario.subcarriers
    lo, hi = scenario.baseline_range
    baseline = rng.uniform(lo, hi, (a, m))
    events = []
    for ev in scenario.events:
        n_rows = max(1, int(round(ev.coverage * m)))
        rows = np.sort(rng.choice(m, size=n_rows, replace=False))
        shift = None
        if ev.envelope == "step" and ev.baseline_shift != 0.0:
            magnitude = rng.uniform(0.75, 1.25, (a, m)) * ev.baseline_shift
            sign = np.where(rng.random((a, m)) < 0.5, -1.0, 1.0)
            shift = magnitude * sign
        events.append(
            RealizedEvent(
                event=ev,
                rows=rows,
                start_sample=int(round(ev.start * scenario.sample_rate)),
                end_sample=int(round(ev.end * scenario.sample_rate)),
                shift=shift,
            )
        )
    glitches = []
    n_glitches = int(round(scenario.glitches_per_minute * scenario.duration / 60.0))
    if n_glitches > 0:
        times = np.sort(rng.integers(0, scenario.n_samples, n_glitches))
        for t in times:
            antenna = int(rng.integers(0, a))
            rows = rng.choice(m, size=int(rng.integers(1, 4)), replace=False)
            amps = rng.uniform(0.7, 1.3, rows.size) * scenario.glitch_amplitude
            amps *= np.where(rng.random(rows.size) < 0.5, -1.0, 1.0)
            glitches.append((int(t), antenna, rows, amps))
    return RealizedScenario(
        scenario=scenario, baseline=baseline, events=events, glitches=glitches
    )


def iter_blocks(
    scenario: Scenario, realized: RealizedScenario | None = None
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield (start_sample, timestamps, amplitudes) window-sized blocks.

    Amplitude blocks are (n, antennas, subcarriers). The internal chunking
    is fixed at one frame window so the draw sequence, and therefore the
    output, is identical no matter how the caller consumes it.
    """
    if realized is None:
        realized = realize(scenario)
    cfg = scenario.frame_config
    noise_rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 2]))
    event_rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 3]))
    nlos_rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 4]))
    a, m = scenario.antennas, scenario.subcarriers
    gains = np.asarray(scenario.antenna_gains, dtype=np.float64)
    total = scenario.n_samples
    chunk = cfg.samples_per_window
    rate = scenario.sample_rate
    glitch_idx = 0
    q = 0.0
    if scenario.nlos is not None:
        q = 1.0 - (1.0 - scenario.nlos.density) ** (1.0 / a)

    for s0 in range(0, total, chunk):
        n = min(chunk, total - s0)
        amps = noise_rng.normal(0.0, scenario.noise_sigma, (n, a, m))
        amps += realized.baseline[None, :, :]

        for rev in realized.events:
            ev = rev.event
            if ev.envelope == "step" and rev.shift is not None and rev.start_sample < s0 + n:
                k0 = max(0, rev.start_sample - s0)
                amps[k0:] += rev.shift[None, :, :]
            if ev.amplitude <= 0.0:
                continue
            lo = max(rev.start_sample, s0)
            hi = min(rev.end_sample, s0 + n)
            if lo >= hi:
                continue
            k0, k1 = lo - s0, hi - s0
            rows = rev.rows
            pert = event_rng.uniform(-1.0, 1.0, (k1 - k0, a, rows.size))
            pert *= ev.amplitude * gains[None, :, None]
            if ev.envelope == "periodic":
                t_rel = (np.arange(lo, hi) / rate) - ev.start
                gate = (t_rel % ev.period) < ev.duty * ev.period
                pert *= gate[:, None, None]
            amps[k0:k1, :, rows] += pert

        while glitch_idx < len(realized.glitches):
            t, antenna, rows, gl_amps = realized.glitches[glitch_idx]
            if t >= s0 + n:
                break
            amps[t - s0, antenna, rows] += gl_amps
            glitch_idx += 1

        if q > 0.0:
            hit = nlos_rng.random((n, a, m)) < q
            magnitude = scenario.nlos.amplitude * (0.75 + 0.5 * nlos_rng.random((n, a, m)))
            sign = np.where(nlos_rng.random((n, a, m)) < 0.5, -1.0, 1.0)
            amps += hit * magnitude * sign

        times = np.arange(s0, s0 + n) / rate
        yield s0, times, amps


def iter_samples(scenario: Scenario) -> Iterator[CsiSample]:
    """Row-stream view of a scenario, antenna-interleaved per tick."""
    for _, times, amps in iter_blocks(scenario):
        for i in range(amps.shape[0]):
            for antenna in range(amps.shape[1]):
                yield CsiSample(
                    timestamp=float(times[i]),
                    antenna_id=antenna,
                    amplitudes=amps[i, antenna],
                )


def generate(scenario: Scenario, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``trace.csv`` and ``truth.csv``; byte-identical under a seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.csv"
    truth_path = out / "truth.csv"
    write_trace(trace_path, scenario.header, iter_samples(scenario))
    write_truth(truth_path, scenario.ground_truth())
    return trace_path, truth_path


def _protocol_events(
    rng: np.random.Generator,
    repetitions: int,
    lead: float,
    gap_range: tuple[float, float],
) -> tuple[ScriptedEvent, ...]:
    events = []
    t = lead
    for _ in range(repetitions):
        for cls in PROTOCOL_SEQUENCE:
            profile = MOTION_PROFILES[cls]
            duration = float(
                np.clip(
                    rng.normal(profile.duration_mean, profile.duration_sd),
                    0.5,
                    profile.duration_mean + 3 * profile.duration_sd,
                )
            )
            events.append(
                ScriptedEvent(
                    start=round(t, 3),
                    duration=round(duration, 3),
                    motion_class=cls.value,
                    amplitude=profile.amplitude,
                    coverage=profile.coverage,
                )
            )
            t += duration + float(rng.uniform(*gap_range))
    return tuple(events)


def preset_scenarios(seed: int = 0) -> dict[str, Scenario]:
    """Named scenario catalog. The schedule is fixed; ``seed`` moves only
    noise and realization details."""
    rng = np.random.default_rng(_SCHEDULE_SEED)

    presets: dict[str, Scenario] = {}

    presets["calm-night"] = Scenario(
        name="calm-night", duration=8 * 3600.0, seed=seed
    )

    protocol = _protocol_events(rng, repetitions=10, lead=10.0, gap_range=(4.5, 6.5))
    dur = math.ceil((protocol[-1].end + 10.0) / 2.0) * 2.0
    presets["paper-protocol"] = Scenario(
        name="paper-protocol", duration=dur, seed=seed, events=protocol
    )

    presets["glitch-storm"] = Scenario(
        name="glitch-storm", duration=600.0, seed=seed, glitches_per_minute=12.0
    )

    nlos_events = []
    t = 40.0
    for cls in PROTOCOL_SEQUENCE:
        profile = MOTION_PROFILES[cls]
        nlos_events.append(
            ScriptedEvent(
                start=round(t, 3),
                duration=round(profile.duration_mean, 3),
                motion_class=cls.value,
                amplitude=profile.amplitude,
                coverage=profile.coverage,
            )
        )
        t += profile.duration_mean + float(rng.uniform(70.0, 90.0))
    presets["nlos-neighbor"] = Scenario(
        name="nlos-neighbor",
        duration=600.0,
        seed=seed,
        events=tuple(nlos_events),
        nlos=NlosInterference(density=0.3, amplitude=3.0),
    )

    presets["seizure"] = Scenario(
        name="seizure",
        duration=280.0,
        seed=seed,
        events=(
            ScriptedEvent(
                start=60.0,
                duration=160.0,
                motion_class=MotionClass.LEG_BEND.value,
                amplitude=12.0,
                coverage=0.8,
                envelope="periodic",
                period=2.0,
                duty=0.25,
            ),
        ),
    )

    calm_events = []
    t = 30.0
    calm_classes = (MotionClass.HEAD_SWING, MotionClass.ARM_SWING)
    for i in range(12):
        cls = calm_classes[i % 2]
        profile = MOTION_PROFILES[cls]
        duration = round(float(rng.normal(profile.duration_mean, profile.duration_sd)), 3)
        calm_events.append(
            ScriptedEvent(
                start=round(t, 3),
                duration=duration,
                motion_class=cls.value,
                amplitude=profile.amplitude,
                coverage=profile.coverage,
            )
        )
        t += duration + float(rng.uniform(32.0, 55.0))
    calm_events.append(
        ScriptedEvent(
            start=round(t, 3),
            duration=1.1,
            motion_class=MotionClass.TORSO_TWIST.value,
            amplitude=30.0,
            coverage=1.0,
        )
    )
    dur = math.ceil((calm_events[-1].end + 20.0) / 2.0) * 2.0
    presets["nightmare-sit-up"] = Scenario(
        name="nightmare-sit-up", duration=dur, seed=seed, events=tuple(calm_events)
    )

    presets["posture-shift"] = Scenario(
        name="posture-shift",
        duration=300.0,
        seed=seed,
        events=(
            ScriptedEvent(
                start=120.0,
                duration=0.5,
                motion_class=MotionClass.ROLLOVER.value,
                amplitude=0.0,
                coverage=1.0,
                envelope="step",
                baseline_shift=8.0,
            ),
        ),
    )

    return presets


def load_scenario(name_or_path: str, seed: int | None = None) -> Scenario:
    """Resolve a preset name or scenario JSON path, optionally re-seeded."""
    presets = preset_scenarios(seed=seed if seed is not None else 0)
    if name_or_path in presets:
        scenario = presets[name_or_path]
    elif os.path.exists(name_or_path):
        scenario = Scenario.load(name_or_path)
    else:
        raise ValueError(
            f"unknown scenario {name_or_path!r}; presets: {', '.join(sorted(presets))}"
        )
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return scenario
