"""Sleep logging, abnormality rules and alert dispatch.

Offline service: a :class:`SleepLog` accumulates classified motion events
and the still-posture spans between them, with per-class counters, and
exports one JSON document per session.

Online service: a :class:`RuleEngine` watches the event stream for
abnormal patterns and raises alerts that are pushed to configured contacts
as line-delimited JSON over TCP. Three rule families are built in, all
thresholds user-configurable:

- ``intensity_outlier``: the newest event's intensity is a z-score outlier
  against the session's prior events (needs a minimum history);
- ``motion_burst``: too many events start within a sliding window;
- ``periodic_series``: a long train of near-constant start-to-start gaps,
  covering a minimum total span.

Rules are edge-triggered (they fire when their condition becomes true, not
on every event while it stays true) and each rule observes a refractory
period between alerts. Alert timestamps come from trace time, so replaying
a trace reproduces the alert sequence byte for byte.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from sleepsentry.events import MotionEvent, group_of

logger = logging.getLogger(__name__)

DEFAULT_REFRACTORY_SECONDS = 60.0
DEFAULT_CONNECT_TIMEOUT = 0.5
DEFAULT_RETRIES = 2


@dataclass(frozen=True)
class IntensityOutlierRule:
    z_threshold: float = 4.0
    min_history: int = 10
    severity: str = "critical"
    rule_id: str = "intensity_outlier"

    def __post_init__(self):
        if self.z_threshold <= 0 or self.min_history < 2:
            raise ValueError("bad intensity_outlier thresholds")


@dataclass(frozen=True)
class MotionBurstRule:
    count: int = 5
    window_seconds: float = 120.0
    severity: str = "warning"
    rule_id: str = "motion_burst"

    def __post_init__(self):
        if self.count < 2 or self.window_seconds <= 0:
            raise ValueError("bad motion_burst thresholds")


@dataclass(frozen=True)
class PeriodicSeriesRule:
    min_repeats: int = 10
    period_tolerance: float = 0.2
    min_total_seconds: float = 120.0
    severity: str = "critical"
    rule_id: str = "periodic_series"

    def __post_init__(self):
        if self.min_repeats < 2 or self.period_tolerance <= 0 or self.min_total_seconds <= 0:
            raise ValueError("bad periodic_series thresholds")


AbnormalityRule = IntensityOutlierRule | MotionBurstRule | PeriodicSeriesRule


def default_rules() -> list[AbnormalityRule]:
    return [IntensityOutlierRule(), MotionBurstRule(), PeriodicSeriesRule()]


@dataclass(frozen=True)
class Alert:
    timestamp: float
    rule_id: str
    severity: str
    session_id: str
    event: MotionEvent

    def to_wire_dict(self) -> dict:
        return {
            "ts": self.timestamp,
            "rule": self.rule_id,
            "severity": self.severity,
            "session": self.session_id,
            "event": {
                "start": self.event.start,
                "duration": self.event.duration,
                "intensity": self.event.intensity,
            },
        }

    def to_wire(self) -> str:
        return json.dumps(self.to_wire_dict(), separators=(",", ":"))


class RuleEngine:
    """Evaluates abnormality rules over the session's event stream."""

    def __init__(
        self,
        rules: Iterable[AbnormalityRule] | None = None,
        session_id: str = "session",
        refractory_seconds: float = DEFAULT_REFRACTORY_SECONDS,
    ):
        self.rules = list(rules) if rules is not None else default_rules()
        self.session_id = session_id
        self.refractory_seconds = refractory_seconds
        self._starts: list[float] = []
        self._intensities: list[float] = []
        self._was_true: dict[str, bool] = {r.rule_id: False for r in self.rules}
        self._last_fired: dict[str, float] = {}
        # periodic-series run state: consecutive start-to-start gaps that
        # agree with the run's mean within tolerance
        self._run_gaps: list[float] = []
        self._run_first_start: float | None = None

    def _condition(self, rule: AbnormalityRule, event: MotionEvent) -> bool:
        if isinstance(rule, IntensityOutlierRule):
            history = self._intensities
            if len(history) < rule.min_history:
                return False
            mean = float(np.mean(history))
            std = float(np.std(history))
            if std <= 0.0:
                return event.intensity != mean
            return (event.intensity - mean) / std > rule.z_threshold
        if isinstance(rule, MotionBurstRule):
            lo = event.start - rule.window_seconds
            recent = sum(1 for s in self._starts if s > lo) + 1  # + this event
            return recent >= rule.count
        if isinstance(rule, PeriodicSeriesRule):
            if len(self._run_gaps) < rule.min_repeats:
                return False
            span = event.start - self._run_first_start
            return span >= rule.min_total_seconds
        raise TypeError(f"unknown rule {rule!r}")

    def _update_periodic_run(self, start: float, tolerance: float) -> None:
        if not self._starts:
            return
        gap = start - self._starts[-1]
        if self._run_gaps:
            mean = sum(self._run_gaps) / len(self._run_gaps)
            if abs(gap - mean) <= tolerance * mean:
                self._run_gaps.append(gap)
                return
        # run broken (or first gap): restart it at the previous event
        self._run_gaps = [gap]
        self._run_first_start = self._starts[-1]

    def observe(self, event: MotionEvent, now: float) -> list[Alert]:
        """Feed the next event (time-ordered); returns any alerts raised."""
        tolerance = next(
            (r.period_tolerance for r in self.rules if isinstance(r, PeriodicSeriesRule)),
            0.2,
        )
        self._update_periodic_run(event.start, tolerance)
        alerts = []
        for rule in self.rules:
            cond = self._condition(rule, event)
            edge = cond and not self._was_true[rule.rule_id]
            self._was_true[rule.rule_id] = cond
            if not edge:
                continue
            last = self._last_fired.get(rule.rule_id)
            if last is not None and now - last < self.refractory_seconds:
                continue
            self._last_fired[rule.rule_id] = now
            alerts.append(
                Alert(
                    timestamp=now,
                    rule_id=rule.rule_id,
                    severity=rule.severity,
                    session_id=self.session_id,
                    event=event,
                )
            )
        self._starts.append(event.start)
        self._intensities.append(event.intensity)
        return alerts


def detect_abnormality(
    history: Iterable[MotionEvent],
    rules: Iterable[AbnormalityRule] | None = None,
    session_id: str = "session",
    refractory_seconds: float = DEFAULT_REFRACTORY_SECONDS,
) -> list[Alert]:
    """Replay a time-ordered event history through a fresh rule engine.

    Alert timestamps are the event end times (there is no stream clock in a
    replayed history).
    """
    engine = RuleEngine(rules, session_id=session_id, refractory_seconds=refractory_seconds)
    alerts = []
    for event in history:
        alerts.extend(engine.observe(event, now=event.end))
    return alerts


class SleepLog:
    """Per-session activity log: events, posture spans and counters."""

    def __init__(self, session_id: str, start_time: float = 0.0):
        self.session_id = session_id
        self.start_time = start_time
        self.end_time: float | None = None
        self.events: list[MotionEvent] = []
        self.posture_spans: list[tuple[float, float]] = []  # (start, duration)
        self.class_counts: dict[str, int] = {}
        self.alerts: list[Alert] = []

    @property
    def _last_time(self) -> float:
        return self.events[-1].end if self.events else self.start_time

    def update(self, event: MotionEvent, label: str | None = None) -> None:
        """Append an event, closing the posture span that preceded it."""
        if label is not None:
            event.label = label
        if event.start < self._last_time - 1e-9:
            raise ValueError(
                f"event at {event.start:.3f} is out of order "
                f"(log already at {self._last_time:.3f})"
            )
        span = event.start - self._last_time
        if span > 0:
            self.posture_spans.append((self._last_time, span))
        key = event.label if event.label is not None else "(unlabeled)"
        self.class_counts[key] = self.class_counts.get(key, 0) + 1
        self.events.append(event)

    def close(self, end_time: float) -> None:
        if end_time > self._last_time:
            self.posture_spans.append((self._last_time, end_time - self._last_time))
        self.end_time = end_time

    def record_alert(self, alert: Alert) -> None:
        self.alerts.append(alert)

    def total_logged_seconds(self) -> float:
        return sum(d for _, d in self.posture_spans) + sum(
            e.duration for e in self.events
        )

    def to_json_dict(self) -> dict:
        return {
            "session": self.session_id,
            "start": self.start_time,
            "end": self.end_time,
            "events": [
                {
                    "start": e.start,
                    "duration": e.duration,
                    "intensity": e.intensity,
                    "coverage": e.coverage,
                    "antenna_votes": list(e.antenna_votes),
                    "class": e.label,
                    "group": group_of(e.label) if e.label is not None else None,
                }
                for e in self.events
            ],
            "posture_spans": [
                {"start": s, "duration": d} for s, d in self.posture_spans
            ],
            "counters": {
                "per_class": {k: self.class_counts[k] for k in sorted(self.class_counts)},
                "alerts": len(self.alerts),
            },
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class Contact:
    name: str
    host: str
    port: int


@dataclass
class GuardianConfig:
    contacts: list[Contact] = field(default_factory=list)
    rules: list[AbnormalityRule] = field(default_factory=default_rules)
    refractory_seconds: float = DEFAULT_REFRACTORY_SECONDS
    connect_timeout: float = DEFAULT_CONNECT_TIMEOUT
    retries: int = DEFAULT_RETRIES


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad endpoint {endpoint!r}, expected host:port")
    return host, int(port)


def load_guardian_config(path) -> GuardianConfig:
    """Contacts/rules JSON file; absent sections fall back to defaults."""
    data = json.loads(Path(path).read_text())
    contacts = []
    for entry in data.get("contacts", []):
        host, port = parse_endpoint(entry["endpoint"])
        contacts.append(Contact(name=entry.get("name", entry["endpoint"]), host=host, port=port))
    rules: list[AbnormalityRule] = []
    spec_rules = data.get("rules")
    if spec_rules is None:
        rules = default_rules()
    else:
        io_cfg = spec_rules.get("intensity_outlier", {})
        if io_cfg is not False:
            rules.append(IntensityOutlierRule(**(io_cfg or {})))
        mb_cfg = spec_rules.get("motion_burst", {})
        if mb_cfg is not False:
            rules.append(MotionBurstRule(**(mb_cfg or {})))
        ps_cfg = spec_rules.get("periodic_series", {})
        if ps_cfg is not False:
            rules.append(PeriodicSeriesRule(**(ps_cfg or {})))
    dispatch = data.get("dispatch", {})
    return GuardianConfig(
        contacts=contacts,
        rules=rules,
        refractory_seconds=data.get("refractory_seconds", DEFAULT_REFRACTORY_SECONDS),
        connect_timeout=dispatch.get("connect_timeout", DEFAULT_CONNECT_TIMEOUT),
        retries=dispatch.get("retries", DEFAULT_RETRIES),
    )


@dataclass
class DeliveryReport:
    """Per-contact delivery outcome for one alert."""

    delivered: int = 0
    failed: int = 0
    results: list[tuple[str, bool, str | None]] = field(default_factory=list)

    def add(self, contact: str, ok: bool, error: str | None = None) -> None:
        self.results.append((contact, ok, error))
        if ok:
            self.delivered += 1
        else:
            self.failed += 1


def dispatch_alert(
    alert: Alert,
    contacts: Iterable[Contact],
    connect_timeout: float = DEFAULT_CONNECT_TIMEOUT,
    retries: int = DEFAULT_RETRIES,
) -> DeliveryReport:
    """Send one alert to every contact, with bounded retries per contact.

    Failures are recorded, never raised; a dead contact cannot take the
    pipeline down.
    """
    wire = (alert.to_wire() + "\n").encode("utf-8")
    report = DeliveryReport()
    for contact in contacts:
        error = None
        ok = False
        for _ in range(1 + retries):
            try:
                with socket.create_connection(
                    (contact.host, contact.port), timeout=connect_timeout
                ) as conn:
                    conn.sendall(wire)
                ok = True
                break
            except OSError as exc:
                error = str(exc)
        report.add(contact.name, ok, None if ok else error)
        if not ok:
            logger.warning("alert delivery to %s failed: %s", contact.name, error)
    return report


class GuardianSession:
    """Wires a detection pipeline's events into log, rules and dispatch."""

    def __init__(
        self,
        session_id: str,
        config: GuardianConfig | None = None,
        dispatcher: AlertDispatcher | None = None,
    ):
        self.config = config or GuardianConfig()
        self.log = SleepLog(session_id)
        self.engine = RuleEngine(
            self.config.rules,
            session_id=session_id,
            refractory_seconds=self.config.refractory_seconds,
        )
        self.dispatcher = dispatcher
        self.alerts: list[Alert] = []

    def on_event(self, event: MotionEvent, now: float) -> None:
        self.log.update(event)
        for alert in self.engine.observe(event, now):
            self.alerts.append(alert)
            self.log.record_alert(alert)
            if self.dispatcher is not None:
                self.dispatcher.submit(alert)

    def close(self, end_time: float) -> None:
        self.log.close(end_time)


@dataclass
class SessionResult:
    log: SleepLog
    alerts: list[Alert]
    stats: object
    partial: bool = False
    delivery_reports: list[DeliveryReport] = field(default_factory=list)


def run_online(
    source,
    params=None,
    classifier=None,
    config: GuardianConfig | None = None,
    session_id: str = "session",
    live: bool = False,
) -> SessionResult:
    """End-to-end online session over a trace source.

    ``source`` is a trace file path or an open text stream of trace lines
    (e.g. a socket file). Replay runs at full speed; all timestamps are
    trace time. With ``live=True`` the end of the stream counts as a
    source disconnect and the session is flushed as partial.
    """
    from sleepsentry.pipeline import (  # local import, avoids a cycle
        MotionPipeline,
        PipelineParams,
        iter_sample_windows,
    )
    from sleepsentry.trace import CsiSample, FrameConfig, iter_trace

    params = params or PipelineParams()
    config = config or GuardianConfig()
    dispatcher = None
    if config.contacts:
        dispatcher = AlertDispatcher(
            config.contacts,
            connect_timeout=config.connect_timeout,
            retries=config.retries,
        )
    session = GuardianSession(session_id, config, dispatcher)
    partial = False
    pipeline = None
    try:
        it = iter_trace(source)
        header = next(it)
        frame_config = FrameConfig.from_header(header, window_seconds=params.window_seconds)
        pipeline = MotionPipeline(
            frame_config, params, classifier=classifier, on_event=session.on_event
        )
        samples = (s for s in it if isinstance(s, CsiSample))
        first = True
        for start, window in iter_sample_windows(samples, frame_config):
            if first:
                session.log.start_time = start
                first = False
            pipeline.process_window(window, start_time=start)
    except (OSError, ValueError) as exc:
        if pipeline is None:
            raise
        logger.warning("source interrupted (%s); flushing partial session", exc)
        partial = True
    finally:
        if pipeline is not None:
            pipeline.finish()
            session.close(pipeline.current_time())
        if dispatcher is not None:
            dispatcher.close()
    if live and not partial:
        partial = True  # a live source only ever ends by disconnecting
    return SessionResult(
        log=session.log,
        alerts=session.alerts,
        stats=pipeline.stats if pipeline is not None else None,
        partial=partial,
        delivery_reports=dispatcher.reports if dispatcher is not None else [],
    )


def write_alerts(path, alerts: Iterable[Alert]) -> None:
    """Line-delimited JSON alert file, identical to the wire format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for alert in alerts:
            fh.write(alert.to_wire() + "\n")


class AlertDispatcher:
    """Background dispatcher: persistent connection per contact, FIFO order.

    ``submit`` never blocks the caller; delivery happens on a worker thread
    with bounded per-alert retries and reconnection. Reports accumulate in
    submission order.
    """

    def __init__(
        self,
        contacts: Iterable[Contact],
        connect_timeout: float = DEFAULT_CONNECT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
    ):
        self.contacts = list(contacts)
        self.connect_timeout = connect_timeout
        self.retries = retries
        self.reports: list[DeliveryReport] = []
        self._queue: queue.Queue[Alert | None] = queue.Queue()
        self._conns: dict[str, socket.socket] = {}
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def submit(self, alert: Alert) -> None:
        self._queue.put(alert)

    def _send_one(self, contact: Contact, wire: bytes) -> tuple[bool, str | None]:
        error = None
        for attempt in range(1 + self.retries):
            conn = self._conns.get(contact.name)
            try:
                if conn is None:
                    conn = socket.create_connection(
                        (contact.host, contact.port), timeout=self.connect_timeout
                    )
                    self._conns[contact.name] = conn
                conn.sendall(wire)
                return True, None
            except OSError as exc:
                error = str(exc)
                if contact.name in self._conns:
                    try:
                        self._conns.pop(contact.name).close()
                    except OSError:
                        pass
        return False, error

    def _run(self):
        while True:
            alert = self._queue.get()
            if alert is None:
                break
            wire = (alert.to_wire() + "\n").encode("utf-8")
            report = DeliveryReport()
            for contact in self.contacts:
                ok, error = self._send_one(contact, wire)
                report.add(contact.name, ok, error)
                if not ok:
                    logger.warning(
                        "alert delivery to %s failed: %s", contact.name, error
                    )
            self.reports.append(report)

    def close(self, timeout: float | None = None) -> None:
        """Drain the queue, stop the worker and close connections."""
        self._queue.put(None)
        self._thread.join(timeout=timeout)
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
        self._conns.clear()
