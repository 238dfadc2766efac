"""Command-line interface.

Subcommands: ``simulate``, ``detect``, ``watch``, ``serve``, ``eval``,
``render``. Exit codes: 0 success, 1 usage error, 2 data error, 3 partial
session (online source disconnected).
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
from pathlib import Path

from sleepsentry import events as events_mod
from sleepsentry import guardian as guardian_mod
from sleepsentry import metrics as metrics_mod
from sleepsentry import render as render_mod
from sleepsentry import simulate as simulate_mod
from sleepsentry.pipeline import MotionPipeline, PipelineParams, run_samples, run_trace_file
from sleepsentry.trace import (
    CsiSample,
    FrameConfig,
    TraceFormatError,
    build_frames,
    iter_trace,
    read_truth,
    write_truth,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_param_overrides(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("detection parameter overrides")
    group.add_argument("--params", help="pipeline parameter JSON file")
    group.add_argument("--window-seconds", type=float)
    group.add_argument("--gmm-components", type=int)
    group.add_argument("--learning-rate", type=float)
    group.add_argument("--background-threshold", type=float)
    group.add_argument("--deviation-factor", type=float)
    group.add_argument("--min-duration", type=float, help="temporal filter floor (s)")
    group.add_argument("--min-coverage", type=float, help="subcarrier coverage floor")
    group.add_argument("--density-window", type=float)
    group.add_argument("--min-density", type=float)
    group.add_argument("--merge-gap", type=float)
    group.add_argument("--knn-k", type=int)


def _params_from_args(args) -> PipelineParams:
    params = PipelineParams.load(args.params) if args.params else PipelineParams()
    overrides = {
        "window_seconds": args.window_seconds,
        "n_components": args.gmm_components,
        "learning_rate": args.learning_rate,
        "background_weight_threshold": args.background_threshold,
        "deviation_factor": args.deviation_factor,
        "min_duration": args.min_duration,
        "min_coverage": args.min_coverage,
        "density_window": args.density_window,
        "min_density": args.min_density,
        "merge_gap": args.merge_gap,
        "knn_k": args.knn_k,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(params, name, value)
    return params


def _classifier_from_args(args) -> events_mod.MotionKnn:
    k = args.knn_k if args.knn_k is not None else 5
    if getattr(args, "knn", None):
        return events_mod.MotionKnn.import_csv(args.knn, k=k)
    return events_mod.default_classifier(k=k)


def build_parser() -> _Parser:
    parser = _Parser(prog="sleepsentry", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic trace with ground truth")
    p.add_argument("--scenario", required=True, help="preset name or scenario JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("detect", help="batch motion detection over a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="sleep log JSON output")
    p.add_argument("--events-out", help="detected events CSV (ground-truth format)")
    p.add_argument("--knn", help="labeled training CSV / exported model file")
    p.add_argument("--session-id")
    _add_param_overrides(p)

    p = sub.add_parser("watch", help="online guarding over a file replay or live stream")
    p.add_argument("--source", required=True, help="trace file or host:port")
    p.add_argument("--contacts", help="contacts/rules config JSON")
    p.add_argument("--log-out")
    p.add_argument("--alerts-out")
    p.add_argument("--knn")
    p.add_argument("--session-id")
    _add_param_overrides(p)

    p = sub.add_parser("serve", help="accept live trace streams over TCP")
    p.add_argument("--listen", required=True, help="host:port to bind")
    p.add_argument("--contacts")
    p.add_argument("--out-dir", help="per-session log/alert output directory")
    p.add_argument("--max-sessions", type=int, help="stop after N sessions")
    p.add_argument("--knn")
    _add_param_overrides(p)

    p = sub.add_parser("eval", help="score detected events against ground truth")
    p.add_argument("--detected", required=True, help="sleep log JSON or events CSV")
    p.add_argument("--truth", required=True, help="ground truth CSV")
    p.add_argument("--report-out", help="metrics report JSON output")

    p = sub.add_parser("render", help="render trace frames to PPM heatmaps")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--window-seconds", type=float, default=2.0)
    p.add_argument(
        "--mark-foreground",
        action="store_true",
        help="run detection and overlay the filtered foreground mask",
    )

    return parser


def _cmd_simulate(args) -> int:
    scenario = simulate_mod.load_scenario(args.scenario, seed=args.seed)
    out = Path(args.out)
    trace_path, truth_path = simulate_mod.generate(scenario, out)
    scenario.save(out / "scenario.json")
    print(f"wrote {trace_path}")
    print(f"wrote {truth_path}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    params = _params_from_args(args)
    classifier = _classifier_from_args(args)
    pipeline, header = run_trace_file(args.trace, params, classifier=classifier)
    session_id = args.session_id or Path(args.trace).stem
    log = guardian_mod.SleepLog(session_id, start_time=pipeline.start_time)
    for event in pipeline.events:
        log.update(event)
    log.close(pipeline.current_time())
    log.write_json(args.out)
    if args.events_out:
        write_truth(
            args.events_out,
            [(e.start, e.end, e.label or "(unlabeled)") for e in pipeline.events],
        )
    stats = pipeline.stats
    print(
        f"{session_id}: {stats.events} events over {stats.samples} samples "
        f"({stats.windows} windows), raw foreground rate "
        f"{stats.raw_foreground_rate:.4f}"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_watch(args) -> int:
    params = _params_from_args(args)
    classifier = _classifier_from_args(args)
    config = (
        guardian_mod.load_guardian_config(args.contacts)
        if args.contacts
        else guardian_mod.GuardianConfig()
    )
    host_port = args.source.rpartition(":")
    live = bool(host_port[0]) and not Path(args.source).exists()
    if live:
        host, port = guardian_mod.parse_endpoint(args.source)
        session_id = args.session_id or "live"
        with socket.create_connection((host, port)) as conn:
            with conn.makefile("r", encoding="utf-8", newline="") as fh:
                result = guardian_mod.run_online(
                    fh,
                    params,
                    classifier=classifier,
                    config=config,
                    session_id=session_id,
                    live=True,
                )
    else:
        session_id = args.session_id or Path(args.source).stem
        result = guardian_mod.run_online(
            args.source, params, classifier=classifier, config=config, session_id=session_id
        )
    if args.log_out:
        result.log.write_json(args.log_out)
    if args.alerts_out:
        guardian_mod.write_alerts(args.alerts_out, result.alerts)
    print(
        f"{session_id}: {len(result.log.events)} events, "
        f"{len(result.alerts)} alerts"
        + (" (partial session)" if result.partial else "")
    )
    return EXIT_PARTIAL if result.partial else EXIT_OK


def _cmd_serve(args) -> int:
    params = _params_from_args(args)
    classifier = _classifier_from_args(args)
    config = (
        guardian_mod.load_guardian_config(args.contacts)
        if args.contacts
        else guardian_mod.GuardianConfig()
    )
    host, port = guardian_mod.parse_endpoint(args.listen)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    server = socket.create_server((host, port))
    bound = server.getsockname()
    print(f"listening on {bound[0]}:{bound[1]}", flush=True)
    sessions = 0
    try:
        while args.max_sessions is None or sessions < args.max_sessions:
            conn, peer = server.accept()
            sessions += 1
            session_id = f"live-{sessions:04d}"
            try:
                with conn:
                    with conn.makefile("r", encoding="utf-8", newline="") as fh:
                        result = guardian_mod.run_online(
                            fh,
                            params,
                            classifier=classifier,
                            config=config,
                            session_id=session_id,
                            live=True,
                        )
                    summary = {
                        "session": session_id,
                        "events": len(result.log.events),
                        "alerts": len(result.alerts),
                        "partial": result.partial,
                    }
                    try:
                        conn.sendall((json.dumps(summary) + "\n").encode())
                    except OSError:
                        pass
                if out_dir:
                    result.log.write_json(out_dir / f"{session_id}.log.json")
                    guardian_mod.write_alerts(
                        out_dir / f"{session_id}.alerts.jsonl", result.alerts
                    )
                print(
                    f"{session_id} from {peer[0]}: {len(result.log.events)} events, "
                    f"{len(result.alerts)} alerts",
                    flush=True,
                )
            except (OSError, ValueError) as exc:
                print(f"{session_id}: session failed: {exc}", file=sys.stderr, flush=True)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def _read_detected(path) -> list[metrics_mod.EventRecord]:
    p = Path(path)
    if p.suffix == ".json":
        data = json.loads(p.read_text())
        return [
            metrics_mod.EventRecord(
                start=e["start"], end=e["start"] + e["duration"], label=e.get("class")
            )
            for e in data.get("events", [])
        ]
    return [
        metrics_mod.EventRecord(start=s, end=e, label=lbl) for s, e, lbl in read_truth(p)
    ]


def _cmd_eval(args) -> int:
    detected = _read_detected(args.detected)
    truth = [
        metrics_mod.EventRecord(start=s, end=e, label=lbl)
        for s, e, lbl in read_truth(args.truth)
    ]
    report = metrics_mod.compute_metrics(detected, truth)
    sys.stdout.write(report.format_table())
    if args.report_out:
        Path(args.report_out).write_text(report.to_json())
        print(f"wrote {args.report_out}")
    return EXIT_OK


def _cmd_render(args) -> int:
    header = None
    samples = []
    for item in iter_trace(args.trace):
        if isinstance(item, CsiSample):
            samples.append(item)
        else:
            header = item
    config = FrameConfig.from_header(header, window_seconds=args.window_seconds)
    frames, _ = build_frames(samples, config)
    masks_by_antenna = None
    if args.mark_foreground:
        chunks: list = []
        pipeline = MotionPipeline(
            config,
            PipelineParams(window_seconds=args.window_seconds),
            on_mask_chunk=lambda start, pre, post: chunks.append(post),
        )
        run_samples(pipeline, iter(samples))
        if chunks:
            import numpy as np

            full = np.concatenate(chunks, axis=1)
            n = config.samples_per_window
            per_window = [
                full[:, k * n : (k + 1) * n] for k in range(full.shape[1] // n)
            ]
            masks_by_antenna = {a: per_window for a in frames}
    paths = render_mod.render_heatmaps(frames, args.out, masks_by_antenna)
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "detect": _cmd_detect,
    "watch": _cmd_watch,
    "serve": _cmd_serve,
    "eval": _cmd_eval,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TraceFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
