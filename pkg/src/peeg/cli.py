"""Operator command line: simulate, record, replay, serve, analyze, regs,
export. Non-interactive by design; exit codes are 0 ok, 2 usage, 3 io/data,
4 protocol/remote. Reports print as text or as deterministic JSON."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import acquisition, ads1299, dsp, protocol, session as session_store, synth
from .acquisition import Pipeline, ReplayBackend, SimulatorBackend
from .client import RemoteError, StationClient
from .server import DEFAULT_PORT, DEFAULT_WS_PORT, Station, StreamServer, resolve_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_REMOTE = 4


def _fail(message: str, code: int) -> int:
    print(f"peeg: {message}", file=sys.stderr)
    return code


def _parse_endpoint(value: Optional[str], default_port: int) -> tuple[str, int]:
    value = value or os.environ.get("PEEG_ENDPOINT") or f"127.0.0.1:{default_port}"
    host, _, port = value.rpartition(":")
    return host or "127.0.0.1", int(port)


def _token(args) -> Optional[str]:
    return getattr(args, "token", None) or os.environ.get("PEEG_TOKEN") or None


def _make_backend(spec: str, seed: Optional[int]):
    kind, _, ref = spec.partition(":")
    if kind == "sim":
        return SimulatorBackend(resolve_scenario(ref or "fig6", seed))
    if kind == "replay":
        return ReplayBackend(session_store.read_session(ref))
    if kind == "hw":
        return acquisition.HardwareBackend(ref)
    raise ValueError(f"unknown backend {spec!r} (use sim:NAME, replay:FILE, hw:CONFIG)")


def _alpha_annotations(truth: synth.GroundTruth, duration: float) -> list[session_store.Annotation]:
    """Eyes-closed/open markers at alpha interval boundaries."""
    out = []
    for start, end in truth.alpha_intervals:
        out.append(session_store.Annotation(start, "eyes_closed"))
        if end < duration:
            out.append(session_store.Annotation(end, "eyes_open"))
    return sorted(out, key=lambda a: a.time)


def _emit(report: dict, fmt: str, text_renderer) -> None:
    if fmt == "json":
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        text_renderer(report)


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    scenario = resolve_scenario(args.scenario, args.seed)
    backend = SimulatorBackend(scenario)
    pipeline = Pipeline(backend, block_len=min(scenario.fs, 250), paced=False)
    sub = pipeline.subscribe(capacity=1 << 20)
    pipeline.start()
    pipeline.join()
    annotations = _alpha_annotations(backend.ground_truth, scenario.duration)
    session_store.write_session(
        args.out,
        iter(sub),
        channel_labels=scenario.labels,
        backend="simulator",
        annotations=annotations,
        extra_header={"scenario": synth.scenario_to_dict(scenario)},
    )
    recorded = session_store.read_session(args.out)
    print(f"wrote {args.out}: {recorded.n_samples} samples at {recorded.fs} SPS, "
          f"{len(recorded.annotations)} annotations")
    return EXIT_OK


def cmd_record(args) -> int:
    backend = _make_backend(args.backend, args.seed)
    pipeline = Pipeline(backend, block_len=args.block_len, paced=args.paced)
    sub = pipeline.subscribe(capacity=4096)
    pipeline.start()
    labels = getattr(getattr(backend, "scenario", None), "labels", None)
    if labels is None:
        sess = getattr(backend, "session", None)
        labels = sess.channel_labels if sess is not None else tuple(
            f"CH{i + 1}" for i in range(ads1299.N_CHANNELS)
        )
    target = int(args.duration * pipeline.fs) if args.duration else None
    writer = session_store.SessionWriter(
        args.out, fs=pipeline.fs, channel_labels=labels,
        vref=pipeline.vref, gains=pipeline.register_file.gains(),
        backend=args.backend.partition(":")[0],
    )
    written = 0
    last_line = time.monotonic()
    with writer:
        for block in sub:
            writer.write_block(block)
            written += block.n_samples
            now = time.monotonic()
            if now - last_line >= 1.0:
                stats = pipeline.stats()
                print(
                    f"t={written / pipeline.fs:7.1f}s produced={stats.produced_samples}"
                    f" dropped={stats.dropped_samples} jitter_ms="
                    f"{stats.jitter_ns / 1e6:.2f}",
                    file=sys.stderr,
                )
                last_line = now
            if target is not None and written >= target:
                break
    pipeline.stop()
    print(f"wrote {args.out}: {written} samples at {pipeline.fs} SPS")
    return EXIT_OK


def _serve(args, backend_factory, labels_hint: Optional[str] = None) -> int:
    host, port = _parse_endpoint(args.endpoint, DEFAULT_PORT)
    ws_host, ws_port = _parse_endpoint(args.ws_endpoint, DEFAULT_WS_PORT)
    station = Station(
        backend_factory,
        block_len=args.block_len,
        paced=True,
        record_path=getattr(args, "record", None),
    )
    server = StreamServer(station, host=host, port=port, ws_port=ws_port, token=_token(args))
    server.start()
    if args.autostart:
        station.start_pipeline()
    print(f"listening tcp://{host}:{server.port} ws://{ws_host}:{server.ws_port}"
          f"{'/stream'} (ctrl-c to stop)")
    sys.stdout.flush()
    try:
        while True:
            time.sleep(0.5)
            if args.once and station.pipeline is not None and station.pipeline.closed:
                break
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_serve(args) -> int:
    backend_spec, seed = args.backend, args.seed
    return _serve(args, lambda: _make_backend(backend_spec, seed))


def cmd_replay(args) -> int:
    sess = session_store.read_session(args.session)
    if not sess.complete:
        print("note: session is truncated; replaying recovered prefix", file=sys.stderr)
    return _serve(args, lambda: ReplayBackend(sess))


def _pick_channel(sess: session_store.Session, requested: Optional[str], preferred: tuple[str, ...]) -> str:
    labels = sess.channel_labels
    if requested:
        if requested not in labels:
            raise session_store.SessionError(
                f"channel {requested!r} not in session ({', '.join(labels)})"
            )
        return requested
    for candidate in preferred:
        if candidate in labels:
            return candidate
    return labels[0]


def _protocol_from_annotations(
    sess: session_store.Session,
) -> tuple[tuple[float, float, str], ...]:
    marks = [a for a in sess.annotations if a.text in ("eyes_closed", "eyes_open")]
    if not marks:
        return ()
    marks.sort(key=lambda a: a.time)
    out = []
    for i, mark in enumerate(marks):
        end = marks[i + 1].time if i + 1 < len(marks) else sess.duration
        if end > mark.time:
            out.append((mark.time, end, mark.text))
    return tuple(out)


def cmd_analyze(args) -> int:
    sess = session_store.read_session(args.session)
    if not sess.complete:
        print("note: session is truncated; analyzing recovered prefix", file=sys.stderr)
    fs = sess.fs

    if args.analysis == "alpha":
        label = _pick_channel(sess, args.channel, ("Fz",))
        proto = _protocol_from_annotations(sess)
        if not proto:
            if args.protocol == "fig6":
                proto = synth.fig6_protocol()
            else:
                return _fail("no eyes_closed/eyes_open annotations; pass --protocol fig6", EXIT_IO)
        report = dsp.score_alpha_protocol(sess.channel(label), fs, proto)
        doc = {"analysis": "alpha", "channel": label, **report.to_dict()}

        def render(doc: dict) -> None:
            print(f"alpha protocol on {doc['channel']}")
            print("segment      start      end   alpha_uv2  label")
            for i, seg in enumerate(doc["segments"], 1):
                print(
                    f"{i:7d} {seg['start']:10.2f} {seg['end']:8.2f} "
                    f"{seg['mean_alpha_power_uv2']:11.3f}  {seg['label']}"
                )
            print(f"closed/open ratio: {doc['ratio']:.2f}   "
                  f"sequence match: {doc['sequence_match']:.2f}")

        _emit(doc, args.format, render)
        return EXIT_OK

    if args.analysis == "artifacts":
        label = _pick_channel(sess, args.channel, ("Fz",))
        x = sess.channel(label)
        blinks = dsp.detect_blinks(x, fs)
        chews = dsp.detect_chews(x, fs)
        doc = {
            "analysis": "artifacts",
            "channel": label,
            "blinks": {"count": len(blinks), "times_s": list(blinks.times)},
            "chews": {"count": len(chews), "times_s": list(chews.times)},
        }

        def render(doc: dict) -> None:
            for kind in ("blinks", "chews"):
                times = ", ".join(f"{t:.2f}" for t in doc[kind]["times_s"])
                print(f"{kind}: {doc[kind]['count']}  [{times}]")

        _emit(doc, args.format, render)
        return EXIT_OK

    if args.analysis == "emg":
        label = _pick_channel(sess, args.channel, ("EMG1", "EMG2", "EMGL", "EMGR"))
        onsets = dsp.emg_envelope_onsets(sess.channel(label), fs)
        doc = {
            "analysis": "emg",
            "channel": label,
            "onsets": {"count": len(onsets), "times_s": list(onsets.times)},
        }
        _emit(doc, args.format, lambda d: print(
            f"emg onsets on {d['channel']}: {d['onsets']['count']}  "
            f"[{', '.join(f'{t:.2f}' for t in d['onsets']['times_s'])}]"
        ))
        return EXIT_OK

    # ecg
    label = _pick_channel(sess, args.channel, ("ECG", "EKG"))
    peaks, mean_hr = dsp.detect_r_peaks(sess.channel(label), fs)
    doc = {
        "analysis": "ecg",
        "channel": label,
        "r_peaks": {"count": len(peaks), "times_s": list(peaks.times)},
        "mean_hr_bpm": mean_hr,
    }

    def render(doc: dict) -> None:
        hr = doc["mean_hr_bpm"]
        print(f"r peaks on {doc['channel']}: {doc['r_peaks']['count']}")
        print(f"mean_hr: {'undefined' if hr is None else f'{hr:.2f} bpm'}")

    _emit(doc, args.format, render)
    return EXIT_OK


def _parse_reg(text: str) -> int:
    try:
        return ads1299.Reg[text.upper()].value
    except KeyError:
        return int(text, 0)


def cmd_regs(args) -> int:
    host, port = _parse_endpoint(args.endpoint, DEFAULT_PORT)
    with StationClient(host, port, token=_token(args)) as client:
        if args.action == "get":
            addrs = (
                sorted(ads1299.REGISTER_MAP)
                if args.register == "--all" or args.register is None
                else [_parse_reg(args.register)]
            )
            for addr in addrs:
                ack = client.cmd("RREG", addr=addr)
                name = ads1299.REGISTER_MAP[addr].name if addr in ads1299.REGISTER_MAP else "?"
                print(f"0x{addr:02X} {name:<11} = 0x{ack.result['value']:02X}")
        else:
            addr = _parse_reg(args.register)
            value = int(args.value, 0)
            ack = client.cmd("WREG", addr=addr, value=value)
            print(f"0x{addr:02X} <- 0x{value:02X} (epoch {ack.result['epoch']})")
    return EXIT_OK


def cmd_export(args) -> int:
    sess = session_store.read_session(args.session)
    session_store.export_csv(sess, args.out)
    print(f"wrote {args.out}: {sess.n_samples} rows")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peeg", description="software biosignal station: simulate, stream, analyze"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_serve(p):
        p.add_argument("--endpoint", help="tcp host:port (default 127.0.0.1:7715 or $PEEG_ENDPOINT)")
        p.add_argument("--ws-endpoint", help="websocket host:port (default 127.0.0.1:7716)")
        p.add_argument("--token", help="bearer token (default $PEEG_TOKEN)")
        p.add_argument("--block-len", type=int, default=25)
        p.add_argument("--no-autostart", dest="autostart", action="store_false")
        p.add_argument("--once", action="store_true", help="exit when the stream ends")

    p = sub.add_parser("simulate", help="render a scenario to a session file")
    p.add_argument("--scenario", default="fig6", help="fig6|fig7|emg|ecg or a scenario JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("record", help="record a backend to a session file")
    p.add_argument("--backend", required=True, help="sim:NAME|replay:FILE|hw:CONFIG")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=None, help="seconds to record")
    p.add_argument("--block-len", type=int, default=25)
    p.add_argument("--no-pace", dest="paced", action="store_false")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("serve", help="stream a backend over tcp+websocket")
    p.add_argument("--backend", default="sim:fig6")
    p.add_argument("--seed", type=int, default=None)
    add_common_serve(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="stream a recorded session over tcp+websocket")
    p.add_argument("--session", required=True)
    add_common_serve(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("analyze", help="run an analysis over a session file")
    p.add_argument("analysis", choices=("alpha", "artifacts", "emg", "ecg"))
    p.add_argument("session")
    p.add_argument("--channel", help="electrode label (defaults per analysis)")
    p.add_argument("--protocol", choices=("fig6",), help="fallback protocol when unannotated")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("regs", help="read or write converter registers over the protocol")
    p.add_argument("action", choices=("get", "set"))
    p.add_argument("register", nargs="?", help="name (CONFIG1) or address (0x01); omit for all")
    p.add_argument("value", nargs="?", help="byte to write (set only)")
    p.add_argument("--endpoint")
    p.add_argument("--token")
    p.set_defaults(func=cmd_regs)

    p = sub.add_parser("export", help="export a session")
    p.add_argument("what", choices=("csv",))
    p.add_argument("session")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "regs" and args.action == "set" and (
        args.register is None or args.value is None
    ):
        parser.error("regs set needs REGISTER and VALUE")
    try:
        return args.func(args)
    except (
        session_store.SessionError, synth.ScenarioError, dsp.DspError,
        FileNotFoundError, ValueError,
    ) as exc:
        return _fail(str(exc), EXIT_IO)
    except (RemoteError, protocol.ProtocolError, ConnectionError, TimeoutError) as exc:
        return _fail(str(exc), EXIT_REMOTE)
    except acquisition.AcquisitionError as exc:
        return _fail(str(exc), EXIT_IO)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
