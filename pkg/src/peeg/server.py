"""Network face of the station: fans live sample blocks and derived metrics
out to any number of clients and accepts control commands, over raw TCP and
over a binary WebSocket tunnel carrying the identical framing.

Every client is served by its own reader and pump threads with a bounded
per-client subscription, so one stalled consumer drops its own blocks (gap
visible as dropped_before) and never back-pressures the producer or other
clients. Commands are idempotent by id: a replayed id returns the cached
reply without re-applying.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import acquisition, ads1299, dsp, protocol
from .acquisition import DeviceBackend, Pipeline, SimulatorBackend
from .ads1299 import RegisterFile
from .session import SessionWriter
from .synth import NAMED_SCENARIOS, Scenario, load_scenario

log = logging.getLogger("peeg.server")

DEFAULT_PORT = 7715
DEFAULT_WS_PORT = 7716
WS_PATH = "/stream"
DEFAULT_CREDIT = 64


class Station:
    """Owns the pipeline lifecycle behind the server: start/stop, register
    access, scenario swaps, and optional live recording."""

    def __init__(
        self,
        backend_factory: Callable[[], DeviceBackend],
        rf: Optional[RegisterFile] = None,
        block_len: int = 25,
        paced: bool = True,
        record_path: Optional[str] = None,
    ):
        self._factory = backend_factory
        self._rf = rf
        self.block_len = block_len
        self.paced = paced
        self.record_path = record_path
        self.pipeline: Optional[Pipeline] = None
        self.generation = 0
        self._lock = threading.RLock()
        self._recorder: Optional[threading.Thread] = None
        self._writer: Optional[SessionWriter] = None
        self._labels = self._probe_labels()

    def _probe_labels(self) -> tuple[str, ...]:
        backend = self._factory()
        if isinstance(backend, SimulatorBackend):
            return backend.scenario.labels
        session = getattr(backend, "session", None)
        if session is not None:
            return session.channel_labels
        return tuple(f"CH{i + 1}" for i in range(ads1299.N_CHANNELS))

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def register_file(self) -> RegisterFile:
        with self._lock:
            if self.pipeline is not None:
                return self.pipeline.register_file
            if self._rf is not None:
                return self._rf
            return Pipeline._default_rf(self._factory())

    def hello(self, auth_required: bool) -> protocol.Hello:
        rf = self.register_file()
        return protocol.Hello(
            fs=rf.sample_rate(),
            channel_labels=self._labels,
            gains=rf.gains(),
            vref=ads1299.DEFAULT_VREF,
            auth_required=auth_required,
        )

    # -- lifecycle -------------------------------------------------------------

    def start_pipeline(self) -> bool:
        """Start a fresh pipeline if none is running; True if one was started."""
        with self._lock:
            if self.pipeline is not None and self.pipeline.running:
                return False
            backend = self._factory()
            pipeline = Pipeline(
                backend, self._rf, block_len=self.block_len, paced=self.paced
            )
            pipeline.start()
            self.pipeline = pipeline
            self.generation += 1
            if self.record_path:
                self._start_recorder(pipeline)
            return True

    def _start_recorder(self, pipeline: Pipeline) -> None:
        sub = pipeline.subscribe(capacity=256)
        writer = SessionWriter(
            self.record_path,
            fs=pipeline.fs,
            channel_labels=self._labels,
            vref=pipeline.vref,
            gains=pipeline.register_file.gains(),
            backend=type(pipeline.backend).__name__.replace("Backend", "").lower(),
        )
        self._writer = writer

        def _record() -> None:
            try:
                for block in sub:
                    writer.write_block(block)
            finally:
                writer.close()
                with self._lock:
                    if self._writer is writer:
                        self._writer = None

        self._recorder = threading.Thread(target=_record, daemon=True, name="peeg-recorder")
        self._recorder.start()

    def stop_pipeline(self) -> bool:
        with self._lock:
            pipeline = self.pipeline
        if pipeline is None or not pipeline.running:
            return False
        pipeline.stop()
        if self._recorder is not None:
            self._recorder.join(timeout=5)
        return True

    def close(self) -> None:
        self.stop_pipeline()

    @property
    def running(self) -> bool:
        with self._lock:
            return self.pipeline is not None and self.pipeline.running

    # -- control ---------------------------------------------------------------

    def read_register(self, addr: int) -> int:
        return self.register_file().read(addr)

    def apply_register_write(self, addr: int, value: int) -> acquisition.Ack:
        with self._lock:
            pipeline = self.pipeline
            if pipeline is not None and not pipeline.closed:
                return pipeline.apply_register_write(addr, value)
            # idle: stage the write for the next start
            backend = self._factory()
            if not backend.capabilities.register_writes:
                raise acquisition.Unsupported("backend does not accept register writes")
            self._rf = self.register_file().write(addr, value)
            return acquisition.Ack(addr, value, epoch=0)

    def set_scenario(self, ref: str) -> str:
        if self.running:
            raise acquisition.Unsupported("stop the stream before changing scenario")
        scenario = resolve_scenario(ref)
        with self._lock:
            self._factory = lambda: SimulatorBackend(scenario)
            self._rf = None
            self._labels = scenario.labels
        return ref

    def annotate(self, time_s: Optional[float], text: str) -> bool:
        with self._lock:
            writer, pipeline = self._writer, self.pipeline
        if writer is None:
            return False
        if time_s is None:
            produced = pipeline.stats().produced_samples if pipeline else 0
            time_s = produced / pipeline.fs if pipeline else 0.0
        writer.annotate(time_s, text)
        return True


def resolve_scenario(ref: str, seed: Optional[int] = None) -> Scenario:
    """Named shortcut (fig6, fig7, ...) or path to a scenario JSON file."""
    if ref in NAMED_SCENARIOS:
        return NAMED_SCENARIOS[ref]() if seed is None else NAMED_SCENARIOS[ref](seed=seed)
    scenario = load_scenario(ref)
    if seed is not None:
        scenario = scenario.__class__(**{**scenario.__dict__, "seed": seed})
    return scenario


# -- transports ---------------------------------------------------------------


class _TcpTransport:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._lock = threading.Lock()

    def send(self, frame: bytes) -> None:
        with self._lock:
            self.sock.sendall(frame)

    def recv(self) -> bytes:
        return self.sock.recv(65536)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _WsTransport:
    def __init__(self, conn):
        self.conn = conn
        self._lock = threading.Lock()

    def send(self, frame: bytes) -> None:
        with self._lock:
            self.conn.send(frame)

    def recv(self) -> bytes:
        msg = self.conn.recv()
        return msg if isinstance(msg, bytes) else msg.encode()

    def close(self) -> None:
        self.conn.close()


@dataclass
class ClientSession:
    client_id: int
    data: bool = True
    metrics: bool = True
    decimation: int = 1
    credit: int = DEFAULT_CREDIT
    authed: bool = False
    replies: dict[int, protocol.Message] = field(default_factory=dict)


class _ClientHandler:
    def __init__(self, server: "StreamServer", transport, client_id: int):
        self.server = server
        self.transport = transport
        self.session = ClientSession(client_id)
        self.alive = True

    def send(self, msg: protocol.Message) -> None:
        try:
            self.transport.send(protocol.encode_message(msg))
        except Exception:
            self.alive = False

    def run(self) -> None:
        station = self.server.station
        self.send(station.hello(self.server.token is not None))
        pump = threading.Thread(target=self._pump_data, daemon=True, name="peeg-pump")
        pump.start()
        decoder = protocol.FrameDecoder()
        try:
            while self.alive:
                try:
                    chunk = self.transport.recv()
                except Exception:
                    break
                if not chunk:
                    break
                try:
                    items = decoder.feed(chunk)
                except protocol.ProtocolError:
                    break  # poisoned on a previous fatal error
                for item in items:
                    if isinstance(item, protocol.ProtocolError):
                        fatal = isinstance(
                            item,
                            (protocol.BadMagic, protocol.BadVersion, protocol.LengthOverflow),
                        )
                        self.send(protocol.Err(protocol.ERR_BAD_MESSAGE, str(item)))
                        if fatal:
                            self.alive = False
                            break
                    elif isinstance(item, protocol.Cmd):
                        self.send(self.handle_cmd(item))
                    # non-command messages from clients are ignored
        finally:
            self.alive = False
            self.transport.close()
            self.server._forget(self)

    # -- command dispatch ------------------------------------------------------

    def handle_cmd(self, cmd: protocol.Cmd) -> protocol.Message:
        cached = self.session.replies.get(cmd.cmd_id)
        if cached is not None:
            return cached
        reply = self._apply_cmd(cmd)
        self.session.replies[cmd.cmd_id] = reply
        return reply

    def _apply_cmd(self, cmd: protocol.Cmd) -> protocol.Message:
        station = self.server.station
        token = self.server.token
        if token is not None and cmd.args.get("token") != token:
            return protocol.Err(protocol.ERR_UNAUTHORIZED, "bad or missing token", cmd.cmd_id)
        try:
            if cmd.op == "START":
                started = station.start_pipeline()
                return protocol.Ack(cmd.cmd_id, {"running": True, "started": started})
            if cmd.op == "STOP":
                if not station.stop_pipeline():
                    return protocol.Err(protocol.ERR_NOT_RUNNING, "no stream running", cmd.cmd_id)
                return protocol.Ack(cmd.cmd_id, {"running": False})
            if cmd.op == "RREG":
                addr = int(cmd.args["addr"])
                return protocol.Ack(cmd.cmd_id, {"addr": addr, "value": station.read_register(addr)})
            if cmd.op == "WREG":
                addr, value = int(cmd.args["addr"]), int(cmd.args["value"])
                ack = station.apply_register_write(addr, value)
                return protocol.Ack(
                    cmd.cmd_id, {"addr": addr, "value": value, "epoch": ack.epoch}
                )
            if cmd.op == "ANNOTATE":
                recorded = station.annotate(cmd.args.get("time"), str(cmd.args.get("text", "")))
                return protocol.Ack(cmd.cmd_id, {"recorded": recorded})
            if cmd.op == "SET_SCENARIO":
                name = station.set_scenario(str(cmd.args["scenario"]))
                return protocol.Ack(cmd.cmd_id, {"scenario": name})
            return protocol.Err(protocol.ERR_UNSUPPORTED, f"op {cmd.op}", cmd.cmd_id)
        except (ads1299.UnknownRegister, ads1299.ReadOnlyRegister, ads1299.InvalidFieldEncoding) as exc:
            return protocol.Err(protocol.ERR_INVALID_REG, str(exc), cmd.cmd_id)
        except acquisition.Unsupported as exc:
            return protocol.Err(protocol.ERR_UNSUPPORTED, str(exc), cmd.cmd_id)
        except (KeyError, TypeError, ValueError) as exc:
            return protocol.Err(protocol.ERR_BAD_MESSAGE, f"bad arguments: {exc}", cmd.cmd_id)
        except Exception as exc:  # defensive: a command must never kill the server
            log.exception("command failed")
            return protocol.Err(protocol.ERR_UNSUPPORTED, f"internal: {exc}", cmd.cmd_id)

    # -- data pump --------------------------------------------------------------

    def _pump_data(self) -> None:
        seen_generation = -1
        while self.alive:
            with self.server.station._lock:
                pipeline = self.server.station.pipeline
                generation = self.server.station.generation
            if pipeline is None or generation == seen_generation:
                time.sleep(0.05)
                continue
            seen_generation = generation
            try:
                sub = pipeline.subscribe(capacity=self.session.credit)
            except acquisition.PipelineClosed:
                continue
            try:
                for block in sub:
                    if not self.alive:
                        return
                    if not self.session.data or block.seq % self.session.decimation:
                        continue
                    payload = (
                        block.codes
                        if self.server.send_raw_codes
                        else block.data.astype(np.float32)
                    )
                    self.send(
                        protocol.Data(
                            seq=block.seq,
                            epoch=block.epoch,
                            t0_ns=block.t0_ns,
                            dropped_before=block.dropped_before,
                            payload=payload,
                            raw=self.server.send_raw_codes,
                        )
                    )
            finally:
                pipeline.unsubscribe(sub)


class _MetricsWorker:
    """Publishes per-channel alpha power and artifact counts once per second,
    computed over a sliding 2 s window."""

    WINDOW_S = 2.0

    def __init__(self, server: "StreamServer"):
        self.server = server
        self._thread = threading.Thread(target=self._run, daemon=True, name="peeg-metrics")
        self._stop = threading.Event()

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()

    def _run(self) -> None:
        seen_generation = -1
        while not self._stop.is_set():
            station = self.server.station
            with station._lock:
                pipeline = station.pipeline
                generation = station.generation
            if pipeline is None or generation == seen_generation:
                self._stop.wait(0.05)
                continue
            seen_generation = generation
            try:
                sub = pipeline.subscribe(capacity=32)
            except acquisition.PipelineClosed:
                continue
            window: list = []
            held = 0
            last_emit = time.monotonic()
            for block in sub:
                if self._stop.is_set():
                    pipeline.unsubscribe(sub)
                    return
                window.append(block.data)
                held += block.n_samples
                max_hold = int(self.WINDOW_S * pipeline.fs)
                while held - window[0].shape[1] >= max_hold and len(window) > 1:
                    held -= window[0].shape[1]
                    window.pop(0)
                now = time.monotonic()
                if now - last_emit >= 1.0:
                    last_emit = now
                    self.server.broadcast_metrics(
                        self._compute(np.concatenate(window, axis=1), pipeline)
                    )

    def _compute(self, data: np.ndarray, pipeline: Pipeline) -> protocol.Metrics:
        stats = pipeline.stats()
        alpha: list[float] = []
        n = data.shape[1]
        window_len = min(256, 1 << max(int(np.log2(max(n, 2))), 1))
        for ch in range(data.shape[0]):
            try:
                spectrum = dsp.welch_psd(data[ch], pipeline.fs, window_len=window_len)
                alpha.append(round(dsp.bandpower(spectrum, 8.0, 12.0), 6))
            except dsp.DspError:
                alpha.append(0.0)
        counts = {"blinks": 0, "chews": 0}
        if n >= pipeline.fs:
            try:
                counts["blinks"] = len(dsp.detect_blinks(data[0], pipeline.fs))
                counts["chews"] = len(dsp.detect_chews(data[0], pipeline.fs))
            except dsp.DspError:
                pass
        return protocol.Metrics(
            {
                "stream_time": stats.produced_samples / pipeline.fs,
                "alpha_power_uv2": alpha,
                "event_counts": counts,
                "produced": stats.produced_samples,
                "dropped": stats.dropped_samples,
                "epoch": stats.epoch,
            }
        )


class StreamServer:
    """TCP + WebSocket server around one Station."""

    def __init__(
        self,
        station: Station,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        ws_port: Optional[int] = DEFAULT_WS_PORT,
        token: Optional[str] = None,
        send_raw_codes: bool = False,
        credit: int = DEFAULT_CREDIT,
        sndbuf: Optional[int] = None,
    ):
        self.station = station
        self.host = host
        self.token = token if token is not None else os.environ.get("PEEG_TOKEN") or None
        self.send_raw_codes = send_raw_codes
        self.credit = credit
        self.sndbuf = sndbuf
        self._clients: list[_ClientHandler] = []
        self._clients_lock = threading.Lock()
        self._next_client = 0
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self.port = self._listener.getsockname()[1]
        self._ws_server = None
        self.ws_port = None
        if ws_port is not None:
            from websockets.sync.server import serve as ws_serve

            self._ws_server = ws_serve(self._handle_ws, host, ws_port)
            self.ws_port = self._ws_server.socket.getsockname()[1]
        self._metrics = _MetricsWorker(self)
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name="peeg-accept"
        )
        self._ws_thread: Optional[threading.Thread] = None
        self._stopping = False

    # -- lifecycle ----------------------------------------------------------------

    def start(self) -> "StreamServer":
        self._accept_thread.start()
        if self._ws_server is not None:
            self._ws_thread = threading.Thread(
                target=self._ws_server.serve_forever, daemon=True, name="peeg-ws"
            )
            self._ws_thread.start()
        self._metrics.start()
        log.info("serving on tcp://%s:%s ws://%s:%s%s", self.host, self.port,
                 self.host, self.ws_port, WS_PATH)
        return self

    def stop(self) -> None:
        self._stopping = True
        self._metrics.stop()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._ws_server is not None:
            self._ws_server.shutdown()
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.alive = False
            client.transport.close()
        self.station.close()

    # -- accept loops -----------------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            if self.sndbuf is not None:
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, self.sndbuf)
            self._spawn(_TcpTransport(sock))

    def _handle_ws(self, conn) -> None:
        path = getattr(getattr(conn, "request", None), "path", WS_PATH)
        if path.split("?")[0] != WS_PATH:
            conn.close(code=1008, reason=f"unknown path {path}")
            return
        handler = self._register(_WsTransport(conn))
        handler.run()  # websockets gives us a thread per connection already

    def _spawn(self, transport) -> None:
        handler = self._register(transport)
        threading.Thread(target=handler.run, daemon=True, name="peeg-client").start()

    def _register(self, transport) -> _ClientHandler:
        with self._clients_lock:
            self._next_client += 1
            handler = _ClientHandler(self, transport, self._next_client)
            handler.session.credit = self.credit
            self._clients.append(handler)
        return handler

    def _forget(self, handler: _ClientHandler) -> None:
        with self._clients_lock:
            if handler in self._clients:
                self._clients.remove(handler)

    def broadcast_metrics(self, msg: protocol.Metrics) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            if client.session.metrics:
                client.send(msg)
