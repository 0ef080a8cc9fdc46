"""Live sampling pipeline: one producer thread pulls code blocks from a device
backend, converts them to microvolts under the current register bank, and fans
them out to any number of independently-buffered subscribers.

Register writes enter through a command queue drained between blocks, so a
block never mixes two gain settings; each applied write bumps the config
epoch recorded on subsequent blocks. Slow subscribers lose their oldest
blocks (never the producer's cadence) and see the gap as dropped_before.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import ads1299
from .ads1299 import N_CHANNELS, RegisterFile
from .synth import GroundTruth, Scenario, render


class AcquisitionError(Exception):
    pass


class BackendUnavailable(AcquisitionError):
    pass


class AlreadyRunning(AcquisitionError):
    pass


class PipelineClosed(AcquisitionError):
    pass


class Unsupported(AcquisitionError):
    """Backend cannot honor the requested action (e.g. writes during replay)."""


class RateMismatch(AcquisitionError):
    pass


@dataclass(frozen=True)
class BackendCapabilities:
    register_writes: bool
    rate_change: bool


@dataclass(frozen=True)
class SampleBlock:
    """One converted block: (8, n) microvolts plus the codes they came from."""

    seq: int
    t0_ns: int  # nominal: samples_before / fs, in ns
    host_time: float  # wall-clock seconds at capture
    fs: int
    data: np.ndarray  # float64 uV, shape (8, n)
    codes: np.ndarray  # int32, shape (8, n)
    gains: tuple[int, ...]
    vref: float
    epoch: int
    dropped_before: int = 0  # samples lost to this subscriber since last delivery

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[1])


@dataclass
class SubscriberStats:
    delivered_samples: int = 0
    dropped_samples: int = 0
    backlog_blocks: int = 0


@dataclass
class PipelineStats:
    produced_samples: int = 0
    produced_blocks: int = 0
    dropped_samples: int = 0  # summed over subscribers
    subscriber_lag: list[int] = field(default_factory=list)
    subscribers: list[SubscriberStats] = field(default_factory=list)
    jitter_ns: int = 0
    epoch: int = 0
    running: bool = False


class DeviceBackend:
    """Source of raw channel codes. Exactly one backend drives a pipeline."""

    capabilities = BackendCapabilities(register_writes=False, rate_change=False)
    preferred_rate: Optional[int] = None

    def open(self, rf: RegisterFile) -> None:
        raise NotImplementedError

    def read_codes(self, n: int) -> Optional[np.ndarray]:
        """Next (8, m) int32 code block, m <= n; None at end of stream."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class SimulatorBackend(DeviceBackend):
    """Streams a rendered scenario as converter codes.

    The microvolt render is quantized to codes once, using the register bank
    present at open(); later gain writes change only the conversion back to
    microvolts, exactly like a real front-end fed by a fixed test signal.
    """

    capabilities = BackendCapabilities(register_writes=True, rate_change=False)

    def __init__(self, scenario: Scenario, vref: float = ads1299.DEFAULT_VREF):
        self.scenario = scenario
        self.vref = vref
        self.preferred_rate = scenario.fs
        self.ground_truth: Optional[GroundTruth] = None
        self._codes: Optional[np.ndarray] = None
        self._cursor = 0

    def open(self, rf: RegisterFile) -> None:
        data, truth = render(self.scenario)
        self.ground_truth = truth
        self._codes = ads1299.microvolts_to_codes(data, rf.gains(), self.vref)
        self._cursor = 0

    def read_codes(self, n: int) -> Optional[np.ndarray]:
        assert self._codes is not None, "backend not opened"
        if self._cursor >= self._codes.shape[1]:
            return None
        chunk = self._codes[:, self._cursor : self._cursor + n]
        self._cursor += chunk.shape[1]
        return chunk


class ReplayBackend(DeviceBackend):
    """Re-streams the raw codes of a stored session (no register access)."""

    capabilities = BackendCapabilities(register_writes=False, rate_change=False)

    def __init__(self, session) -> None:  # peeg.session.Session
        self.session = session
        self.preferred_rate = session.fs
        self._codes = session.codes()
        self._cursor = 0

    def open(self, rf: RegisterFile) -> None:
        self._cursor = 0

    def read_codes(self, n: int) -> Optional[np.ndarray]:
        if self._cursor >= self._codes.shape[1]:
            return None
        chunk = self._codes[:, self._cursor : self._cursor + n]
        self._cursor += chunk.shape[1]
        return chunk


class HardwareBackend(DeviceBackend):
    """SPI front-end behind a JSON config file: bus/device, DRDY and reset pins.

    Exercised only on the bench; CI covers the shared backend contract through
    the simulator. Config keys: spi_bus, spi_device, drdy_pin, reset_pin,
    max_speed_hz.
    """

    capabilities = BackendCapabilities(register_writes=True, rate_change=True)

    def __init__(self, config_path: str | Path):
        self.config = json.loads(Path(config_path).read_text())
        self._spi = None
        self._drdy = None

    def open(self, rf: RegisterFile) -> None:
        try:
            import gpiod  # type: ignore
            import spidev  # type: ignore
        except ImportError as exc:
            raise BackendUnavailable(f"hardware support missing: {exc}") from exc
        spi = spidev.SpiDev()
        spi.open(self.config.get("spi_bus", 0), self.config.get("spi_device", 0))
        spi.max_speed_hz = int(self.config.get("max_speed_hz", 4_000_000))
        spi.mode = 0b01
        self._spi = spi
        chip = gpiod.Chip(self.config.get("gpio_chip", "gpiochip0"))
        self._drdy = chip.get_line(int(self.config["drdy_pin"]))
        self._drdy.request(consumer="peeg", type=gpiod.LINE_REQ_EV_FALLING_EDGE)
        spi.xfer2(list(ads1299.command_opcode(ads1299.Command.SDATAC)))
        for addr in range(1, ads1299.LAST_REGISTER + 1):
            if not ads1299.REGISTER_MAP[addr].read_only:
                spi.xfer2([ads1299.Command.WREG | addr, 0x00, rf.read(addr)])
        spi.xfer2(list(ads1299.command_opcode(ads1299.Command.START)))
        spi.xfer2(list(ads1299.command_opcode(ads1299.Command.RDATAC)))

    def read_codes(self, n: int) -> Optional[np.ndarray]:
        assert self._spi is not None and self._drdy is not None
        frames = np.empty((N_CHANNELS, n), dtype=np.int32)
        for i in range(n):
            if not self._drdy.event_wait(sec=1):
                raise BackendUnavailable("DRDY timeout")
            self._drdy.event_read()
            raw = bytes(self._spi.xfer2([0x00] * ads1299.FRAME_LEN))
            frames[:, i] = ads1299.decode_frame(raw).codes
        return frames

    def write_register(self, addr: int, value: int) -> None:
        assert self._spi is not None
        self._spi.xfer2(list(ads1299.command_opcode(ads1299.Command.SDATAC)))
        self._spi.xfer2([ads1299.Command.WREG | addr, 0x00, value])
        self._spi.xfer2(list(ads1299.command_opcode(ads1299.Command.RDATAC)))

    def close(self) -> None:
        if self._spi is not None:
            self._spi.xfer2(list(ads1299.command_opcode(ads1299.Command.SDATAC)))
            self._spi.xfer2(list(ads1299.command_opcode(ads1299.Command.STOP)))
            self._spi.close()


class Subscription:
    """Bounded, single-consumer block queue with oldest-first overflow."""

    def __init__(self, pipeline: "Pipeline", capacity: int):
        if capacity < 1:
            raise AcquisitionError("subscription capacity must be >= 1")
        self.capacity = capacity
        self._pipeline = pipeline
        self._cond = threading.Condition()
        self._queue: list[SampleBlock] = []
        self._pending_drop = 0
        self.stats = SubscriberStats()
        self._closed = False

    def _offer(self, block: SampleBlock) -> None:
        with self._cond:
            if len(self._queue) >= self.capacity:
                lost = self._queue.pop(0)
                self._pending_drop += lost.n_samples + lost.dropped_before
                self.stats.dropped_samples += lost.n_samples
            self._queue.append(block)
            self._cond.notify()

    def _close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def get(self, timeout: Optional[float] = None) -> Optional[SampleBlock]:
        """Next block, or None once the stream has ended and the queue drained."""
        with self._cond:
            if not self._cond.wait_for(
                lambda: self._queue or self._closed, timeout=timeout
            ):
                raise TimeoutError("no block within timeout")
            if not self._queue:
                return None
            block = self._queue.pop(0)
            gap = self._pending_drop
            self._pending_drop = 0
            self.stats.delivered_samples += block.n_samples
            if gap:
                block = replace(block, dropped_before=block.dropped_before + gap)
            return block

    def __iter__(self) -> Iterator[SampleBlock]:
        while True:
            block = self.get()
            if block is None:
                return
            yield block

    @property
    def backlog(self) -> int:
        with self._cond:
            return len(self._queue)


@dataclass
class _Command:
    addr: int
    value: int
    done: threading.Event = field(default_factory=threading.Event)
    error: Optional[Exception] = None
    epoch: int = -1


@dataclass(frozen=True)
class Ack:
    addr: int
    value: int
    epoch: int


class Pipeline:
    """Single-producer acquisition loop over one backend."""

    def __init__(
        self,
        backend: DeviceBackend,
        rf: Optional[RegisterFile] = None,
        block_len: int = 25,
        paced: bool = True,
        vref: float = ads1299.DEFAULT_VREF,
    ):
        rf = rf if rf is not None else self._default_rf(backend)
        fs = rf.sample_rate()
        if backend.preferred_rate is not None and backend.preferred_rate != fs:
            raise RateMismatch(
                f"register bank at {fs} SPS but backend source is "
                f"{backend.preferred_rate} SPS"
            )
        if not 1 <= block_len <= fs:
            raise AcquisitionError(f"block_len {block_len} outside [1, fs={fs}]")
        self.backend = backend
        self.block_len = block_len
        self.paced = paced
        self.vref = vref
        self._rf = rf
        self._epoch = 0
        self._commands: list[_Command] = []
        self._subscribers: list[Subscription] = []
        self._lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self._started = False
        self._closed = False
        self._produced_samples = 0
        self._produced_blocks = 0
        self._jitter_ns = 0

    @staticmethod
    def _default_rf(backend: DeviceBackend) -> RegisterFile:
        rf = RegisterFile.default_config()
        if backend.preferred_rate is not None:
            rf = rf.with_sample_rate(backend.preferred_rate)
        return rf

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> "Pipeline":
        with self._lock:
            if self._started:
                raise AlreadyRunning("pipeline already started")
            self._started = True
        self.backend.open(self._rf)
        self._thread = threading.Thread(target=self._run, name="peeg-producer", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()

    def join(self, timeout: Optional[float] = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    @property
    def fs(self) -> int:
        return self._rf.sample_rate()

    @property
    def register_file(self) -> RegisterFile:
        return self._rf

    # -- subscriptions ----------------------------------------------------------

    def subscribe(self, capacity: int = 64) -> Subscription:
        with self._lock:
            if self._closed:
                raise PipelineClosed("pipeline has ended")
            sub = Subscription(self, capacity)
            self._subscribers.append(sub)
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)
        sub._close()

    # -- register control ---------------------------------------------------------

    def read_register(self, addr: int) -> int:
        return self._rf.read(addr)

    def apply_register_write(self, addr: int, value: int, timeout: float = 5.0) -> Ack:
        """Serialize a register write with frame reads; returns once applied."""
        if not self.backend.capabilities.register_writes:
            raise Unsupported("backend does not accept register writes")
        if self.running:
            cmd = _Command(addr, value)
            with self._lock:
                self._commands.append(cmd)
            if not cmd.done.wait(timeout):
                raise AcquisitionError("register write not applied in time")
            if cmd.error is not None:
                raise cmd.error
            return Ack(addr, value, cmd.epoch)
        # idle pipeline: apply synchronously
        cmd = _Command(addr, value)
        self._apply_command(cmd)
        if cmd.error is not None:
            raise cmd.error
        return Ack(addr, value, cmd.epoch)

    def _apply_command(self, cmd: _Command) -> None:
        try:
            new_rf = self._rf.write(cmd.addr, cmd.value)
            if (
                new_rf.sample_rate() != self._rf.sample_rate()
                and not self.backend.capabilities.rate_change
            ):
                raise Unsupported("backend cannot change data rate mid-stream")
            if isinstance(self.backend, HardwareBackend):
                self.backend.write_register(cmd.addr, cmd.value)
            self._rf = new_rf
            self._epoch += 1
            cmd.epoch = self._epoch
        except Exception as exc:  # surfaced to the waiting caller
            cmd.error = exc
        finally:
            cmd.done.set()

    # -- stats ---------------------------------------------------------------------

    def stats(self) -> PipelineStats:
        with self._lock:
            subs = [
                SubscriberStats(
                    s.stats.delivered_samples, s.stats.dropped_samples, s.backlog
                )
                for s in self._subscribers
            ]
            return PipelineStats(
                produced_samples=self._produced_samples,
                produced_blocks=self._produced_blocks,
                dropped_samples=sum(s.dropped_samples for s in subs),
                subscriber_lag=[s.backlog_blocks for s in subs],
                subscribers=subs,
                jitter_ns=self._jitter_ns,
                epoch=self._epoch,
                running=self.running,
            )

    # -- producer loop -----------------------------------------------------------------

    def _run(self) -> None:
        interval = self.block_len / self.fs
        seq = 0
        prev_mono = None
        deadline = time.monotonic() + interval
        try:
            while not self._stop.is_set():
                with self._lock:
                    pending, self._commands = self._commands, []
                for cmd in pending:
                    self._apply_command(cmd)

                codes = self.backend.read_codes(self.block_len)
                if codes is None or codes.shape[1] == 0:
                    break
                if self.paced:
                    now = time.monotonic()
                    if now < deadline:
                        time.sleep(deadline - now)
                    deadline += interval
                gains = self._rf.gains()
                block = SampleBlock(
                    seq=seq,
                    t0_ns=round(self._produced_samples / self.fs * 1e9),
                    host_time=time.time(),
                    fs=self.fs,
                    data=ads1299.codes_to_microvolts(codes, gains, self.vref),
                    codes=codes,
                    gains=gains,
                    vref=self.vref,
                    epoch=self._epoch,
                )
                now_mono = time.monotonic()
                if self.paced and prev_mono is not None:
                    dev = abs((now_mono - prev_mono) - interval)
                    self._jitter_ns = max(self._jitter_ns, round(dev * 1e9))
                prev_mono = now_mono

                with self._lock:
                    self._produced_samples += block.n_samples
                    self._produced_blocks += 1
                    targets = list(self._subscribers)
                for sub in targets:
                    sub._offer(block)
                seq += 1
        finally:
            with self._lock:
                self._closed = True
                targets = list(self._subscribers)
                failed = [c for c in self._commands if not c.done.is_set()]
            for cmd in failed:
                cmd.error = PipelineClosed("pipeline ended before write applied")
                cmd.done.set()
            for sub in targets:
                sub._close()
            self.backend.close()


def start(
    backend: DeviceBackend,
    rf: Optional[RegisterFile] = None,
    block_len: int = 25,
    paced: bool = True,
) -> Pipeline:
    """Build and start a pipeline in one call."""
    return Pipeline(backend, rf, block_len=block_len, paced=paced).start()
