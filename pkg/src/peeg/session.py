"""Durable session recording: a streaming binary format plus CSV export.

File layout (all integers little-endian, spec in docs/session-format.md):

    magic "PEEGSESS" | version u16 | header_len u32 | header JSON
    records:
      0x01 EPOCH  epoch u32, vref f64, gains u8[8]
      0x02 BLOCK  epoch u32, seq u64, t0_ns u64, n u32, codes i32[8*n]
      0x03 ANNOT  time f64, len u32, text UTF-8
      0xFF FOOTER total_samples u64, crc32 u32 (over all preceding bytes)

Codes are stored raw (exact integers); microvolts are reconstructed with the
per-epoch conversion params, so a write/read round trip reproduces every
sample bit-for-bit. A truncated file (crash mid-write) is recovered up to its
last complete record and flagged incomplete.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import ads1299
from .ads1299 import N_CHANNELS
from .acquisition import SampleBlock

MAGIC = b"PEEGSESS"
FORMAT_VERSION = 1
TAG_EPOCH = 0x01
TAG_BLOCK = 0x02
TAG_ANNOT = 0x03
TAG_FOOTER = 0xFF


class SessionError(Exception):
    pass


class IoFailure(SessionError):
    pass


class BadMagic(SessionError):
    pass


class UnsupportedVersion(SessionError):
    pass


class ChecksumMismatch(SessionError):
    pass


class Truncated(SessionError):
    """Raised in strict mode; carries the recoverable prefix as .session."""

    def __init__(self, message: str, session: "Session"):
        super().__init__(message)
        self.session = session


class InconsistentRate(SessionError):
    pass


@dataclass(frozen=True)
class Annotation:
    time: float
    text: str


@dataclass(frozen=True)
class EpochParams:
    vref: float
    gains: tuple[int, ...]


@dataclass(frozen=True)
class BlockRecord:
    epoch: int
    seq: int
    t0_ns: int
    codes: np.ndarray  # (8, n) int32


@dataclass
class Session:
    header: dict  # raw header, unknown fields preserved
    annotations: list[Annotation] = field(default_factory=list)
    blocks: list[BlockRecord] = field(default_factory=list)
    epochs: dict[int, EpochParams] = field(default_factory=dict)
    complete: bool = True

    @property
    def fs(self) -> int:
        return int(self.header["fs"])

    @property
    def channel_labels(self) -> tuple[str, ...]:
        return tuple(self.header["channel_labels"])

    @property
    def n_samples(self) -> int:
        return sum(b.codes.shape[1] for b in self.blocks)

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def codes(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros((N_CHANNELS, 0), dtype=np.int32)
        return np.concatenate([b.codes for b in self.blocks], axis=1)

    def data(self) -> np.ndarray:
        """Microvolts, converted blockwise with each block's epoch params."""
        if not self.blocks:
            return np.zeros((N_CHANNELS, 0))
        parts = []
        for b in self.blocks:
            params = self.epochs[b.epoch]
            parts.append(
                ads1299.codes_to_microvolts(b.codes, params.gains, params.vref)
            )
        return np.concatenate(parts, axis=1)

    def channel(self, label: str) -> np.ndarray:
        """Microvolt series of one channel by electrode label."""
        try:
            idx = self.channel_labels.index(label)
        except ValueError:
            raise SessionError(
                f"no channel {label!r}; have {', '.join(self.channel_labels)}"
            ) from None
        return self.data()[idx]


class _CrcWriter:
    """File wrapper keeping a running CRC32 of everything written."""

    def __init__(self, fh: io.BufferedWriter):
        self.fh = fh
        self.crc = 0

    def write(self, data: bytes) -> None:
        self.fh.write(data)
        self.crc = zlib.crc32(data, self.crc)


class SessionWriter:
    """Streaming writer; safe to kill mid-stream (prefix stays parseable)."""

    def __init__(
        self,
        path: str | Path,
        fs: int,
        channel_labels: Iterable[str],
        vref: float = ads1299.DEFAULT_VREF,
        gains: Iterable[int] = (24,) * N_CHANNELS,
        backend: str = "simulator",
        extra_header: Optional[dict] = None,
    ):
        labels = tuple(channel_labels)
        if len(labels) != N_CHANNELS:
            raise SessionError(f"need {N_CHANNELS} channel labels")
        self.path = Path(path)
        self.header = {
            "format_version": FORMAT_VERSION,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "fs": int(fs),
            "channel_labels": list(labels),
            "vref": float(vref),
            "gains": [int(g) for g in gains],
            "backend": backend,
        }
        if extra_header:
            self.header.update(extra_header)
        self._samples = 0
        self._current_epoch: Optional[int] = None
        try:
            self._out = _CrcWriter(open(self.path, "wb"))
            header_bytes = json.dumps(self.header).encode()
            self._out.write(MAGIC)
            self._out.write(struct.pack("<HI", FORMAT_VERSION, len(header_bytes)))
            self._out.write(header_bytes)
        except OSError as exc:
            raise IoFailure(f"cannot write {self.path}: {exc}") from exc
        self._closed = False

    def __enter__(self) -> "SessionWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _write_epoch(self, epoch: int, vref: float, gains: Iterable[int]) -> None:
        self._out.write(struct.pack("<BId", TAG_EPOCH, epoch, vref))
        self._out.write(bytes(int(g) for g in gains))

    def write_block(self, block: SampleBlock) -> None:
        if block.fs != self.header["fs"]:
            raise InconsistentRate(
                f"block at {block.fs} SPS in a {self.header['fs']} SPS session"
            )
        try:
            if block.epoch != self._current_epoch:
                self._write_epoch(block.epoch, block.vref, block.gains)
                self._current_epoch = block.epoch
            codes = np.ascontiguousarray(block.codes, dtype="<i4")
            self._out.write(
                struct.pack(
                    "<BIQQI", TAG_BLOCK, block.epoch, block.seq, block.t0_ns,
                    codes.shape[1],
                )
            )
            self._out.write(codes.tobytes())
            self._samples += codes.shape[1]
            self._out.fh.flush()
        except OSError as exc:
            raise IoFailure(f"write failed: {exc}") from exc

    def annotate(self, time_s: float, text: str) -> None:
        try:
            payload = text.encode()
            self._out.write(struct.pack("<BdI", TAG_ANNOT, time_s, len(payload)))
            self._out.write(payload)
            self._out.fh.flush()
        except OSError as exc:
            raise IoFailure(f"write failed: {exc}") from exc

    def close(self) -> None:
        if self._closed:
            return
        try:
            self._out.write(struct.pack("<BQ", TAG_FOOTER, self._samples))
            self._out.fh.write(struct.pack("<I", self._out.crc))
            self._out.fh.close()
        except OSError as exc:
            raise IoFailure(f"finalize failed: {exc}") from exc
        self._closed = True


def write_session(
    path: str | Path,
    blocks: Iterable[SampleBlock],
    channel_labels: Iterable[str],
    fs: Optional[int] = None,
    backend: str = "simulator",
    annotations: Iterable[Annotation] = (),
    extra_header: Optional[dict] = None,
) -> None:
    """Write a whole block stream in one call (metadata from the first block)."""
    blocks = iter(blocks)
    try:
        first = next(blocks)
    except StopIteration:
        raise SessionError("cannot infer metadata from an empty stream") from None
    writer = SessionWriter(
        path,
        fs=fs if fs is not None else first.fs,
        channel_labels=channel_labels,
        vref=first.vref,
        gains=first.gains,
        backend=backend,
        extra_header=extra_header,
    )
    with writer:
        writer.write_block(first)
        for block in blocks:
            writer.write_block(block)
        for ann in annotations:
            writer.annotate(ann.time, ann.text)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise EOFError
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def read_session(path: str | Path, strict: bool = False) -> Session:
    """Parse a session file, verifying version and checksum.

    A file without a footer (interrupted write) is recovered up to the last
    complete record and returned with complete=False; strict=True raises
    Truncated instead (the exception carries the recovered prefix).
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 6 or raw[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path} is not a session file")
    r = _Reader(raw)
    r.take(len(MAGIC))
    version, header_len = struct.unpack("<HI", r.take(6))
    if version > FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version} is newer than {FORMAT_VERSION}")
    try:
        header = json.loads(r.take(header_len).decode())
    except (EOFError, ValueError) as exc:
        raise BadMagic(f"unreadable session header: {exc}") from exc

    session = Session(header=header, complete=False)
    footer_samples = None
    while True:
        record_start = r.pos
        try:
            tag = r.take(1)[0]
            if tag == TAG_EPOCH:
                epoch, vref = struct.unpack("<Id", r.take(12))
                gains = tuple(r.take(N_CHANNELS))
                session.epochs[epoch] = EpochParams(vref, gains)
            elif tag == TAG_BLOCK:
                epoch, seq, t0_ns, n = struct.unpack("<IQQI", r.take(24))
                codes = (
                    np.frombuffer(r.take(4 * N_CHANNELS * n), dtype="<i4")
                    .reshape(N_CHANNELS, n)
                    .astype(np.int32)
                )
                if epoch not in session.epochs:
                    raise EOFError  # block without its epoch: treat as garbage tail
                session.blocks.append(BlockRecord(epoch, seq, t0_ns, codes))
            elif tag == TAG_ANNOT:
                time_s, text_len = struct.unpack("<dI", r.take(12))
                session.annotations.append(
                    Annotation(time_s, r.take(text_len).decode())
                )
            elif tag == TAG_FOOTER:
                (footer_samples,) = struct.unpack("<Q", r.take(8))
                crc_stored = struct.unpack("<I", r.take(4))[0]
                crc_actual = zlib.crc32(raw[: r.pos - 4])
                if crc_actual != crc_stored:
                    raise ChecksumMismatch(
                        f"crc32 {crc_actual:08x} != stored {crc_stored:08x}"
                    )
                break
            else:
                raise EOFError  # unknown tag: unreadable tail
        except EOFError:
            r.pos = record_start
            break

    if footer_samples is not None:
        if footer_samples != session.n_samples:
            raise ChecksumMismatch(
                f"footer says {footer_samples} samples, file has {session.n_samples}"
            )
        session.complete = True
    elif strict:
        raise Truncated(f"{path} has no footer (interrupted write)", session)
    return session


def export_csv(session: Session, path: str | Path) -> None:
    """Write `t_s,<label>_uV,...` rows: time to 6 decimals, values to 3."""
    data = session.data()
    fs = session.fs
    labels = ",".join(f"{lab}_uV" for lab in session.channel_labels)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(f"t_s,{labels}\n")
            for i in range(data.shape[1]):
                row = ",".join(f"{v:.3f}" for v in data[:, i])
                fh.write(f"{i / fs:.6f},{row}\n")
    except OSError as exc:
        raise IoFailure(f"csv export failed: {exc}") from exc
