"""Small synchronous client for the streaming protocol (used by the CLI's
remote register commands and by integration tests)."""

from __future__ import annotations

import itertools
import socket
import time
from typing import Optional

from . import protocol


class RemoteError(Exception):
    def __init__(self, code: str, text: str):
        super().__init__(f"{code}: {text}")
        self.code = code
        self.text = text


class StationClient:
    """Blocking TCP client: one HELLO on connect, then request/stream traffic.

    DATA and METRICS frames that arrive while waiting for a command reply are
    buffered and can be drained with next_data()/next_metrics().
    """

    def __init__(self, host: str, port: int, token: Optional[str] = None, timeout: float = 10.0):
        self.token = token
        self.timeout = timeout
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._decoder = protocol.FrameDecoder()
        self._wire: list[protocol.Message] = []  # decoded, not yet examined
        self._pending: list[protocol.Message] = []  # examined, held for next_of
        self._ids = itertools.count(1)
        hello = self._next_message(deadline=time.monotonic() + timeout)
        if not isinstance(hello, protocol.Hello):
            raise RemoteError(protocol.ERR_BAD_MESSAGE, f"expected HELLO, got {hello}")
        self.hello = hello

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> "StationClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- low-level ---------------------------------------------------------------

    def _read_socket_message(self, deadline: float) -> protocol.Message:
        """Next message from the wire, ignoring the pending buffer."""
        while True:
            if self._wire:
                return self._wire.pop(0)
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no message within timeout")
            self.sock.settimeout(remaining)
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("server closed the connection")
            for item in self._decoder.feed(chunk):
                if isinstance(item, protocol.ProtocolError):
                    raise item
                self._wire.append(item)

    def _next_message(self, deadline: float) -> protocol.Message:
        if self._pending:
            return self._pending.pop(0)
        return self._read_socket_message(deadline)

    # -- commands -----------------------------------------------------------------

    def cmd(self, op: str, cmd_id: Optional[int] = None, **args) -> protocol.Ack:
        """Send a command and wait for its ACK; raises RemoteError on ERR."""
        if self.token is not None:
            args.setdefault("token", self.token)
        cmd_id = next(self._ids) if cmd_id is None else cmd_id
        self.sock.sendall(protocol.encode_message(protocol.Cmd(cmd_id, op, args)))
        deadline = time.monotonic() + self.timeout
        seen: list[protocol.Message] = []
        try:
            while True:
                msg = self._next_message(deadline)
                if isinstance(msg, protocol.Ack) and msg.cmd_id == cmd_id:
                    return msg
                if isinstance(msg, protocol.Err) and msg.cmd_id in (cmd_id, None):
                    raise RemoteError(msg.code, msg.text)
                seen.append(msg)
                if len(seen) > 4096:  # bound buffered stream traffic
                    seen.pop(0)
        finally:
            self._pending = seen + self._pending

    def next_of(self, kind, timeout: Optional[float] = None) -> protocol.Message:
        deadline = time.monotonic() + (timeout if timeout is not None else self.timeout)
        for i, msg in enumerate(self._pending):
            if isinstance(msg, kind):
                return self._pending.pop(i)
        while True:
            msg = self._read_socket_message(deadline)
            if isinstance(msg, kind):
                return msg
            self._pending.append(msg)
            if len(self._pending) > 4096:
                self._pending.pop(0)

    def next_data(self, timeout: Optional[float] = None) -> protocol.Data:
        return self.next_of(protocol.Data, timeout)

    def next_metrics(self, timeout: Optional[float] = None) -> protocol.Metrics:
        return self.next_of(protocol.Metrics, timeout)
