"""Controller wire protocol: newline-delimited JSON, both directions.

planner -> controller: propose {seq, steps:[{module, capability, start_ms,
end_ms, allocs}]}
controller -> planner: accept {seq, step}, commit {seq}, reject {seq, step,
reason}, done {seq}, module_update {capability, state}, break_in_future
{seqs}, broken {jammed_seqs, module_updates}

All times are absolute wall-clock milliseconds. The same codec runs over an
in-process queue pair (deterministic lock-step simulation) or a TCP socket
(threaded / real hardware).
"""

from __future__ import annotations

import json
import socket
from collections import deque


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, sort_keys=True, separators=(",", ":")) + "\n").encode()


def decode_lines(buf: bytes) -> tuple[list[dict], bytes]:
    msgs = []
    while b"\n" in buf:
        line, buf = buf.split(b"\n", 1)
        if line.strip():
            msgs.append(json.loads(line))
    return msgs, buf


class LocalPipe:
    """One endpoint of a synchronous in-process duplex channel.

    send() delivers immediately to the peer's handler (if set) or inbox; the
    deterministic driver relies on this strict ordering.
    """

    def __init__(self) -> None:
        self.peer: "LocalPipe | None" = None
        self.inbox: deque[dict] = deque()
        self.handler = None  # optional callable(msg)

    @staticmethod
    def pair() -> tuple["LocalPipe", "LocalPipe"]:
        a, b = LocalPipe(), LocalPipe()
        a.peer, b.peer = b, a
        return a, b

    def send(self, msg: dict) -> None:
        msg = json.loads(encode(msg))  # round-trip: wire semantics even in-process
        if self.peer.handler is not None:
            self.peer.handler(msg)
        else:
            self.peer.inbox.append(msg)

    def poll(self) -> list[dict]:
        out = list(self.inbox)
        self.inbox.clear()
        return out


class TcpConnection:
    """Blocking newline-delimited JSON over a socket."""

    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        self._buf = b""
        self.inbox: deque[dict] = deque()

    def send(self, msg: dict) -> None:
        self.sock.sendall(encode(msg))

    def poll(self) -> list[dict]:
        self.sock.setblocking(False)
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                self._buf += chunk
        except (BlockingIOError, InterruptedError):
            pass
        finally:
            self.sock.setblocking(True)
        msgs, self._buf = decode_lines(self._buf)
        self.inbox.extend(msgs)
        out = list(self.inbox)
        self.inbox.clear()
        return out

    def recv_blocking(self, timeout: float = 10.0) -> list[dict]:
        self.sock.settimeout(timeout)
        chunk = self.sock.recv(65536)
        if not chunk:
            raise ConnectionError("peer closed")
        self._buf += chunk
        msgs, self._buf = decode_lines(self._buf)
        return msgs
