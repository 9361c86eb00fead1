"""Operator-console server.

One listening port serves three endpoints: GET /layout (the machine drawing
document), POST /cmd (operator commands), and a WebSocket at /ws streaming
JSON frames `{v, t, kind, payload}`: a snapshot on connect, positions at 10 Hz
of simulated time, and every trace/planner event as it happens.

The simulation itself stays on the deterministic lock-step driver; this server
paces it against the wall clock and injects operator commands between cycles.
Closing or reopening consoles never touches simulation state.
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import socket
import struct
import threading
import time

from .driver import make_rig
from .manager import ManagerConfig, Status
from .model import MachineModel
from .requests import SheetRequest
from .scenario import build_requests, parse_scenario
from .sim import Fault

WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
PROTOCOL_VERSION = 1
POSITIONS_PERIOD = 100  # ticks between position frames (>= 10 Hz)


def layout_document(model: MachineModel) -> dict:
    return {
        "v": PROTOCOL_VERSION,
        "name": model.name,
        "modules": [
            {"name": m.name, "kind": m.kind, "x": m.x, "y": m.y, "rotation": m.rotation}
            for m in model.modules.values()
        ],
        "connections": [
            {"from": f"{mod}.{port}", "to": dest}
            for (mod, port), dest in model.connections.items()
        ],
        "finishers": model.finishers(),
        "purge_trays": model.purge_trays(),
    }


class LiveRig:
    """Paced co-simulation with live command injection and event broadcast."""

    def __init__(self, model: MachineModel, seed: int = 0, config: ManagerConfig | None = None, pace: float = 1.0):
        self.model = model
        self.manager, self.sim, self.clock = make_rig(model, seed=seed, config=config)
        self.commands: "queue.Queue[dict]" = queue.Queue()
        self.subscribers: list["queue.Queue[dict]"] = []
        self._need_snapshot: list["queue.Queue[dict]"] = []
        self.pace = pace
        self._next_seq = 0
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._trace_cursor = 0
        self._last_positions = -1

    # -- broadcast -----------------------------------------------------------

    def subscribe(self) -> "queue.Queue[dict]":
        q: "queue.Queue[dict]" = queue.Queue(maxsize=1000)
        with self._lock:
            self.subscribers.append(q)
            self._need_snapshot.append(q)
        return q

    def unsubscribe(self, q) -> None:
        with self._lock:
            if q in self.subscribers:
                self.subscribers.remove(q)

    def _frame(self, kind: str, payload) -> dict:
        return {"v": PROTOCOL_VERSION, "t": self.clock.now, "kind": kind, "payload": payload}

    def _broadcast(self, frame: dict) -> None:
        with self._lock:
            subs = list(self.subscribers)
        for q in subs:
            try:
                q.put_nowait(frame)
            except queue.Full:
                pass

    def _positions_payload(self) -> dict:
        out = {}
        for seq, (module, frac) in self.sim.positions().items():
            plan = self.sim.plans.get(seq)
            out[str(seq)] = {
                "module": module,
                "frac": round(frac, 4),
                "job": plan.job if plan else "",
                "status": plan.status if plan else "",
            }
        return out

    def _snapshot_frame(self) -> dict:
        return self._frame(
            "snapshot",
            {
                "modules": dict(self.sim.module_on),
                "sheets": self._positions_payload(),
                "unplanned": len(self.manager.unplanned),
                "planned": sum(
                    1 for r in self.manager.records.values() if r.status is Status.PLANNED
                ),
            },
        )

    def _pump_events(self) -> None:
        with self._lock:
            fresh, self._need_snapshot = self._need_snapshot, []
        for q in fresh:
            q.put(self._snapshot_frame())
        trace = self.sim.trace
        while self._trace_cursor < len(trace):
            self._broadcast(self._frame("event", trace[self._trace_cursor]))
            self._trace_cursor += 1
        if self.manager.events:
            for ev in self.manager.events:
                self._broadcast(self._frame("planner", ev))
            self.manager.events.clear()
        if self.clock.now - self._last_positions >= POSITIONS_PERIOD:
            self._last_positions = self.clock.now
            self._broadcast(self._frame("positions", self._positions_payload()))

    # -- commands ---------------------------------------------------------------

    def submit_scenario(self, text: str) -> list[int]:
        sc = parse_scenario(text)
        reqs = build_requests(sc, self.model)
        seqs = []
        with self._lock:
            base = self._next_seq
            job_base = sum(1 for j in self.manager.jobs)
        for req in reqs:
            seq = base + req.seq
            new = SheetRequest(
                seq=seq,
                job=f"live{job_base}-{req.job}",
                initial=req.initial,
                goal=req.goal,
                unknown=req.unknown,
                meta=dict(req.meta),
            )
            self.manager.submit(new)
            seqs.append(seq)
        self._next_seq = base + len(reqs) + 100
        return seqs

    def execute(self, cmd: dict) -> dict:
        kind = cmd.get("kind")
        if kind == "ToggleModule":
            module = cmd.get("module")
            if module not in self.model.modules:
                return {"ok": False, "error": f"unknown module {module!r}"}
            state = cmd.get("state", "off")
            self.sim.inject(Fault(kind="module", target=module, state=state), self.clock.now)
            return {"ok": True}
        if kind == "JamSheet":
            try:
                seq = int(cmd.get("seq"))
            except (TypeError, ValueError):
                return {"ok": False, "error": "bad seq"}
            self.sim.inject(Fault(kind="jam", target=seq), self.clock.now)
            return {"ok": True}
        if kind == "SubmitJob":
            try:
                seqs = self.submit_scenario(str(cmd.get("scenario", "")))
            except Exception as e:
                return {"ok": False, "error": str(e)}
            return {"ok": True, "seqs": seqs}
        if kind == "SetWeights":
            from .search import Objective

            try:
                self.manager.config.objective = Objective(
                    w1=float(cmd.get("w1", 1.0)), w2=float(cmd.get("w2", 0.0))
                )
            except ValueError as e:
                return {"ok": False, "error": str(e)}
            return {"ok": True}
        if kind == "SetPolicy":
            policy = cmd.get("policy")
            if policy not in ("purge", "hold"):
                return {"ok": False, "error": "policy must be purge|hold"}
            self.manager.config.policy = policy
            return {"ok": True}
        return {"ok": False, "error": f"unknown command {kind!r}"}

    # -- main loop -----------------------------------------------------------------

    def run(self) -> None:
        """Paced lock-step loop; commands apply between planning cycles."""
        manager, sim, clock = self.manager, self.sim, self.clock
        period = manager.config.release_period
        next_check = period
        wall0 = time.monotonic()
        while not self._stop.is_set():
            try:
                while True:
                    cmd = self.commands.get_nowait()
                    reply_q = cmd.pop("_reply", None)
                    result = self.execute(cmd)
                    self._broadcast(self._frame("ack", {"cmd": cmd, "result": result}))
                    if reply_q is not None:
                        reply_q.put(result)
            except queue.Empty:
                pass
            from .driver import _drain_with_abort

            _drain_with_abort(manager, sim, clock, just_planned=None)
            if clock.now >= next_check:
                manager.release_due()
                manager.gc()
                next_check = (clock.now // period + 1) * period
            if manager.unplanned:
                record = manager.plan_next()
                spent = record.plan_virtual if record else manager.config.predict_floor
                clock.advance(spent)
                sim.step(clock.now)
                _drain_with_abort(manager, sim, clock, just_planned=record)
            else:
                horizon = min(
                    t
                    for t in (
                        sim.next_event_time(),
                        next_check,
                        clock.now + POSITIONS_PERIOD,
                    )
                    if t is not None
                )
                clock.now = max(clock.now, horizon)
                sim.step(clock.now)
                _drain_with_abort(manager, sim, clock, just_planned=None)
            self._pump_events()
            # pace virtual time against the wall clock
            if self.pace > 0:
                ahead = self.clock.now / 1000.0 / self.pace - (time.monotonic() - wall0)
                if ahead > 0:
                    time.sleep(min(ahead, 0.1))

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.run, daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self._stop.set()


# -- wire plumbing -----------------------------------------------------------------


def _ws_accept_key(key: str) -> str:
    return base64.b64encode(hashlib.sha1((key + WS_MAGIC).encode()).digest()).decode()


def ws_send_text(sock: socket.socket, text: str) -> None:
    data = text.encode()
    header = bytearray([0x81])
    n = len(data)
    if n < 126:
        header.append(n)
    elif n < 65536:
        header.append(126)
        header += struct.pack(">H", n)
    else:
        header.append(127)
        header += struct.pack(">Q", n)
    sock.sendall(bytes(header) + data)


def ws_read_frame(sock: socket.socket) -> tuple[int, bytes] | None:
    head = _read_exact(sock, 2)
    if head is None:
        return None
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    if length == 126:
        ext = _read_exact(sock, 2)
        length = struct.unpack(">H", ext)[0]
    elif length == 127:
        ext = _read_exact(sock, 8)
        length = struct.unpack(">Q", ext)[0]
    mask = _read_exact(sock, 4) if masked else b"\x00" * 4
    payload = _read_exact(sock, length) if length else b""
    if payload is None:
        return None
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class ConsoleServer:
    """Single-port HTTP + WebSocket endpoint for the operator console."""

    def __init__(self, rig: LiveRig, host: str = "127.0.0.1", port: int = 8787):
        self.rig = rig
        self.host, self.port = host, port
        self.listener: socket.socket | None = None
        self._stop = threading.Event()

    def start(self) -> threading.Thread:
        self.listener = socket.create_server((self.host, self.port))
        self.listener.settimeout(0.5)
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self._stop.set()
        if self.listener:
            self.listener.close()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _addr = self.listener.accept()
            except (socket.timeout, OSError):
                continue
            threading.Thread(target=self._handle, args=(conn,), daemon=True).start()

    def _handle(self, conn: socket.socket) -> None:
        try:
            conn.settimeout(10)
            data = b""
            while b"\r\n\r\n" not in data:
                chunk = conn.recv(65536)
                if not chunk:
                    return
                data += chunk
            head, _, rest = data.partition(b"\r\n\r\n")
            lines = head.decode("latin1").split("\r\n")
            method, path, _ = lines[0].split(" ", 2)
            headers = {}
            for line in lines[1:]:
                k, _, v = line.partition(":")
                headers[k.strip().lower()] = v.strip()
            if path == "/ws" and headers.get("upgrade", "").lower() == "websocket":
                self._serve_ws(conn, headers)
            elif method == "GET" and path == "/layout":
                self._respond_json(conn, layout_document(self.rig.model))
            elif method == "POST" and path == "/cmd":
                length = int(headers.get("content-length", "0"))
                body = rest
                while len(body) < length:
                    body += conn.recv(65536)
                cmd = json.loads(body.decode() or "{}")
                reply: "queue.Queue[dict]" = queue.Queue()
                cmd["_reply"] = reply
                self.rig.commands.put(cmd)
                try:
                    result = reply.get(timeout=10)
                except queue.Empty:
                    result = {"ok": False, "error": "timeout"}
                self._respond_json(conn, result)
            else:
                conn.sendall(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
        except Exception:
            pass
        finally:
            # _serve_ws runs the whole session before returning; closing twice
            # is harmless
            try:
                conn.close()
            except OSError:
                pass

    def _respond_json(self, conn: socket.socket, doc: dict) -> None:
        body = json.dumps(doc).encode()
        conn.sendall(
            b"HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n"
            b"Access-Control-Allow-Origin: *\r\n"
            + f"Content-Length: {len(body)}\r\n\r\n".encode()
            + body
        )

    def _serve_ws(self, conn: socket.socket, headers: dict) -> None:
        accept = _ws_accept_key(headers.get("sec-websocket-key", ""))
        conn.sendall(
            (
                "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                f"Connection: Upgrade\r\nSec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        sub = self.rig.subscribe()
        conn.settimeout(0.02)
        try:
            while not self._stop.is_set():
                sent = 0
                try:
                    while True:
                        frame = sub.get_nowait()
                        ws_send_text(conn, json.dumps(frame))
                        sent += 1
                except queue.Empty:
                    pass
                try:
                    got = ws_read_frame(conn)
                except socket.timeout:
                    if not sent:
                        time.sleep(0.01)
                    continue
                except OSError:
                    break
                if got is None:
                    break
                opcode, payload = got
                if opcode == 0x8:  # close
                    break
                if opcode == 0x9:  # ping -> pong
                    conn.sendall(bytes([0x8A, len(payload)]) + payload)
                elif opcode == 0x1 and payload:
                    try:
                        cmd = json.loads(payload.decode())
                        self.rig.commands.put(cmd)
                    except (ValueError, UnicodeDecodeError):
                        pass
        finally:
            self.rig.unsubscribe(sub)
            try:
                conn.close()
            except OSError:
                pass


def serve(model: MachineModel, listen: str = "127.0.0.1:8787", seed: int = 0, scenario: str | None = None, config=None, pace: float = 1.0):
    """Start the live rig and console server; returns (rig, server)."""
    host, _, port = listen.partition(":")
    rig = LiveRig(model, seed=seed, config=config, pace=pace)
    if scenario:
        rig.submit_scenario(scenario)
    server = ConsoleServer(rig, host or "127.0.0.1", int(port or 8787))
    rig.start()
    server.start()
    return rig, server
