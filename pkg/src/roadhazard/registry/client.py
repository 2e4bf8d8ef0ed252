"""Synchronous registry client with background ALERT collection, and the agent replay loop."""

from __future__ import annotations

import queue
import socket
import threading
from dataclasses import dataclass, field

from ..pipeline import DetectionConfig, detect
from ..segmentation import Obstacle, VehicleState
from .protocol import VERSION, Ack, Alert, Err, Hello, ProtocolError, Query, RecordLine, Records, decode, encode
from .records import Box, ObstacleRecord, Report, WireDescriptor
from .server import parse_endpoint


class RegistryError(RuntimeError):
    """The server answered with ERR."""


class RegistryClient:
    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.timeout = timeout
        self._sock = socket.create_connection(parse_endpoint(endpoint), timeout=timeout)
        self._sock.settimeout(None)
        self._rfile = self._sock.makefile("rb")
        self._replies: queue.Queue = queue.Queue()
        self._alerts: queue.Queue = queue.Queue()
        self._send(encode(Hello(VERSION)))
        greeting = self._rfile.readline().decode("ascii", "replace").strip()
        reply = decode(greeting) if greeting else Err("connection closed during handshake")
        if not isinstance(reply, Hello) or reply.version != VERSION:
            self.close()
            raise RegistryError(f"handshake failed: {greeting!r}")
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _send(self, line: str) -> None:
        self._sock.sendall((line + "\n").encode("ascii"))

    def _read_loop(self) -> None:
        pending: list | None = None
        expected = 0
        try:
            for raw in self._rfile:
                msg = decode(raw.decode("ascii", "replace"))
                if isinstance(msg, Alert):
                    self._alerts.put(msg.record)
                elif isinstance(msg, Records):
                    pending, expected = [], msg.count
                    if expected == 0:
                        self._replies.put(pending)
                        pending = None
                elif isinstance(msg, RecordLine) and pending is not None:
                    pending.append(msg.record)
                    if len(pending) == expected:
                        self._replies.put(pending)
                        pending = None
                else:
                    self._replies.put(msg)
        except (OSError, ProtocolError):
            pass
        self._replies.put(ConnectionError("registry connection closed"))

    def _reply(self):
        try:
            msg = self._replies.get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError("registry did not answer in time") from None
        if isinstance(msg, Exception):
            self._replies.put(msg)
            raise msg
        if isinstance(msg, Err):
            raise RegistryError(msg.text)
        return msg

    def report(self, report: Report) -> Ack:
        self._send(encode(report))
        reply = self._reply()
        if not isinstance(reply, Ack):
            raise RegistryError(f"unexpected reply to REPORT: {reply!r}")
        return reply

    def query(self, position, radius: float) -> list[ObstacleRecord]:
        self._send(encode(Query((float(position[0]), float(position[1])), float(radius))))
        reply = self._reply()
        if not isinstance(reply, list):
            raise RegistryError(f"unexpected reply to QUERY: {reply!r}")
        return reply

    def drain_alerts(self) -> list[ObstacleRecord]:
        out = []
        while True:
            try:
                out.append(self._alerts.get_nowait())
            except queue.Empty:
                return out

    def alerts_pending(self) -> int:
        return self._alerts.qsize()

    def wait_alert(self, timeout: float) -> ObstacleRecord | None:
        try:
            return self._alerts.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def report_for(obstacle: Obstacle, agent_id: str, timestamp: float, observed: bool = True) -> Report:
    lo, hi = obstacle.bbox_min, obstacle.bbox_max
    return Report(
        agent_id=agent_id,
        position=(float(obstacle.centroid[0]), float(obstacle.centroid[1])),
        bbox=Box(tuple(map(float, lo)), tuple(map(float, hi))),
        descriptor=WireDescriptor.from_descriptor(obstacle.descriptor),
        kind=obstacle.kind,
        timestamp=float(timestamp),
        observed=observed,
    )


@dataclass
class ReplayReport:
    agent_id: str
    frames: int = 0
    reports: list[tuple[int, int, str]] = field(default_factory=list)
    alerts: list[tuple[int, ObstacleRecord]] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None

    def first_detection(self) -> dict[int, int]:
        """Record id -> first frame in which this agent reported it."""
        out: dict[int, int] = {}
        for frame, rid, _ in self.reports:
            out.setdefault(rid, frame)
        return out

    def first_alert(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for frame, rec in self.alerts:
            out.setdefault(rec.id, frame)
        return out

    def early_alerts(self) -> list[tuple[int, int, int | None]]:
        """``(record id, alert frame, own detection frame)`` for alerts that beat detection."""
        seen = self.first_detection()
        rows = []
        for rid, frame in sorted(self.first_alert().items()):
            own = seen.get(rid)
            if own is None or frame < own:
                rows.append((rid, frame, own))
        return rows


def agent_replay(
    frames,
    client: RegistryClient,
    config: DetectionConfig | None = None,
    agent_id: str = "ego",
    alert_radius: float = 150.0,
    t0: float = 0.0,
) -> ReplayReport:
    """Run detection on each ``(cloud, VehicleState)`` frame and report every obstacle.

    Before each frame the agent announces its position with a QUERY, and
    alerts that arrived since the previous frame are stamped with the
    current frame index.
    """
    out = ReplayReport(agent_id)
    try:
        for i, (cloud, state) in enumerate(frames):
            cloud = getattr(cloud, "cloud", cloud)
            state: VehicleState
            client.query(state.position[:2], alert_radius)
            out.alerts.extend((i, rec) for rec in client.drain_alerts())
            result = detect(cloud, state, config)
            for ob in result.obstacles:
                ack = client.report(report_for(ob, agent_id, t0 + i))
                out.reports.append((i, ack.id, ack.action))
            out.frames = i + 1
        out.alerts.extend((out.frames, rec) for rec in client.drain_alerts())
    except (ConnectionError, OSError, TimeoutError) as exc:
        out.aborted = True
        out.error = str(exc)
    return out
