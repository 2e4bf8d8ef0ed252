"""Threaded TCP registry service.

Each connection is a session. Mutations go through one lock, so the event
log order is the total order of applied reports. Sessions remember the last
position they reported or queried; created and replaced records are pushed
as ALERT lines to every other session within ``alert_radius``.
"""

from __future__ import annotations

import logging
import math
import socketserver
import threading

from .eventlog import EventLog, load_state
from .protocol import (
    VERSION,
    Ack,
    Alert,
    Err,
    Hello,
    ProtocolError,
    Query,
    RecordLine,
    Records,
    decode,
    encode,
)
from .records import RegistryConfig, RegistryState, Report, ReportError, apply_report, query_vicinity

log = logging.getLogger(__name__)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


class Session:
    def __init__(self, wfile):
        self._wfile = wfile
        self._lock = threading.Lock()
        self.position: tuple[float, float] | None = None
        self.open = True

    def send(self, *lines: str) -> None:
        data = "".join(line + "\n" for line in lines).encode("ascii")
        with self._lock:
            if not self.open:
                return
            try:
                self._wfile.write(data)
                self._wfile.flush()
            except OSError:
                self.open = False


class Registry:
    """Shared state, event log and live sessions behind a single writer lock."""

    def __init__(self, config: RegistryConfig, state: RegistryState | None = None):
        self.config = config
        if state is None and config.log_path:
            state = load_state(config.log_path)
        self.state = state or RegistryState()
        self.log = EventLog(config.log_path) if config.log_path else None
        self.lock = threading.Lock()
        self.sessions: set[Session] = set()

    def report(self, report: Report, origin: Session | None = None) -> str:
        with self.lock:
            if origin is not None:
                origin.position = report.position
            n_before = len(self.state.events)
            try:
                action, rec = apply_report(self.state, report, self.config)
            except ReportError as exc:
                return encode(Err(str(exc)))
            for ev in self.state.events[n_before:]:
                if self.log:
                    self.log.append(ev)
            if action in ("created", "replaced"):
                line = encode(Alert(rec))
                for s in list(self.sessions):
                    if s is origin or s.position is None:
                        continue
                    if math.dist(s.position, rec.position) <= self.config.alert_radius:
                        s.send(line)
            return encode(Ack(rec.id, action))

    def query(self, q: Query, origin: Session | None = None) -> list[str]:
        if q.radius <= 0:
            return [encode(Err("radius must be positive"))]
        with self.lock:
            if origin is not None:
                origin.position = q.position
            hits = query_vicinity(self.state, q.position, q.radius)
        return [encode(Records(len(hits)))] + [encode(RecordLine(r)) for r in hits]

    def close(self) -> None:
        with self.lock:
            if self.log:
                self.log.close()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        registry: Registry = self.server.registry
        session = Session(self.wfile)
        try:
            first = self.rfile.readline().decode("ascii", "replace")
            try:
                hello = decode(first)
            except ProtocolError:
                hello = None
            if not isinstance(hello, Hello) or hello.version != VERSION:
                session.send(encode(Err(f"expected HELLO {VERSION}")))
                return
            session.send(encode(Hello(VERSION)))
            with registry.lock:
                registry.sessions.add(session)
            for raw in self.rfile:
                line = raw.decode("ascii", "replace").strip()
                if not line:
                    continue
                try:
                    msg = decode(line)
                except ProtocolError as exc:
                    session.send(encode(Err(str(exc))))
                    return
                if isinstance(msg, Report):
                    session.send(registry.report(msg, session))
                elif isinstance(msg, Query):
                    session.send(*registry.query(msg, session))
                else:
                    session.send(encode(Err(f"unexpected {line.split(' ', 1)[0]} from client")))
                    return
        finally:
            with registry.lock:
                registry.sessions.discard(session)
            session.open = False


class RegistryServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, config: RegistryConfig, state: RegistryState | None = None):
        self.registry = Registry(config, state)
        super().__init__(parse_endpoint(config.endpoint), _Handler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "RegistryServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        self.registry.close()
        if self._thread:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(config: RegistryConfig, state: RegistryState | None = None) -> RegistryServer:
    """Bind and start serving in a background thread."""
    server = RegistryServer(config, state)
    log.info("registry listening on %s", server.endpoint)
    return server.start()
