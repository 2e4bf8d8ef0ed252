"""Append-only ascii event log; one EVENT line per applied mutation."""

from __future__ import annotations

import os
from pathlib import Path

from .protocol import decode, encode
from .records import Event, RegistryState, replay_events


class EventLog:
    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a", encoding="ascii")

    def append(self, event: Event) -> None:
        self._fh.write(encode(event) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()


def read_events(path) -> list[Event]:
    events = []
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        ev = decode(line)
        if not isinstance(ev, Event):
            raise ValueError(f"line {lineno}: not an EVENT line")
        events.append(ev)
    return events


def load_state(path) -> RegistryState:
    """State rebuilt from the log at ``path``; empty if the file does not exist."""
    if not Path(path).exists():
        return RegistryState()
    return replay_events(read_events(path))
