"""Obstacle records, the keep/replace/delete rule and the in-memory registry state."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum

from ..segmentation import Descriptor

KINDS = ("negative", "positive")
AREA_TOLERANCE = 1.15
DIMENSION_TOLERANCE = 0.15


class Decision(Enum):
    Keep = "kept"
    Replace = "replaced"
    Delete = "deleted"


class ReportError(ValueError):
    """A report that cannot be applied; the state is left untouched."""


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @property
    def dims(self) -> tuple[float, float, float]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def footprint_area(self) -> float:
        dx, dy, _ = self.dims
        return dx * dy

    def validate(self) -> None:
        values = (*self.lo, *self.hi)
        if not all(math.isfinite(v) for v in values):
            raise ReportError("bbox has non-finite coordinates")
        dx, dy, dz = self.dims
        if dx <= 0 or dy <= 0 or dz < 0:
            raise ReportError("bbox footprint is degenerate")


@dataclass(frozen=True, eq=False)
class WireDescriptor:
    """Descriptor fields as plain tuples so records compare and hash by value."""

    bbox_dims: tuple[float, float, float]
    point_count: int
    mean_depth: float
    histogram: tuple[int, ...]

    @classmethod
    def from_descriptor(cls, d: Descriptor) -> "WireDescriptor":
        return cls(tuple(float(x) for x in d.bbox_dims), int(d.point_count), float(d.mean_depth),
                   tuple(int(h) for h in d.saliency_histogram))

    def fields(self) -> tuple:
        return (*self.bbox_dims, self.point_count, self.mean_depth, *self.histogram)

    def __eq__(self, other):
        return isinstance(other, WireDescriptor) and self.fields() == other.fields()

    def __hash__(self):
        return hash(self.fields())


EMPTY_DESCRIPTOR = WireDescriptor((0.0, 0.0, 0.0), 0, 0.0, (0,) * 8)


@dataclass(frozen=True)
class Report:
    agent_id: str
    position: tuple[float, float]
    bbox: Box
    descriptor: WireDescriptor
    kind: str
    timestamp: float
    observed: bool = True

    def validate(self) -> None:
        if not self.agent_id or any(c.isspace() for c in self.agent_id):
            raise ReportError("agent_id must be a non-empty token")
        if self.kind not in KINDS:
            raise ReportError(f"kind must be one of {KINDS}")
        if not all(math.isfinite(v) for v in (*self.position, self.timestamp)):
            raise ReportError("position and timestamp must be finite")
        self.bbox.validate()


@dataclass(frozen=True)
class ObstacleRecord:
    id: int
    position: tuple[float, float]
    bbox: Box
    descriptor: WireDescriptor
    kind: str
    timestamp: float
    revision: int = 0


@dataclass(frozen=True)
class RegistryConfig:
    match_radius: float = 3.0
    alert_radius: float = 150.0
    endpoint: str = "127.0.0.1:7878"
    log_path: str | None = None

    def __post_init__(self):
        if self.match_radius <= 0 or self.alert_radius <= 0:
            raise ValueError("radii must be positive")


def decide_update(old: ObstacleRecord, report: Report) -> Decision:
    """Delete on an explicit miss; replace when the footprint or any dimension moves by more than 15%."""
    if not report.observed:
        return Decision.Delete
    ratio = report.bbox.footprint_area / old.bbox.footprint_area
    if ratio > AREA_TOLERANCE or ratio < 1.0 / AREA_TOLERANCE:
        return Decision.Replace
    for before, after in zip(old.bbox.dims, report.bbox.dims):
        if before > 0 and abs(after - before) / before > DIMENSION_TOLERANCE:
            return Decision.Replace
    return Decision.Keep


class GridIndex:
    """Uniform hash grid over 2-D positions."""

    def __init__(self, cell: float = 10.0):
        self.cell = cell
        self._cells: dict[tuple[int, int], set[int]] = defaultdict(set)
        self._where: dict[int, tuple[int, int]] = {}

    def _key(self, p) -> tuple[int, int]:
        return (math.floor(p[0] / self.cell), math.floor(p[1] / self.cell))

    def insert(self, rid: int, p) -> None:
        key = self._key(p)
        self._cells[key].add(rid)
        self._where[rid] = key

    def remove(self, rid: int) -> None:
        key = self._where.pop(rid)
        self._cells[key].discard(rid)
        if not self._cells[key]:
            del self._cells[key]

    def candidates(self, p, radius: float) -> set[int]:
        x0, y0 = self._key((p[0] - radius, p[1] - radius))
        x1, y1 = self._key((p[0] + radius, p[1] + radius))
        if (x1 - x0 + 1) * (y1 - y0 + 1) > len(self._cells):
            return {rid for ids in self._cells.values() for rid in ids}
        out: set[int] = set()
        for cx in range(x0, x1 + 1):
            for cy in range(y0, y1 + 1):
                out |= self._cells.get((cx, cy), set())
        return out

    def ids(self) -> set[int]:
        return set(self._where)


@dataclass(frozen=True)
class Event:
    seq: int
    action: str
    record_id: int
    report: Report


class RegistryState:
    """Records keyed by id with a spatial index kept in step."""

    def __init__(self):
        self.records: dict[int, ObstacleRecord] = {}
        self.index = GridIndex()
        self.next_id = 1
        self.events: list[Event] = []

    def snapshot(self) -> dict[int, ObstacleRecord]:
        return dict(self.records)

    def _put(self, rec: ObstacleRecord) -> None:
        if rec.id in self.records:
            self.index.remove(rec.id)
        self.records[rec.id] = rec
        self.index.insert(rec.id, rec.position)

    def _drop(self, rid: int) -> None:
        del self.records[rid]
        self.index.remove(rid)

    def consistent(self) -> bool:
        return self.index.ids() == set(self.records)


def _distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def match_record(state: RegistryState, report: Report, match_radius: float) -> ObstacleRecord | None:
    if match_radius <= 0:
        raise ValueError("match_radius must be positive")
    best = None
    for rid in state.index.candidates(report.position, match_radius):
        rec = state.records[rid]
        if rec.kind != report.kind:
            continue
        d = _distance(rec.position, report.position)
        if d <= match_radius and (best is None or (d, rid) < best[0]):
            best = ((d, rid), rec)
    return None if best is None else best[1]


def query_vicinity(state: RegistryState, position, radius: float) -> list[ObstacleRecord]:
    """Records within ``radius`` (inclusive), nearest first, ties by id."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    hits = []
    for rid in state.index.candidates(position, radius):
        d = _distance(state.records[rid].position, position)
        if d <= radius:
            hits.append((d, rid))
    return [state.records[rid] for _, rid in sorted(hits)]


def apply_report(state: RegistryState, report: Report, config: RegistryConfig) -> tuple[str, ObstacleRecord | None]:
    """Apply one report and return ``(action, record)``.

    ``action`` is ``created``, ``kept``, ``replaced`` or ``deleted``. Every
    mutation appends an event; a keep leaves state and log untouched.
    """
    report.validate()
    old = match_record(state, report, config.match_radius)
    if old is None:
        if not report.observed:
            raise ReportError("absence report does not match any record")
        rec = ObstacleRecord(state.next_id, report.position, report.bbox, report.descriptor,
                             report.kind, report.timestamp, 0)
        _commit(state, "created", rec, report)
        return "created", rec
    decision = decide_update(old, report)
    if decision is Decision.Keep:
        return decision.value, old
    if decision is Decision.Delete:
        _commit(state, "deleted", old, report)
        return decision.value, old
    rec = replace(old, position=report.position, bbox=report.bbox, descriptor=report.descriptor,
                  timestamp=report.timestamp, revision=old.revision + 1)
    _commit(state, "replaced", rec, report)
    return decision.value, rec


def _commit(state: RegistryState, action: str, rec: ObstacleRecord, report: Report) -> None:
    """Apply a logged mutation; used both live and on replay."""
    if action == "created":
        if rec.id in state.records:
            raise ReportError(f"record {rec.id} already exists")
        state._put(rec)
        state.next_id = max(state.next_id, rec.id + 1)
    elif action == "replaced":
        state._put(rec)
    elif action == "deleted":
        state._drop(rec.id)
    else:
        raise ValueError(f"unknown action {action!r}")
    state.events.append(Event(len(state.events) + 1, action, rec.id, report))


def replay_events(events) -> RegistryState:
    """Rebuild state from logged events, re-deriving records exactly as the live path did."""
    state = RegistryState()
    for ev in events:
        r = ev.report
        if ev.action == "created":
            rec = ObstacleRecord(ev.record_id, r.position, r.bbox, r.descriptor, r.kind, r.timestamp, 0)
        else:
            old = state.records.get(ev.record_id)
            if old is None:
                raise ValueError(f"event {ev.seq} refers to unknown record {ev.record_id}")
            rec = old
            if ev.action == "replaced":
                rec = replace(old, position=r.position, bbox=r.bbox, descriptor=r.descriptor,
                              timestamp=r.timestamp, revision=old.revision + 1)
        _commit(state, ev.action, rec, r)
    return state
