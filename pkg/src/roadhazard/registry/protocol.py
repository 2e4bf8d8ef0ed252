"""Line protocol shared by the registry server, its clients and the event log.

Every message is one line of space separated tokens; the first token names
the message kind. Floats are written in shortest round-trip form so a value
survives encode/decode unchanged.

    HELLO <version>
    REPORT <agent_id> <x> <y> <kind> <xmin> <ymin> <zmin> <xmax> <ymax> <zmax>
           <observed:0|1> <timestamp> <descriptor>
    QUERY <x> <y> <radius>
    RECORDS <n>                      followed by n RECORD lines
    RECORD <record fields>
    ALERT <record fields>
    ACK <id> <created|kept|replaced|deleted>
    ERR <free text>
    EVENT <seq> <action> <id> <REPORT fields without the keyword>

``<record fields>`` are ``<id> <x> <y> <kind> <bbox> <revision> <timestamp>
<descriptor>`` and ``<descriptor>`` is ``<dx> <dy> <dz> <point_count>
<mean_depth> <h0> ... <h7>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .records import KINDS, Box, Event, ObstacleRecord, Report, WireDescriptor

VERSION = "1"
ACTIONS = ("created", "kept", "replaced", "deleted")
DESCRIPTOR_FIELDS = 13
BOX_FIELDS = 6


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Hello:
    version: str


@dataclass(frozen=True)
class Query:
    position: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class Ack:
    id: int
    action: str


@dataclass(frozen=True)
class Err:
    text: str


@dataclass(frozen=True)
class Alert:
    record: ObstacleRecord


@dataclass(frozen=True)
class Records:
    count: int


@dataclass(frozen=True)
class RecordLine:
    record: ObstacleRecord


def fmt(x: float) -> str:
    return repr(float(x))


def _float(tok: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ProtocolError(f"bad number {tok!r}") from None
    if not math.isfinite(v):
        raise ProtocolError(f"non-finite number {tok!r}")
    return v


def _int(tok: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ProtocolError(f"bad integer {tok!r}") from None


def _descriptor_tokens(d: WireDescriptor) -> list[str]:
    return [*map(fmt, d.bbox_dims), str(d.point_count), fmt(d.mean_depth), *map(str, d.histogram)]


def _parse_descriptor(tok: list[str]) -> WireDescriptor:
    if len(tok) != DESCRIPTOR_FIELDS:
        raise ProtocolError(f"descriptor needs {DESCRIPTOR_FIELDS} fields, got {len(tok)}")
    return WireDescriptor(tuple(_float(t) for t in tok[:3]), _int(tok[3]), _float(tok[4]),
                          tuple(_int(t) for t in tok[5:]))


def _kind(tok: str) -> str:
    if tok not in KINDS:
        raise ProtocolError(f"unknown obstacle kind {tok!r}")
    return tok


def _box_tokens(b: Box) -> list[str]:
    return [*map(fmt, b.lo), *map(fmt, b.hi)]


def _parse_box(tok: list[str]) -> Box:
    v = [_float(t) for t in tok]
    return Box(tuple(v[:3]), tuple(v[3:]))


def _report_tokens(r: Report) -> list[str]:
    return [r.agent_id, *map(fmt, r.position), r.kind, *_box_tokens(r.bbox),
            "1" if r.observed else "0", fmt(r.timestamp), *_descriptor_tokens(r.descriptor)]


REPORT_FIELDS = 1 + 2 + 1 + BOX_FIELDS + 2 + DESCRIPTOR_FIELDS


def _parse_report(tok: list[str]) -> Report:
    if len(tok) != REPORT_FIELDS:
        raise ProtocolError(f"REPORT needs {REPORT_FIELDS} fields, got {len(tok)}")
    if tok[10] not in ("0", "1"):
        raise ProtocolError("observed flag must be 0 or 1")
    return Report(
        agent_id=tok[0],
        position=(_float(tok[1]), _float(tok[2])),
        kind=_kind(tok[3]),
        bbox=_parse_box(tok[4:10]),
        observed=tok[10] == "1",
        timestamp=_float(tok[11]),
        descriptor=_parse_descriptor(tok[12:]),
    )


def _record_tokens(r: ObstacleRecord) -> list[str]:
    return [str(r.id), *map(fmt, r.position), r.kind, *_box_tokens(r.bbox), str(r.revision),
            fmt(r.timestamp), *_descriptor_tokens(r.descriptor)]


RECORD_FIELDS = 1 + 2 + 1 + BOX_FIELDS + 2 + DESCRIPTOR_FIELDS


def _parse_record(tok: list[str]) -> ObstacleRecord:
    if len(tok) != RECORD_FIELDS:
        raise ProtocolError(f"record needs {RECORD_FIELDS} fields, got {len(tok)}")
    return ObstacleRecord(
        id=_int(tok[0]),
        position=(_float(tok[1]), _float(tok[2])),
        kind=_kind(tok[3]),
        bbox=_parse_box(tok[4:10]),
        revision=_int(tok[10]),
        timestamp=_float(tok[11]),
        descriptor=_parse_descriptor(tok[12:]),
    )


def encode(msg) -> str:
    """Encode a message object as one line, without the trailing newline."""
    if isinstance(msg, Hello):
        parts = ["HELLO", msg.version]
    elif isinstance(msg, Report):
        parts = ["REPORT", *_report_tokens(msg)]
    elif isinstance(msg, Query):
        parts = ["QUERY", *map(fmt, msg.position), fmt(msg.radius)]
    elif isinstance(msg, Alert):
        parts = ["ALERT", *_record_tokens(msg.record)]
    elif isinstance(msg, RecordLine):
        parts = ["RECORD", *_record_tokens(msg.record)]
    elif isinstance(msg, Records):
        parts = ["RECORDS", str(msg.count)]
    elif isinstance(msg, Ack):
        parts = ["ACK", str(msg.id), msg.action]
    elif isinstance(msg, Err):
        parts = ["ERR", " ".join(msg.text.split())]
    elif isinstance(msg, Event):
        parts = ["EVENT", str(msg.seq), msg.action, str(msg.record_id), *_report_tokens(msg.report)]
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    return " ".join(parts)


def decode(line: str):
    tok = line.strip().split(" ")
    if not tok or not tok[0]:
        raise ProtocolError("empty line")
    kind, rest = tok[0], tok[1:]
    if kind == "HELLO":
        if len(rest) != 1:
            raise ProtocolError("HELLO takes one field")
        return Hello(rest[0])
    if kind == "REPORT":
        return _parse_report(rest)
    if kind == "QUERY":
        if len(rest) != 3:
            raise ProtocolError("QUERY takes x y radius")
        return Query((_float(rest[0]), _float(rest[1])), _float(rest[2]))
    if kind == "ALERT":
        return Alert(_parse_record(rest))
    if kind == "RECORD":
        return RecordLine(_parse_record(rest))
    if kind == "RECORDS":
        if len(rest) != 1:
            raise ProtocolError("RECORDS takes a count")
        return Records(_int(rest[0]))
    if kind == "ACK":
        if len(rest) != 2 or rest[1] not in ACTIONS:
            raise ProtocolError("ACK takes an id and an action")
        return Ack(_int(rest[0]), rest[1])
    if kind == "ERR":
        return Err(" ".join(rest))
    if kind == "EVENT":
        if len(rest) < 3 or rest[1] not in ("created", "replaced", "deleted"):
            raise ProtocolError("EVENT takes seq, action, id and report fields")
        return Event(_int(rest[0]), rest[1], _int(rest[2]), _parse_report(rest[3:]))
    raise ProtocolError(f"unknown message kind {kind!r}")
