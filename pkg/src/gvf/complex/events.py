"""Timestamped multimodal event records and their JSONL serialization."""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

from ..errors import UnresolvedIdError, ValidationError
from .simplicial import NodeKind


class Proximity(NamedTuple):
    t: float
    agent_i: str
    agent_j: str
    rssi: float


class Physio(NamedTuple):
    t: float
    agent: str
    channel: str
    value: float


class Dwell(NamedTuple):
    t: float
    agent: str
    sensor: str
    duration: float  # minutes


class Link(NamedTuple):
    agent: str
    external: str


@dataclass
class EventStream:
    """Raw records feeding complex construction.

    ``nodes`` optionally declares the population as ``{id: NodeKind}``.
    When it is non-empty every referenced id must appear in it; otherwise
    kinds are inferred from the role an id plays in the records.
    """

    proximity: list = field(default_factory=list)
    physio: list = field(default_factory=list)
    dwell: list = field(default_factory=list)
    links: list = field(default_factory=list)
    nodes: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.proximity) + len(self.physio) + len(self.dwell) + len(self.links)

    def time_range(self):
        ts = [r.t for r in self.proximity] + [r.t for r in self.physio] + [r.t for r in self.dwell]
        if not ts:
            return None
        return min(ts), max(ts)

    def resolve_kinds(self):
        """Return ``{id: NodeKind}`` for every id referenced by a record.

        Raises :class:`UnresolvedIdError` with the index of the offending
        record (position in :meth:`records` order) when an id is undeclared
        or plays two incompatible roles.
        """
        kinds = {k: NodeKind(v) for k, v in self.nodes.items()}
        declared = bool(kinds)

        def claim(vid, kind, index, allowed=None):
            allowed = allowed or (kind,)
            if vid in kinds:
                if kinds[vid] not in allowed:
                    raise UnresolvedIdError(f"id {vid!r} used as {kind.value} but is {kinds[vid].value}", index)
            elif declared:
                raise UnresolvedIdError(f"undeclared id {vid!r}", index)
            else:
                kinds[vid] = kind

        for index, rec in enumerate(self.records()):
            if isinstance(rec, Proximity):
                claim(rec.agent_i, NodeKind.AGENT, index)
                claim(rec.agent_j, NodeKind.AGENT, index)
                if rec.agent_i == rec.agent_j:
                    raise UnresolvedIdError(f"proximity record pairs {rec.agent_i!r} with itself", index)
            elif isinstance(rec, Physio):
                claim(rec.agent, NodeKind.AGENT, index)
            elif isinstance(rec, Dwell):
                claim(rec.agent, NodeKind.AGENT, index)
                claim(rec.sensor, NodeKind.ENV_SENSOR, index)
            else:
                claim(rec.agent, NodeKind.AGENT, index)
                claim(rec.external, NodeKind.EXTERNAL, index, (NodeKind.EXTERNAL, NodeKind.SPATIAL_CELL))
        return kinds

    def records(self):
        return [*self.proximity, *self.physio, *self.dwell, *self.links]

    def validate(self):
        """Check per-class timestamp ordering and id resolution."""
        for name in ("proximity", "physio", "dwell"):
            recs = getattr(self, name)
            for a, b in zip(recs, recs[1:]):
                if b.t < a.t:
                    raise ValidationError(f"{name} timestamps decrease at t={b.t}")
        return self.resolve_kinds()


_TAGS = {Proximity: "prox", Physio: "phys", Dwell: "dwell", Link: "link"}


def _record_to_json(rec):
    if isinstance(rec, Proximity):
        return {"type": "prox", "t": rec.t, "i": rec.agent_i, "j": rec.agent_j, "rssi": rec.rssi}
    if isinstance(rec, Physio):
        return {"type": "phys", "t": rec.t, "agent": rec.agent, "channel": rec.channel, "value": rec.value}
    if isinstance(rec, Dwell):
        return {"type": "dwell", "t": rec.t, "agent": rec.agent, "sensor": rec.sensor, "duration": rec.duration}
    return {"type": "link", "agent": rec.agent, "external": rec.external}


def write_jsonl(stream, path):
    with open(path, "w", encoding="utf-8") as fh:
        for vid, kind in sorted(stream.nodes.items()):
            fh.write(json.dumps({"type": "node", "id": vid, "kind": NodeKind(kind).value}) + "\n")
        for rec in stream.records():
            fh.write(json.dumps(_record_to_json(rec)) + "\n")


def read_jsonl(path):
    stream = EventStream()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                tag = d["type"]
                if tag == "prox":
                    stream.proximity.append(Proximity(float(d["t"]), str(d["i"]), str(d["j"]), float(d["rssi"])))
                elif tag == "phys":
                    stream.physio.append(Physio(float(d["t"]), str(d["agent"]), str(d["channel"]), float(d["value"])))
                elif tag == "dwell":
                    stream.dwell.append(Dwell(float(d["t"]), str(d["agent"]), str(d["sensor"]), float(d["duration"])))
                elif tag == "link":
                    stream.links.append(Link(str(d["agent"]), str(d["external"])))
                elif tag == "node":
                    stream.nodes[str(d["id"])] = NodeKind(d["kind"])
                else:
                    raise ValidationError(f"unknown record type {tag!r} on line {lineno + 1}")
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise ValidationError(f"malformed record on line {lineno + 1}: {exc}") from exc
    return stream
