"""Trace model for the concurrency harness.

A trace is an append-only, globally sequenced record of observed events
plus the table maps of every commit those events touched, so isolation
and serializability can be checked offline from the JSON alone.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    agent: int
    op: str
    fields: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "agent": self.agent, "op": self.op,
                "fields": self.fields}

    @staticmethod
    def from_json(body: dict) -> "TraceEvent":
        return TraceEvent(body["seq"], body["agent"], body["op"], body["fields"])


@dataclass
class Trace:
    workload: dict
    target: str
    initial_map: dict
    final_map: dict
    commits: dict = field(default_factory=dict)  # commit id -> table map
    events: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "workload": self.workload,
            "target": self.target,
            "initial_map": self.initial_map,
            "final_map": self.final_map,
            "commits": self.commits,
            "events": [e.to_json() for e in self.events],
        }

    @staticmethod
    def from_json(body: dict) -> "Trace":
        return Trace(body["workload"], body["target"], body["initial_map"],
                     body["final_map"], body["commits"],
                     [TraceEvent.from_json(e) for e in body["events"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True),
                              "utf-8")

    @staticmethod
    def load(path) -> "Trace":
        return Trace.from_json(json.loads(Path(path).read_text("utf-8")))


class TraceRecorder:
    """Thread-safe builder handing out global sequence numbers."""

    def __init__(self, workload: dict, target: str):
        self._lock = threading.Lock()
        self._trace = Trace(workload, target, {}, {})

    def record(self, agent: int, op: str, fields: dict) -> int:
        with self._lock:
            seq = len(self._trace.events) + 1
            self._trace.events.append(TraceEvent(seq, agent, op, fields))
            return seq

    def register_commit(self, commit_id: str, table_map: dict) -> None:
        with self._lock:
            self._trace.commits.setdefault(commit_id, dict(table_map))

    def finish(self, initial_map: dict, final_map: dict) -> Trace:
        self._trace.initial_map = dict(initial_map)
        self._trace.final_map = dict(final_map)
        return self._trace
