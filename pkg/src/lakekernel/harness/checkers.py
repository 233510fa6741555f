"""Offline checkers over recorded traces.

Isolation: every multi-table read group must be explainable by a single
commit's table map — a mix of versions that no commit ever contained is a
torn read. Serializability: some permutation of the successful merges,
applied sequentially to the initial state, must reproduce the final
table map of the target branch (brute force, bounded)."""
from __future__ import annotations

from itertools import permutations

from ..errors import TooLarge
from .trace import Trace

SERIALIZABILITY_BOUND = 6


def check_isolation(trace: Trace) -> list[dict]:
    """Empty list means Ok; otherwise one entry per torn read group."""
    violations = []
    maps = list(trace.commits.values())
    for event in trace.events:
        reads = event.fields.get("reads")
        if not reads:
            continue
        explained = any(
            all(m.get(table) == snapshot for table, snapshot in reads)
            for m in maps
        )
        if not explained:
            violations.append({"seq": event.seq, "agent": event.agent,
                               "reads": list(reads)})
    return violations


def _merge_deltas(trace: Trace) -> list[tuple[int, dict]]:
    out = []
    for event in trace.events:
        delta = event.fields.get("published_delta")
        if delta:
            out.append((event.seq, delta))
    return out


def check_serializability(trace: Trace) -> tuple[bool, list[int] | None]:
    """(True, witness seq order) if the merges serialize, (False, None) if
    no permutation reproduces the final state. Raises TooLarge beyond the
    brute-force bound."""
    merges = _merge_deltas(trace)
    if len(merges) > SERIALIZABILITY_BOUND:
        raise TooLarge(f"{len(merges)} merges exceed the bound "
                       f"of {SERIALIZABILITY_BOUND}")
    final = dict(trace.final_map)
    for order in permutations(merges):
        state = dict(trace.initial_map)
        for _, delta in order:
            state.update(delta)
        if state == final:
            return True, [seq for seq, _ in order]
    return False, None
