"""Git-like versioned catalog over tables.

Commits are immutable nodes of a history DAG mapping table names to
snapshot ids; branches are mutable refs advanced only by compare-and-swap
under an advisory file lock, so the CAS is a real linearization point on
disk shared by threads and processes alike. Branching and merging move
references only — they never touch snapshot content.
"""
from __future__ import annotations

import fcntl
import hashlib
import json
import re
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BranchExists,
    LakeError,
    NoCommonAncestor,
    StaleHead,
    UnknownBranch,
    UnknownRef,
    UnknownSnapshot,
    UnknownTable,
)
from .store import SnapshotStore, TableData
from .util import SystemClock, atomic_write

_BRANCH_RE = re.compile(r"^[a-z0-9_/.\-]+$")
_HEX_RE = re.compile(r"^[0-9a-f]{64}$")


class _Delete:
    def __repr__(self):
        return "DELETE"


DELETE = _Delete()


@dataclass(frozen=True)
class Commit:
    id: str
    parents: tuple[str, ...]
    tables: dict  # table name -> snapshot id
    author: str
    message: str
    timestamp: int

    def body_json(self) -> bytes:
        body = {
            "author": self.author,
            "message": self.message,
            "parents": list(self.parents),
            "tables": dict(sorted(self.tables.items())),
            "timestamp": self.timestamp,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @staticmethod
    def make(parents, tables, author, message, timestamp) -> "Commit":
        c = Commit("", tuple(parents), dict(tables), author, message, timestamp)
        return Commit(hashlib.sha256(c.body_json()).hexdigest(),
                      c.parents, c.tables, author, message, timestamp)

    @staticmethod
    def from_body(commit_id: str, data: bytes) -> "Commit":
        body = json.loads(data)
        return Commit(commit_id, tuple(body["parents"]), dict(body["tables"]),
                      body["author"], body["message"], body["timestamp"])


@dataclass(frozen=True)
class ReadSession:
    """Immutable pin: every read resolves against `pinned`, never a live head."""

    pinned: str
    ref: str  # the ref string the session was opened from, for governance


@dataclass(frozen=True)
class MergeResult:
    kind: str  # fast_forward | merge_commit | conflict | ref_raced
    commit_id: str | None = None
    conflicts: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return self.kind in ("fast_forward", "merge_commit")


FAST_FORWARD = "fast_forward"
MERGE_COMMIT = "merge_commit"
CONFLICT = "conflict"
REF_RACED = "ref_raced"

_MERGE_RETRIES = 5


class Catalog:
    def __init__(self, root: Path, store: SnapshotStore, clock=None):
        self.root = Path(root)
        self.store = store
        self.clock = clock or SystemClock()
        self._commits_dir = self.root / "commits"
        self._commits_dir.mkdir(parents=True, exist_ok=True)
        self._refs_path = self.root / "refs.json"
        self._lock_path = self.root / "refs.lock"
        self._cache: dict[str, Commit] = {}
        self._cache_lock = threading.Lock()

    # -- bootstrap ----------------------------------------------------------

    def init(self, author: str = "system") -> Commit:
        """Create the root commit and main branch if the catalog is fresh."""
        with self._refs_locked() as refs:
            if "main" in refs:
                return self.get_commit(refs["main"])
            root = Commit.make([], {}, author, "root", self.clock.now())
            self._write_commit(root)
            refs["main"] = root.id
            self._save_refs(refs)
            return root

    # -- refs ---------------------------------------------------------------

    def _refs_locked(self):
        catalog = self

        class _Guard:
            def __enter__(self):
                self._fh = open(catalog._lock_path, "a+")
                fcntl.flock(self._fh, fcntl.LOCK_EX)
                return catalog._load_refs()

            def __exit__(self, *exc):
                fcntl.flock(self._fh, fcntl.LOCK_UN)
                self._fh.close()
                return False

        return _Guard()

    def _load_refs(self) -> dict:
        try:
            return json.loads(self._refs_path.read_text("utf-8"))
        except FileNotFoundError:
            return {}

    def _save_refs(self, refs: dict) -> None:
        atomic_write(self._refs_path, json.dumps(refs, sort_keys=True).encode("utf-8"))

    def branches(self) -> dict:
        return self._load_refs()

    def branch_exists(self, name: str) -> bool:
        return name in self._load_refs()

    def head(self, branch: str) -> str:
        refs = self._load_refs()
        if branch not in refs:
            raise UnknownBranch(f"no branch {branch!r}")
        return refs[branch]

    def resolve(self, ref: str) -> str:
        """Branch name or commit id -> commit id."""
        refs = self._load_refs()
        if ref in refs:
            return refs[ref]
        if _HEX_RE.match(ref) and self._commit_path(ref).exists():
            return ref
        raise UnknownRef(f"cannot resolve {ref!r}")

    def create_branch(self, name: str, from_ref: str) -> str:
        if not _BRANCH_RE.match(name):
            raise LakeError(f"bad branch name {name!r}")
        target = self.resolve(from_ref)
        with self._refs_locked() as refs:
            if name in refs:
                raise BranchExists(f"branch {name!r} exists")
            refs[name] = target
            self._save_refs(refs)
        return target

    def delete_branch(self, name: str) -> bool:
        """Remove a ref; tolerant of a missing branch. main is permanent."""
        if name == "main":
            raise LakeError("cannot delete main")
        with self._refs_locked() as refs:
            if name not in refs:
                return False
            del refs[name]
            self._save_refs(refs)
            return True

    # -- commits --------------------------------------------------------------

    def _commit_path(self, commit_id: str) -> Path:
        return self._commits_dir / commit_id

    def _write_commit(self, commit: Commit) -> None:
        path = self._commit_path(commit.id)
        if not path.exists():
            atomic_write(path, commit.body_json())
        with self._cache_lock:
            self._cache[commit.id] = commit

    def get_commit(self, commit_id: str) -> Commit:
        with self._cache_lock:
            cached = self._cache.get(commit_id)
        if cached is not None:
            return cached
        try:
            data = self._commit_path(commit_id).read_bytes()
        except FileNotFoundError:
            raise UnknownRef(f"no commit {commit_id!r}") from None
        commit = Commit.from_body(commit_id, data)
        with self._cache_lock:
            self._cache[commit_id] = commit
        return commit

    def commit_tables(self, branch: str, changes: dict, expected_head: str,
                      author: str, message: str) -> Commit:
        """Apply `changes` (snapshot id or DELETE per table) on top of the
        parent map, advancing the ref only if its head still equals
        expected_head."""
        parent = self.get_commit(expected_head)
        tables = dict(parent.tables)
        for name, change in changes.items():
            if change is DELETE:
                if name not in tables:
                    raise UnknownTable(f"cannot delete absent table {name!r}")
                del tables[name]
            else:
                if not self.store.has_snapshot(change):
                    raise UnknownSnapshot(f"snapshot {change!r} not in store")
                tables[name] = change
        commit = Commit.make([expected_head], tables, author, message, self.clock.now())
        with self._refs_locked() as refs:
            if branch not in refs:
                raise UnknownBranch(f"no branch {branch!r}")
            if refs[branch] != expected_head:
                raise StaleHead(f"{branch} moved to {refs[branch][:12]}, "
                                f"expected {expected_head[:12]}")
            self._write_commit(commit)
            refs[branch] = commit.id
            self._save_refs(refs)
        return commit

    # -- history --------------------------------------------------------------

    def log(self, ref: str) -> list[Commit]:
        """Reverse-chronological first-parent walk down to a root."""
        commit = self.get_commit(self.resolve(ref))
        out = [commit]
        while commit.parents:
            commit = self.get_commit(commit.parents[0])
            out.append(commit)
        return out

    def _is_ancestor(self, maybe_ancestor: str, descendant: str) -> bool:
        seen = {descendant}
        work = deque([descendant])
        while work:
            cid = work.popleft()
            if cid == maybe_ancestor:
                return True
            for p in self.get_commit(cid).parents:
                if p not in seen:
                    seen.add(p)
                    work.append(p)
        return False

    def merge_base(self, a: str, b: str) -> str:
        """A lowest common ancestor; ties resolved by greatest timestamp,
        then lexicographically smallest id."""
        candidates = self._lca_candidates(a, b)
        # a flag walk can surface a candidate that is itself an ancestor of
        # another; drop those so only true LCAs compete in the tie-break
        maximal = [c for c in candidates
                   if not any(c != d and self._is_ancestor(c, d) for d in candidates)]
        if not maximal:
            raise NoCommonAncestor(f"{a[:12]} and {b[:12]} share no root")
        return min(maximal, key=lambda c: (-self.get_commit(c).timestamp, c))

    def _lca_candidates(self, a: str, b: str) -> list[str]:
        # breadth-first flag propagation in the style of git merge-base
        if a == b:
            return [a]
        ANC_A, ANC_B, DNC, LCA = 1, 2, 4, 8
        states = {a: ANC_A, b: ANC_B}
        work = deque([a, b])
        found = []
        while work:
            if all(states[c] & DNC for c in work):
                break
            cid = work.popleft()
            flags = states[cid]
            if flags & ANC_A and flags & ANC_B and not flags & (LCA | DNC):
                states[cid] = flags = flags | LCA
                found.append(cid)
                flags |= DNC  # ancestors of an LCA cannot be better LCAs
            for p in self.get_commit(cid).parents:
                merged = states.get(p, 0) | flags
                if states.get(p) != merged:
                    states[p] = merged
                    work.append(p)
        return [c for c in found if not states[c] & DNC]

    # -- reads ------------------------------------------------------------------

    def open_session(self, ref: str) -> ReadSession:
        return ReadSession(pinned=self.resolve(ref), ref=ref)

    def read_table(self, session: ReadSession, table: str) -> TableData:
        commit = self.get_commit(session.pinned)
        sid = commit.tables.get(table)
        if sid is None:
            raise UnknownTable(f"no table {table!r} at {session.pinned[:12]}")
        return self.store.get_snapshot(sid)

    def table_map(self, ref: str) -> dict:
        return dict(self.get_commit(self.resolve(ref)).tables)

    def diff(self, a: str, b: str) -> list[tuple[str, str]]:
        """Table-level diff from a to b: Added / Removed / Changed."""
        ma = self.table_map(a)
        mb = self.table_map(b)
        out = []
        for name in sorted(set(ma) | set(mb)):
            if name not in ma:
                out.append((name, "Added"))
            elif name not in mb:
                out.append((name, "Removed"))
            elif ma[name] != mb[name]:
                out.append((name, "Changed"))
        return out

    # -- merge --------------------------------------------------------------------

    def merge(self, source: str, target: str, author: str,
              message: str | None = None) -> MergeResult:
        """Three-way table-level merge of source into the target branch.

        Conflict granularity is the table: both sides changing the same
        table since the base aborts with no state change. Retries the ref
        CAS with a recomputed base up to a bound, then reports RefRaced.
        Performs zero snapshot-content reads or writes.
        """
        if not self.branch_exists(target):
            raise UnknownBranch(f"no branch {target!r}")
        for _ in range(1 + _MERGE_RETRIES):
            source_head = self.resolve(source)
            target_head = self.head(target)
            base = self.merge_base(source_head, target_head)
            src_map = self.get_commit(source_head).tables
            tgt_map = self.get_commit(target_head).tables
            base_map = self.get_commit(base).tables
            merged: dict[str, str] = {}
            conflicts = []
            for name in sorted(set(src_map) | set(tgt_map) | set(base_map)):
                b = base_map.get(name)
                s = src_map.get(name)
                t = tgt_map.get(name)
                if s == b:
                    pick = t
                elif t == b:
                    pick = s
                elif s == t:
                    pick = s
                else:
                    conflicts.append(name)
                    continue
                if pick is not None:
                    merged[name] = pick
            if conflicts:
                return MergeResult(CONFLICT, conflicts=tuple(conflicts))
            if target_head == base:
                if self._cas_ref(target, target_head, source_head):
                    return MergeResult(FAST_FORWARD, commit_id=source_head)
                continue
            commit = Commit.make([target_head, source_head], merged, author,
                                 message or f"merge into {target}", self.clock.now())
            with self._refs_locked() as refs:
                if refs.get(target) == target_head:
                    self._write_commit(commit)
                    refs[target] = commit.id
                    self._save_refs(refs)
                    return MergeResult(MERGE_COMMIT, commit_id=commit.id)
        return MergeResult(REF_RACED)

    def _cas_ref(self, branch: str, expected: str, new: str) -> bool:
        with self._refs_locked() as refs:
            if refs.get(branch) != expected:
                return False
            refs[branch] = new
            self._save_refs(refs)
            return True
