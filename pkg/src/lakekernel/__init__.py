"""lakekernel: a desk-scale lakehouse kernel with Git-like versioned
tables, transactional pipeline runs, RBAC governance and a verifier-gated
self-healing loop."""

from .catalog import DELETE, Catalog, Commit, MergeResult, ReadSession
from .errors import LakeError
from .kernel import LakeKernel
from .runner import RunOptions, RunReport
from .store import Schema, SnapshotStore, TableData, decode_table, encode_table

__version__ = "0.1.0"

__all__ = [
    "Catalog", "Commit", "DELETE", "LakeError", "LakeKernel", "MergeResult",
    "ReadSession", "RunOptions", "RunReport", "Schema", "SnapshotStore",
    "TableData", "decode_table", "encode_table", "__version__",
]
