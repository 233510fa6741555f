"""Parser and deterministic executor for the declarative pipeline DSL."""

from .executor import execute_plan, execute_query
from .pipeline import EnvSpec, NodeSpec, PipelineSpec, format_pipeline, parse_pipeline
from .planner import QueryPlan, analyze_query, plan
from .queries import (
    Aggregate,
    BinaryOp,
    ColumnRef,
    JoinClause,
    Literal,
    NotOp,
    QueryAst,
    SelectItem,
    format_expr,
    format_query,
    parse_query,
)

__all__ = [
    "Aggregate", "BinaryOp", "ColumnRef", "EnvSpec", "JoinClause", "Literal",
    "NodeSpec", "NotOp", "PipelineSpec", "QueryAst", "QueryPlan", "SelectItem",
    "analyze_query", "execute_plan", "execute_query", "format_expr",
    "format_pipeline", "format_query", "parse_pipeline", "parse_query", "plan",
]
