import random

import pytest

from lakekernel.engine import (
    format_pipeline,
    parse_pipeline,
    plan,
)
from lakekernel.errors import CycleOrForwardRef, ParseError, QueryTypeError, UnknownInput
from lakekernel.store import Schema

TAXI = """\
pipeline taxi
node parent:
  inputs: taxi_trips, taxi_zones
  env: runtime=python3.10 packages=[pandas==2.0]
  materialize: REPLACE
  query: SELECT taxi_trips.zone_id AS zone_id, count(*) AS trips
    FROM taxi_trips JOIN taxi_zones ON taxi_trips.zone_id = taxi_zones.zone_id
    GROUP BY taxi_trips.zone_id
node child:
  inputs: parent
  env: runtime=python3.11 packages=[polars==0.88]
  materialize: REPLACE
  query: SELECT zone_id, trips * 2 AS double_trips FROM parent
"""


def test_parse_two_node_taxi_pipeline():
    spec = parse_pipeline(TAXI)
    assert spec.name == "taxi"
    assert spec.node_names() == ["parent", "child"]
    assert spec.nodes[0].inputs == ("taxi_trips", "taxi_zones")
    assert spec.nodes[1].inputs == ("parent",)
    assert spec.source_tables() == ["taxi_trips", "taxi_zones"]
    assert spec.nodes[0].env.runtime == "python3.10"
    assert spec.nodes[0].env.packages == ("pandas==2.0",)
    assert spec.nodes[0].materialization == "REPLACE"


def test_empty_file_is_parse_error():
    with pytest.raises(ParseError):
        parse_pipeline("")
    with pytest.raises(ParseError):
        parse_pipeline("   \n  \n")


def test_pipeline_without_nodes_rejected():
    with pytest.raises(ParseError):
        parse_pipeline("pipeline empty\n")


def test_forward_reference_rejected():
    text = """\
pipeline bad
node first:
  inputs: second
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT a FROM second
node second:
  inputs: src
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT a FROM src
"""
    with pytest.raises(CycleOrForwardRef):
        parse_pipeline(text)


def test_self_reference_rejected():
    text = """\
pipeline bad
node loop:
  inputs: loop
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT a FROM loop
"""
    with pytest.raises(CycleOrForwardRef):
        parse_pipeline(text)


def test_duplicate_node_rejected():
    text = TAXI + """\
node child:
  inputs: parent
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT zone_id FROM parent
"""
    with pytest.raises(ParseError):
        parse_pipeline(text)


def test_unknown_materialization_rejected():
    text = TAXI.replace("materialize: REPLACE", "materialize: APPEND", 1)
    with pytest.raises(ParseError) as exc:
        parse_pipeline(text)
    assert "materialization" in str(exc.value)


def test_malformed_env_rejected():
    text = TAXI.replace("env: runtime=python3.10 packages=[pandas==2.0]",
                        "env: packages=[pandas==2.0]", 1)
    with pytest.raises(ParseError):
        parse_pipeline(text)
    text = TAXI.replace("pandas==2.0", "pandas=2.0", 1)
    with pytest.raises(ParseError):
        parse_pipeline(text)


def test_parse_error_carries_line_number():
    text = ("pipeline p\n"
            "node n:\n"
            "  inputs: src\n"
            "  env: oops\n"
            "  materialize: REPLACE\n"
            "  query: SELECT a FROM src\n")
    with pytest.raises(ParseError) as exc:
        parse_pipeline(text)
    assert exc.value.line == 4


def test_format_parse_roundtrip():
    spec = parse_pipeline(TAXI)
    assert parse_pipeline(format_pipeline(spec)) == spec


# --- planning ------------------------------------------------------------------

def _linear(n):
    lines = ["pipeline linear"]
    prev = "src"
    for i in range(n):
        name = f"n{i}"
        lines += [f"node {name}:",
                  f"  inputs: {prev}",
                  "  env: runtime=py packages=[]",
                  "  materialize: REPLACE",
                  f"  query: SELECT a FROM {prev}"]
        prev = name
    return "\n".join(lines) + "\n"


def test_plan_linear_order():
    spec = parse_pipeline(_linear(3))
    ordered, schemas = plan(spec, {"src": Schema.of("a:int64")})
    assert [n.name for n in ordered] == ["n0", "n1", "n2"]
    assert schemas == {f"n{i}": Schema.of("a:int64") for i in range(3)}


DIAMOND = """\
pipeline diamond
node left:
  inputs: src
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT k, a + 1 AS l FROM src
node right:
  inputs: src
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT k, a * 2 AS r FROM src
node bottom:
  inputs: left, right
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT left.k AS k, l + r AS total FROM left JOIN right ON left.k = right.k
"""


def test_plan_diamond_is_declaration_stable_topological_order():
    spec = parse_pipeline(DIAMOND)
    ordered, schemas = plan(spec, {"src": Schema.of("k:int64", "a:int64")})
    names = [n.name for n in ordered]
    assert names == ["left", "right", "bottom"]
    # oracle: the result is a topological order of the induced DAG
    seen = set(spec.source_tables())
    for node in ordered:
        assert all(i in seen for i in node.inputs)
        seen.add(node.name)
    assert schemas["bottom"] == Schema.of("k:int64", "total:int64")


def test_plan_random_dags_are_topological():
    rng = random.Random(55)
    for _ in range(30):
        n = rng.randint(1, 7)
        lines = ["pipeline rnd"]
        produced = ["src"]
        for i in range(n):
            inputs = sorted(set(rng.choices(produced, k=rng.randint(1, 2))))
            lines += [f"node n{i}:",
                      f"  inputs: {', '.join(inputs)}",
                      "  env: runtime=py packages=[]",
                      "  materialize: REPLACE",
                      f"  query: SELECT a FROM {inputs[0]}"]
            produced.append(f"n{i}")
        spec = parse_pipeline("\n".join(lines) + "\n")
        ordered, _ = plan(spec, {"src": Schema.of("a:int64")})
        seen = {"src"}
        for node in ordered:
            assert all(i in seen for i in node.inputs)
            seen.add(node.name)
        assert [n.name for n in ordered] == spec.node_names()  # stable


def test_plan_missing_source():
    spec = parse_pipeline(_linear(1))
    with pytest.raises(UnknownInput):
        plan(spec, {})


def test_plan_type_error_names_node():
    text = """\
pipeline p
node agg:
  inputs: src
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT sum(name) AS s FROM src
"""
    spec = parse_pipeline(text)
    with pytest.raises(QueryTypeError) as exc:
        plan(spec, {"src": Schema.of("name:string")})
    assert "agg" in str(exc.value)


def test_query_not_over_declared_inputs_rejected():
    text = """\
pipeline p
node n:
  inputs: src
  env: runtime=py packages=[]
  materialize: REPLACE
  query: SELECT a FROM other
"""
    spec = parse_pipeline(text)
    with pytest.raises(UnknownInput):
        plan(spec, {"src": Schema.of("a:int64"), "other": Schema.of("a:int64")})
