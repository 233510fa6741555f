import json
import subprocess
import sys

import pytest

from lakekernel.cli import main

POLICY = """\
whitelist = ["pandas==2.0", "polars==0.88"]
[[role]]
name = "engineer"
permissions = ["ReadTable:*:*", "WriteBranch:*", "CreateBranch:*", "MergeInto:*", "RunPipeline:*", "RegisterVerifier"]
[[role]]
name = "reporter"
permissions = ["ReadTable:main:*"]
[[principal]]
name = "dana"
roles = ["engineer"]
[[principal]]
name = "intern"
roles = ["reporter"]
"""

RAW = "k:int64,x:int64\n1,10\n2,20\n"

PIPE = """\
pipeline duo
node t_a:
  inputs: raw
  env: runtime=python3.10 packages=[pandas==2.0]
  materialize: REPLACE
  query: SELECT k, x + 1 AS x FROM raw
node t_b:
  inputs: t_a
  env: runtime=python3.11 packages=[polars==0.88]
  materialize: REPLACE
  query: SELECT k, x * 2 AS x FROM t_a
"""


@pytest.fixture
def env(tmp_path):
    data = tmp_path / "lake"
    policy = tmp_path / "policy.toml"
    policy.write_text(POLICY)
    csv = tmp_path / "raw.csv"
    csv.write_text(RAW)
    pipe = tmp_path / "duo.pipe"
    pipe.write_text(PIPE)
    assert main(["--data-dir", str(data), "init", "--policy", str(policy)]) == 0
    assert main(["--data-dir", str(data), "table", "import", "raw",
                 "--csv", str(csv), "--as", "dana"]) == 0
    return {"data": str(data), "pipe": str(pipe), "tmp": tmp_path}


def run_json(capsys, argv):
    code = main(argv + ["--json"])
    out = capsys.readouterr().out.strip().split("\n")[-1]
    return code, json.loads(out)


def test_init_is_idempotent(env, capsys):
    code, body = run_json(capsys, ["--data-dir", env["data"], "init"])
    assert code == 0 and len(body["root"]) == 64


def test_usage_error_exits_2(env):
    with pytest.raises(SystemExit) as exc:
        main(["--data-dir", env["data"], "branch"])  # missing action
    assert exc.value.code == 2


def test_mutating_command_requires_principal(env):
    with pytest.raises(SystemExit) as exc:
        main(["--data-dir", env["data"], "branch", "create", "dev"])
    assert exc.value.code == 2


def test_branch_create_list_delete(env, capsys):
    code, body = run_json(capsys, ["--data-dir", env["data"], "branch", "create",
                                   "dev", "--from", "main", "--as", "dana"])
    assert code == 0
    code, body = run_json(capsys, ["--data-dir", env["data"], "branch", "list"])
    assert code == 0 and set(body["branches"]) == {"main", "dev"}
    code, body = run_json(capsys, ["--data-dir", env["data"], "branch", "delete",
                                   "dev", "--as", "dana"])
    assert code == 0 and body["deleted"] is True


def test_query_json_schema(env, capsys):
    code, body = run_json(capsys, [
        "--data-dir", env["data"], "query",
        "SELECT count(*) AS n FROM raw", "--ref", "main", "--as", "dana"])
    assert code == 0
    assert body == {"columns": [["n", "int64"]], "rows": [[2]]}


def test_query_denied_for_unknown_principal(env, capsys):
    code, body = run_json(capsys, [
        "--data-dir", env["data"], "query", "SELECT k FROM raw",
        "--as", "nobody"])
    assert code == 1
    assert body["error"] == "Denied"


def test_run_success_and_fault(env, capsys):
    code, body = run_json(capsys, ["--data-dir", env["data"], "run", env["pipe"],
                                   "--branch", "main", "--as", "dana"])
    assert code == 0
    assert body["outcome"]["kind"] == "merged"

    code, head_before = run_json(capsys, ["--data-dir", env["data"], "log", "main"])
    code, body = run_json(capsys, ["--data-dir", env["data"], "run", env["pipe"],
                                   "--branch", "main", "--fail-after", "t_a",
                                   "--as", "dana"])
    assert code == 1
    assert body["outcome"]["kind"] == "failed_open"
    _, head_after = run_json(capsys, ["--data-dir", env["data"], "log", "main"])
    assert head_before["commits"][0]["id"] == head_after["commits"][0]["id"]


def test_dry_run(env, capsys):
    code, body = run_json(capsys, ["--data-dir", env["data"], "run", env["pipe"],
                                   "--dry-run", "--as", "dana"])
    assert code == 0
    assert body["outcome"]["kind"] == "dry_run"
    assert body["outcome"]["node_order"] == ["t_a", "t_b"]


def test_merge_denied_exit_1(env, capsys):
    main(["--data-dir", env["data"], "branch", "create", "feature",
          "--as", "dana"])
    code, body = run_json(capsys, ["--data-dir", env["data"], "merge", "feature",
                                   "--into", "main", "--as", "intern"])
    assert code == 1
    assert body["error"] == "Denied"
    assert "MergeInto" in body["reason"]


def test_verifier_cli_flow(env, capsys):
    assert main(["--data-dir", env["data"], "verifier", "register",
                 "--name", "nonempty", "--pipeline", "duo",
                 "--check", "SELECT count(*) > 0 AS ok FROM t_b",
                 "--as", "dana"]) == 0
    code, body = run_json(capsys, ["--data-dir", env["data"], "verifier", "list"])
    assert code == 0 and body["verifiers"][0]["name"] == "nonempty"
    code, body = run_json(capsys, ["--data-dir", env["data"], "run", env["pipe"],
                                   "--no-merge", "--as", "dana"])
    assert code == 0 and body["outcome"]["kind"] == "succeeded_open"
    run_id = body["run_id"]
    code, body = run_json(capsys, ["--data-dir", env["data"], "verifier", "run",
                                   "--run-id", run_id])
    assert code == 0
    assert body["verdicts"][0]["verdict"] == "pass"


def test_runs_list_show_cleanup(env, capsys):
    code, body = run_json(capsys, ["--data-dir", env["data"], "run", env["pipe"],
                                   "--fail-after", "t_a", "--as", "dana"])
    run_id = body["run_id"]
    code, body = run_json(capsys, ["--data-dir", env["data"], "runs", "list"])
    assert code == 0 and body["runs"][0]["run_id"] == run_id
    code, body = run_json(capsys, ["--data-dir", env["data"], "runs", "show", run_id])
    assert code == 0 and body["outcome"]["kind"] == "failed_open"
    code, body = run_json(capsys, ["--data-dir", env["data"], "runs", "cleanup",
                                   run_id, "--as", "dana"])
    assert code == 0 and body["deleted_branch"] is True


def test_heal_and_approve_cli(env, capsys, tmp_path):
    bad = tmp_path / "bad.pipe"
    bad.write_text(PIPE.replace("x + 1", "x / (k - 1)"))
    patches = tmp_path / "patches"
    patches.mkdir()
    (patches / "01.pipe").write_text(
        PIPE.replace("x + 1", "x / (k - 1)")
            .replace("FROM raw", "FROM raw WHERE NOT (k = 1)"))
    code, body = run_json(capsys, ["--data-dir", env["data"], "run", str(bad),
                                   "--as", "dana"])
    assert code == 1
    run_id = body["run_id"]
    code, body = run_json(capsys, ["--data-dir", env["data"], "heal",
                                   "--run", run_id, "--patches", str(patches),
                                   "--budget", "2", "--as", "dana"])
    assert code == 0
    branch = body["proposal"]
    code, body = run_json(capsys, ["--data-dir", env["data"], "approve",
                                   "--proposal", branch, "--as", "intern"])
    assert code == 1 and body["error"] == "Denied"
    code, body = run_json(capsys, ["--data-dir", env["data"], "approve",
                                   "--proposal", branch, "--as", "dana"])
    assert code == 0 and body["kind"] in ("fast_forward", "merge_commit")


def test_simulate_and_check_cli(env, capsys, tmp_path):
    out = tmp_path / "trace.json"
    code, body = run_json(capsys, ["--data-dir", env["data"], "simulate",
                                   "--agents", "2", "--ops", "10", "--seed", "4",
                                   "--out", str(out)])
    assert code == 0
    assert body["isolation_violations"] == 0
    code, body = run_json(capsys, ["--data-dir", env["data"], "check",
                                   "--trace", str(out)])
    assert code == 0
    assert body["isolation"]["ok"] is True


def test_check_flags_torn_trace(env, capsys, tmp_path):
    from lakekernel.harness import Trace, TraceEvent
    torn = Trace({}, "main", {}, {}, {"c": {"a": "s1", "b": "s1"}},
                 [TraceEvent(1, 0, "scan", {"reads": [["a", "s1"], ["b", "s2"]]})])
    path = tmp_path / "torn.json"
    torn.save(path)
    code, body = run_json(capsys, ["--data-dir", env["data"], "check",
                                   "--trace", str(path)])
    assert code == 1
    assert body["isolation"]["ok"] is False


def test_domain_error_json_shape(env, capsys):
    code, body = run_json(capsys, ["--data-dir", env["data"], "log", "nope"])
    assert code == 1
    assert set(body) == {"error", "reason"}
    assert body["error"] == "UnknownRef"


def test_console_entry_point_subprocess(env):
    proc = subprocess.run(
        [sys.executable, "-m", "lakekernel.cli", "--data-dir", env["data"],
         "--json", "branch", "list"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "main" in json.loads(proc.stdout)["branches"]


def test_env_var_principal(env, capsys, monkeypatch):
    monkeypatch.setenv("LAKE_PRINCIPAL", "dana")
    code, body = run_json(capsys, ["--data-dir", env["data"], "query",
                                   "SELECT k FROM raw"])
    assert code == 0
    assert body["rows"] == [[1], [2]]
