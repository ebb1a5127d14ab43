"""Tagged-output parsing, harness behavior, evaluators, and the bounded
retry loop."""
import json
import random
import textwrap

import pytest

from planweave.actors import (
    DEFAULT_COMMAND,
    EvalContext,
    ExecutionHarness,
    evaluate_success,
    function_names,
    parse_tagged,
    run_actor,
)
from planweave.errors import EvaluatorError, HardError, NoPayload
from planweave.gateway import LlmClient, PromptTemplate, ScriptedBackend
from planweave.model import ActorSpec, default_actor_specs
from planweave.taskio import load_task

SPECS = default_actor_specs()


# --- tagged-output protocol -------------------------------------------

def test_parse_tagged_well_formed():
    text = ("<reason>schema mismatch</reason>\n"
            "<fix>rename the field</fix>\n"
            "```yaml\nfeature_name: x\n```\n")
    out = parse_tagged(text)
    assert out.reason == "schema mismatch"
    assert out.fix == "rename the field"
    assert out.payload == "feature_name: x"
    assert out.terminated is False


def test_parse_tagged_absent_tags_first_attempt():
    # first attempts carry no errors to explain, so tags may be missing
    out = parse_tagged("here you go\n```python\nprint(1)\n```")
    assert out.reason is None
    assert out.fix is None
    assert out.payload == "print(1)"
    assert out.terminated is False


def test_parse_tagged_blank_tags():
    out = parse_tagged("<reason></reason><fix></fix>\n```\nbody\n```")
    assert out.reason == ""
    assert out.fix == ""
    assert out.terminated is False


def test_parse_tagged_terminate():
    text = ("<reason>config lacks the bucket</reason>\n"
            "<fix>TERMINATE</fix>\n"
            "```python\n# abandoned draft\n```")
    out = parse_tagged(text)
    assert out.terminated is True
    assert out.payload == "# abandoned draft"


def test_parse_tagged_terminate_requires_payload_fence():
    with pytest.raises(NoPayload):
        parse_tagged("<reason>stuck</reason><fix>TERMINATE</fix>")


def test_parse_tagged_payload_must_follow_tags():
    # a fence inside the reason text is not the payload
    text = ("<reason>tried ```yaml\nbad\n``` earlier</reason>"
            "<fix>adjust</fix>\n```yaml\ngood: 1\n```")
    assert parse_tagged(text).payload == "good: 1"


def test_parse_tagged_strips_one_trailing_newline():
    assert parse_tagged("```\nline\n\n```").payload == "line\n"
    assert parse_tagged("```\nline\n```").payload == "line"


def test_parse_tagged_language_hint_and_crlf():
    assert parse_tagged("```python\r\nx = 1\r\n```").payload == "x = 1\r"
    assert parse_tagged("``` json \n{}\n```").payload == "{}"


def test_parse_tagged_no_payload():
    with pytest.raises(NoPayload):
        parse_tagged("<reason>r</reason><fix>f</fix> no fence here")


# --- simulated harness sentinel grammar --------------------------------

def test_sim_fail_sentinel():
    harness = ExecutionHarness(kind="simulated")
    result = harness.run_script("x = 1\n# sim: fail KeyError: 'user_id'",
                                filename="s.py")
    assert result.exit_code == 1
    assert "KeyError: 'user_id'" in result.stderr
    bare = harness.run_script("# sim: fail", filename="s.py")
    assert bare.exit_code == 1 and bare.stderr


def test_sim_clean_script_writes_by_default():
    harness = ExecutionHarness(kind="simulated")
    result = harness.run_script("x = 1", filename="s.py")
    assert result.ok and result.wrote_output


def test_sim_no_write_sentinel():
    harness = ExecutionHarness(kind="simulated")
    result = harness.run_script("x = 1\n# sim: no-write", filename="s.py")
    assert result.ok and not result.wrote_output


def test_sim_tests_sentinel():
    harness = ExecutionHarness(kind="simulated")
    result = harness.run_tests("# sim: tests 4/5", filename="t.py")
    assert (result.tests_passed, result.tests_total) == (4, 5)
    missing = harness.run_tests("def test(): pass", filename="t.py")
    assert missing.exit_code == 1
    assert "sim: tests" in missing.stderr


def test_sim_fail_beats_other_sentinels():
    harness = ExecutionHarness(kind="simulated")
    result = harness.run_tests("# sim: tests 9/9\n# sim: fail boom",
                               filename="t.py")
    assert result.exit_code == 1


def test_harness_kind_validated():
    with pytest.raises(ValueError):
        ExecutionHarness(kind="imaginary")


# --- subprocess harness -----------------------------------------------

def test_subprocess_runs_real_script_and_detects_output(tmp_path):
    harness = ExecutionHarness(kind="subprocess", workdir=tmp_path,
                               timeout=30)
    out_file = tmp_path / "result.txt"
    script = textwrap.dedent(f"""
        from pathlib import Path
        Path({str(out_file)!r}).write_text("data")
        print("wrote it")
    """)
    result = harness.run_script(script, filename="writer.py",
                                output_path=out_file)
    assert result.ok
    assert result.wrote_output
    assert "wrote it" in result.stdout


def test_subprocess_nonzero_exit_and_stderr(tmp_path):
    harness = ExecutionHarness(kind="subprocess", workdir=tmp_path,
                               timeout=30)
    result = harness.run_script("raise SystemExit('bad config')",
                                filename="boom.py")
    assert result.exit_code == 1
    assert "bad config" in result.stderr
    assert not result.wrote_output


def test_subprocess_timeout(tmp_path):
    harness = ExecutionHarness(kind="subprocess", workdir=tmp_path,
                               timeout=0.5)
    result = harness.run_script("import time; time.sleep(30)",
                                filename="slow.py")
    assert result.exit_code == 124
    assert "timed out" in result.stderr


def test_subprocess_parses_test_summary(tmp_path):
    harness = ExecutionHarness(kind="subprocess", workdir=tmp_path,
                               timeout=30)
    result = harness.run_tests("print('3 passed, 1 failed in 0.2s')",
                               filename="t.py")
    assert (result.tests_passed, result.tests_total) == (3, 4)


def test_default_command_uses_resolved_interpreter():
    # plain "python" is not on PATH in minimal environments
    assert "{script}" in DEFAULT_COMMAND
    assert DEFAULT_COMMAND.split()[0].endswith("python3")


def test_check_import_static(t0):
    harness = ExecutionHarness(kind="simulated")
    codebase = t0 / "repo"
    ok = harness.check_import(
        "from src.utils.io_helpers import read_parquet_dataset", codebase)
    assert ok is None
    assert harness.check_import("import src.utils.io_helpers",
                                codebase) is None
    missing = harness.check_import(
        "from src.utils.io_helpers import not_a_function", codebase)
    assert "not_a_function" in missing
    nomod = harness.check_import("from src.nope import thing", codebase)
    assert "src.nope" in nomod
    bad = harness.check_import("purloin the codebase", codebase)
    assert "unparseable" in bad


def test_check_import_subprocess(tmp_path):
    (tmp_path / "mylib.py").write_text("def helper():\n    return 1\n")
    harness = ExecutionHarness(kind="subprocess", timeout=30)
    assert harness.check_import("from mylib import helper", tmp_path) is None
    err = harness.check_import("from mylib import ghost", tmp_path)
    assert err is not None and "ghost" in err


# --- evaluators ---------------------------------------------------------

SCHEMA = {"required_fields": {"feature_name": "str", "version": "int",
                              "source_datasets": "list"}}


def _ctx(**kwargs):
    defaults = dict(harness=ExecutionHarness(kind="simulated"),
                    config_schema=SCHEMA)
    defaults.update(kwargs)
    return EvalContext(**defaults)


def test_eval_schema_parse():
    spec = SPECS["config_generator"]
    good = "feature_name: f\nversion: 2\nsource_datasets: [a]\n"
    ok, _ = evaluate_success(spec, good, _ctx())
    assert ok
    missing = "feature_name: f\nversion: 2\n"
    ok, why = evaluate_success(spec, missing, _ctx())
    assert not ok and "source_datasets" in why
    wrong_type = "feature_name: f\nversion: two\nsource_datasets: [a]\n"
    ok, why = evaluate_success(spec, wrong_type, _ctx())
    assert not ok and "version" in why
    ok, why = evaluate_success(spec, "- just\n- a list\n", _ctx())
    assert not ok
    ok, why = evaluate_success(spec, "a: [unclosed", _ctx())
    assert not ok and "parse" in why.lower()


def test_eval_selected_utils(t0):
    spec = SPECS["utils_retriever"]
    ctx = _ctx(codebase=t0 / "repo")
    good = json.dumps([{
        "method_name": "read_parquet_dataset",
        "method_import": "from src.utils.io_helpers import "
                         "read_parquet_dataset"}])
    assert evaluate_success(spec, good, ctx)[0]
    wrapped = json.dumps({"selected": json.loads(good)})
    assert evaluate_success(spec, wrapped, ctx)[0]
    assert evaluate_success(spec, "[]", ctx)[0]          # nothing needed
    bad_import = json.dumps([{"method_name": "x",
                              "method_import": "from src.nope import x"}])
    ok, why = evaluate_success(spec, bad_import, ctx)
    assert not ok and "src.nope" in why
    ok, why = evaluate_success(spec, '[{"method_name": "x"}]', ctx)
    assert not ok and "method_import" in why
    ok, why = evaluate_success(spec, "not json", ctx)
    assert not ok


def test_eval_functions_present():
    spec = SPECS["code_template_generator"]
    payload = "def load():\n    pass\n\ndef compute():\n    pass\n"
    assert evaluate_success(spec, payload, _ctx())[0]
    ok, why = evaluate_success(
        spec, payload, _ctx(required_functions={"load", "write_out"}))
    assert not ok and "write_out" in why
    ok, why = evaluate_success(spec, "x = 1\n", _ctx())
    assert not ok and "no functions" in why
    ok, why = evaluate_success(spec, "def broken(:\n", _ctx())
    assert not ok and "parse" in why


def test_function_names_walks_nested():
    names = function_names(
        "class C:\n    def method(self):\n        pass\n"
        "async def top():\n    pass\n")
    assert names == {"method", "top"}
    assert function_names("def broken(:") == set()


def test_eval_script_runs():
    spec = SPECS["code_generator"]
    ok, why = evaluate_success(spec, "x = 1", _ctx())
    assert ok
    ok, why = evaluate_success(spec, "# sim: fail exploded", _ctx())
    assert not ok and "exploded" in why
    ok, why = evaluate_success(spec, "# sim: no-write", _ctx())
    assert not ok and "wrote nothing" in why


def test_eval_scenarios():
    spec = SPECS["testcase_generator"]

    def scen(n, **overrides):
        item = {"testcase_name": "test_compute", **overrides}
        return json.dumps([dict(item) for _ in range(n)])

    assert evaluate_success(spec, scen(1), _ctx())[0]
    assert evaluate_success(spec, scen(10), _ctx())[0]
    ok, why = evaluate_success(spec, scen(0), _ctx())
    assert not ok and "0" in why
    ok, why = evaluate_success(spec, scen(11), _ctx())
    assert not ok and "11" in why
    ok, why = evaluate_success(spec, '[{"nope": 1}]', _ctx())
    assert not ok and "testcase_name" in why
    # target resolution: explicit field, mocks fallback, name prefix
    explicit = json.dumps([{"testcase_name": "check",
                            "target_function": "compute"}])
    assert evaluate_success(spec, explicit, _ctx())[0]
    mocks = json.dumps([{"testcase_name": "check",
                         "mocks": [{"mocked_function": "reader"}]}])
    assert evaluate_success(spec, mocks, _ctx())[0]
    ok, why = evaluate_success(
        spec, json.dumps([{"testcase_name": "check"}]), _ctx())
    assert not ok and "target" in why


def test_eval_pass_ratio_strictly_above_threshold():
    spec = SPECS["testcase_coder"]
    assert evaluate_success(spec, "# sim: tests 5/5", _ctx())[0]
    assert evaluate_success(spec, "# sim: tests 9/10", _ctx())[0]
    # 0.8 exactly does not clear a strict threshold
    ok, why = evaluate_success(spec, "# sim: tests 8/10", _ctx())
    assert not ok and "0.8" in why
    ok, why = evaluate_success(spec, "# sim: tests 0/0", _ctx())
    assert not ok and "no test results" in why


def test_evaluate_success_unknown_kind():
    rogue = ActorSpec(name="rogue", description="", arg_names=("a",),
                      success_kind="vibes")
    with pytest.raises(EvaluatorError):
        evaluate_success(rogue, "", _ctx())


# --- retry loop ---------------------------------------------------------

TEMPLATE = PromptTemplate(name="testcase_generator",
                          body="SCENARIOS FOR {planner_input}")
GEN = SPECS["testcase_generator"]

GOOD = '[{"testcase_name": "test_compute"}]'
BAD = "[]"


def _resp(payload, reason="why", fix="how"):
    return (f"<reason>{reason}</reason>\n<fix>{fix}</fix>\n"
            f"```json\n{payload}\n```")


class _Recorder:
    """Backend wrapper capturing every prompt sent."""

    def __init__(self, responses):
        self.inner = ScriptedBackend(responses)
        self.prompts = []

    def complete(self, request):
        self.prompts.append(request.prompt)
        return self.inner.complete(request)


def _run(responses):
    backend = _Recorder(responses)
    outcome = run_actor(GEN, {"planner_input": "go"}, LlmClient(backend),
                        TEMPLATE, _ctx())
    return outcome, backend.prompts


def test_retry_first_attempt_success():
    outcome, prompts = _run([_resp(GOOD)])
    assert outcome.success and outcome.attempts == 1
    assert prompts == ["SCENARIOS FOR go"]
    assert outcome.artifacts == [("testcase_definitions", GOOD)]
    assert outcome.error_log == []


def test_retry_accumulates_prior_errors_in_prompts():
    outcome, prompts = _run(
        [_resp(BAD, fix="add one"), _resp(BAD, fix="add two"), _resp(GOOD)])
    assert outcome.success and outcome.attempts == 3
    assert "PREVIOUS ATTEMPT ERRORS" not in prompts[0]
    assert "PREVIOUS ATTEMPT ERRORS:" in prompts[1]
    assert "--- attempt 1 ---" in prompts[1]
    assert "--- attempt 2 ---" not in prompts[1]
    assert "--- attempt 2 ---" in prompts[2]
    # the evaluator's evidence is what future attempts see
    assert "scenario count 0" in prompts[1]
    assert len(outcome.error_log) == 2


def test_retry_caps_at_five_attempts():
    outcome, prompts = _run([_resp(BAD)] * 9)
    assert not outcome.success
    assert outcome.attempts == 5
    assert len(prompts) == 5
    assert len(outcome.error_log) == 5
    assert not outcome.terminated


def test_retry_terminate_stops_immediately():
    outcome, prompts = _run(
        [_resp(BAD), _resp("# giving up", fix="TERMINATE: need help")])
    assert outcome.terminated
    assert not outcome.success
    assert outcome.attempts == 2
    assert outcome.fix_tag == "TERMINATE: need help"
    # the abandoned draft still travels as an artifact
    assert outcome.artifacts == [("testcase_definitions", "# giving up")]


def test_retry_missing_payload_counts_as_attempt():
    outcome, prompts = _run(["no fence in sight", _resp(GOOD)])
    assert outcome.success and outcome.attempts == 2
    assert "no fenced payload" in prompts[1]


def test_retry_backend_exhaustion_is_hard_error():
    backend = _Recorder([])
    with pytest.raises(HardError):
        run_actor(GEN, {"planner_input": "go"}, LlmClient(backend),
                  TEMPLATE, _ctx())
    # exactly one internal retry happened before giving up
    assert len(backend.prompts) == 2


def test_retry_attempt_count_property():
    """Property over randomized failure prefixes: attempts is always
    min(failures + 1, 5) and never exceeds the cap."""
    rng = random.Random(97)
    for _ in range(300):
        n_fail = rng.randrange(0, 8)
        kind = rng.choice(["eval", "nopayload"])
        bad = _resp(BAD) if kind == "eval" else "fenceless chatter"
        outcome, prompts = _run([bad] * n_fail + [_resp(GOOD)])
        assert outcome.attempts <= 5
        assert outcome.attempts == min(n_fail + 1, 5)
        assert outcome.success == (n_fail < 5)
        assert len(prompts) == outcome.attempts
