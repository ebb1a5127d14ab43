"""Actor execution: tagged-output parsing, the execution harness, the
six success evaluators, and the bounded retry loop.

Every actor response follows the same protocol: optional <reason> and
<fix> tag blocks followed by a fenced payload.  A TERMINATE keyword in
the fix tag stops the retry loop immediately and hands control back to
the planner.  Each failed attempt's error text is carried into the next
attempt's prompt.
"""
from __future__ import annotations

import ast
import json
import logging
import re
import shlex
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BackendUnavailable,
    EvaluatorError,
    HardError,
    NoPayload,
)
from .gateway import LlmClient, PromptTemplate, render
from .model import (
    ARTIFACT_KIND_BY_ACTOR,
    ActorOutcome,
    ActorSpec,
    ERROR_FREE_EXECUTION,
    FUNCTIONS_PRESENT,
    KIND_OTHER,
    PASS_RATIO_ABOVE_THRESHOLD,
    SCENARIO_COUNT_AND_COVERAGE,
    SCHEMA_PARSE,
    SCRIPT_RUNS_AND_WRITES,
    TERMINATE_KEYWORD,
)

log = logging.getLogger(__name__)

PASS_RATIO_THRESHOLD = 0.8          # strictly greater-than
MAX_SCENARIOS = 10
ERROR_TAIL_CHARS = 2000

_REASON_RE = re.compile(r"<reason>(.*?)</reason>", re.DOTALL)
_FIX_RE = re.compile(r"<fix>(.*?)</fix>", re.DOTALL)
_FENCE_RE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\r?\n(.*?)```",
                       re.DOTALL)


@dataclass
class TaggedOutput:
    reason: str | None
    fix: str | None
    payload: str
    terminated: bool


def parse_tagged(text: str) -> TaggedOutput:
    """Extract the first <reason>/<fix> blocks and the first fenced
    payload after them.  Tags may be absent or blank; terminated is true
    iff the fix tag contains the TERMINATE keyword.  Raises NoPayload
    when no fenced block follows."""
    reason_m = _REASON_RE.search(text)
    fix_m = _FIX_RE.search(text)
    reason = reason_m.group(1) if reason_m else None
    fix = fix_m.group(1) if fix_m else None
    search_from = 0
    for m in (reason_m, fix_m):
        if m is not None:
            search_from = max(search_from, m.end())
    payload_m = _FENCE_RE.search(text, search_from)
    if payload_m is None:
        raise NoPayload("no fenced payload block found in actor response")
    payload = payload_m.group(1)
    if payload.endswith("\n"):
        payload = payload[:-1]
    terminated = fix is not None and TERMINATE_KEYWORD in fix
    return TaggedOutput(reason=reason, fix=fix, payload=payload,
                        terminated=terminated)


@dataclass
class HarnessResult:
    exit_code: int
    stdout: str = ""
    stderr: str = ""
    wrote_output: bool = False
    tests_passed: int = 0
    tests_total: int = 0

    @property
    def ok(self) -> bool:
        return self.exit_code == 0


# Resolved interpreter path; plain "python" is not on PATH everywhere.
DEFAULT_COMMAND = f"{sys.executable} {{script}}"

# Sentinel directives the simulated harness grades payloads by.
_SIM_FAIL_RE = re.compile(r"#\s*sim:\s*fail(?:\s+(.*))?$", re.MULTILINE)
_SIM_TESTS_RE = re.compile(r"#\s*sim:\s*tests\s+(\d+)\s*/\s*(\d+)")
_SIM_NO_WRITE_RE = re.compile(r"#\s*sim:\s*no-write")

_PYTEST_PASSED_RE = re.compile(r"(\d+) passed")
_PYTEST_FAILED_RE = re.compile(r"(\d+) failed")
_PYTEST_ERROR_RE = re.compile(r"(\d+) errors?")


@dataclass
class ExecutionHarness:
    """Runs generated scripts either in a subprocess or as a simulated
    grading pass over sentinel markers (CI-friendly, nothing executes).

    command_template is formatted with {script} (and {output} when an
    output path is involved); timeout applies per run.
    """

    kind: str = "simulated"                  # "subprocess" | "simulated"
    command_template: str = DEFAULT_COMMAND
    timeout: float = 120.0
    workdir: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("subprocess", "simulated"):
            raise ValueError(f"bad harness kind: {self.kind!r}")

    def _simulate(self, payload: str, *, tests: bool) -> HarnessResult:
        fail = _SIM_FAIL_RE.search(payload)
        if fail:
            message = fail.group(1) or "simulated failure"
            return HarnessResult(exit_code=1, stderr=message)
        tests_m = _SIM_TESTS_RE.search(payload)
        passed, total = (0, 0)
        if tests_m:
            passed, total = int(tests_m.group(1)), int(tests_m.group(2))
        wrote = _SIM_NO_WRITE_RE.search(payload) is None
        if tests and tests_m is None:
            return HarnessResult(exit_code=1,
                                 stderr="no test results (missing "
                                        "'# sim: tests p/t' sentinel)")
        return HarnessResult(exit_code=0, wrote_output=wrote,
                             tests_passed=passed, tests_total=total)

    def _run_subprocess(self, payload: str, filename: str,
                        output_path: Path | None) -> HarnessResult:
        workdir = self.workdir or Path.cwd()
        workdir.mkdir(parents=True, exist_ok=True)
        script = workdir / filename
        try:
            script.write_text(payload, encoding="utf-8")
        except OSError as exc:
            raise EvaluatorError(f"cannot stage script {script}: {exc}") \
                from exc
        command = self.command_template.format(
            script=str(script),
            output="" if output_path is None else str(output_path))
        try:
            proc = subprocess.run(
                shlex.split(command), cwd=workdir, capture_output=True,
                text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired:
            return HarnessResult(
                exit_code=124,
                stderr=f"timed out after {self.timeout:.0f}s")
        except (OSError, ValueError) as exc:
            raise EvaluatorError(f"harness command failed to launch: "
                                 f"{exc}") from exc
        wrote = False
        if output_path is not None:
            p = Path(output_path)
            wrote = p.is_file() and p.stat().st_size > 0 or \
                p.is_dir() and any(p.iterdir())
        passed = failed = 0
        for regex, slot in ((_PYTEST_PASSED_RE, "p"),
                            (_PYTEST_FAILED_RE, "f"),
                            (_PYTEST_ERROR_RE, "f")):
            m = regex.search(proc.stdout) or regex.search(proc.stderr)
            if m:
                if slot == "p":
                    passed = int(m.group(1))
                else:
                    failed += int(m.group(1))
        return HarnessResult(exit_code=proc.returncode,
                             stdout=proc.stdout, stderr=proc.stderr,
                             wrote_output=wrote, tests_passed=passed,
                             tests_total=passed + failed)

    def run_script(self, payload: str, *, filename: str,
                   output_path: Path | None = None) -> HarnessResult:
        if self.kind == "simulated":
            return self._simulate(payload, tests=False)
        return self._run_subprocess(payload, filename, output_path)

    def run_tests(self, payload: str, *, filename: str) -> HarnessResult:
        if self.kind == "simulated":
            return self._simulate(payload, tests=True)
        return self._run_subprocess(payload, filename, None)

    def check_import(self, import_line: str, codebase: Path) -> str | None:
        """Returns None when the import loads, else the error message.
        Simulated mode resolves statically against the codebase files;
        subprocess mode actually imports."""
        parsed = _parse_import(import_line)
        if parsed is None:
            return f"unparseable import: {import_line!r}"
        module, name = parsed
        if self.kind == "subprocess":
            code = (f"import sys; sys.path.insert(0, {str(codebase)!r}); "
                    + import_line)
            try:
                proc = subprocess.run(
                    [sys.executable, "-c", code], capture_output=True,
                    text=True, timeout=self.timeout)
            except subprocess.TimeoutExpired:
                return f"import timed out: {import_line!r}"
            except OSError as exc:
                raise EvaluatorError(f"harness python launch failed: "
                                     f"{exc}") from exc
            if proc.returncode != 0:
                return proc.stderr.strip() or f"import failed: {import_line}"
            return None
        return _resolve_import_static(module, name, codebase)


_IMPORT_FROM_RE = re.compile(
    r"^\s*from\s+([\w.]+)\s+import\s+([\w]+)\s*$")
_IMPORT_PLAIN_RE = re.compile(r"^\s*import\s+([\w.]+)\s*$")


def _parse_import(line: str) -> tuple[str, str | None] | None:
    m = _IMPORT_FROM_RE.match(line)
    if m:
        return m.group(1), m.group(2)
    m = _IMPORT_PLAIN_RE.match(line)
    if m:
        return m.group(1), None
    return None


def _resolve_import_static(module: str, name: str | None,
                           codebase: Path) -> str | None:
    parts = module.split(".")
    candidates = [codebase.joinpath(*parts).with_suffix(".py"),
                  codebase.joinpath(*parts) / "__init__.py"]
    target = next((c for c in candidates if c.is_file()), None)
    if target is None:
        return f"module {module!r} not found under {codebase}"
    if name is None:
        return None
    try:
        tree = ast.parse(target.read_text(encoding="utf-8"))
    except SyntaxError as exc:
        return f"module {module!r} does not parse: {exc}"
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef,
                             ast.ClassDef)) and node.name == name:
            return None
        if isinstance(node, ast.Assign):
            for t in node.targets:
                if isinstance(t, ast.Name) and t.id == name:
                    return None
    return f"{module!r} defines no top-level {name!r}"


@dataclass
class EvalContext:
    """Everything an evaluator may need beyond the payload itself."""

    harness: ExecutionHarness
    codebase: Path | None = None
    config_schema: dict | None = None
    output_path: Path | None = None
    required_functions: set[str] | None = None
    script_filename: str = "script.py"
    test_filename: str = "test_script.py"


_TYPE_CHECKS = {
    "str": str, "int": int, "float": (int, float), "bool": bool,
    "list": list, "map": dict, "dict": dict,
}


def _eval_schema_parse(payload: str,
                       schema: dict | None) -> tuple[bool, str]:
    import yaml
    try:
        doc = yaml.safe_load(payload)
    except yaml.YAMLError as exc:
        return False, f"config does not parse as YAML: {exc}"
    if not isinstance(doc, dict) or not doc:
        return False, "config must be a non-empty YAML mapping"
    required = (schema or {}).get("required_fields", {})
    for fname, tname in required.items():
        if fname not in doc:
            return False, f"config missing required field {fname!r}"
        expected = _TYPE_CHECKS.get(str(tname))
        if expected is not None and not isinstance(doc[fname], expected):
            return False, (f"config field {fname!r} must be {tname}, got "
                           f"{type(doc[fname]).__name__}")
    return True, "config parses and satisfies the declared schema"


def _eval_selected_utils(payload: str, ctx: EvalContext) -> tuple[bool, str]:
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        return False, f"selected utils are not valid JSON: {exc}"
    if isinstance(doc, dict) and len(doc) == 1 and \
            isinstance(next(iter(doc.values())), list):
        doc = next(iter(doc.values()))
    if not isinstance(doc, list):
        return False, "selected utils must be a JSON array of methods"
    if ctx.codebase is None:
        return False, "no codebase to resolve utility imports against"
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            return False, f"selected utils entry {i} is not an object"
        for key in ("method_name", "method_import"):
            if not item.get(key):
                return False, f"selected utils entry {i} missing {key!r}"
        error = ctx.harness.check_import(item["method_import"], ctx.codebase)
        if error is not None:
            return False, f"selected utils entry {i}: {error}"
    return True, f"{len(doc)} utilities selected, all imports load"


def function_names(payload: str) -> set[str]:
    """All function names defined anywhere in a Python payload; empty on
    syntax errors."""
    try:
        tree = ast.parse(payload)
    except SyntaxError:
        return set()
    return {node.name for node in ast.walk(tree)
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef))}


def _eval_functions_present(payload: str,
                            required: set[str] | None) -> tuple[bool, str]:
    try:
        ast.parse(payload)
    except SyntaxError as exc:
        return False, f"template does not parse as Python: {exc}"
    names = function_names(payload)
    if not names:
        return False, "template defines no functions"
    if required:
        missing = sorted(required - names)
        if missing:
            return False, ("template is missing predefined functions: "
                           + ", ".join(missing))
    return True, f"all predefined functions present ({len(names)} defined)"


def _eval_script_runs(payload: str, ctx: EvalContext) -> tuple[bool, str]:
    result = ctx.harness.run_script(payload, filename=ctx.script_filename,
                                    output_path=ctx.output_path)
    if not result.ok:
        tail = (result.stderr or result.stdout)[-ERROR_TAIL_CHARS:]
        return False, f"script exited {result.exit_code}: {tail}"
    if not result.wrote_output:
        return False, (f"script ran but wrote nothing to the declared "
                       f"output path {ctx.output_path}")
    return True, "script ran cleanly and wrote the output dataset"


def _scenario_target(item: dict) -> str | None:
    target = item.get("target_function")
    if isinstance(target, str) and target:
        return target
    for mock in item.get("mocks") or []:
        if isinstance(mock, dict):
            mocked = mock.get("mocked_function")
            if isinstance(mocked, str) and mocked:
                return mocked
    name = item.get("testcase_name")
    if isinstance(name, str):
        m = re.match(r"test_(\w+)", name)
        if m:
            return m.group(1)
    return None


def _eval_scenarios(payload: str) -> tuple[bool, str]:
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        return False, f"test scenarios are not valid JSON: {exc}"
    if not isinstance(doc, list):
        return False, "test scenarios must be a JSON array"
    if not 1 <= len(doc) <= MAX_SCENARIOS:
        return False, (f"scenario count {len(doc)} outside 1.."
                       f"{MAX_SCENARIOS}")
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or not item.get("testcase_name"):
            return False, f"scenario {i} missing testcase_name"
        if _scenario_target(item) is None:
            return False, f"scenario {i} names no target function"
    return True, f"{len(doc)} scenarios, all naming target functions"


def _eval_pass_ratio(payload: str, ctx: EvalContext) -> tuple[bool, str]:
    result = ctx.harness.run_tests(payload, filename=ctx.test_filename)
    if result.tests_total == 0:
        tail = (result.stderr or result.stdout)[-ERROR_TAIL_CHARS:]
        return False, f"no test results: {tail}"
    ratio = result.tests_passed / result.tests_total
    detail = (f"{result.tests_passed}/{result.tests_total} passed "
              f"({ratio:.2f})")
    if ratio > PASS_RATIO_THRESHOLD:
        return True, detail
    tail = (result.stderr or result.stdout)[-ERROR_TAIL_CHARS:]
    return False, f"pass ratio not above {PASS_RATIO_THRESHOLD}: " \
                  f"{detail} {tail}".rstrip()


def evaluate_success(spec: ActorSpec, payload: str,
                     context: EvalContext) -> tuple[bool, str]:
    """Dispatch to the single evaluator for this actor's success kind.
    Returns (success, evidence)."""
    kind = spec.success_kind
    if kind == SCHEMA_PARSE:
        return _eval_schema_parse(payload, context.config_schema)
    if kind == ERROR_FREE_EXECUTION:
        return _eval_selected_utils(payload, context)
    if kind == FUNCTIONS_PRESENT:
        return _eval_functions_present(payload, context.required_functions)
    if kind == SCRIPT_RUNS_AND_WRITES:
        return _eval_script_runs(payload, context)
    if kind == SCENARIO_COUNT_AND_COVERAGE:
        return _eval_scenarios(payload)
    if kind == PASS_RATIO_ABOVE_THRESHOLD:
        return _eval_pass_ratio(payload, context)
    raise EvaluatorError(f"unknown success kind {kind!r}")


def _error_block(errors: list[str]) -> str:
    lines = ["", "", "PREVIOUS ATTEMPT ERRORS:"]
    for i, err in enumerate(errors, start=1):
        lines.append(f"--- attempt {i} ---")
        lines.append(err)
    return "\n".join(lines)


def run_actor(spec: ActorSpec, bindings: dict[str, str], llm: LlmClient,
              template: PromptTemplate,
              context: EvalContext) -> ActorOutcome:
    """Bounded retry loop for one actor invocation.

    Renders the template, asks the backend, parses the tagged output and
    judges it.  On failure the full error text is appended to the next
    attempt's prompt.  TERMINATE in the fix tag stops immediately with
    success=false.  Backend or harness unavailability raises HardError
    after one internal retry.
    """
    base_prompt = render(template, bindings)
    errors: list[str] = []
    artifact_kind = ARTIFACT_KIND_BY_ACTOR.get(spec.name, KIND_OTHER)
    last_payload: str | None = None
    reason = fix = None
    terminated = False
    success = False
    attempts = 0
    while attempts < spec.max_retries:
        attempts += 1
        prompt = base_prompt + (_error_block(errors) if errors else "")
        text = _chat_with_retry(llm, prompt, spec.name)
        try:
            tagged = parse_tagged(text)
        except NoPayload as exc:
            errors.append(f"{exc} (response began: {text[:200]!r})")
            continue
        reason, fix = tagged.reason, tagged.fix
        last_payload = tagged.payload
        if tagged.terminated:
            terminated = True
            log.info("actor %s signalled TERMINATE on attempt %d",
                     spec.name, attempts)
            break
        ok, evidence = _evaluate_with_retry(spec, tagged.payload, context)
        if ok:
            success = True
            break
        errors.append(evidence)
    artifacts = []
    if last_payload is not None:
        artifacts.append((artifact_kind, last_payload))
    return ActorOutcome(success=success, attempts=attempts,
                        artifacts=artifacts, reason_tag=reason,
                        fix_tag=fix, terminated=terminated,
                        error_log=errors)


def _chat_with_retry(llm: LlmClient, prompt: str, tag: str) -> str:
    try:
        return llm.chat(prompt, tag=tag)
    except BackendUnavailable as first:
        log.warning("backend unavailable for %s, retrying once: %s",
                    tag, first)
        try:
            return llm.chat(prompt, tag=tag)
        except BackendUnavailable as second:
            raise HardError(f"backend unavailable for actor {tag!r}: "
                            f"{second}") from second


def _evaluate_with_retry(spec: ActorSpec, payload: str,
                         context: EvalContext) -> tuple[bool, str]:
    try:
        return evaluate_success(spec, payload, context)
    except EvaluatorError as first:
        log.warning("harness crashed for %s, retrying once: %s",
                    spec.name, first)
        try:
            return evaluate_success(spec, payload, context)
        except EvaluatorError as second:
            raise HardError(f"harness unavailable for actor "
                            f"{spec.name!r}: {second}") from second
