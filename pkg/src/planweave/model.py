"""Core domain model: the constrained actor topology, per-episode
short-term memory, and the record types everything else reads and writes.

The default graph wires six actors for the featurization workflow.  A
seventh actor name (``feature_selector``) is registered as an alias slot
with a prompt template but is deliberately absent from the default
topology, which gives it no transition row.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Union

log = logging.getLogger(__name__)

# Actor names of the default workflow.
CONFIG_GENERATOR = "config_generator"
UTILS_RETRIEVER = "utils_retriever"
CODE_TEMPLATE_GENERATOR = "code_template_generator"
TESTCASE_GENERATOR = "testcase_generator"
CODE_GENERATOR = "code_generator"
TESTCASE_CODER = "testcase_coder"
FEATURE_SELECTOR = "feature_selector"

HITL = "hitl"
TERMINATE_KEYWORD = "TERMINATE"

CALL_ACTOR = "actor"
CALL_TOOL = "tool"

DECIDED_BY = ("planner", "sequential", "random", "forced")

# Episode terminal statuses.
STATUS_SUCCESS = "success"
STATUS_EXHAUSTED = "exhausted_iterations"
STATUS_PLANNER_ABORT = "planner_abort"
STATUS_HARD_ERROR = "hard_error"
EPISODE_STATUSES = (STATUS_SUCCESS, STATUS_EXHAUSTED,
                    STATUS_PLANNER_ABORT, STATUS_HARD_ERROR)

# Closed enum of artifact kinds.
KIND_CONFIG_YAML = "config_yaml"
KIND_SELECTED_UTILS = "selected_utils"
KIND_CODE_TEMPLATE = "code_template"
KIND_FEATURE_SCRIPT = "feature_script"
KIND_TESTCASE_DEFINITIONS = "testcase_definitions"
KIND_TEST_SCRIPT = "test_script"
KIND_OTHER = "other"
# registry-snapshot-only kind: the patch bundle published at episode end
KIND_CHANGES_PATCH = "changes_patch"
ARTIFACT_KINDS = (
    KIND_CONFIG_YAML,
    KIND_SELECTED_UTILS,
    KIND_CODE_TEMPLATE,
    KIND_FEATURE_SCRIPT,
    KIND_TESTCASE_DEFINITIONS,
    KIND_TEST_SCRIPT,
    KIND_OTHER,
)

# Which artifact kind each default actor produces.
ARTIFACT_KIND_BY_ACTOR = {
    CONFIG_GENERATOR: KIND_CONFIG_YAML,
    UTILS_RETRIEVER: KIND_SELECTED_UTILS,
    CODE_TEMPLATE_GENERATOR: KIND_CODE_TEMPLATE,
    TESTCASE_GENERATOR: KIND_TESTCASE_DEFINITIONS,
    CODE_GENERATOR: KIND_FEATURE_SCRIPT,
    TESTCASE_CODER: KIND_TEST_SCRIPT,
    FEATURE_SELECTOR: KIND_CONFIG_YAML,
}

# Success-criterion kinds, one evaluator each.
SCHEMA_PARSE = "schema_parse"
ERROR_FREE_EXECUTION = "error_free_execution"
FUNCTIONS_PRESENT = "functions_present"
SCRIPT_RUNS_AND_WRITES = "script_runs_and_writes"
SCENARIO_COUNT_AND_COVERAGE = "scenario_count_and_coverage"
PASS_RATIO_ABOVE_THRESHOLD = "pass_ratio_above_threshold"


@dataclass(frozen=True)
class TopologyGraph:
    """Directed actor graph with a single entry actor.

    transitions maps each source actor to an ordered tuple of allowed
    next actors.  terminal_markers names the actors whose latest status
    must be true before an episode may end successfully.
    """

    actors: frozenset[str]
    transitions: dict[str, tuple[str, ...]]
    entry: str
    terminal_markers: frozenset[str]


@dataclass(frozen=True)
class ActorSpec:
    """Static description of one actor: how it is prompted and judged."""

    name: str
    description: str
    arg_names: tuple[str, ...]          # always includes planner_input
    success_kind: str
    max_retries: int = 5                # attempts allowed per invocation


@dataclass
class ActorOutcome:
    """Result of one actor invocation after its internal retry loop."""

    success: bool
    attempts: int
    artifacts: list[tuple[str, str]] = field(default_factory=list)
    reason_tag: str | None = None
    fix_tag: str | None = None
    terminated: bool = False
    error_log: list[str] = field(default_factory=list)

    def to_mapping(self) -> dict[str, Any]:
        return {
            "kind": "actor",
            "success": self.success,
            "attempts": self.attempts,
            "artifacts": [[k, v] for k, v in self.artifacts],
            "reason_tag": self.reason_tag,
            "fix_tag": self.fix_tag,
            "terminated": self.terminated,
            "error_log": list(self.error_log),
        }

    @classmethod
    def from_mapping(cls, m: dict[str, Any]) -> "ActorOutcome":
        return cls(
            success=bool(m["success"]),
            attempts=int(m["attempts"]),
            artifacts=[(k, v) for k, v in m.get("artifacts", [])],
            reason_tag=m.get("reason_tag"),
            fix_tag=m.get("fix_tag"),
            terminated=bool(m.get("terminated", False)),
            error_log=list(m.get("error_log", [])),
        )


@dataclass
class HitlExchange:
    """One human-in-the-loop question/answer exchange."""

    question: str
    context: str
    answer: str
    mode: str                            # "default" | "console"

    def to_mapping(self) -> dict[str, Any]:
        return {"kind": "hitl", "question": self.question,
                "context": self.context, "answer": self.answer,
                "mode": self.mode}

    @classmethod
    def from_mapping(cls, m: dict[str, Any]) -> "HitlExchange":
        return cls(question=m["question"], context=m.get("context", ""),
                   answer=m["answer"], mode=m["mode"])


StepOutcome = Union[ActorOutcome, HitlExchange]


@dataclass
class StepRecord:
    """One planner-visible step: either an actor invocation or a HITL
    tool call.  call_type == "tool" implies target == "hitl"."""

    index: int
    decided_by: str
    call_type: str
    target: str
    planner_input: str
    outcome: StepOutcome
    timestamp: int

    def __post_init__(self) -> None:
        if self.call_type not in (CALL_ACTOR, CALL_TOOL):
            raise ValueError(f"bad call_type: {self.call_type!r}")
        if self.call_type == CALL_TOOL and self.target != HITL:
            raise ValueError("tool steps must target 'hitl'")
        if self.decided_by not in DECIDED_BY:
            raise ValueError(f"bad decided_by: {self.decided_by!r}")


@dataclass
class ShortTermMemory:
    """Append-only episode state the planner reasons over.

    actor_status and artifacts are pure folds over steps: status keeps the
    latest outcome per actor; artifacts keep the latest content per kind,
    folded from successful outcomes only so a failed regeneration never
    clobbers a good artifact.
    """

    steps: list[StepRecord] = field(default_factory=list)
    actor_status: dict[str, bool] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)

    def append(self, record: StepRecord) -> None:
        if record.index != len(self.steps):
            raise ValueError(
                f"step index {record.index} != expected {len(self.steps)}")
        self.steps.append(record)
        if record.call_type == CALL_ACTOR:
            outcome = record.outcome
            assert isinstance(outcome, ActorOutcome)
            self.actor_status[record.target] = outcome.success
            if outcome.success:
                for kind, content in outcome.artifacts:
                    self.artifacts[kind] = content

    def last_actor_target(self) -> str | None:
        for record in reversed(self.steps):
            if record.call_type == CALL_ACTOR:
                return record.target
        return None

    def last_step(self) -> StepRecord | None:
        return self.steps[-1] if self.steps else None

    @property
    def hitl_count(self) -> int:
        return sum(1 for s in self.steps if s.call_type == CALL_TOOL)


def fold_actor_status(steps: list[StepRecord]) -> dict[str, bool]:
    """Recompute actor_status from scratch; the replay oracle."""
    status: dict[str, bool] = {}
    for record in steps:
        if record.call_type == CALL_ACTOR:
            outcome = record.outcome
            assert isinstance(outcome, ActorOutcome)
            status[record.target] = outcome.success
    return status


@dataclass
class EpisodeResult:
    """Terminal summary of one episode."""

    status: str
    total_steps: int
    per_actor: dict[str, tuple[int, int]]   # actor -> (successes, failures)
    hitl_exchanges: int
    seed: int | None = None
    run_label: str = "episode"

    def __post_init__(self) -> None:
        if self.status not in EPISODE_STATUSES:
            raise ValueError(f"bad episode status: {self.status!r}")

    @property
    def success(self) -> bool:
        return self.status == STATUS_SUCCESS

    def to_mapping(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "total_steps": self.total_steps,
            "per_actor": {
                name: {"successes": s, "failures": f}
                for name, (s, f) in sorted(self.per_actor.items())
            },
            "hitl_exchanges": self.hitl_exchanges,
            "seed": self.seed,
            "run_label": self.run_label,
        }

    @classmethod
    def from_mapping(cls, m: dict[str, Any]) -> "EpisodeResult":
        return cls(
            status=m["status"],
            total_steps=int(m["total_steps"]),
            per_actor={
                name: (int(t["successes"]), int(t["failures"]))
                for name, t in m.get("per_actor", {}).items()
            },
            hitl_exchanges=int(m.get("hitl_exchanges", 0)),
            seed=m.get("seed"),
            run_label=m.get("run_label", "episode"),
        )


@dataclass(frozen=True)
class Finding:
    code: str
    subject: str
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


def default_topology() -> TopologyGraph:
    return TopologyGraph(
        actors=frozenset({
            CONFIG_GENERATOR, UTILS_RETRIEVER, CODE_TEMPLATE_GENERATOR,
            TESTCASE_GENERATOR, CODE_GENERATOR, TESTCASE_CODER,
        }),
        transitions={
            CONFIG_GENERATOR: (UTILS_RETRIEVER, CODE_TEMPLATE_GENERATOR),
            UTILS_RETRIEVER: (CODE_TEMPLATE_GENERATOR,),
            CODE_TEMPLATE_GENERATOR: (UTILS_RETRIEVER, TESTCASE_GENERATOR),
            TESTCASE_GENERATOR: (TESTCASE_CODER, CODE_GENERATOR),
            TESTCASE_CODER: (CODE_GENERATOR,),
            CODE_GENERATOR: (TESTCASE_GENERATOR, CODE_TEMPLATE_GENERATOR,
                             CONFIG_GENERATOR, TESTCASE_CODER),
        },
        entry=CONFIG_GENERATOR,
        terminal_markers=frozenset({CODE_GENERATOR, TESTCASE_CODER}),
    )


DEFAULT_SEQUENTIAL_ORDER = (
    CONFIG_GENERATOR, UTILS_RETRIEVER, CODE_TEMPLATE_GENERATOR,
    TESTCASE_GENERATOR, CODE_GENERATOR, TESTCASE_CODER,
)


def default_actor_specs() -> dict[str, ActorSpec]:
    """The six default actors plus the feature_selector alias slot."""
    specs = [
        ActorSpec(
            name=CONFIG_GENERATOR,
            description="Understand the task from FSC and generate output "
                        "config yaml for the task.",
            arg_names=("dataset_catalog", "fsc", "readme", "planner_input"),
            success_kind=SCHEMA_PARSE,
        ),
        ActorSpec(
            name=UTILS_RETRIEVER,
            description="Given all existing utils select the ones that are "
                        "relevant to the current task.",
            arg_names=("user_task_details", "existing_utils",
                       "script_content", "planner_input"),
            success_kind=ERROR_FREE_EXECUTION,
        ),
        ActorSpec(
            name=CODE_TEMPLATE_GENERATOR,
            description="Generate a template script with method signatures "
                        "and pseudocode for the task.",
            arg_names=("script_name", "codebase_readme", "dfr", "fsc",
                       "selected_utils", "planner_input"),
            success_kind=FUNCTIONS_PRESENT,
        ),
        ActorSpec(
            name=TESTCASE_GENERATOR,
            description="Define unit test scenarios covering the script "
                        "logic.",
            arg_names=("dfr", "user_task_details", "script_content",
                       "planner_input"),
            success_kind=SCENARIO_COUNT_AND_COVERAGE,
        ),
        ActorSpec(
            name=CODE_GENERATOR,
            description="Implement the full feature script from the "
                        "template, config and selected utils.",
            arg_names=("codebase_readme", "dfr", "fsc", "user_task_details",
                       "script_name", "script_content", "config",
                       "selected_utils", "test_script_content",
                       "planner_input"),
            success_kind=SCRIPT_RUNS_AND_WRITES,
        ),
        ActorSpec(
            name=TESTCASE_CODER,
            description="Write the unit test script for the generated "
                        "feature script.",
            arg_names=("readme", "dfr", "user_task_details", "config",
                       "script_content", "test_script_content",
                       "planner_input"),
            success_kind=PASS_RATIO_ABOVE_THRESHOLD,
        ),
        ActorSpec(
            name=FEATURE_SELECTOR,
            description="Understand the task from FSC and gather any "
                        "missing information from a human developer to "
                        "output config yaml for the task.",
            arg_names=("fsc", "dataset_catalog", "readme", "planner_input"),
            success_kind=SCHEMA_PARSE,
        ),
    ]
    return {spec.name: spec for spec in specs}


def validate_topology(graph: TopologyGraph) -> ValidationReport:
    """Check the TopologyGraph invariants; zero findings means valid.

    Checks membership of every transition endpoint, entry membership,
    reachability of every actor from the entry, and duplicate transitions.
    """
    findings: list[Finding] = []
    for src, targets in graph.transitions.items():
        if src not in graph.actors:
            findings.append(Finding(
                "unknown_transition_source", src,
                f"transition source {src!r} is not a declared actor"))
        seen: set[str] = set()
        for target in targets:
            if target not in graph.actors:
                findings.append(Finding(
                    "unknown_transition_target", f"{src}->{target}",
                    f"transition target {target!r} is not a declared actor"))
            if target in seen:
                findings.append(Finding(
                    "duplicate_transition", f"{src}->{target}",
                    f"duplicate transition {src!r} -> {target!r}"))
            seen.add(target)
    if graph.entry not in graph.actors:
        findings.append(Finding(
            "unknown_entry", graph.entry,
            f"entry actor {graph.entry!r} is not a declared actor"))
    else:
        reachable = {graph.entry}
        frontier = deque([graph.entry])
        while frontier:
            node = frontier.popleft()
            for target in graph.transitions.get(node, ()):
                if target in graph.actors and target not in reachable:
                    reachable.add(target)
                    frontier.append(target)
        for actor in sorted(graph.actors - reachable):
            findings.append(Finding(
                "unreachable_actor", actor,
                f"actor {actor!r} is unreachable from the entry"))
    return ValidationReport(findings)


def legal_successors(graph: TopologyGraph, last_actor: str | None,
                     actor_status: dict[str, bool]) -> set[str]:
    """Actor names legally invocable next, not counting the hitl tool.

    With no actor invoked yet only the entry is legal.  testcase_coder is
    gated out whenever code_generator's latest status is not true.
    """
    if last_actor is None:
        base = {graph.entry}
    else:
        base = set(graph.transitions.get(last_actor, ()))
    if TESTCASE_CODER in base and actor_status.get(CODE_GENERATOR) is not True:
        base.discard(TESTCASE_CODER)
    return base


def legal_next(graph: TopologyGraph, memory: ShortTermMemory) -> set[str]:
    """Legal next targets for the planner: actors plus the hitl tool."""
    base = legal_successors(graph, memory.last_actor_target(),
                            memory.actor_status)
    base.add(HITL)
    return base


def episode_success(graph: TopologyGraph,
                    actor_status: dict[str, bool]) -> bool:
    """True iff the strict end-stage actors succeeded and no invoked
    actor is left in a failed state."""
    if not actor_status:
        return False
    if not all(actor_status.get(m) is True for m in graph.terminal_markers):
        return False
    return all(v is True for v in actor_status.values())


def tally_steps(steps: list[StepRecord]) -> dict[str, tuple[int, int]]:
    """Per-actor (successes, failures) counted per invocation outcome."""
    tallies: dict[str, list[int]] = {}
    for record in steps:
        if record.call_type != CALL_ACTOR:
            continue
        outcome = record.outcome
        assert isinstance(outcome, ActorOutcome)
        bucket = tallies.setdefault(record.target, [0, 0])
        bucket[0 if outcome.success else 1] += 1
    return {name: (s, f) for name, (s, f) in tallies.items()}
