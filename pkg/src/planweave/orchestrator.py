"""Episode orchestration: the planner and baseline policies, prompt
context rendering, input assembly for each actor, the HITL channel, and
the episode loop itself.
"""
from __future__ import annotations

import itertools
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import taskio
from .actors import (
    DEFAULT_COMMAND,
    EvalContext,
    ExecutionHarness,
    function_names,
    run_actor,
)
from .errors import (
    BudgetExceeded,
    HardError,
    HitlTimeout,
    PlannerAbort,
    PolicyExhausted,
)
from .eventlog import EpisodeLog, result_record, step_to_mapping
from .gateway import (
    CallBudget,
    ChatBackend,
    LlmClient,
    PromptTemplate,
    load_all_templates,
    make_backend,
    render,
)
from .model import (
    ActorOutcome,
    ActorSpec,
    CALL_ACTOR,
    CALL_TOOL,
    DEFAULT_SEQUENTIAL_ORDER,
    HITL,
    HitlExchange,
    KIND_CHANGES_PATCH,
    KIND_CODE_TEMPLATE,
    KIND_CONFIG_YAML,
    KIND_FEATURE_SCRIPT,
    KIND_SELECTED_UTILS,
    KIND_TESTCASE_DEFINITIONS,
    KIND_TEST_SCRIPT,
    STATUS_EXHAUSTED,
    STATUS_HARD_ERROR,
    STATUS_PLANNER_ABORT,
    STATUS_SUCCESS,
    EpisodeResult,
    ShortTermMemory,
    StepRecord,
    TopologyGraph,
    default_actor_specs,
    default_topology,
    episode_success,
    legal_next,
    tally_steps,
    validate_topology,
)

log = logging.getLogger(__name__)

PLANNER_INPUT_WORD_LIMIT = 150
MAX_PLANNER_REASKS = 2
ERROR_TAIL_CHARS = 2000

POLICY_PLANNER = "planner"
POLICY_SEQUENTIAL = "sequential"
POLICY_RANDOM = "random"
POLICY_KINDS = (POLICY_PLANNER, POLICY_SEQUENTIAL, POLICY_RANDOM)


@dataclass
class Policy:
    """Which decision rule drives the episode.

    random requires a seed; sequential takes a topology-legal order
    defaulting to the canonical six-actor pass.
    """

    kind: str
    seed: int | None = None
    order: tuple[str, ...] = DEFAULT_SEQUENTIAL_ORDER

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == POLICY_RANDOM and self.seed is None:
            raise ValueError("random policy requires a seed")

    def validate_order(self, graph: TopologyGraph) -> None:
        if self.kind != POLICY_SEQUENTIAL:
            return
        if not self.order or self.order[0] != graph.entry:
            raise ValueError("sequential order must start at the entry "
                             "actor")
        for prev, nxt in zip(self.order, self.order[1:]):
            if nxt not in graph.transitions.get(prev, ()):
                raise ValueError(f"sequential order edge {prev!r} -> "
                                 f"{nxt!r} is not in the topology")


@dataclass
class PlannerDecision:
    call_type: str                       # "actor" | "tool"
    actor: str
    reason: str
    args: dict[str, str]

    @property
    def planner_input(self) -> str:
        return self.args.get("planner_input", "")


def _truncate_words(text: str, limit: int) -> str:
    words = text.split()
    if len(words) <= limit:
        return text
    log.warning("planner_input exceeded %d words (%d); truncating",
                limit, len(words))
    return " ".join(words[:limit])


def _extract_json_object(text: str) -> dict | None:
    try:
        doc = json.loads(text)
        return doc if isinstance(doc, dict) else None
    except json.JSONDecodeError:
        pass
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        doc = json.loads(text[start:i + 1])
                        if isinstance(doc, dict):
                            return doc
                    except json.JSONDecodeError:
                        break
                    break
        start = text.find("{", start + 1)
    return None


def parse_planner_decision(text: str) -> tuple[PlannerDecision | None, str]:
    """Parse the planner's JSON decision.  Returns (decision, "") or
    (None, violation message) for the re-ask loop."""
    doc = _extract_json_object(text)
    if doc is None:
        return None, "output is not a JSON object"
    expected = {"call_type", "actor", "reason", "args"}
    if set(doc) != expected:
        return None, (f"output object must have exactly the fields "
                      f"{sorted(expected)}, got {sorted(doc)}")
    call_type = doc["call_type"]
    if call_type not in (CALL_ACTOR, CALL_TOOL):
        return None, f"call_type must be 'actor' or 'tool', got {call_type!r}"
    actor = doc["actor"]
    if not isinstance(actor, str) or not actor:
        return None, "actor must be a non-empty string"
    if call_type == CALL_TOOL and actor != HITL:
        return None, "tool calls must name 'hitl' as the actor"
    args = doc["args"]
    if not isinstance(args, dict) or "planner_input" not in args:
        return None, "args must be an object containing planner_input"
    planner_input = args["planner_input"]
    if not isinstance(planner_input, str):
        return None, "planner_input must be a string"
    planner_input = _truncate_words(planner_input, PLANNER_INPUT_WORD_LIMIT)
    reason = doc["reason"] if isinstance(doc["reason"], str) else ""
    return PlannerDecision(call_type=call_type, actor=actor, reason=reason,
                           args={"planner_input": planner_input}), ""


def render_transitions(graph: TopologyGraph) -> str:
    lines = []
    for src in sorted(graph.transitions):
        targets = list(graph.transitions[src]) + [HITL]
        lines.append(f"{src} -> " + " OR ".join(targets))
    return "\n".join(lines)


def render_actors_status(graph: TopologyGraph,
                         memory: ShortTermMemory) -> str:
    status = {actor: memory.actor_status.get(actor, "not invoked")
              for actor in sorted(graph.actors)}
    return json.dumps(status, sort_keys=True)


def render_previous_step(memory: ShortTermMemory) -> str:
    """Summary of the most recent step for the planner prompt: actor,
    success flag, attempts, last reason/fix tags, and a bounded error
    tail."""
    step = memory.last_step()
    if step is None:
        return "none (episode start)"
    if step.call_type == CALL_TOOL:
        outcome = step.outcome
        assert isinstance(outcome, HitlExchange)
        return (f"hitl exchange: question={outcome.question!r} "
                f"answer={outcome.answer!r} (mode={outcome.mode})")
    outcome = step.outcome
    assert isinstance(outcome, ActorOutcome)
    parts = [f"actor={step.target}", f"success={outcome.success}",
             f"attempts={outcome.attempts}",
             f"terminated={outcome.terminated}"]
    if outcome.reason_tag:
        parts.append(f"reason={outcome.reason_tag.strip()!r}")
    if outcome.fix_tag:
        parts.append(f"fix={outcome.fix_tag.strip()!r}")
    if outcome.error_log:
        tail = outcome.error_log[-1][-ERROR_TAIL_CHARS:]
        parts.append(f"last_error={tail!r}")
    return " ".join(parts)


def decide_next(policy: Policy, graph: TopologyGraph,
                memory: ShortTermMemory, llm: LlmClient | None = None, *,
                planner_template: PromptTemplate | None = None,
                rng: random.Random | None = None) -> PlannerDecision:
    """Choose the next step under the given policy.

    planner: renders the planner prompt, parses the JSON decision, and
    re-asks at most twice with the violation appended before raising
    PlannerAbort.  sequential: next actor in the fixed order not yet
    invoked; PolicyExhausted when the order is spent or the next actor
    is not legal.  random: seeded uniform draw over legal actors (never
    the hitl tool).
    """
    legal = legal_next(graph, memory)
    if policy.kind == POLICY_SEQUENTIAL:
        invoked = {s.target for s in memory.steps
                   if s.call_type == CALL_ACTOR}
        remaining = [a for a in policy.order if a not in invoked]
        if not remaining:
            raise PolicyExhausted("sequential order complete but the "
                                  "episode is not successful")
        target = remaining[0]
        if target not in legal:
            raise PolicyExhausted(
                f"sequential order blocked: {target!r} is not legal here "
                f"(legal: {sorted(legal)})")
        return PlannerDecision(call_type=CALL_ACTOR, actor=target,
                               reason="next unfinished actor in the fixed "
                                      "order",
                               args={"planner_input": ""})
    if policy.kind == POLICY_RANDOM:
        if rng is None:
            raise ValueError("random policy requires an rng")
        candidates = sorted(legal - {HITL})
        if not candidates:
            raise PolicyExhausted("no legal actor to draw from")
        target = rng.choice(candidates)
        return PlannerDecision(call_type=CALL_ACTOR, actor=target,
                               reason="uniform draw over legal actors",
                               args={"planner_input": ""})

    # Planner policy.
    if llm is None or planner_template is None:
        raise ValueError("planner policy requires an LLM client and the "
                         "planner template")
    bindings = {
        "transitions": render_transitions(graph),
        "actors_status": render_actors_status(graph, memory),
        "previous_step": render_previous_step(memory),
    }
    base_prompt = render(planner_template, bindings)
    violation = ""
    for _ in range(1 + MAX_PLANNER_REASKS):
        prompt = base_prompt
        if violation:
            prompt += ("\n\nYOUR PREVIOUS OUTPUT WAS INVALID: "
                       + violation
                       + "\nReturn a corrected decision in the required "
                         "OUTPUT_FORMAT.")
        text = llm.chat(prompt, tag="planner")
        decision, problem = parse_planner_decision(text)
        if decision is None:
            violation = problem
            log.warning("planner decision rejected: %s", problem)
            continue
        if decision.call_type == CALL_TOOL:
            return decision
        if decision.actor not in legal:
            violation = (f"target {decision.actor!r} is not a legal "
                         f"transition; legal targets: {sorted(legal)}")
            log.warning("planner decision rejected: %s", violation)
            continue
        return decision
    raise PlannerAbort(f"planner produced no valid decision after "
                       f"{MAX_PLANNER_REASKS} re-asks: {violation}")


class HitlChannel:
    """Answers planner questions either with the configured default
    string or by blocking on a console answer via the control registry.
    A console timeout falls back to the default answer, recorded with
    mode "default"."""

    def __init__(self, mode: str = "default",
                 default_answer: str = taskio.DEFAULT_HITL_ANSWER,
                 timeout: float = taskio.DEFAULT_HITL_TIMEOUT,
                 registry=None, episode_id: str | None = None) -> None:
        if mode not in ("default", "console"):
            raise ValueError(f"bad hitl mode {mode!r}")
        if mode == "console" and registry is None:
            raise ValueError("console mode requires a registry")
        self.mode = mode
        self.default_answer = default_answer
        self.timeout = timeout
        self.registry = registry
        self.episode_id = episode_id

    def ask(self, question: str, context: str) -> HitlExchange:
        if self.mode == "console":
            try:
                answer = self.registry.ask(self.episode_id, question,
                                           context, self.timeout)
                return HitlExchange(question=question, context=context,
                                    answer=answer, mode="console")
            except HitlTimeout:
                log.warning("hitl question timed out after %.0fs; falling "
                            "back to the default answer", self.timeout)
        return HitlExchange(question=question, context=context,
                            answer=self.default_answer, mode="default")


def hitl_ask(channel: HitlChannel, question: str,
             context: str) -> HitlExchange:
    return channel.ask(question, context)


class Executor:
    """Builds each actor's prompt bindings and evaluation context from
    the task bundle and the current memory."""

    def __init__(self, task: taskio.TaskSpec,
                 templates: dict[str, PromptTemplate],
                 workdir: Path) -> None:
        self.task = task
        self.templates = templates
        self.workdir = workdir

    def harness_for(self, actor: str) -> ExecutionHarness:
        settings = self.task.run.harness
        command = settings.commands.get(actor, DEFAULT_COMMAND)
        return ExecutionHarness(kind=settings.kind,
                                command_template=command,
                                timeout=settings.timeout_seconds,
                                workdir=self.workdir)

    def _user_task_details(self, planner_input: str,
                           template: PromptTemplate) -> str:
        fsc = self.task.fsc
        lines = [f"Implement the featurization task {fsc.name!r} producing "
                 f"output dataset {fsc.output_dataset.name!r}.", "Features:"]
        for feat in fsc.features:
            cols = ", ".join(r.raw for r in feat.source_columns)
            lines.append(f"- {feat.name} (from {cols}): "
                         f"{feat.computation_logic}")
        keys = ", ".join(pk.name for pk in fsc.primary_keys)
        lines.append(f"Primary keys: {keys}.")
        details = "\n".join(lines)
        # Templates without a planner_input slot get the guidance folded
        # into the task details instead.
        if planner_input and \
                "planner_input" not in template.required_placeholders:
            details += f"\n\nADDITIONAL GUIDANCE:\n{planner_input}"
        return details

    def _existing_utils(self) -> str:
        if not self.task.reusable_sources:
            return "(no reusable utils declared)"
        blocks = []
        for path, content in self.task.reusable_sources:
            blocks.append(f"## {path}\n{content}")
        return "\n\n".join(blocks)

    def _artifact(self, memory: ShortTermMemory, kind: str,
                  placeholder: str) -> str:
        return memory.artifacts.get(kind, placeholder)

    def bindings_for(self, spec: ActorSpec, memory: ShortTermMemory,
                     planner_input: str) -> dict[str, str]:
        template = self.templates[spec.name]
        task = self.task
        script = self._artifact(
            memory, KIND_FEATURE_SCRIPT,
            self._artifact(memory, KIND_CODE_TEMPLATE,
                           "(script not generated yet)"))
        test_content = self._artifact(
            memory, KIND_TEST_SCRIPT,
            self._artifact(memory, KIND_TESTCASE_DEFINITIONS,
                           "(no test cases defined yet)"))
        full = {
            "fsc": task.fsc_text,
            "dfr": task.dfr_text,
            "dataset_catalog": task.dfr_text,
            "readme": task.readme,
            "codebase_readme": task.readme,
            "script_name": task.script_name,
            "user_task_details": self._user_task_details(planner_input,
                                                         template),
            "existing_utils": self._existing_utils(),
            "selected_utils": self._artifact(
                memory, KIND_SELECTED_UTILS, "(no utilities selected yet)"),
            "script_content": script,
            "config": self._artifact(memory, KIND_CONFIG_YAML,
                                     "(no config generated yet)"),
            "test_script_content": test_content,
            "planner_input": planner_input,
        }
        return {name: full[name]
                for name in template.required_placeholders}

    def eval_context_for(self, spec: ActorSpec,
                         memory: ShortTermMemory) -> EvalContext:
        task = self.task
        required = None
        template_payload = memory.artifacts.get(KIND_CODE_TEMPLATE)
        if template_payload is not None:
            names = function_names(template_payload)
            required = names or None
        out = task.fsc.output_dataset
        output_path = task.resolve(out.bucket_dev) / out.name
        return EvalContext(
            harness=self.harness_for(spec.name),
            codebase=task.resolve(task.run.env.codebase),
            config_schema=task.config_schema,
            output_path=output_path,
            required_functions=required,
            script_filename=task.script_name,
            test_filename=f"test_{task.fsc.name}.py",
        )


def run_episode(task: taskio.TaskSpec, *,
                graph: TopologyGraph | None = None,
                policy: Policy | None = None,
                backend: ChatBackend | None = None,
                hitl: HitlChannel | None = None,
                templates: dict[str, PromptTemplate] | None = None,
                specs: dict[str, ActorSpec] | None = None,
                episode_log: EpisodeLog | None = None,
                registry=None, episode_id: str | None = None,
                run_label: str = "episode",
                out_dir: str | Path | None = None,
                write_outputs: bool = True,
                clock: Callable[[], int] | None = None) -> EpisodeResult:
    """Run one episode to a terminal status.

    The loop asks the policy for a decision, executes it (actor retry
    loop or HITL exchange), appends the StepRecord, and ends on the
    success condition, iteration cap, policy abort, or hard error.
    Artifacts are written on any end; HardError propagates with the
    partial result attached.
    """
    graph = graph or default_topology()
    report = validate_topology(graph)
    if not report.ok:
        raise ValueError("invalid topology: "
                         + "; ".join(f.message for f in report.findings))
    policy = policy or Policy(kind=POLICY_SEQUENTIAL)
    policy.validate_order(graph)
    templates = templates or load_all_templates()
    specs = specs or default_actor_specs()
    settings = task.run.planner
    if backend is None:
        backend = make_backend(settings.llm, base_dir=task.root,
                               api_key_env=settings.llm_api_key_env)
    if hitl is None:
        hitl = HitlChannel(mode="default",
                           default_answer=settings.hitl_default_answer,
                           timeout=settings.hitl_timeout_seconds)
    ticker = itertools.count()
    clock = clock or (lambda: next(ticker))
    episode_log = episode_log or EpisodeLog(None)
    if registry is not None and episode_id is None:
        episode_id = registry.register(run_label)
    if registry is not None:
        episode_log.add_listener(
            lambda rec: registry.publish(episode_id, rec))

    out_root = Path(out_dir) if out_dir is not None \
        else task.resolve(task.run.env.output_root_dir)
    executor = Executor(task, templates, workdir=out_root / "work")
    llm = LlmClient(backend, budget=CallBudget(settings.call_budget),
                    episode_log=episode_log, clock=clock)
    rng = random.Random(policy.seed) if policy.kind == POLICY_RANDOM \
        else None

    memory = ShortTermMemory()
    status = STATUS_EXHAUSTED
    hard_error: HardError | None = None
    for _ in range(settings.max_iterations):
        try:
            decision = decide_next(policy, graph, memory, llm,
                                   planner_template=templates["planner"],
                                   rng=rng)
        except (PlannerAbort, PolicyExhausted) as exc:
            log.info("episode %s aborted: %s", run_label, exc)
            status = STATUS_PLANNER_ABORT
            break
        except (BudgetExceeded, HardError) as exc:
            status = STATUS_HARD_ERROR
            hard_error = exc if isinstance(exc, HardError) \
                else HardError(str(exc))
            break
        if decision.call_type == CALL_TOOL:
            exchange = hitl.ask(decision.planner_input,
                                render_previous_step(memory))
            record = StepRecord(
                index=len(memory.steps), decided_by=POLICY_PLANNER,
                call_type=CALL_TOOL, target=HITL,
                planner_input=decision.planner_input, outcome=exchange,
                timestamp=clock())
        else:
            spec = specs[decision.actor]
            bindings = executor.bindings_for(spec, memory,
                                             decision.planner_input)
            context = executor.eval_context_for(spec, memory)
            try:
                outcome = run_actor(spec, bindings, llm,
                                    templates[spec.name], context)
            except (BudgetExceeded, HardError) as exc:
                status = STATUS_HARD_ERROR
                hard_error = exc if isinstance(exc, HardError) \
                    else HardError(str(exc))
                break
            record = StepRecord(
                index=len(memory.steps), decided_by=policy.kind,
                call_type=CALL_ACTOR, target=decision.actor,
                planner_input=decision.planner_input, outcome=outcome,
                timestamp=clock())
        memory.append(record)
        episode_log.write(step_to_mapping(record))
        if registry is not None:
            registry.set_artifacts(episode_id, dict(memory.artifacts))
        if episode_success(graph, memory.actor_status):
            status = STATUS_SUCCESS
            break
    if hard_error is not None:
        status = STATUS_HARD_ERROR

    result = EpisodeResult(
        status=status,
        total_steps=len(memory.steps),
        per_actor=tally_steps(memory.steps),
        hitl_exchanges=memory.hitl_count,
        seed=policy.seed,
        run_label=run_label,
    )
    episode_log.write(result_record(result))
    try:
        if write_outputs:
            manifest = taskio.write_artifacts(task, memory,
                                              out_dir=out_dir)
            if registry is not None:
                snapshot = dict(memory.artifacts)
                snapshot[KIND_CHANGES_PATCH] = \
                    manifest.patch_path.read_text(encoding="utf-8")
                registry.set_artifacts(episode_id, snapshot)
    finally:
        # consoles treat stream end as "final state is ready", so the
        # patch must land in the registry before finish() closes it
        if registry is not None:
            registry.finish(episode_id, result)
    if hard_error is not None:
        hard_error.partial_result = result
        raise hard_error
    return result
