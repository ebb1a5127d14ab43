"""Line-delimited structured episode log.

One JSON object per line, with a "type" discriminator: "step" records
carry StepRecords, "chat" records carry (request, response) pairs from
the gateway, and a single trailing "result" record carries the
EpisodeResult.  Keys are sorted so identical episodes serialize to
byte-identical logs.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import ParseError
from .model import (
    ActorOutcome,
    CALL_ACTOR,
    EpisodeResult,
    HitlExchange,
    ShortTermMemory,
    StepRecord,
    TopologyGraph,
    fold_actor_status,
    legal_next,
)

TYPE_STEP = "step"
TYPE_CHAT = "chat"
TYPE_RESULT = "result"


def step_to_mapping(step: StepRecord) -> dict[str, Any]:
    return {
        "type": TYPE_STEP,
        "index": step.index,
        "decided_by": step.decided_by,
        "call_type": step.call_type,
        "target": step.target,
        "planner_input": step.planner_input,
        "timestamp": step.timestamp,
        "outcome": step.outcome.to_mapping(),
    }


def step_from_mapping(m: dict[str, Any]) -> StepRecord:
    outcome_map = m["outcome"]
    if outcome_map.get("kind") == "hitl":
        outcome: ActorOutcome | HitlExchange = HitlExchange.from_mapping(
            outcome_map)
    else:
        outcome = ActorOutcome.from_mapping(outcome_map)
    return StepRecord(
        index=int(m["index"]),
        decided_by=m["decided_by"],
        call_type=m["call_type"],
        target=m["target"],
        planner_input=m.get("planner_input", ""),
        outcome=outcome,
        timestamp=int(m["timestamp"]),
    )


def chat_record(tag: str, prompt: str, response: str,
                timestamp: int) -> dict[str, Any]:
    return {"type": TYPE_CHAT, "tag": tag, "prompt": prompt,
            "response": response, "timestamp": timestamp}


def result_record(result: EpisodeResult) -> dict[str, Any]:
    payload = result.to_mapping()
    payload["type"] = TYPE_RESULT
    return payload


def record_to_line(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


class EpisodeLog:
    """Appends records to an optional file and fans them out to
    listeners (the control endpoint registers one)."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._listeners: list[Callable[[dict[str, Any]], None]] = []
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w", encoding="utf-8")

    def add_listener(self, fn: Callable[[dict[str, Any]], None]) -> None:
        self._listeners.append(fn)

    def write(self, record: dict[str, Any]) -> None:
        if self._fh is not None:
            self._fh.write(record_to_line(record) + "\n")
            self._fh.flush()
        for fn in self._listeners:
            fn(record)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "EpisodeLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_log(path: str | Path) -> list[dict[str, Any]]:
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad log line: {exc}", path=str(path),
                             line=lineno) from exc
    return records


def steps_of(records: Iterable[dict[str, Any]]) -> list[StepRecord]:
    return [step_from_mapping(r) for r in records if r.get("type") == TYPE_STEP]


def result_of(records: Iterable[dict[str, Any]]) -> EpisodeResult | None:
    for record in records:
        if record.get("type") == TYPE_RESULT:
            return EpisodeResult.from_mapping(record)
    return None


def check_legality(graph: TopologyGraph,
                   steps: list[StepRecord]) -> list[str]:
    """Replay a step list against the graph; returns violation messages.

    Every actor step's target must have been in legal_next at its
    decision point; hitl tool steps are always legal.
    """
    violations: list[str] = []
    memory = ShortTermMemory()
    for step in steps:
        if step.call_type == CALL_ACTOR:
            allowed = legal_next(graph, memory)
            if step.target not in allowed:
                violations.append(
                    f"step {step.index}: target {step.target!r} not in "
                    f"legal set {sorted(allowed)}")
        memory.append(step)
    return violations


def replay_consistency(records: list[dict[str, Any]],
                       graph: TopologyGraph) -> list[str]:
    """Full replay check for one log: legality plus the fold property
    against the recorded result."""
    steps = steps_of(records)
    problems = check_legality(graph, steps)
    result = result_of(records)
    if result is not None:
        folded = fold_actor_status(steps)
        from .model import tally_steps
        if tally_steps(steps) != result.per_actor:
            problems.append("per-actor tallies do not fold from steps")
        hitl = sum(1 for s in steps if s.call_type != CALL_ACTOR)
        if hitl != result.hitl_exchanges:
            problems.append(
                f"hitl count {hitl} != recorded {result.hitl_exchanges}")
        if result.total_steps != len(steps):
            problems.append(
                f"total_steps {result.total_steps} != step count {len(steps)}")
        if result.status == "success":
            from .model import episode_success
            if not episode_success(graph, folded):
                problems.append("recorded success but folded status "
                                "does not satisfy the end condition")
    return problems
