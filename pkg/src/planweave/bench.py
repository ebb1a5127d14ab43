"""Benchmark metrics, the desk-scale policy simulator, and the bench
runner.

pass@k is the fraction of successful runs out of k per task; the
headline is the mean over tasks with a population standard deviation.
Because published tables of this kind sometimes quote the spread of the
raw per-run outcomes instead, the report carries that value too as
run_stddev.

The simulator replays the topology with per-actor success
probabilities.  A failing actor may blame one upstream actor; the
informed policy (a planner stand-in) reads revealed blame hints,
re-runs the blamed actor, and retries the failed one at its repaired
probability.  Sequential walks the fixed order once and never revisits;
random walks legal transitions uniformly.
"""
from __future__ import annotations

import logging
import random
import statistics
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from . import taskio
from .errors import ArityError, ConfigError, HardError
from .eventlog import EpisodeLog
from .gateway import make_backend
from .model import (
    DEFAULT_SEQUENTIAL_ORDER,
    EpisodeResult,
    STATUS_EXHAUSTED,
    STATUS_PLANNER_ABORT,
    STATUS_SUCCESS,
    TopologyGraph,
    default_topology,
    episode_success,
    legal_successors,
    validate_topology,
)
from .orchestrator import Policy, run_episode

log = logging.getLogger(__name__)

SIM_POLICY_INFORMED = "informed"
SIM_POLICY_SEQUENTIAL = "sequential"
SIM_POLICY_RANDOM = "random"
SIM_POLICIES = (SIM_POLICY_INFORMED, SIM_POLICY_SEQUENTIAL,
                SIM_POLICY_RANDOM)

DEFAULT_SIM_MAX_ITERATIONS = 12
DEFAULT_PASS_K = 3


@dataclass
class PassAtK:
    k: int
    per_task: dict[str, float]
    mean: float
    stddev: float          # population stddev over task means
    run_stddev: float      # population stddev over per-run binary outcomes


def pass_at_k(results_by_task: Mapping[str, Sequence[EpisodeResult]],
              k: int) -> PassAtK:
    """Per-task success fraction over exactly k runs, aggregated over
    tasks.  Raises ArityError if any task does not have exactly k runs."""
    if k < 1:
        raise ArityError(f"k must be >= 1, got {k}")
    per_task: dict[str, float] = {}
    run_outcomes: list[int] = []
    for task, results in results_by_task.items():
        if len(results) != k:
            raise ArityError(f"task {task!r} has {len(results)} runs, "
                             f"expected exactly {k}")
        wins = sum(1 for r in results if r.success)
        run_outcomes.extend(1 if r.success else 0 for r in results)
        per_task[task] = wins / k
    if not per_task:
        raise ArityError("no tasks to aggregate")
    values = list(per_task.values())
    return PassAtK(
        k=k,
        per_task=per_task,
        mean=statistics.fmean(values),
        stddev=statistics.pstdev(values),
        run_stddev=statistics.pstdev(run_outcomes),
    )


@dataclass
class FailureRates:
    per_task: dict[str, tuple[float, float]]   # task -> (mean %, stddev %)
    per_actor: dict[str, tuple[int, int, float]]  # (succ, fail, rate %)


def _run_rate(result: EpisodeResult) -> float | None:
    successes = sum(s for s, _ in result.per_actor.values())
    failures = sum(f for _, f in result.per_actor.values())
    total = successes + failures
    if total == 0:
        return None
    return failures / total * 100.0


def actor_failure_rate(
        results_by_task: Mapping[str, Sequence[EpisodeResult]]
) -> FailureRates:
    """Failure percentage failures/(successes+failures)*100, aggregated
    per task (mean/stddev across runs) and per actor (raw counts).
    Zero-invocation actors and runs are absent rather than zero."""
    per_task: dict[str, tuple[float, float]] = {}
    counts: dict[str, list[int]] = {}
    for task, results in results_by_task.items():
        rates = [r for r in (_run_rate(res) for res in results)
                 if r is not None]
        if rates:
            per_task[task] = (statistics.fmean(rates),
                              statistics.pstdev(rates))
        for res in results:
            for actor, (s, f) in res.per_actor.items():
                bucket = counts.setdefault(actor, [0, 0])
                bucket[0] += s
                bucket[1] += f
    per_actor = {}
    for actor, (s, f) in counts.items():
        if s + f == 0:
            continue
        per_actor[actor] = (s, f, f / (s + f) * 100.0)
    return FailureRates(per_task=per_task, per_actor=per_actor)


@dataclass(frozen=True)
class SimulatedActorModel:
    """Per-actor probabilities for the simulator.

    When the actor fails, with probability blame_prob the failure is
    attributable to upstream_blame; once that upstream actor has been
    re-run successfully, this actor retries at repaired_success_prob.
    """

    name: str
    base_success_prob: float
    upstream_blame: str | None = None
    blame_prob: float = 0.0
    repaired_success_prob: float | None = None

    def __post_init__(self) -> None:
        for label, p in (("base_success_prob", self.base_success_prob),
                         ("blame_prob", self.blame_prob)):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{self.name}: {label} must be in "
                                  f"[0, 1], got {p}")
        if self.repaired_success_prob is not None and \
                not 0.0 <= self.repaired_success_prob <= 1.0:
            raise ConfigError(f"{self.name}: repaired_success_prob must "
                              "be in [0, 1]")
        if self.upstream_blame is None and self.blame_prob > 0.0:
            raise ConfigError(f"{self.name}: blame_prob without "
                              "upstream_blame")

    @property
    def repaired(self) -> float:
        return self.base_success_prob if self.repaired_success_prob is None \
            else self.repaired_success_prob


def _validate_models(models: Mapping[str, SimulatedActorModel],
                     graph: TopologyGraph) -> None:
    missing = sorted(graph.actors - set(models))
    if missing:
        raise ConfigError(f"no simulated model for actors: {missing}")
    reach: dict[str, set[str]] = {}
    for actor in graph.actors:
        seen = {actor}
        frontier = deque([actor])
        while frontier:
            node = frontier.popleft()
            for t in graph.transitions.get(node, ()):
                if t not in seen:
                    seen.add(t)
                    frontier.append(t)
        reach[actor] = seen
    for model in models.values():
        if model.upstream_blame is None:
            continue
        if model.upstream_blame not in graph.actors:
            raise ConfigError(f"{model.name}: upstream_blame "
                              f"{model.upstream_blame!r} is not an actor")
        # The corrective edge must exist: the failing actor must be able
        # to route to the blamed actor through the topology.
        if model.upstream_blame not in reach.get(model.name, set()):
            raise ConfigError(
                f"{model.name}: blamed actor {model.upstream_blame!r} is "
                "not reachable via the topology's corrective edges")


def _bfs_distances(graph: TopologyGraph, goal: str) -> dict[str, int]:
    """Distance from each actor to the goal along transitions."""
    dist = {goal: 0}
    frontier = deque([goal])
    reverse: dict[str, list[str]] = {}
    for src, targets in graph.transitions.items():
        for t in targets:
            reverse.setdefault(t, []).append(src)
    while frontier:
        node = frontier.popleft()
        for prev in reverse.get(node, ()):
            if prev not in dist:
                dist[prev] = dist[node] + 1
                frontier.append(prev)
    return dist


@dataclass
class _SimState:
    status: dict[str, bool] = field(default_factory=dict)
    position: str | None = None
    repaired: set[str] = field(default_factory=set)
    pending_blame: list[tuple[str, str]] = field(default_factory=list)
    seq_index: int = 0
    steps: int = 0


def _informed_choice(graph: TopologyGraph, state: _SimState,
                     order: Sequence[str], legal: set[str]) -> str:
    """Planner stand-in: honor revealed blame first, else route toward
    the earliest actor in the order that has not succeeded."""
    if state.pending_blame:
        goal = state.pending_blame[0][1]
    else:
        unsatisfied = [a for a in order
                       if state.status.get(a) is not True]
        goal = unsatisfied[0] if unsatisfied else order[-1]
    if goal in legal:
        return goal
    dist = _bfs_distances(graph, goal)
    pos = {a: i for i, a in enumerate(order)}
    ranked = sorted(legal,
                    key=lambda a: (dist.get(a, len(order) + 99),
                                   pos.get(a, 99)))
    return ranked[0]


def simulate_episode(models: Mapping[str, SimulatedActorModel],
                     graph: TopologyGraph, policy: str,
                     rng: random.Random, *,
                     max_iterations: int = DEFAULT_SIM_MAX_ITERATIONS,
                     order: Sequence[str] = DEFAULT_SEQUENTIAL_ORDER
                     ) -> EpisodeResult:
    """One Monte-Carlo episode.  Per step the policy picks a legal
    actor, the actor draw succeeds with its current probability, and a
    failure may reveal a blame hint.  Ends on the shared episode success
    condition or the iteration cap."""
    state = _SimState()
    tallies: dict[str, list[int]] = {}
    status = STATUS_EXHAUSTED
    while state.steps < max_iterations:
        legal = legal_successors(graph, state.position, state.status)
        if policy == SIM_POLICY_SEQUENTIAL:
            if state.seq_index >= len(order):
                status = STATUS_PLANNER_ABORT
                break
            target = order[state.seq_index]
            state.seq_index += 1
            if target not in legal:
                status = STATUS_PLANNER_ABORT
                break
        elif policy == SIM_POLICY_RANDOM:
            if not legal:
                status = STATUS_PLANNER_ABORT
                break
            target = rng.choice(sorted(legal))
        elif policy == SIM_POLICY_INFORMED:
            if not legal:
                status = STATUS_PLANNER_ABORT
                break
            target = _informed_choice(graph, state, order, legal)
        else:
            raise ConfigError(f"unknown simulated policy {policy!r}")
        state.steps += 1
        model = models[target]
        p = model.repaired if target in state.repaired \
            else model.base_success_prob
        ok = rng.random() < p
        state.status[target] = ok
        state.position = target
        bucket = tallies.setdefault(target, [0, 0])
        bucket[0 if ok else 1] += 1
        if ok:
            for pair in list(state.pending_blame):
                failed, blamed = pair
                if blamed == target:
                    state.repaired.add(failed)
                    state.pending_blame.remove(pair)
        elif model.upstream_blame is not None and \
                rng.random() < model.blame_prob:
            state.pending_blame.append((target, model.upstream_blame))
        if episode_success(graph, state.status):
            status = STATUS_SUCCESS
            break
    return EpisodeResult(
        status=status,
        total_steps=state.steps,
        per_actor={a: (s, f) for a, (s, f) in tallies.items()},
        hitl_exchanges=0,
        seed=None,
        run_label=policy,
    )


@dataclass
class PolicyReport:
    policy: str
    episodes: int
    pass_mean: float
    pass_stddev: float
    run_stddev: float
    mean_steps: float


@dataclass
class TaskReport:
    task: str
    pass_fraction: float
    steps_mean: float
    steps_stddev: float
    failure_rate_mean: float | None
    failure_rate_stddev: float | None


@dataclass
class BenchReport:
    k: int
    per_policy: dict[str, PolicyReport]
    per_task: dict[str, TaskReport] = field(default_factory=dict)
    per_actor: dict[str, tuple[int, int, float]] = field(
        default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_mapping(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "per_policy": {
                name: {
                    "episodes": p.episodes,
                    "pass_at_k_mean": round(p.pass_mean, 4),
                    "pass_at_k_stddev": round(p.pass_stddev, 4),
                    "run_stddev": round(p.run_stddev, 4),
                    "mean_steps": round(p.mean_steps, 3),
                } for name, p in self.per_policy.items()
            },
            "per_task": {
                name: {
                    "pass_fraction": round(t.pass_fraction, 4),
                    "decision_steps_mean": round(t.steps_mean, 3),
                    "decision_steps_stddev": round(t.steps_stddev, 3),
                    "failure_rate_mean":
                        None if t.failure_rate_mean is None
                        else round(t.failure_rate_mean, 2),
                    "failure_rate_stddev":
                        None if t.failure_rate_stddev is None
                        else round(t.failure_rate_stddev, 2),
                } for name, t in self.per_task.items()
            },
            "per_actor": {
                name: {"successes": s, "failures": f, "rate": round(r, 1)}
                for name, (s, f, r) in sorted(self.per_actor.items())
            },
            "notes": list(self.notes),
        }

    def render_text(self) -> str:
        lines = [f"pass@{self.k} by policy: mean (stddev over tasks)",
                 "-" * 52]
        for name, p in self.per_policy.items():
            lines.append(f"  {name:<12} {p.pass_mean:.3f} "
                         f"({p.pass_stddev:.3f})   "
                         f"[run stddev {p.run_stddev:.3f}, "
                         f"{p.episodes} episodes, "
                         f"mean steps {p.mean_steps:.2f}]")
        if self.per_task:
            lines.append("")
            lines.append(f"{'task':<28} {'pass@' + str(self.k):>8} "
                         f"{'decision steps (incl. hitl)':>28} "
                         f"{'failure rate %':>16}")
            lines.append("-" * 84)
            for name, t in self.per_task.items():
                if t.failure_rate_mean is None:
                    rate = "-"
                else:
                    rate = (f"{t.failure_rate_mean:.1f} "
                            f"({t.failure_rate_stddev:.1f})")
                steps = f"{t.steps_mean:.2f} ({t.steps_stddev:.2f})"
                lines.append(f"{name:<28} {t.pass_fraction:>8.3f} "
                             f"{steps:>28} {rate:>16}")
        if self.per_actor:
            lines.append("")
            lines.append(f"{'actor':<26} {'successes':>10} "
                         f"{'failures':>10} {'failure %':>10}")
            lines.append("-" * 58)
            for name, (s, f, r) in sorted(self.per_actor.items()):
                lines.append(f"{name:<26} {s:>10} {f:>10} {r:>10.1f}")
        for note in self.notes:
            lines.append("")
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"


def _chunk_results(results: list[EpisodeResult], k: int,
                   prefix: str) -> dict[str, list[EpisodeResult]]:
    groups: dict[str, list[EpisodeResult]] = {}
    for i in range(len(results) // k):
        groups[f"{prefix}{i}"] = results[i * k:(i + 1) * k]
    return groups


def simulate_policies(models: Mapping[str, SimulatedActorModel],
                      graph: TopologyGraph | None = None,
                      policies: Sequence[str] = SIM_POLICIES, *,
                      episodes_per_policy: int = 500,
                      seed: int = 0,
                      max_iterations: int = DEFAULT_SIM_MAX_ITERATIONS,
                      k: int = DEFAULT_PASS_K,
                      order: Sequence[str] = DEFAULT_SEQUENTIAL_ORDER
                      ) -> BenchReport:
    """Seeded Monte-Carlo comparison of the three policies over one
    simulated actor model set."""
    graph = graph or default_topology()
    report = validate_topology(graph)
    if not report.ok:
        raise ConfigError("invalid topology: "
                          + "; ".join(f.message for f in report.findings))
    _validate_models(models, graph)
    for policy in policies:
        if policy not in SIM_POLICIES:
            raise ConfigError(f"unknown simulated policy {policy!r}")
    per_policy: dict[str, PolicyReport] = {}
    for policy in policies:
        rng = random.Random(f"{seed}:{policy}")
        results = [simulate_episode(models, graph, policy, rng,
                                    max_iterations=max_iterations,
                                    order=order)
                   for _ in range(episodes_per_policy)]
        grouped = _chunk_results(results, k, f"{policy}-")
        stats = pass_at_k(grouped, k)
        per_policy[policy] = PolicyReport(
            policy=policy,
            episodes=episodes_per_policy,
            pass_mean=stats.mean,
            pass_stddev=stats.stddev,
            run_stddev=stats.run_stddev,
            mean_steps=statistics.fmean(r.total_steps for r in results),
        )
    return BenchReport(k=k, per_policy=per_policy)


def load_simulation_config(path: str | Path) -> dict[str, Any]:
    """Read a calibration file: actor models plus optional sim params."""
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "actors" not in doc:
        raise ConfigError(f"simulation config {path} must be a mapping "
                          "with an 'actors' list")
    models: dict[str, SimulatedActorModel] = {}
    for item in doc["actors"]:
        if not isinstance(item, dict) or "name" not in item:
            raise ConfigError("each simulated actor needs a name")
        model = SimulatedActorModel(
            name=item["name"],
            base_success_prob=float(item.get("base_success_prob", 1.0)),
            upstream_blame=item.get("upstream_blame"),
            blame_prob=float(item.get("blame_prob", 0.0)),
            repaired_success_prob=(
                None if item.get("repaired_success_prob") is None
                else float(item["repaired_success_prob"])),
        )
        models[model.name] = model
    return {
        "models": models,
        "max_iterations": int(doc.get("max_iterations",
                                      DEFAULT_SIM_MAX_ITERATIONS)),
        "k": int(doc.get("k", DEFAULT_PASS_K)),
    }


def discover_tasks(task_dir: str | Path) -> list[tuple[str, Path]]:
    root = Path(task_dir)
    found = []
    if (root / "run.yaml").exists():
        found.append((root.name, root / "run.yaml"))
    for sub in sorted(root.iterdir()) if root.is_dir() else []:
        if sub.is_dir() and (sub / "run.yaml").exists():
            found.append((sub.name, sub / "run.yaml"))
    if not found:
        raise ConfigError(f"no task bundles (run.yaml) found under "
                          f"{task_dir}")
    return found


def run_bench(task_dir: str | Path, policy: Policy, runs_per_task: int,
              out: str | Path, *,
              backend_spec: str | None = None) -> BenchReport:
    """Run every task bundle under task_dir runs_per_task times with one
    policy, writing per-run logs, the structured report and the plain
    table under out."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = discover_tasks(task_dir)
    results_by_task: dict[str, list[EpisodeResult]] = {}
    notes: list[str] = []
    for name, run_path in tasks:
        try:
            task = taskio.load_task(run_path)
        except Exception as exc:   # noqa: BLE001 (continue other tasks)
            notes.append(f"task {name!r} failed to load: {exc}")
            log.error("task %s failed to load: %s", name, exc)
            continue
        results: list[EpisodeResult] = []
        for run_idx in range(runs_per_task):
            spec = backend_spec or task.run.planner.llm
            backend = make_backend(
                spec, base_dir=task.root,
                api_key_env=task.run.planner.llm_api_key_env)
            run_policy = Policy(
                kind=policy.kind,
                seed=None if policy.seed is None else policy.seed + run_idx,
                order=policy.order)
            log_path = out / "logs" / name / f"run{run_idx}.jsonl"
            episode_out = out / "artifacts" / name / f"run{run_idx}"
            try:
                with EpisodeLog(log_path) as episode_log:
                    result = run_episode(
                        task, policy=run_policy, backend=backend,
                        episode_log=episode_log,
                        run_label=f"{name}/run{run_idx}",
                        out_dir=episode_out)
            except HardError as exc:
                notes.append(f"task {name!r} run {run_idx} hard error: "
                             f"{exc}")
                log.error("task %s run %d hard error: %s", name, run_idx,
                          exc)
                result = exc.partial_result
                if result is None:
                    break
            results.append(result)
        if len(results) == runs_per_task:
            results_by_task[name] = results
        elif results:
            notes.append(f"task {name!r} dropped from pass@k (only "
                         f"{len(results)}/{runs_per_task} runs finished)")
    if not results_by_task:
        raise ConfigError("no task completed all its runs; nothing to "
                          "aggregate")

    stats = pass_at_k(results_by_task, runs_per_task)
    rates = actor_failure_rate(results_by_task)
    per_task: dict[str, TaskReport] = {}
    for name, results in results_by_task.items():
        steps = [r.total_steps for r in results]
        rate = rates.per_task.get(name)
        per_task[name] = TaskReport(
            task=name,
            pass_fraction=stats.per_task[name],
            steps_mean=statistics.fmean(steps),
            steps_stddev=statistics.pstdev(steps),
            failure_rate_mean=None if rate is None else rate[0],
            failure_rate_stddev=None if rate is None else rate[1],
        )
    all_results = [r for rs in results_by_task.values() for r in rs]
    report = BenchReport(
        k=runs_per_task,
        per_policy={policy.kind: PolicyReport(
            policy=policy.kind,
            episodes=len(all_results),
            pass_mean=stats.mean,
            pass_stddev=stats.stddev,
            run_stddev=stats.run_stddev,
            mean_steps=statistics.fmean(
                r.total_steps for r in all_results),
        )},
        per_task=per_task,
        per_actor=rates.per_actor,
        notes=notes,
    )
    write_report(report, out)
    return report


def write_report(report: BenchReport, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.yaml").write_text(
        yaml.safe_dump(report.to_mapping(), sort_keys=True),
        encoding="utf-8")
    (out / "report.txt").write_text(report.render_text(), encoding="utf-8")
