"""Acceptance gate: one test per shipped guarantee, each printing a
single PASS/FAIL line.  Run with -s to see the lines as they happen.

A session-scoped corpus of 1000+ randomized scripted episodes feeds the
retry-cap and transition-legality checks; everything else runs against
the fixtures directly.
"""
import json
import math
import random
import shutil
import threading
import time
import urllib.request
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import pytest
import yaml

from planweave.actors import parse_tagged
from planweave.bench import (
    SimulatedActorModel,
    actor_failure_rate,
    load_simulation_config,
    pass_at_k,
    run_bench,
    simulate_episode,
    simulate_policies,
)
from planweave.control import EpisodeRegistry, serve_control
from planweave.errors import MissingFile, ParseError, RefError
from planweave.eventlog import EpisodeLog, read_log, replay_consistency
from planweave.gateway import ScriptedBackend, load_all_templates, render
from planweave.model import (
    DEFAULT_SEQUENTIAL_ORDER,
    EpisodeResult,
    TopologyGraph,
    default_topology,
)
from planweave.orchestrator import HitlChannel, Policy, run_episode
from planweave.taskio import load_task

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"
GRAPH = default_topology()


@contextmanager
def _criterion(name):
    try:
        yield
    except Exception as exc:
        print(f"\n[FAIL] {name}: {exc}")
        raise
    print(f"\n[PASS] {name}")


# --- randomized episode corpus --------------------------------------------

BAD_PAYLOAD = ("<reason>draft came out wrong</reason>\n"
               "<fix>rewrite it</fix>\n"
               "```\n# sim: fail forced\n```\n")
NO_PAYLOAD = "I could not produce anything fenced this time."
TERMINATE_RESP = ("<reason>the inputs look unusable</reason>\n"
                  "<fix>TERMINATE</fix>\n"
                  "```\n# abandoned\n```\n")


def _good_responses(task_root):
    doc = yaml.safe_load((task_root / "transcript.yaml").read_text())
    return dict(zip(DEFAULT_SEQUENTIAL_ORDER, doc["responses"]))


def _sequential_script(rng, good):
    """Build a response list for one sequential episode: per actor slot,
    a random number of failing attempts, then success or TERMINATE."""
    responses = []
    cg_ok = False
    for actor in DEFAULT_SEQUENTIAL_ORDER[:5]:
        n_bad = rng.choice((0, 0, 0, 0, 1, 1, 2, 3, 5, 5))
        responses.extend(rng.choice((BAD_PAYLOAD, NO_PAYLOAD))
                         for _ in range(n_bad))
        ok = False
        if n_bad < 5:
            if rng.random() < 0.06:
                responses.append(TERMINATE_RESP)
            else:
                responses.append(good[actor])
                ok = True
        if actor == "code_generator":
            cg_ok = ok
    if cg_ok:                       # coder only runs behind a green gate
        n_bad = rng.choice((0, 0, 0, 1, 2, 5))
        responses.extend(rng.choice((BAD_PAYLOAD, NO_PAYLOAD))
                         for _ in range(n_bad))
        if n_bad < 5:
            responses.append(good["testcase_coder"])
    return responses


def _unique_markers(templates):
    """One static line per actor template found in no other template,
    used to route prompts back to the actor that asked."""
    bodies = {a: templates[a].body for a in DEFAULT_SEQUENTIAL_ORDER}
    markers = {}
    for actor, body in bodies.items():
        for line in body.splitlines():
            line = line.strip()
            if len(line) < 12 or "{" in line:
                continue
            if all(line not in other
                   for name, other in bodies.items() if name != actor):
                markers[actor] = line
                break
    assert len(markers) == len(bodies), "actor templates not distinctive"
    return markers


class _RouterBackend:
    """Scripted responses keyed by which actor's prompt arrived, so the
    random policy can visit actors in any legal order."""

    def __init__(self, rng, markers, good):
        self.rng = rng
        self.markers = markers
        self.good = good

    def complete(self, request):
        hits = [a for a, marker in self.markers.items()
                if marker in request.prompt]
        assert len(hits) == 1, f"ambiguous prompt routing: {hits}"
        roll = self.rng.random()
        if roll < 0.12:
            return NO_PAYLOAD
        if roll < 0.30:
            return BAD_PAYLOAD
        if roll < 0.33:
            return TERMINATE_RESP
        return self.good[hits[0]]


@pytest.fixture(scope="session")
def episode_corpus(tmp_path_factory):
    """1000 randomized scripted episodes (700 sequential, 300 random
    policy) plus the four fixture scenarios, all logged to disk."""
    root = tmp_path_factory.mktemp("acceptance-episodes")
    for name in ("t0", "t1"):
        shutil.copytree(FIXTURES / "tasks" / name, root / name)
    task = load_task(root / "t0" / "run.yaml")
    good = _good_responses(root / "t0")
    templates = load_all_templates()
    markers = _unique_markers(templates)
    logs = []
    rng = random.Random("acceptance-corpus")

    for i in range(700):
        path = root / "logs" / f"seq{i}.jsonl"
        with EpisodeLog(path) as log:
            run_episode(task, policy=Policy(kind="sequential"),
                        backend=ScriptedBackend(
                            _sequential_script(rng, good)),
                        templates=templates, episode_log=log,
                        write_outputs=False)
        logs.append(path)

    for i in range(300):
        path = root / "logs" / f"rand{i}.jsonl"
        backend = _RouterBackend(random.Random(f"router:{i}"), markers,
                                 good)
        with EpisodeLog(path) as log:
            run_episode(task, policy=Policy(kind="random", seed=i),
                        backend=backend, templates=templates,
                        episode_log=log, write_outputs=False)
        logs.append(path)

    # fixture scenarios: clean pass, planner with a HITL exchange,
    # planner seeing a TERMINATE, and a retry-cap abort
    scenarios = [
        ("clean", root / "t0", "sequential", "transcript.yaml", None),
        ("hitl", root / "t0", "planner", "planner_transcript.yaml", None),
        ("term", root / "t0", "planner", "terminate_transcript.yaml", 5),
        ("abort", root / "t1", "sequential", "transcript.yaml", None),
    ]
    for name, troot, kind, transcript, cap in scenarios:
        scenario_task = load_task(troot / "run.yaml")
        if cap is not None:
            scenario_task.run.planner.max_iterations = cap
        path = root / "logs" / f"{name}.jsonl"
        with EpisodeLog(path) as log:
            run_episode(scenario_task, policy=Policy(kind=kind),
                        backend=ScriptedBackend.from_file(
                            troot / transcript),
                        templates=templates, episode_log=log,
                        write_outputs=False)
        logs.append(path)
    return {"logs": logs, "randomized": 1000}


def test_policy_ordering_under_shipped_calibration():
    with _criterion("policy ordering: informed > sequential > random, "
                    "gaps >= 0.05, 500 episodes/policy, < 60 s"):
        start = time.monotonic()
        config = load_simulation_config(FIXTURES / "sim" /
                                        "calibration.yaml")
        report = simulate_policies(config["models"],
                                   episodes_per_policy=500, seed=7,
                                   max_iterations=config["max_iterations"],
                                   k=config["k"])
        elapsed = time.monotonic() - start
        means = {n: p.pass_mean for n, p in report.per_policy.items()}
        assert elapsed < 60, f"took {elapsed:.1f}s"
        assert means["informed"] > means["sequential"] > means["random"], \
            means
        assert means["informed"] - means["sequential"] >= 0.05, means
        assert means["sequential"] - means["random"] >= 0.05, means


def test_retry_cap_across_randomized_episodes(episode_corpus):
    with _criterion("retry cap: no actor outcome exceeds 5 attempts "
                    "over 1000+ randomized scripted episodes"):
        episodes = 0
        capped = 0
        for path in episode_corpus["logs"]:
            records = read_log(path)
            episodes += sum(1 for r in records if r["type"] == "result")
            for rec in records:
                if rec["type"] != "step" or rec["call_type"] != "actor":
                    continue
                attempts = rec["outcome"]["attempts"]
                assert 1 <= attempts <= 5, f"{path}: {attempts} attempts"
                if attempts == 5:
                    capped += 1
        assert episodes >= 1000, f"only {episodes} episodes"
        assert capped > 0, "corpus never hit the retry cap"


def test_transition_legality_across_all_logs(episode_corpus):
    with _criterion("transition legality: zero violations replaying "
                    "every log the corpus produced"):
        gate_exercised = 0
        for path in episode_corpus["logs"]:
            records = read_log(path)
            problems = replay_consistency(records, GRAPH)
            assert problems == [], f"{path}: {problems}"
            for rec in records:
                if rec["type"] == "step" and \
                        rec["target"] == "testcase_coder":
                    gate_exercised += 1
        assert gate_exercised > 0, "no log ever reached testcase_coder"


def test_terminate_reaches_the_next_decision(t0, tmp_path):
    with _criterion("TERMINATE routing: terminated outcome logged and "
                    "visible in the next decision prompt"):
        task = load_task(t0 / "run.yaml")
        task.run.planner.max_iterations = 5
        log_path = tmp_path / "ep.jsonl"
        with EpisodeLog(log_path) as log:
            run_episode(task, policy=Policy(kind="planner"),
                        backend=ScriptedBackend.from_file(
                            t0 / "terminate_transcript.yaml"),
                        episode_log=log)
        records = read_log(log_path)
        terminated = [r for r in records if r["type"] == "step"
                      and r["outcome"].get("terminated")]
        assert len(terminated) == 1
        assert terminated[0]["outcome"]["success"] is False
        term_index = terminated[0]["index"]
        planner_after = [
            r for r in records if r["type"] == "chat"
            and r["tag"] == "planner" and "terminated=True" in r["prompt"]
        ]
        assert planner_after, "no later planner prompt saw the TERMINATE"
        assert any(s["type"] == "step" and s["index"] > term_index
                   for s in records) or records[-1]["type"] == "result"


# --- metric oracles --------------------------------------------------------

def _oracle_pass_at_k(results_by_task, k):
    per_task = {}
    outcomes = []
    for task, results in results_by_task.items():
        wins = sum(1 for r in results if r.status == "success")
        per_task[task] = wins / k
        outcomes.extend(1 if r.status == "success" else 0 for r in results)
    values = list(per_task.values())

    def pop_std(xs):
        m = sum(Fraction(x) for x in xs) / len(xs)
        return math.sqrt(sum((Fraction(x) - m) ** 2 for x in xs) / len(xs))

    return (per_task, math.fsum(values) / len(values), pop_std(values),
            pop_std(outcomes))


def _oracle_failure_rates(results_by_task):
    per_task = {}
    counts = {}
    for task, results in results_by_task.items():
        rates = []
        for res in results:
            s = sum(a for a, _ in res.per_actor.values())
            f = sum(b for _, b in res.per_actor.values())
            if s + f:
                rates.append(f / (s + f) * 100.0)
            for actor, (a, b) in res.per_actor.items():
                bucket = counts.setdefault(actor, [0, 0])
                bucket[0] += a
                bucket[1] += b
        if rates:
            m = sum(Fraction(x) for x in rates) / len(rates)
            std = math.sqrt(
                sum((Fraction(x) - m) ** 2 for x in rates) / len(rates))
            per_task[task] = (math.fsum(rates) / len(rates), std)
    per_actor = {a: (s, f, f / (s + f) * 100.0)
                 for a, (s, f) in counts.items() if s + f}
    return per_task, per_actor


def _random_result_sets(rng, n_sets=100):
    actors = sorted(GRAPH.actors)
    for _ in range(n_sets):
        k = rng.randrange(1, 6)
        tasks = {}
        for t in range(rng.randrange(1, 7)):
            runs = []
            for _ in range(k):
                per_actor = {}
                for actor in rng.sample(actors, rng.randrange(0, 4)):
                    per_actor[actor] = (rng.randrange(0, 5),
                                        rng.randrange(0, 5))
                status = "success" if rng.random() < 0.5 else \
                    "exhausted_iterations"
                runs.append(EpisodeResult(
                    status=status, total_steps=rng.randrange(1, 12),
                    per_actor=per_actor, hitl_exchanges=0))
            tasks[f"task{t}"] = runs
        yield k, tasks


def test_metric_oracles_bitwise_and_worked_example():
    with _criterion("metrics: pass@k and failure rates equal brute-force "
                    "recomputation on 100 sets; 63/51 -> 44.7 +/- 0.05pp"):
        rng = random.Random(9090)
        checked = 0
        for k, tasks in _random_result_sets(rng):
            got = pass_at_k(tasks, k)
            per_task, mean, stddev, run_stddev = _oracle_pass_at_k(tasks, k)
            assert got.per_task == per_task
            assert got.mean == mean
            assert got.stddev == stddev
            assert got.run_stddev == run_stddev

            rates = actor_failure_rate(tasks)
            oracle_tasks, oracle_actors = _oracle_failure_rates(tasks)
            assert rates.per_actor == oracle_actors
            for name, (mean_rate, std_rate) in oracle_tasks.items():
                assert rates.per_task[name] == (mean_rate, std_rate)
            checked += 1
        assert checked == 100

        one = {"t": [EpisodeResult(
            status="success", total_steps=1,
            per_actor={"code_generator": (63, 51)}, hitl_exchanges=0)]}
        _, per_actor = _oracle_failure_rates(one)
        rate = actor_failure_rate(one).per_actor["code_generator"][2]
        assert rate == per_actor["code_generator"][2]
        assert abs(rate - 44.7) <= 0.05, rate


def test_golden_prompts_and_tagged_output_forms():
    with _criterion("prompts: every template matches its golden "
                    "byte-for-byte; tagged output round-trips all forms"):
        templates = load_all_templates()
        goldens = sorted(GOLDEN.glob("*.txt"))
        assert len(goldens) >= 8, "golden corpus incomplete"
        assert {p.stem for p in goldens} == set(templates)
        for path in goldens:
            template = templates[path.stem]
            bindings = {ph: f"<{ph} sample>"
                        for ph in template.required_placeholders}
            assert render(template, bindings).encode() == \
                path.read_bytes(), f"{path.stem} drifted"

        full = parse_tagged("<reason>schema mismatch</reason>\n"
                            "<fix>rename the field</fix>\n"
                            "```yaml\nfeature_name: x\n```\n")
        assert (full.reason, full.fix, full.payload) == \
            ("schema mismatch", "rename the field", "feature_name: x")
        bare = parse_tagged("here you go\n```python\nprint(1)\n```")
        assert bare.reason is None and bare.fix is None
        assert bare.payload == "print(1)"
        blank = parse_tagged("<reason></reason><fix></fix>\n```\nbody\n```")
        assert blank.reason == "" and blank.fix == ""
        assert blank.payload == "body"
        term = parse_tagged("<reason>stuck</reason>\n<fix>TERMINATE</fix>\n"
                            "```python\n# abandoned draft\n```")
        assert term.terminated is True


def test_config_round_trip_and_named_failures(t0, tmp_path):
    with _criterion("configs: FSC/DFR/run re-serialize equal; dangling "
                    "ref, missing cap, missing file raise named errors"):
        task = load_task(t0 / "run.yaml")
        for part in (task.fsc, task.dfr, task.run):
            dumped = yaml.safe_dump(part.to_mapping())
            assert yaml.safe_load(dumped) == part.to_mapping()

        broken = tmp_path / "dangling"
        shutil.copytree(t0, broken)
        fsc_path = broken / "input" / "fsc.yaml"
        doc = yaml.safe_load(fsc_path.read_text())
        doc["features"][0]["source_columns"] = ["phantom_dataset.x"]
        fsc_path.write_text(yaml.safe_dump(doc))
        with pytest.raises(RefError):
            load_task(broken / "run.yaml")

        broken = tmp_path / "nocap"
        shutil.copytree(t0, broken)
        run_path = broken / "run.yaml"
        doc = yaml.safe_load(run_path.read_text())
        del doc["planner"]["max_iterations"]
        run_path.write_text(yaml.safe_dump(doc))
        with pytest.raises(ParseError):
            load_task(run_path)

        broken = tmp_path / "nofile"
        shutil.copytree(t0, broken)
        (broken / "input" / "dfr.yaml").unlink()
        with pytest.raises(MissingFile):
            load_task(broken / "run.yaml")


# --- simulator validity -----------------------------------------------------

CHAIN = TopologyGraph(actors=frozenset({"A", "B"}),
                      transitions={"A": ("B",), "B": ("A",)},
                      entry="A", terminal_markers=frozenset({"B"}))
P_A, P_B, BETA, REPAIRED = 0.7, 0.4, 0.8, 0.9
CHAIN_MODELS = {
    "A": SimulatedActorModel(name="A", base_success_prob=P_A),
    "B": SimulatedActorModel(name="B", base_success_prob=P_B,
                             upstream_blame="A", blame_prob=BETA,
                             repaired_success_prob=REPAIRED),
}


def _chain_informed_exact(m):
    pa, pb = Fraction(7, 10), Fraction(4, 10)
    beta, rep = Fraction(8, 10), Fraction(9, 10)

    def walk(steps_left, target, st_a, st_b, repaired, pending):
        if steps_left == 0:
            return Fraction(0)
        if target == "A":
            total = Fraction(0)
            if st_b is True:
                total += pa
            else:
                total += pa * walk(steps_left - 1, "B", True, st_b,
                                   repaired or pending, False)
            total += (1 - pa) * walk(steps_left - 1, "B", False, st_b,
                                     repaired, pending)
            return total
        p = rep if repaired else pb
        total = Fraction(0)
        if st_a is True:
            total += p
        else:
            total += p * walk(steps_left - 1, "A", st_a, True, repaired,
                              pending)
        fail = 1 - p
        total += fail * beta * walk(steps_left - 1, "A", st_a, False,
                                    repaired, True)
        total += fail * (1 - beta) * walk(steps_left - 1, "A", st_a,
                                          False, repaired, pending)
        return total

    return walk(m, "A", None, None, False, False)


def test_simulator_against_analytic_chain():
    with _criterion("simulator: 2-actor chain within 3 SE of the exact "
                    "value at 10,000 episodes, < 10 s"):
        start = time.monotonic()
        n = 10_000

        rng = random.Random("chain:sequential")
        wins = sum(
            simulate_episode(CHAIN_MODELS, CHAIN, "sequential", rng,
                             max_iterations=6, order=("A", "B")).success
            for _ in range(n))
        p = P_A * P_B                       # closed form: one shot each
        se = math.sqrt(p * (1 - p) / n)
        assert abs(wins / n - p) <= 3 * se, (wins / n, p)

        exact = float(_chain_informed_exact(6))
        rng = random.Random("chain:informed")
        wins = sum(
            simulate_episode(CHAIN_MODELS, CHAIN, "informed", rng,
                             max_iterations=6, order=("A", "B")).success
            for _ in range(n))
        se = math.sqrt(exact * (1 - exact) / n)
        assert abs(wins / n - exact) <= 3 * se, (wins / n, exact)

        elapsed = time.monotonic() - start
        assert elapsed < 10, f"took {elapsed:.1f}s"


def test_bench_protocol_over_fixture_tasks(tasks_dir, tmp_path):
    with _criterion("bench: 3 runs over both fixture tasks in < 30 s "
                    "with policy and per-task report tables"):
        start = time.monotonic()
        out = tmp_path / "bench-out"
        report = run_bench(tasks_dir, Policy(kind="sequential"), 3, out)
        elapsed = time.monotonic() - start
        assert elapsed < 30, f"took {elapsed:.1f}s"
        assert set(report.per_task) == {"t0", "t1"}
        text = (out / "report.txt").read_text()
        assert "pass@3 by policy: mean (stddev over tasks)" in text
        assert "decision steps (incl. hitl)" in text
        assert "failure %" in text
        for needle in ("t0", "t1", "sequential"):
            assert needle in text


def test_console_answer_loop_and_fallback(t0, tmp_path):
    with _criterion("console loop: posted answer unblocks the episode "
                    "as mode=console; absent console falls back to the "
                    "default answer"):
        registry = EpisodeRegistry()
        server = serve_control(registry)
        try:
            task = load_task(t0 / "run.yaml")
            episode_id = registry.register("user_txn_rollup")
            hitl = HitlChannel(mode="console", registry=registry,
                               episode_id=episode_id,
                               default_answer=task.run.planner
                               .hitl_default_answer, timeout=10.0)
            log_path = tmp_path / "console.jsonl"
            holder = {}

            def worker():
                with EpisodeLog(log_path) as log:
                    holder["result"] = run_episode(
                        task, policy=Policy(kind="planner"),
                        backend=ScriptedBackend.from_file(
                            t0 / "planner_transcript.yaml"),
                        hitl=hitl, episode_log=log, registry=registry,
                        episode_id=episode_id, write_outputs=False)

            thread = threading.Thread(target=worker)
            thread.start()
            base = f"http://127.0.0.1:{server.port}"
            pending = []
            deadline = time.monotonic() + 10
            while time.monotonic() < deadline and not pending:
                with urllib.request.urlopen(
                        f"{base}/episodes/{episode_id}/questions") as resp:
                    pending = json.load(resp)["pending"]
                if not pending:
                    time.sleep(0.02)
            assert pending, "episode never asked its question"
            body = json.dumps({
                "episode_id": episode_id,
                "question_id": pending[0]["question_id"],
                "answer": "Yes, write to dev.",
            }).encode()
            req = urllib.request.Request(
                f"{base}/answers", data=body,
                headers={"Content-Type": "application/json"})
            with urllib.request.urlopen(req) as resp:
                assert resp.status == 200
            thread.join(timeout=15)
            assert not thread.is_alive()
            assert holder["result"].status == "success"
            steps = [r for r in read_log(log_path) if r["type"] == "step"]
            tool = [s for s in steps if s["call_type"] == "tool"]
            assert tool[0]["outcome"]["mode"] == "console"
            assert tool[0]["outcome"]["answer"] == "Yes, write to dev."
        finally:
            server.stop()

        # no console posts an answer: the default unblocks the episode
        registry = EpisodeRegistry()
        episode_id = registry.register("user_txn_rollup")
        task = load_task(t0 / "run.yaml")
        hitl = HitlChannel(mode="console", registry=registry,
                           episode_id=episode_id,
                           default_answer=task.run.planner
                           .hitl_default_answer, timeout=0.05)
        log_path = tmp_path / "fallback.jsonl"
        with EpisodeLog(log_path) as log:
            result = run_episode(
                task, policy=Policy(kind="planner"),
                backend=ScriptedBackend.from_file(
                    t0 / "planner_transcript.yaml"),
                hitl=hitl, episode_log=log, registry=registry,
                episode_id=episode_id, write_outputs=False)
        assert result.status == "success"
        steps = [r for r in read_log(log_path) if r["type"] == "step"]
        tool = [s for s in steps if s["call_type"] == "tool"]
        assert tool[0]["outcome"]["mode"] == "default"
