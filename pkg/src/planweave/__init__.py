"""planweave: a workflow engine that drives six code-generation actors
over a constrained transition graph, with planner / sequential / random
policies, retroactive upstream correction, human escalation, a benchmark
harness, and a local control endpoint.
"""
from .actors import (
    ExecutionHarness,
    HarnessResult,
    parse_tagged,
    run_actor,
)
from .bench import (
    BenchReport,
    FailureRates,
    PassAtK,
    SimulatedActorModel,
    actor_failure_rate,
    load_simulation_config,
    pass_at_k,
    run_bench,
    simulate_episode,
    simulate_policies,
)
from .control import ControlServer, EpisodeRegistry, serve_control
from .errors import (
    ArityError,
    BackendUnavailable,
    BudgetExceeded,
    ConfigError,
    EvaluatorError,
    HardError,
    HitlTimeout,
    IoError,
    MissingBinding,
    MissingFile,
    NoPayload,
    ParseError,
    PlannerAbort,
    PlanweaveError,
    PolicyExhausted,
    PortInUse,
    RefError,
    StaleQuestion,
)
from .eventlog import (
    EpisodeLog,
    check_legality,
    read_log,
    replay_consistency,
)
from .gateway import (
    ChatRequest,
    HttpChatBackend,
    LlmClient,
    PromptTemplate,
    ScriptedBackend,
    load_all_templates,
    load_template,
    make_backend,
)
from .model import (
    ActorOutcome,
    ActorSpec,
    EpisodeResult,
    HitlExchange,
    ShortTermMemory,
    StepRecord,
    TopologyGraph,
    default_actor_specs,
    default_topology,
    episode_success,
    legal_next,
    legal_successors,
    validate_topology,
)
from .orchestrator import (
    HitlChannel,
    PlannerDecision,
    Policy,
    decide_next,
    parse_planner_decision,
    run_episode,
)
from .taskio import TaskSpec, load_task, write_artifacts

__version__ = "0.1.0"

__all__ = [
    "ActorOutcome",
    "ActorSpec",
    "ArityError",
    "BackendUnavailable",
    "BenchReport",
    "BudgetExceeded",
    "ChatRequest",
    "ConfigError",
    "ControlServer",
    "EpisodeLog",
    "EpisodeRegistry",
    "EpisodeResult",
    "EvaluatorError",
    "ExecutionHarness",
    "FailureRates",
    "HardError",
    "HarnessResult",
    "HitlChannel",
    "HitlExchange",
    "HitlTimeout",
    "HttpChatBackend",
    "IoError",
    "LlmClient",
    "MissingBinding",
    "MissingFile",
    "NoPayload",
    "ParseError",
    "PassAtK",
    "PlannerAbort",
    "PlannerDecision",
    "PlanweaveError",
    "Policy",
    "PolicyExhausted",
    "PortInUse",
    "PromptTemplate",
    "RefError",
    "ScriptedBackend",
    "ShortTermMemory",
    "SimulatedActorModel",
    "StaleQuestion",
    "StepRecord",
    "TaskSpec",
    "TopologyGraph",
    "actor_failure_rate",
    "check_legality",
    "decide_next",
    "default_actor_specs",
    "default_topology",
    "episode_success",
    "legal_next",
    "legal_successors",
    "load_all_templates",
    "load_simulation_config",
    "load_task",
    "load_template",
    "make_backend",
    "parse_planner_decision",
    "parse_tagged",
    "pass_at_k",
    "read_log",
    "replay_consistency",
    "run_actor",
    "run_bench",
    "run_episode",
    "serve_control",
    "simulate_episode",
    "simulate_policies",
    "validate_topology",
    "write_artifacts",
]
