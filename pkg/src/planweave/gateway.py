"""Prompt templates and chat backends.

Templates use single-brace placeholders ({name}) with doubled braces
({{ and }}) escaping literal brace characters; binding values are
substituted verbatim and never re-scanned, so JSON in a binding cannot
corrupt the output.

Two built-in backends: ``scripted:<path>`` replays a transcript queue
(tests, fixtures) and ``http-chat:<url>`` posts a chat-completions style
request to a local or remote endpoint.
"""
from __future__ import annotations

import json
import logging
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

import yaml

from .errors import (
    BackendUnavailable,
    BudgetExceeded,
    MissingBinding,
    ParseError,
)

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.1
DEFAULT_MAX_TOKENS = 8192
DEFAULT_CALL_BUDGET = 200

# The eight operational templates; feature_selector is the registered
# alias slot outside the default topology.
TEMPLATE_NAMES = (
    "planner",
    "config_generator",
    "utils_retriever",
    "code_template_generator",
    "testcase_generator",
    "testcase_coder",
    "code_generator",
    "hitl",
)
EXTRA_TEMPLATE_NAMES = ("feature_selector",)

_PLACEHOLDER_RE = re.compile(r"[a-z_][a-z0-9_]*")


def _tokenize(body: str, name: str) -> list[tuple[str, str]]:
    """Split a template body into ("lit", text) / ("ph", name) tokens.

    Raises ValueError on stray unescaped braces so authoring mistakes
    surface at construction, not at render time.
    """
    tokens: list[tuple[str, str]] = []
    lit: list[str] = []
    i = 0
    n = len(body)
    while i < n:
        ch = body[i]
        if ch == "{":
            if body.startswith("{{", i):
                lit.append("{")
                i += 2
                continue
            m = _PLACEHOLDER_RE.match(body, i + 1)
            if m is not None and body[m.end():m.end() + 1] == "}":
                if lit:
                    tokens.append(("lit", "".join(lit)))
                    lit = []
                tokens.append(("ph", m.group(0)))
                i = m.end() + 1
                continue
            raise ValueError(
                f"template {name!r}: stray '{{' at offset {i}; use '{{{{' "
                "for a literal brace")
        if ch == "}":
            if body.startswith("}}", i):
                lit.append("}")
                i += 2
                continue
            raise ValueError(
                f"template {name!r}: stray '}}' at offset {i}; use '}}}}' "
                "for a literal brace")
        lit.append(ch)
        i += 1
    if lit:
        tokens.append(("lit", "".join(lit)))
    return tokens


@dataclass(frozen=True)
class PromptTemplate:
    """A named template; required_placeholders is computed from the body
    so the two can never disagree."""

    name: str
    body: str
    required_placeholders: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        tokens = _tokenize(self.body, self.name)
        names = frozenset(t[1] for t in tokens if t[0] == "ph")
        object.__setattr__(self, "required_placeholders", names)


def render(template: PromptTemplate, bindings: dict[str, Any]) -> str:
    """Substitute bindings into the template.

    Missing required names raise MissingBinding (listing every gap);
    unknown extra bindings only log a warning.
    """
    missing = sorted(template.required_placeholders - set(bindings))
    if missing:
        raise MissingBinding(missing, template.name)
    unknown = sorted(set(bindings) - template.required_placeholders)
    if unknown:
        log.warning("template %r: unused bindings %s", template.name, unknown)
    parts: list[str] = []
    for kind, value in _tokenize(template.body, template.name):
        parts.append(value if kind == "lit" else str(bindings[value]))
    return "".join(parts)


def _builtin_template_dir():
    return resources.files("planweave") / "templates"


def load_template(name: str,
                  directory: str | Path | None = None) -> PromptTemplate:
    """Load one template by name from a directory of <name>.txt files,
    defaulting to the built-in set."""
    if directory is not None:
        path = Path(directory) / f"{name}.txt"
        if not path.exists():
            raise FileNotFoundError(f"no template file: {path}")
        body = path.read_text(encoding="utf-8")
    else:
        body = (_builtin_template_dir() / f"{name}.txt").read_text(
            encoding="utf-8")
    return PromptTemplate(name=name, body=body)


def load_all_templates(
        directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    names = TEMPLATE_NAMES + EXTRA_TEMPLATE_NAMES
    return {name: load_template(name, directory) for name in names}


@dataclass
class ChatRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("ChatRequest.prompt must be non-empty")


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class ScriptedBackend:
    """Plays back a fixed queue of responses; exhaustion raises
    BackendUnavailable.  Confined to a single episode by construction:
    build a fresh instance per episode."""

    def __init__(self, responses: list[str]) -> None:
        self._queue = list(responses)
        self.consumed = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            responses = data.get("responses")
        else:
            responses = data
        if not isinstance(responses, list) or not all(
                isinstance(r, str) for r in responses):
            raise ParseError("transcript must be a list of response "
                             "strings (or a mapping with a 'responses' "
                             "list)", path=str(path))
        return cls(responses)

    @property
    def remaining(self) -> int:
        return len(self._queue)

    def complete(self, request: ChatRequest) -> str:
        if not self._queue:
            raise BackendUnavailable(
                f"scripted transcript exhausted after {self.consumed} "
                f"responses (tag {request.tag!r})")
        self.consumed += 1
        return self._queue.pop(0)


class HttpChatBackend:
    """Posts a chat-completions style JSON body to one URL.

    Body: {"model", "messages": [{"role": "user", "content": prompt}],
    "temperature", "max_tokens"}; the reply content is read from
    choices[0].message.content, falling back to a top-level "content"
    key for simpler stubs.  Credentials come from the environment
    variable named in the run configuration, sent as a bearer token.
    """

    def __init__(self, url: str, model: str = "default",
                 api_key_env: str | None = None,
                 timeout: float = 60.0) -> None:
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, request: ChatRequest) -> str:
        body = json.dumps({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            import os
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.url, data=body, headers=headers,
                                     method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise BackendUnavailable(f"http-chat backend failed: {exc}") \
                from exc
        try:
            if "choices" in payload:
                return payload["choices"][0]["message"]["content"]
            return payload["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(
                f"http-chat backend returned an unexpected shape: "
                f"{payload!r}") from exc


def make_backend(spec: str, *, base_dir: str | Path | None = None,
                 api_key_env: str | None = None) -> ChatBackend:
    """Build a backend from a ``scripted:<path>`` or ``http-chat:<url>``
    spec string; relative transcript paths resolve against base_dir."""
    if spec.startswith("scripted:"):
        path = Path(spec[len("scripted:"):])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return ScriptedBackend.from_file(path)
    if spec.startswith("http-chat:"):
        return HttpChatBackend(spec[len("http-chat:"):],
                               api_key_env=api_key_env)
    raise ParseError(
        f"unknown backend spec {spec!r}; expected 'scripted:<path>' or "
        "'http-chat:<url>'")


class CallBudget:
    """Per-episode cap on chat calls."""

    def __init__(self, limit: int = DEFAULT_CALL_BUDGET) -> None:
        self.limit = limit
        self.used = 0

    def charge(self) -> None:
        if self.used >= self.limit:
            raise BudgetExceeded(
                f"episode chat budget of {self.limit} calls exhausted")
        self.used += 1


def chat(backend: ChatBackend, request: ChatRequest, *,
         budget: CallBudget | None = None, episode_log=None,
         clock=None) -> str:
    """One gateway call: charge the budget, hit the backend, and append
    the (request, response) pair to the episode log when one is given."""
    if budget is not None:
        budget.charge()
    response = backend.complete(request)
    if episode_log is not None:
        from .eventlog import chat_record
        ts = clock() if clock is not None else 0
        episode_log.write(chat_record(request.tag, request.prompt,
                                      response, ts))
    return response


class LlmClient:
    """Binds a backend to one episode's budget, log and clock."""

    def __init__(self, backend: ChatBackend,
                 budget: CallBudget | None = None,
                 episode_log=None, clock=None) -> None:
        self.backend = backend
        self.budget = budget
        self.episode_log = episode_log
        self.clock = clock

    def chat(self, prompt: str, tag: str = "") -> str:
        request = ChatRequest(prompt=prompt, tag=tag)
        return chat(self.backend, request, budget=self.budget,
                    episode_log=self.episode_log, clock=self.clock)
