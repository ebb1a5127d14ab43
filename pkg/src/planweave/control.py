"""Local HTTP control endpoint for live episodes.

Routes (all JSON unless noted):
  GET  /episodes                       list of episode summaries
  GET  /episodes/<id>/events           SSE stream of log records
  GET  /episodes/<id>/questions        pending HITL questions
  GET  /episodes/<id>/artifacts        latest artifact per kind
  POST /answers                        {episode_id, question_id?, answer}

The event stream backfills everything recorded so far, then follows the
live episode; the trailing "result" record ends the stream.  Answers to
questions already answered or timed out get 409 (stale); unknown ids
get 404.
"""
from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .errors import HitlTimeout, PortInUse
from .model import EpisodeResult

log = logging.getLogger(__name__)

DEFAULT_CONTROL_PORT = 8765


@dataclass
class Question:
    question_id: str
    question: str
    context: str
    answered: bool = False
    stale: bool = False
    answer: str | None = None
    event: threading.Event = field(default_factory=threading.Event)


@dataclass
class _Episode:
    episode_id: str
    run_label: str
    status: str = "running"
    events: list[dict[str, Any]] = field(default_factory=list)
    questions: dict[str, Question] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    question_seq: int = 0


class EpisodeRegistry:
    """Thread-safe bridge between running episodes and the HTTP
    handlers: an event buffer, a pending-question table, and the latest
    artifact snapshot per episode."""

    def __init__(self) -> None:
        self._lock = threading.Condition()
        self._episodes: dict[str, _Episode] = {}
        self._seq = 0

    def register(self, run_label: str) -> str:
        with self._lock:
            self._seq += 1
            episode_id = f"ep-{self._seq}"
            self._episodes[episode_id] = _Episode(episode_id, run_label)
            self._lock.notify_all()
            return episode_id

    def publish(self, episode_id: str, record: dict[str, Any]) -> None:
        with self._lock:
            ep = self._episodes[episode_id]
            ep.events.append(record)
            self._lock.notify_all()

    def set_artifacts(self, episode_id: str,
                      artifacts: dict[str, str]) -> None:
        with self._lock:
            self._episodes[episode_id].artifacts = dict(artifacts)

    def finish(self, episode_id: str, result: EpisodeResult) -> None:
        with self._lock:
            self._episodes[episode_id].status = result.status
            self._lock.notify_all()

    def ask(self, episode_id: str, question: str, context: str,
            timeout: float) -> str:
        """Block until the console answers or the timeout lapses."""
        with self._lock:
            ep = self._episodes[episode_id]
            ep.question_seq += 1
            q = Question(question_id=f"q{ep.question_seq}",
                         question=question, context=context)
            ep.questions[q.question_id] = q
            self._lock.notify_all()
        if not q.event.wait(timeout):
            with self._lock:
                q.stale = True
            raise HitlTimeout(f"question {q.question_id} unanswered after "
                              f"{timeout:.0f}s")
        assert q.answer is not None
        return q.answer

    def answer(self, episode_id: str, answer: str,
               question_id: str | None = None) -> tuple[int, str]:
        """Returns (http_status, message)."""
        with self._lock:
            ep = self._episodes.get(episode_id)
            if ep is None:
                return 404, f"unknown episode {episode_id!r}"
            if question_id is None:
                pending = [q for q in ep.questions.values()
                           if not q.answered and not q.stale]
                if not pending:
                    return 409, "no pending question (stale answer)"
                q = pending[0]
            else:
                q = ep.questions.get(question_id)
                if q is None:
                    return 404, f"unknown question {question_id!r}"
                if q.answered or q.stale:
                    return 409, (f"question {question_id!r} already "
                                 "answered or timed out (stale)")
            q.answered = True
            q.answer = answer
            q.event.set()
            self._lock.notify_all()
            return 200, q.question_id

    def pending_questions(self, episode_id: str) -> list[dict] | None:
        with self._lock:
            ep = self._episodes.get(episode_id)
            if ep is None:
                return None
            return [{"question_id": q.question_id, "question": q.question,
                     "context": q.context}
                    for q in ep.questions.values()
                    if not q.answered and not q.stale]

    def artifacts(self, episode_id: str) -> list[dict] | None:
        with self._lock:
            ep = self._episodes.get(episode_id)
            if ep is None:
                return None
            return [{"kind": kind, "content": content}
                    for kind, content in sorted(ep.artifacts.items())]

    def summaries(self) -> list[dict]:
        with self._lock:
            return [{"episode_id": ep.episode_id,
                     "run_label": ep.run_label,
                     "status": ep.status,
                     "events": len(ep.events)}
                    for ep in self._episodes.values()]

    def status_of(self, episode_id: str) -> str | None:
        with self._lock:
            ep = self._episodes.get(episode_id)
            return None if ep is None else ep.status

    def events_since(self, episode_id: str,
                     cursor: int) -> tuple[list[dict], bool] | None:
        """Events after cursor plus whether the episode is finished;
        blocks briefly when nothing is new."""
        with self._lock:
            ep = self._episodes.get(episode_id)
            if ep is None:
                return None
            if len(ep.events) <= cursor and ep.status == "running":
                self._lock.wait(timeout=0.5)
            fresh = ep.events[cursor:]
            return fresh, ep.status != "running"


_EPISODE_ROUTE = re.compile(
    r"^/episodes/([\w.\-]+)/(events|questions|artifacts)$")


class _Handler(BaseHTTPRequestHandler):
    registry: EpisodeRegistry    # set by the server factory
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args) -> None:
        log.debug("control: " + fmt, *args)

    def _json(self, status: int, payload: Any) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:   # noqa: N802 (http.server API)
        if self.path in ("/", "/episodes"):
            self._json(200, {"episodes": self.registry.summaries()})
            return
        m = _EPISODE_ROUTE.match(self.path)
        if m is None:
            self._json(404, {"error": f"no route {self.path!r}"})
            return
        episode_id, what = m.group(1), m.group(2)
        if what == "events":
            self._stream_events(episode_id)
            return
        if what == "questions":
            pending = self.registry.pending_questions(episode_id)
            if pending is None:
                self._json(404, {"error": f"unknown episode {episode_id!r}"})
                return
            self._json(200, {"pending": pending})
            return
        artifacts = self.registry.artifacts(episode_id)
        if artifacts is None:
            self._json(404, {"error": f"unknown episode {episode_id!r}"})
            return
        self._json(200, {"artifacts": artifacts})

    def _stream_events(self, episode_id: str) -> None:
        if self.registry.status_of(episode_id) is None:
            self._json(404, {"error": f"unknown episode {episode_id!r}"})
            return
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        # no content length, so the stream is close-delimited: without
        # this, keep-alive clients never see the episode end
        self.close_connection = True
        cursor = 0
        try:
            while True:
                got = self.registry.events_since(episode_id, cursor)
                if got is None:
                    break
                fresh, finished = got
                for record in fresh:
                    data = json.dumps(record, sort_keys=True)
                    self.wfile.write(
                        f"id: {cursor}\ndata: {data}\n\n".encode("utf-8"))
                    cursor += 1
                self.wfile.flush()
                if finished and not fresh:
                    break
                if not fresh and not finished:
                    self.wfile.write(b": ping\n\n")
                    self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass

    def do_POST(self) -> None:   # noqa: N802
        if self.path != "/answers":
            self._json(404, {"error": f"no route {self.path!r}"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._json(400, {"error": "body must be JSON"})
            return
        episode_id = body.get("episode_id")
        answer = body.get("answer")
        if not isinstance(episode_id, str) or not isinstance(answer, str):
            self._json(400, {"error": "episode_id and answer are required "
                                      "strings"})
            return
        status, detail = self.registry.answer(episode_id, answer,
                                              body.get("question_id"))
        if status == 200:
            self._json(200, {"accepted": True, "question_id": detail})
        else:
            self._json(status, {"error": detail})

    def do_OPTIONS(self) -> None:   # noqa: N802
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods",
                         "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()


class ControlServer:
    """Owns the HTTP server thread; use as a context manager or call
    stop() explicitly."""

    def __init__(self, registry: EpisodeRegistry,
                 host: str = "127.0.0.1", port: int = 0) -> None:
        handler = type("BoundHandler", (_Handler,), {"registry": registry})
        try:
            self._server = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise PortInUse(f"cannot bind control endpoint on "
                            f"{host}:{port}: {exc}") from exc
        self.registry = registry
        self.host, self.port = self._server.server_address[:2]
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="planweave-control",
                                        daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "ControlServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_control(registry: EpisodeRegistry, host: str = "127.0.0.1",
                  port: int = 0) -> ControlServer:
    """Start the control endpoint; returns the running server handle."""
    return ControlServer(registry, host=host, port=port)
