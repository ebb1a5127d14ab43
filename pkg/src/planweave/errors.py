"""Exception types shared across the package.

Kept in one module so the layered modules (model -> taskio/gateway ->
actors -> orchestrator -> bench/cli) never import each other just for
an error class.
"""
from __future__ import annotations


class PlanweaveError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PlanweaveError):
    """A document failed to parse or is missing a required field."""

    def __init__(self, message: str, *, path: str | None = None,
                 line: int | None = None, column: int | None = None) -> None:
        loc = ""
        if path:
            loc += f" [{path}"
            if line is not None:
                loc += f":{line}"
                if column is not None:
                    loc += f":{column}"
            loc += "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line
        self.column = column


class RefError(PlanweaveError):
    """A cross-document reference does not resolve."""

    def __init__(self, ref: str, message: str) -> None:
        super().__init__(f"{message}: {ref!r}")
        self.ref = ref


class MissingFile(PlanweaveError):
    """A path declared by the run configuration does not exist."""

    def __init__(self, path: str) -> None:
        super().__init__(f"declared path does not exist: {path}")
        self.missing_path = path


class IoError(PlanweaveError):
    """An artifact write failed or escaped the allowed directories."""


class MissingBinding(PlanweaveError):
    """render() was called without values for required placeholders."""

    def __init__(self, names: list[str], template: str) -> None:
        super().__init__(
            f"template {template!r} missing bindings: {', '.join(names)}")
        self.names = names


class BackendUnavailable(PlanweaveError):
    """The chat backend cannot produce a response (retriable)."""


class BudgetExceeded(PlanweaveError):
    """The per-episode chat call budget was exhausted."""


class NoPayload(PlanweaveError):
    """An actor response contained no fenced payload block."""


class EvaluatorError(PlanweaveError):
    """The execution harness itself crashed (distinct from a failed
    success criterion)."""


class HardError(PlanweaveError):
    """Unrecoverable infrastructure failure; carries the partial episode
    result when one exists."""

    def __init__(self, message: str, partial_result=None) -> None:
        super().__init__(message)
        self.partial_result = partial_result


class PlannerAbort(PlanweaveError):
    """The planner produced malformed or illegal decisions past the
    re-ask allowance."""


class PolicyExhausted(PlanweaveError):
    """A baseline policy has no legal continuation."""


class HitlTimeout(PlanweaveError):
    """A console question went unanswered past the timeout."""


class StaleQuestion(PlanweaveError):
    """An answer arrived for a question already answered or timed out."""


class ArityError(PlanweaveError):
    """A task does not have exactly k runs for a pass@k computation."""


class ConfigError(PlanweaveError):
    """A benchmark or simulation configuration is inconsistent."""


class PortInUse(PlanweaveError):
    """The control endpoint could not bind its port."""
