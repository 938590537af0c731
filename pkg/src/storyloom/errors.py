"""Exception types shared across the pipeline, gateway, bench, and service."""


class StoryloomError(Exception):
    """Base class for all storyloom errors."""


class ConfigError(StoryloomError):
    """A run-configuration field violates an invariant."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class SchemaError(StoryloomError):
    """A payload violates a role's I/O contract. Names the offending key."""

    def __init__(self, key: str, reason: str = "contract violation"):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")


class BackendError(StoryloomError):
    """A backend call failed (transport or remote failure after retries)."""


class TransientBackendError(BackendError):
    """A transport failure worth retrying (connection reset, 5xx, timeout)."""


class ScenarioExhausted(BackendError):
    """A scripted backend in strict mode received a call it cannot serve."""


class RefNotFound(StoryloomError):
    """An image reference does not resolve to a stored artifact."""

    def __init__(self, ref: str):
        self.ref = ref
        super().__init__(f"unresolved image reference: {ref}")


class SafetyExhausted(StoryloomError):
    """Text sanitization ran out of rounds without passing the audit."""

    def __init__(self, last_reason: str, rounds: int):
        self.last_reason = last_reason
        self.rounds = rounds
        super().__init__(f"unsafe after {rounds} rounds: {last_reason}")


class NoSafeCandidate(StoryloomError):
    """Every generation attempt for a page was flagged unsafe."""

    def __init__(self, page_index: int):
        self.page_index = page_index
        super().__init__(f"no safe candidate for page {page_index}")


class PlanMismatch(StoryloomError):
    """The planner returned the wrong page count twice in a row."""

    def __init__(self, wanted: int, got: int):
        self.wanted = wanted
        self.got = got
        super().__init__(f"planner returned {got} pages, wanted {wanted}")


class SpecError(StoryloomError):
    """A benchmark story spec document is malformed."""

    def __init__(self, location: str, reason: str):
        self.location = location
        self.reason = reason
        super().__init__(f"{location}: {reason}")


class EmptyRuleSet(StoryloomError):
    """The consistency ratio is undefined for zero constraints."""


class MissingGraph(StoryloomError):
    """A rule references a page with no scene graph."""

    def __init__(self, page: int):
        self.page = page
        super().__init__(f"no scene graph for page {page}")


class RunNotFound(StoryloomError):
    """No persisted run with the given id."""

    def __init__(self, run_id: str):
        self.run_id = run_id
        super().__init__(f"run not found: {run_id}")


class RunBusy(StoryloomError):
    """The run is currently executing and cannot accept the request."""

    def __init__(self, run_id: str):
        self.run_id = run_id
        super().__init__(f"run busy: {run_id}")


class InvalidPageIndex(StoryloomError):
    """A repair request named a page outside the book."""

    def __init__(self, page: int, page_count: int):
        self.page = page
        self.page_count = page_count
        super().__init__(f"page {page} outside 1..{page_count}")


class NotDone(StoryloomError):
    """The operation requires a completed run."""

    def __init__(self, run_id: str, status: str):
        self.run_id = run_id
        self.status = status
        super().__init__(f"run {run_id} is {status}, not done")
