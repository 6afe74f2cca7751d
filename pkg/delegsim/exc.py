import sys


class DelegationError(Exception):
    """Base class for all errors raised by delegsim."""

    pass


class InvalidCaveat(DelegationError):
    """Raised when a caveat value is malformed for its kind."""

    pass


class DuplicateAgent(DelegationError):
    """Raised when an agent id is registered twice."""

    pass


class UnknownAgent(DelegationError):
    """Raised when an agent id has no registered key."""

    pass


class NotFound(DelegationError):
    """Raised when a referenced object does not exist."""

    pass


class InvalidCredential(DelegationError):
    """Raised when a credential fails signature verification."""

    pass


class InvalidTask(DelegationError):
    """Raised when task characteristics violate their ranges."""

    pass


class WrongTask(DelegationError):
    """Raised when an artifact is evaluated against another task."""

    pass


class UndecomposableTask(DelegationError):
    """Raised when no proposal satisfies contract-first decomposition."""

    pass


class InsufficientFunds(DelegationError):
    """Raised when an account cannot cover a transfer."""

    pass


class FundingFailed(DelegationError):
    """Raised when a contract cannot be funded."""

    pass


class InvalidTransition(DelegationError):
    """Raised on a contract transition outside the declared automaton."""

    pass


class BondShort(DelegationError):
    """Raised when a challenge bond is below the dispute bond."""

    pass


class WindowClosed(DelegationError):
    """Raised when a challenge arrives after the dispute window."""

    pass


class Unsupported(DelegationError):
    """Raised when a contract lacks the clause an operation needs."""

    pass


class MechanismUnavailable(DelegationError):
    """Raised when a verification mechanism cannot be applied."""

    pass


class UncertifiedAuditor(DelegationError):
    """Raised when an auditor lacks the required certification."""

    pass


class InvalidPanel(DelegationError):
    """Raised when a consensus panel is not an odd size of at least 3."""

    pass


class CorruptSnapshot(DelegationError):
    """Raised when a state snapshot fails its signature check."""

    pass


class ConfigError(DelegationError):
    """Raised when configuration or a scenario is invalid."""

    pass


class ReplayMismatch(DelegationError):
    """Raised when a replayed event log disagrees with its footer."""

    pass


class InvariantViolation(DelegationError):
    """Raised when the simulator detects a broken invariant mid-run."""

    pass


class ArchiveError(DelegationError):
    """Raised when writing to the PostgreSQL archive fails."""

    pass


def raise_with_traceback(exc: Exception) -> None:
    """Raise exception with existing traceback."""

    _, _, traceback = sys.exc_info()

    raise exc.with_traceback(traceback)
