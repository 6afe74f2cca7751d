"""Progress monitoring and attestation chains.

Agents publish signed progress events to a :class:`MonitoringHub`, which
filters them by granularity band and answers status queries. Monitors
bound in a :class:`MonitoringRegistry` attest what they observed of their
subjects, and chains of such attestations are checked link by link.
"""

__all__ = [
    "Granularity",
    "EventKind",
    "MonitorTarget",
    "Observability",
    "Transparency",
    "Privacy",
    "Topology",
    "MonitoringPlan",
    "ProgressEvent",
    "StatusSnapshot",
    "MonitoringHub",
    "AttestationSummary",
    "AttestationReport",
    "MonitoringRegistry",
    "ChainVerdict",
    "make_event",
    "filter_stream",
    "deliver",
    "observe_indirect",
    "self_report",
    "attest",
    "verify_attestation_chain",
    "cadence_gap",
    "MONITOR_CERTIFICATION",
]

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import (
    Any,
    Callable,
    Collection,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

from . import exc, wire
from .identity import CredentialWallet, KeyRegistry, SignedEnvelope

_logger = logging.getLogger("delegsim")

MONITOR_CERTIFICATION = "monitoring_certified"


class Granularity(enum.IntEnum):
    L0 = 0
    L1 = 1
    L2 = 2
    L3 = 3

    @property
    def wire_name(self) -> str:
        return _LEVEL_NAMES[self]


_LEVEL_NAMES = {
    Granularity.L0: "L0_IS_OPERATIONAL",
    Granularity.L1: "L1_HIGH_LEVEL_PLAN_UPDATES",
    Granularity.L2: "L2_COT_TRACE",
    Granularity.L3: "L3_FULL_STATE",
}


class EventKind(str, enum.Enum):
    TASK_STARTED = "TASK_STARTED"
    CHECKPOINT_REACHED = "CHECKPOINT_REACHED"
    RESOURCE_WARNING = "RESOURCE_WARNING"
    TASK_COMPLETED = "TASK_COMPLETED"
    TASK_BLOCKED = "TASK_BLOCKED"


class MonitorTarget(str, enum.Enum):
    OUTCOME = "outcome"
    PROCESS = "process"


class Observability(str, enum.Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"


class Transparency(str, enum.Enum):
    BLACK_BOX = "black_box"
    WHITE_BOX = "white_box"


class Privacy(str, enum.Enum):
    FULL = "full"
    CRYPTOGRAPHIC = "cryptographic"


class Topology(str, enum.Enum):
    DIRECT = "direct"
    TRANSITIVE = "transitive"


@dataclass(frozen=True)
class MonitoringPlan:
    target: MonitorTarget = MonitorTarget.OUTCOME
    observability: Observability = Observability.DIRECT
    transparency: Transparency = Transparency.BLACK_BOX
    privacy: Privacy = Privacy.FULL
    topology: Topology = Topology.DIRECT
    cadence: int = 5
    granularity: Granularity = Granularity.L1

    def __post_init__(self) -> None:
        if self.cadence < 1:
            raise ValueError("monitoring cadence must be >= 1")


@dataclass(frozen=True)
class ProgressEvent:
    tick: int
    task_id: str
    emitter: str
    kind: EventKind
    level: Granularity
    payload: Mapping[str, Any] = field(default_factory=dict)
    signature: bytes = b""
    inferred: bool = False
    confidence: float = 1.0

    def signed_bytes(self) -> bytes:
        return _event_bytes(
            self.tick, self.task_id, self.emitter, self.kind, self.level, self.payload
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tick": self.tick,
            "task_id": self.task_id,
            "emitter": self.emitter,
            "kind": self.kind.value,
            "level": self.level.name,
            "payload": dict(self.payload),
            "signature": wire.to_hex(self.signature),
        }


def _event_bytes(
    tick: int,
    task_id: str,
    emitter: str,
    kind: EventKind,
    level: Granularity,
    payload: Mapping[str, Any],
) -> bytes:
    return wire.canonical_bytes(
        tick, task_id, emitter, kind.value, int(level), wire.canonical_json(dict(payload))
    )


def make_event(
    registry: KeyRegistry,
    tick: int,
    task_id: str,
    emitter: str,
    kind: EventKind,
    level: Granularity = Granularity.L0,
    payload: Optional[Mapping[str, Any]] = None,
    inferred: bool = False,
    confidence: float = 1.0,
) -> ProgressEvent:
    """Build an event signed by its emitter."""

    payload = dict(payload or {})
    signature = registry.tag(
        emitter, _event_bytes(tick, task_id, emitter, kind, level, payload)
    )
    return ProgressEvent(
        tick=tick,
        task_id=task_id,
        emitter=emitter,
        kind=kind,
        level=level,
        payload=payload,
        signature=signature,
        inferred=inferred,
        confidence=confidence,
    )


@dataclass(frozen=True)
class StatusSnapshot:
    task_id: str
    phase: str
    last_event_tick: Optional[int]
    progress: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "phase": self.phase,
            "last_event_tick": self.last_event_tick,
            "progress": self.progress,
        }


_PHASES = {
    EventKind.TASK_STARTED: "started",
    EventKind.CHECKPOINT_REACHED: "in_progress",
    EventKind.RESOURCE_WARNING: "in_progress",
    EventKind.TASK_BLOCKED: "blocked",
    EventKind.TASK_COMPLETED: "completed",
}

Callback = Callable[[ProgressEvent], None]


class MonitoringHub:
    """Append-only event streams per task with push subscriptions.

    Polling (:meth:`poll_status`) and push (:meth:`subscribe`) both read the
    same streams. A failing subscriber is logged and never interrupts
    delivery to the others.
    """

    def __init__(self) -> None:
        self._streams: Dict[str, List[ProgressEvent]] = {}
        self._plans: Dict[str, MonitoringPlan] = {}
        self._subscribers: List[Tuple[Optional[str], Callback]] = []

    def register(self, task_id: str, plan: Optional[MonitoringPlan] = None) -> None:
        self._streams.setdefault(task_id, [])
        self._plans[task_id] = plan or MonitoringPlan()

    def plan(self, task_id: str) -> MonitoringPlan:
        try:
            return self._plans[task_id]
        except KeyError:
            raise exc.NotFound(f"task {task_id}") from None

    def publish(self, event: ProgressEvent) -> None:
        if event.task_id not in self._streams:
            raise exc.NotFound(f"task {event.task_id}")

        self._streams[event.task_id].append(event)

        for task_id, callback in self._subscribers:
            if task_id is None or task_id == event.task_id:
                self._callback(callback, event)

    def subscribe(self, callback: Callback, task_id: Optional[str] = None) -> None:
        """Receive every future event, or only those of ``task_id``."""

        self._subscribers.append((task_id, callback))

    def events(self, task_id: str) -> List[ProgressEvent]:
        try:
            return list(self._streams[task_id])
        except KeyError:
            raise exc.NotFound(f"task {task_id}") from None

    def poll_status(self, task_id: str) -> StatusSnapshot:
        """Latest state of a task, the ``GET /task/{id}/status`` view.

        Raises:
            NotFound: if the task was never registered.
        """

        events = self.events(task_id)
        if not events:
            return StatusSnapshot(task_id, "registered", None, 0.0)

        last = events[-1]
        progress = 0.0
        for event in events:
            if event.kind is EventKind.TASK_COMPLETED:
                progress = 1.0
            else:
                progress = max(progress, float(event.payload.get("fraction", 0.0)))

        return StatusSnapshot(task_id, _PHASES[last.kind], last.tick, progress)

    @staticmethod
    def _callback(callback: Optional[Callable] = None, *args: Any) -> None:
        if callback:
            try:
                callback(*args)
            except Exception as e:
                _logger.error("error from callback %r: %s", callback, e)


def filter_stream(
    events: Sequence[ProgressEvent], level: Granularity
) -> List[ProgressEvent]:
    """Keep events whose band is at most ``level``, in order."""

    return [e for e in events if e.level <= level]


def deliver(
    event: ProgressEvent, plan: MonitoringPlan, privacy_key: bytes = b""
) -> Optional[ProgressEvent]:
    """Shape an event for the delegator under a negotiated plan.

    Events above the plan's granularity are dropped. Under cryptographic
    privacy, payloads below L3 are replaced by a keyed commitment so the
    verifier can recheck them without seeing the content.
    """

    if event.level > plan.granularity:
        return None

    if plan.privacy is Privacy.CRYPTOGRAPHIC and event.level < Granularity.L3:
        commitment = wire.mac(
            privacy_key, wire.canonical_json(dict(event.payload)).encode("utf-8")
        )
        return replace(event, payload={"commitment": wire.to_hex(commitment)})

    return event


def observe_indirect(
    before: Mapping[str, bytes],
    after: Mapping[str, bytes],
    task_id: str,
    tick: int,
    observer: str,
    registry: KeyRegistry,
    confidence: float = 0.5,
) -> List[ProgressEvent]:
    """Infer checkpoints from two snapshots of the shared artifact store.

    Every artifact that is new or whose digest changed yields one inferred
    CHECKPOINT_REACHED, signed by the observer and weighted by ``confidence``.
    """

    events = []
    for name in sorted(after):
        if before.get(name) != after[name]:
            events.append(
                make_event(
                    registry,
                    tick,
                    task_id,
                    observer,
                    EventKind.CHECKPOINT_REACHED,
                    Granularity.L1,
                    {"artifact": name, "digest": wire.to_hex(after[name])},
                    inferred=True,
                    confidence=confidence,
                )
            )
    return events


def cadence_gap(events: Sequence[ProgressEvent], now: int, since: int = 0) -> int:
    """Longest silence, in ticks, between ``since`` and ``now``."""

    ticks = [since] + sorted(e.tick for e in events if e.tick >= since) + [now]
    return max(b - a for a, b in zip(ticks, ticks[1:]))


@dataclass(frozen=True)
class AttestationSummary:
    completed: bool
    quality: float
    resources: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError("attested quality outside [0, 1]")


@dataclass(frozen=True)
class AttestationReport:
    """Signed summary by which ``attester`` vouches for ``subject``.

    ``subject_report`` is the subject's own signed self-report; the
    attester's summary may downgrade its quality, never raise it.
    """

    attester: str
    subject: str
    subtask_id: str
    summary: AttestationSummary
    subject_summary: AttestationSummary
    subject_report: SignedEnvelope
    embedded_in: str
    signature: bytes

    def signed_bytes(self) -> bytes:
        return _report_bytes(
            self.attester,
            self.subject,
            self.subtask_id,
            self.summary,
            self.subject_summary,
            self.subject_report,
            self.embedded_in,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "attester": self.attester,
            "subject": self.subject,
            "subtask_id": self.subtask_id,
            "summary": {
                "completed": self.summary.completed,
                "quality": self.summary.quality,
                "resources": self.summary.resources,
            },
            "embedded_in": self.embedded_in,
            "signature": wire.to_hex(self.signature),
        }


def _self_report_bytes(subject: str, subtask_id: str, summary: AttestationSummary) -> bytes:
    return wire.canonical_bytes("self_report", subject, subtask_id, summary)


def _report_bytes(
    attester: str,
    subject: str,
    subtask_id: str,
    summary: AttestationSummary,
    subject_summary: AttestationSummary,
    subject_report: SignedEnvelope,
    embedded_in: str,
) -> bytes:
    return wire.canonical_bytes(
        "attestation",
        attester,
        subject,
        subtask_id,
        summary,
        subject_summary,
        subject_report.signer,
        subject_report.signature,
        embedded_in,
    )


def self_report(
    registry: KeyRegistry, subject: str, subtask_id: str, summary: AttestationSummary
) -> SignedEnvelope:
    return registry.sign(subject, _self_report_bytes(subject, subtask_id, summary))


def attest(
    registry: KeyRegistry,
    attester: str,
    subject: str,
    subtask_id: str,
    summary: AttestationSummary,
    subject_summary: AttestationSummary,
    subject_report: SignedEnvelope,
    embedded_in: str,
) -> AttestationReport:
    """Sign a report about ``subject`` for embedding in a status update."""

    signature = registry.tag(
        attester,
        _report_bytes(
            attester,
            subject,
            subtask_id,
            summary,
            subject_summary,
            subject_report,
            embedded_in,
        ),
    )
    return AttestationReport(
        attester=attester,
        subject=subject,
        subtask_id=subtask_id,
        summary=summary,
        subject_summary=subject_summary,
        subject_report=subject_report,
        embedded_in=embedded_in,
        signature=signature,
    )


class MonitoringRegistry:
    """Contractual monitoring relationships (monitor, subject, subtask)."""

    def __init__(self) -> None:
        self._bindings: Set[Tuple[str, str, str]] = set()

    def bind(self, monitor: str, subject: str, subtask_id: str) -> None:
        self._bindings.add((monitor, subject, subtask_id))

    def is_monitor(self, monitor: str, subject: str, subtask_id: str) -> bool:
        return (monitor, subject, subtask_id) in self._bindings


@dataclass(frozen=True)
class ChainVerdict:
    valid: bool
    link: Optional[int] = None
    reason: Optional[str] = None
    locus: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


def verify_attestation_chain(
    chain: Sequence[AttestationReport],
    registry: KeyRegistry,
    relationships: MonitoringRegistry,
    children_of: Optional[Mapping[str, Collection[str]]] = None,
    root_task: Optional[str] = None,
    wallet: Optional[CredentialWallet] = None,
    strict: bool = False,
) -> ChainVerdict:
    """Check a root-ward ordered chain of attestations.

    ``chain[0]`` is the report of the first delegatee about its own
    sub-delegatee, each next report is made by the previous subject.

    Args:
        chain:
            Reports, root first.
        registry:
            Key registry used for every signature.
        relationships:
            Contractual monitoring bindings.
        children_of:
            Decomposition map from a task to its subtasks; when given, each
            attested subtask must belong to its parent's decomposition.
        root_task:
            Parent task of ``chain[0]``'s subtask.
        wallet:
            Credentials consulted for monitor certification.
        strict:
            Require every attester to hold the monitoring certification.

    Returns:
        A valid verdict, or the first failing link with its reason.
    """

    for index, report in enumerate(chain):
        locus = f"{report.attester}->{report.subject}"

        def fail(reason: str) -> ChainVerdict:
            return ChainVerdict(False, index, reason, locus)

        if not registry.check(report.attester, report.signed_bytes(), report.signature):
            return fail("bad_signature")

        envelope = report.subject_report
        expected = _self_report_bytes(
            report.subject, report.subtask_id, report.subject_summary
        )
        if (
            envelope.signer != report.subject
            or envelope.payload != expected
            or not registry.verify(envelope)
        ):
            return fail("subject_report_mismatch")

        claimed, summary = report.subject_summary, report.summary
        if (
            summary.completed != claimed.completed
            or summary.resources != claimed.resources
            or summary.quality > claimed.quality
        ):
            return fail("subject_report_mismatch")

        if index > 0 and report.attester != chain[index - 1].subject:
            return fail("broken_chain")

        if not relationships.is_monitor(report.attester, report.subject, report.subtask_id):
            return fail("not_monitor")

        if strict and (
            wallet is None or not wallet.has(report.attester, MONITOR_CERTIFICATION)
        ):
            return fail("uncertified_monitor")

        if children_of is not None:
            parent = chain[index - 1].subtask_id if index > 0 else root_task
            if parent is not None and report.subtask_id not in children_of.get(parent, ()):
                return fail("foreign_subtask")

    return ChainVerdict(True)
