"""The adaptive coordination cycle: detect, respond, stabilise, resume."""

__all__ = [
    "TriggerKind",
    "Trigger",
    "Action",
    "Urgency",
    "ResponsePlan",
    "StabilityPolicy",
    "StabilityOutcome",
    "StabilityDecision",
    "StateSnapshot",
    "ResumeState",
    "HumanOverseer",
    "OverseerDecision",
    "detect",
    "select_response",
    "apply_stability",
    "checkpoint",
    "resume",
]

import enum
import json
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from . import exc, wire
from .config import CoordinationConfig, ReputationConfig
from .contract import ContractState, DelegationContract
from .monitoring import EventKind, ProgressEvent
from .reputation import AuthorityGrant
from .tasks import TaskCharacteristics
from .verification import Verdict


class TriggerKind(str, enum.Enum):
    SPEC_CHANGE = "SpecChange"
    CANCELLATION = "Cancellation"
    RESOURCE_SHIFT = "ResourceShift"
    PREEMPTION = "Preemption"
    SECURITY_FLAG = "SecurityFlag"
    PERF_DEGRADATION = "PerfDegradation"
    BUDGET_OVERRUN = "BudgetOverrun"
    VERIFICATION_FAILURE = "VerificationFailure"
    UNRESPONSIVE = "Unresponsive"

    @property
    def internal(self) -> bool:
        return self in _INTERNAL


_INTERNAL = frozenset(
    {
        TriggerKind.PERF_DEGRADATION,
        TriggerKind.BUDGET_OVERRUN,
        TriggerKind.VERIFICATION_FAILURE,
        TriggerKind.UNRESPONSIVE,
    }
)


@dataclass(frozen=True)
class Trigger:
    """Something that calls for a coordination decision.

    ``velocity_ratio`` is observed over expected progress velocity; only
    performance triggers set it.
    """

    kind: TriggerKind
    task_id: str
    tick: int
    evidence: Tuple[str, ...] = ()
    velocity_ratio: float = 1.0

    def __post_init__(self) -> None:
        if self.kind.internal and not self.evidence:
            raise ValueError(f"{self.kind.value} trigger needs evidence")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "task_id": self.task_id,
            "tick": self.tick,
            "evidence": list(self.evidence),
        }


class Action(str, enum.Enum):
    ADJUST_PARAMS = "AdjustParams"
    REDELEGATE_SUBTASK = "ReDelegateSubtask"
    REDECOMPOSE = "ReDecompose"
    ESCALATE = "Escalate"
    TERMINATE = "Terminate"


class Urgency(str, enum.Enum):
    IMMEDIATE = "immediate"
    SCHEDULED = "scheduled"


@dataclass(frozen=True)
class ResponsePlan:
    action: Action
    urgency: Urgency
    target: Tuple[str, ...] = ()
    uses_backup: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "action": self.action.value,
            "urgency": self.urgency.value,
            "target": list(self.target),
            "uses_backup": self.uses_backup,
        }


def _started(contract: DelegationContract) -> int:
    for tick, state in contract.history:
        if state is ContractState.ACTIVE:
            return tick
    return contract.history[0][0] if contract.history else 0


def _progress(events: Sequence[ProgressEvent], until: int) -> float:
    progress = 0.0
    for event in events:
        if event.tick > until:
            break
        if event.kind is EventKind.TASK_COMPLETED:
            return 1.0
        progress = max(progress, float(event.payload.get("fraction", 0.0)))
    return progress


def detect(
    contract: DelegationContract,
    events: Sequence[ProgressEvent],
    now: int,
    spend: int = 0,
    verdicts: Iterable[Tuple[int, Verdict]] = (),
    environment: Iterable[Trigger] = (),
    config: Optional[CoordinationConfig] = None,
) -> List[Trigger]:
    """Triggers raised for ``contract`` at tick ``now``.

    External triggers for the contract's task pass through from
    ``environment``. Internal ones are derived:

    - ``Unresponsive`` once ``now - last_event > 2 * cadence``;
    - ``BudgetOverrun`` once ``spend`` exceeds the spend cap;
    - ``PerfDegradation`` when progress over the trailing grace period of
      ``grace_cadences`` reporting intervals falls short of ``slo_fraction``
      of the velocity the duration estimate implies;
    - ``VerificationFailure`` for each failed verdict.
    """

    config = config or CoordinationConfig()
    task_id = contract.spec.task_id
    cadence = contract.monitoring_plan.cadence
    started = _started(contract)
    events = sorted((e for e in events if e.task_id == task_id), key=lambda e: e.tick)

    triggers = sorted(
        (t for t in environment if t.task_id == task_id and t.tick <= now and not t.kind.internal),
        key=lambda t: (t.tick, t.kind.value),
    )
    completed = any(e.kind is EventKind.TASK_COMPLETED for e in events)

    if contract.state is ContractState.ACTIVE and not completed:
        last = max((e.tick for e in events if e.tick <= now), default=started)
        if now - last > 2 * cadence:
            triggers.append(
                Trigger(TriggerKind.UNRESPONSIVE, task_id, now, (f"last_event:{last}",))
            )

        grace = config.grace_cadences * cadence
        if now - started >= grace:
            expected = grace / contract.spec.characteristics.duration_est
            observed = _progress(events, now) - _progress(events, now - grace)
            ratio = observed / expected if expected > 0 else 1.0
            if ratio < config.slo_fraction:
                triggers.append(
                    Trigger(
                        TriggerKind.PERF_DEGRADATION,
                        task_id,
                        now,
                        (f"progress:{observed:.4f}/{expected:.4f}",),
                        velocity_ratio=ratio,
                    )
                )

    budget = contract.spec.resource_boundaries.spend_cap
    if spend > budget:
        triggers.append(
            Trigger(TriggerKind.BUDGET_OVERRUN, task_id, now, (f"spend:{spend}/{budget}",))
        )

    for tick, verdict in verdicts:
        if tick <= now and not verdict.passed:
            triggers.append(
                Trigger(
                    TriggerKind.VERIFICATION_FAILURE,
                    task_id,
                    tick,
                    (f"verdict:{verdict.mechanism.value}:{verdict.quality:.4f}",),
                )
            )

    return triggers


def select_response(
    trigger: Trigger,
    characteristics: TaskCharacteristics,
    alternatives: Sequence[str] = (),
    grant: Optional[AuthorityGrant] = None,
    backup_agent: Optional[str] = None,
    adjusted: bool = False,
    config: Optional[CoordinationConfig] = None,
) -> ResponsePlan:
    """Pick a response from the decision table.

    Tasks with reversibility below ``rho`` and criticality above ``kappa``
    only ever get ``Escalate`` (when the grant asks for human approval, or
    there is no grant) or ``Terminate``.

    Args:
        alternatives:
            Agents or proposal ids kept in context from decomposition.
        adjusted:
            Parameters were already adjusted once for this task.
    """

    config = config or CoordinationConfig()
    kind = trigger.kind
    target = (trigger.task_id,)

    if kind is TriggerKind.SECURITY_FLAG:
        return ResponsePlan(Action.TERMINATE, Urgency.IMMEDIATE, target)

    if characteristics.reversibility < config.rho and characteristics.criticality > config.kappa:
        if grant is None or grant.human_approval_required:
            return ResponsePlan(Action.ESCALATE, Urgency.IMMEDIATE, target)
        return ResponsePlan(Action.TERMINATE, Urgency.IMMEDIATE, target)

    if kind is TriggerKind.CANCELLATION:
        return ResponsePlan(Action.TERMINATE, Urgency.SCHEDULED, target)
    if kind is TriggerKind.PREEMPTION:
        return ResponsePlan(Action.TERMINATE, Urgency.IMMEDIATE, target)
    if kind is TriggerKind.SPEC_CHANGE:
        return ResponsePlan(Action.REDECOMPOSE, Urgency.SCHEDULED, target)
    if kind is TriggerKind.RESOURCE_SHIFT:
        return ResponsePlan(Action.ADJUST_PARAMS, Urgency.SCHEDULED, target)

    if (
        kind is TriggerKind.PERF_DEGRADATION
        and not adjusted
        and trigger.velocity_ratio >= config.severe_fraction * config.slo_fraction
    ):
        return ResponsePlan(Action.ADJUST_PARAMS, Urgency.SCHEDULED, target)

    if backup_agent is not None:
        return ResponsePlan(
            Action.REDELEGATE_SUBTASK, Urgency.IMMEDIATE, target + (backup_agent,), uses_backup=True
        )
    return ResponsePlan(Action.REDELEGATE_SUBTASK, Urgency.IMMEDIATE, target + tuple(alternatives[:1]))


@dataclass(frozen=True)
class StabilityPolicy:
    rebid_cooldown: int = 10
    damping: float = 0.8
    fee_schedule: Tuple[int, ...] = (10_000, 20_000, 40_000, 80_000)
    max_redelegations: Optional[int] = 4

    def __post_init__(self) -> None:
        if self.rebid_cooldown < 0:
            raise ValueError("cooldown must be >= 0")
        fees = self.fee_schedule
        if not fees or any(a > b for a, b in zip(fees, fees[1:])):
            raise ValueError("fee schedule must be non-empty and non-decreasing")

    @classmethod
    def from_config(
        cls, coordination: CoordinationConfig, reputation: Optional[ReputationConfig] = None
    ) -> "StabilityPolicy":
        return cls(
            rebid_cooldown=coordination.cooldown,
            damping=(reputation or ReputationConfig()).damping,
            fee_schedule=tuple(coordination.redelegation_fees),
            max_redelegations=coordination.max_redelegations,
        )

    def fee(self, n: int) -> int:
        """Fee of the ``n``-th re-delegation, the last entry repeating."""

        if n < 1:
            raise ValueError("re-delegations are counted from 1")
        return self.fee_schedule[min(n, len(self.fee_schedule)) - 1]


class StabilityOutcome(str, enum.Enum):
    PROCEED = "Proceed"
    DEFER = "Defer"
    ABORT = "Abort"


@dataclass(frozen=True)
class StabilityDecision:
    outcome: StabilityOutcome
    fee: int = 0
    until: Optional[int] = None


def apply_stability(
    policy: StabilityPolicy, history: Sequence[int], now: int
) -> StabilityDecision:
    """Gate a proposed re-delegation.

    Args:
        history:
            Ticks of the task's earlier re-delegations, oldest first.
    """

    count = len(history)
    if policy.max_redelegations is not None and count >= policy.max_redelegations:
        return StabilityDecision(StabilityOutcome.ABORT)
    if history and now - history[-1] < policy.rebid_cooldown:
        return StabilityDecision(StabilityOutcome.DEFER, until=history[-1] + policy.rebid_cooldown)
    return StabilityDecision(StabilityOutcome.PROCEED, fee=policy.fee(count + 1))


@dataclass(frozen=True)
class StateSnapshot:
    task_id: str
    fraction: float
    artifact_digests: Tuple[bytes, ...]
    tick: int
    signature: bytes

    def signed_bytes(self) -> bytes:
        return wire.canonical_bytes(
            "snapshot", self.task_id, self.fraction, list(self.artifact_digests), self.tick
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "fraction": self.fraction,
            "artifact_digests": [wire.to_hex(d) for d in self.artifact_digests],
            "tick": self.tick,
            "signature": wire.to_hex(self.signature),
        }

    def to_json(self) -> str:
        return wire.canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StateSnapshot":
        try:
            return cls(
                task_id=data["task_id"],
                fraction=float(data["fraction"]),
                artifact_digests=tuple(wire.from_hex(d) for d in data["artifact_digests"]),
                tick=int(data["tick"]),
                signature=wire.from_hex(data["signature"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            exc.raise_with_traceback(exc.CorruptSnapshot(f"malformed snapshot: {e}"))
            raise

    @classmethod
    def from_json(cls, text: str) -> "StateSnapshot":
        try:
            data = json.loads(text)
        except ValueError as e:
            exc.raise_with_traceback(exc.CorruptSnapshot(f"malformed snapshot: {e}"))
            raise
        return cls.from_dict(data)


def checkpoint(
    storage_key: bytes,
    task_id: str,
    fraction: float,
    artifact_digests: Sequence[bytes],
    tick: int,
) -> StateSnapshot:
    """Commit the executing agent's progress to shared storage."""

    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    unsigned = StateSnapshot(task_id, fraction, tuple(artifact_digests), tick, b"")
    return StateSnapshot(
        task_id, fraction, tuple(artifact_digests), tick, wire.mac(storage_key, unsigned.signed_bytes())
    )


@dataclass(frozen=True)
class ResumeState:
    task_id: str
    agent: str
    fraction: float
    artifact_digests: Tuple[bytes, ...]
    resumed_at: int


def resume(snapshot: StateSnapshot, storage_key: bytes, agent: str, now: int) -> ResumeState:
    """Continue a task from a snapshot with a new delegatee.

    Raises:
        CorruptSnapshot: if the snapshot does not match its signature.
    """

    expected = wire.mac(storage_key, snapshot.signed_bytes())
    if not wire.tags_equal(expected, snapshot.signature) or not 0.0 <= snapshot.fraction <= 1.0:
        raise exc.CorruptSnapshot(f"snapshot of {snapshot.task_id} at {snapshot.tick} was altered")
    return ResumeState(snapshot.task_id, agent, snapshot.fraction, snapshot.artifact_digests, now)


@dataclass(frozen=True)
class OverseerDecision:
    tick: int
    action: Action
    task_id: str


@dataclass(frozen=True)
class HumanOverseer:
    """Scripted human that answers escalations after ``latency`` ticks.

    An approving overseer sends the task back to the market; otherwise it is
    terminated.
    """

    agent_id: str = "human-overseer"
    latency: int = 20
    approve: bool = True

    def review(self, plan: ResponsePlan, now: int) -> OverseerDecision:
        if plan.action is not Action.ESCALATE:
            raise ValueError(f"overseer only reviews escalations, got {plan.action.value}")
        action = Action.REDELEGATE_SUBTASK if self.approve else Action.TERMINATE
        return OverseerDecision(now + self.latency, action, plan.target[0])
