__all__ = [
    "Role",
    "Behaviour",
    "AgentSpec",
    "BaseAgent",
]

import abc
import enum
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Optional

import numpy as np

from .identity import agent_id_for
from .market import Bid, PrivacyGuarantee, TaskRFQ
from .tasks import Artifact, TaskCharacteristics, TaskNode, produce_artifact
from .verification import Voter


class Role(str, enum.Enum):
    DELEGATOR = "delegator"
    DELEGATEE = "delegatee"
    VERIFIER = "verifier"
    AUDITOR = "auditor"


@dataclass(frozen=True)
class Behaviour:
    """One row of the policy table.

    Args:
        corruption:
            Degradation applied to every artifact.
        overspend:
            Spend as a multiple of the quoted cost.
        silent_after:
            Ticks after the start of a contract when reporting stops and
            the work is never finished.
        backdoor:
            Artifacts pass inspection but carry a latent flaw.
        false_failure_rate:
            Probability that, as a delegator, the agent challenges work
            regardless of its quality.
        vote:
            Panel behaviour, see :class:`~delegsim.verification.Voter`.
        max_difficulty:
            Tasks with complexity or criticality above this are declined.
        price_factor:
            Multiplier on the cost estimate when quoting.
    """

    corruption: float = 0.0
    overspend: float = 1.0
    silent_after: Optional[int] = None
    backdoor: bool = False
    false_failure_rate: float = 0.0
    vote: str = "honest"
    max_difficulty: float = 1.0
    price_factor: float = 1.0


@dataclass(frozen=True)
class AgentSpec:
    """Scenario description of one participant."""

    label: str
    role: Role = Role.DELEGATEE
    capabilities: FrozenSet[str] = frozenset()
    balance: int = 0
    policy: Optional[Any] = None
    capacity: int = 8
    model_family: str = ""
    privacy: PrivacyGuarantee = PrivacyGuarantee.NONE
    success_rate: float = 1.0
    certifications: FrozenSet[str] = frozenset()
    bond: int = 0
    account: Optional[str] = None

    def __post_init__(self) -> None:
        if self.balance < 0:
            raise ValueError(f"{self.label}: balance must be >= 0")
        if self.capacity < 1:
            raise ValueError(f"{self.label}: capacity must be >= 1")
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"{self.label}: success_rate outside [0, 1]")

    @property
    def agent_id(self) -> str:
        return agent_id_for(self.label)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "role": self.role.value,
            "capabilities": sorted(self.capabilities),
            "balance": self.balance,
            "policy": self.policy.to_dict() if self.policy is not None else "honest",
            "capacity": self.capacity,
            "model_family": self.model_family,
            "privacy": self.privacy.value,
            "success_rate": self.success_rate,
            "certifications": sorted(self.certifications),
            "bond": self.bond,
        }


class BaseAgent(abc.ABC):
    """Base class for all agent policies.

    Subclasses only say how they behave; the mechanics of quoting, working
    and voting are shared.

    Args:
        spec:
            Scenario description of the agent.
        agent_id:
            Identity the agent acts under, defaults to the one derived
            from its label.
        account:
            Account paying its bonds and receiving its earnings.
    """

    def __init__(
        self, spec: AgentSpec, agent_id: Optional[str] = None, account: Optional[str] = None
    ) -> None:
        self.spec = spec
        self.agent_id = agent_id or spec.agent_id
        self.account = account or self.agent_id

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.label}, {self.agent_id})"

    @property
    @abc.abstractmethod
    def behaviour(self) -> Behaviour:
        """Row of the policy table this agent follows."""

        raise NotImplementedError

    @property
    def adversary(self) -> Optional[str]:
        return None

    def can_serve(self, characteristics: TaskCharacteristics) -> bool:
        b = self.behaviour
        return (
            characteristics.resource_requirements <= self.spec.capabilities
            and characteristics.complexity <= b.max_difficulty
            and characteristics.criticality <= b.max_difficulty
        )

    def quote(self, rfq: TaskRFQ, rng: np.random.Generator, now: int) -> Optional[Bid]:
        """Unsigned bid for ``rfq``, or ``None`` to stay out."""

        c = rfq.spec.characteristics
        if not self.can_serve(c):
            return None
        jitter = 0.9 + 0.2 * float(rng.random())
        cost = max(1, int(round(max(c.cost_est, 1) * self.behaviour.price_factor * jitter)))
        duration = c.duration_est
        return Bid(
            agent_id=self.agent_id,
            estimated_cost=cost,
            estimated_duration=duration,
            privacy_guarantee=self.spec.privacy,
            reputation_bond=max(rfq.min_stake, self.spec.bond),
            expiry=rfq.deadline_for_bids + 1000,
            rfq_id=rfq.rfq_id,
        )

    def revise(self, bid: Bid, best_score: Optional[float]) -> Optional[Bid]:
        """Re-quote once, five percent cheaper, when the published best beats us."""

        if best_score is None or bid.estimated_cost <= 1:
            return None
        return Bid(
            agent_id=bid.agent_id,
            estimated_cost=max(1, bid.estimated_cost * 95 // 100),
            estimated_duration=bid.estimated_duration,
            privacy_guarantee=bid.privacy_guarantee,
            reputation_bond=bid.reputation_bond,
            expiry=bid.expiry,
            rfq_id=bid.rfq_id,
        )

    def reports(self, started: int, now: int) -> bool:
        silent = self.behaviour.silent_after
        return silent is None or now - started < silent

    def finishes(self) -> bool:
        return self.behaviour.silent_after is None

    def spend(self, cost: int, fraction: float) -> int:
        return int(round(cost * self.behaviour.overspend * fraction))

    def execute(
        self, task: TaskNode, rng: np.random.Generator, shared_failure: bool = False
    ) -> Artifact:
        """Produce the artifact of ``task``."""

        corruption = self.behaviour.corruption
        if shared_failure:
            corruption = 1.0
        elif corruption == 0.0 and float(rng.random()) > self.spec.success_rate:
            corruption = 0.5
        return produce_artifact(task, self.agent_id, corruption=corruption)

    def challenges(self, rng: np.random.Generator) -> bool:
        rate = self.behaviour.false_failure_rate
        return rate > 0 and float(rng.random()) < rate

    def voter(self) -> Voter:
        return Voter(self.agent_id, self.behaviour.vote)
