"""Request-for-quote market with stake-backed bids."""

__all__ = [
    "PrivacyGuarantee",
    "RejectReason",
    "TaskRFQ",
    "Bid",
    "BidResult",
    "ObjectiveVector",
    "Candidate",
    "Award",
    "Market",
    "sign_bid",
    "objective_vector",
    "pareto_mask",
    "pareto_filter",
    "scalarize",
    "select",
    "delegation_overhead",
]

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Set

import numpy as np

from . import exc, wire
from .config import MarketConfig
from .decomposition import TaskSpecification
from .identity import KeyRegistry
from .ledger import BOND_POOL, Accounts, LedgerReason
from .reputation import TrustModel
from .tasks import TaskCharacteristics

_logger = logging.getLogger("delegsim")

OBJECTIVES = ("cost", "latency", "risk", "privacy")


class PrivacyGuarantee(str, enum.Enum):
    NONE = "none"
    TEE_ENCLAVE = "tee_enclave"
    CRYPTO_PROOF = "crypto_proof"


PRIVACY_PENALTY = {
    PrivacyGuarantee.NONE: 1.0,
    PrivacyGuarantee.TEE_ENCLAVE: 0.5,
    PrivacyGuarantee.CRYPTO_PROOF: 0.0,
}


class RejectReason(str, enum.Enum):
    WINDOW_CLOSED = "window_closed"
    STAKE_SHORT = "stake_short"
    BAD_SIGNATURE = "bad_signature"
    INSUFFICIENT_FUNDS = "insufficient_funds"
    EXPIRED = "expired"
    ALREADY_REVISED = "already_revised"


@dataclass(frozen=True)
class TaskRFQ:
    rfq_id: str
    spec: TaskSpecification
    delegator: str
    issued: int
    deadline_for_bids: int
    min_stake: int
    preference_weights: Mapping[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rfq_id": self.rfq_id,
            "task_id": self.spec.task_id,
            "delegator": self.delegator,
            "issued": self.issued,
            "deadline_for_bids": self.deadline_for_bids,
            "min_stake": self.min_stake,
            "preference_weights": dict(sorted(self.preference_weights.items())),
        }


@dataclass(frozen=True)
class Bid:
    """A signed offer. Wire field names follow the bid object listing."""

    agent_id: str
    estimated_cost: int
    estimated_duration: int
    privacy_guarantee: PrivacyGuarantee
    reputation_bond: int
    expiry: int
    rfq_id: str = ""
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        return wire.canonical_bytes(
            "bid",
            self.rfq_id,
            self.agent_id,
            self.estimated_cost,
            self.estimated_duration,
            self.privacy_guarantee.value,
            self.reputation_bond,
            self.expiry,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "agent_id": self.agent_id,
            "estimated_cost": self.estimated_cost,
            "estimated_duration": self.estimated_duration,
            "privacy_guarantee": self.privacy_guarantee.value,
            "reputation_bond": self.reputation_bond,
            "expiry": self.expiry,
            "rfq_id": self.rfq_id,
            "signature": wire.to_hex(self.signature),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Bid":
        return cls(
            agent_id=data["agent_id"],
            estimated_cost=int(data["estimated_cost"]),
            estimated_duration=int(data["estimated_duration"]),
            privacy_guarantee=PrivacyGuarantee(data.get("privacy_guarantee", "none")),
            reputation_bond=int(data["reputation_bond"]),
            expiry=int(data["expiry"]),
            rfq_id=data.get("rfq_id", ""),
            signature=wire.from_hex(data.get("signature", "")),
        )


def sign_bid(registry: KeyRegistry, bid: Bid) -> Bid:
    return replace(bid, signature=registry.tag(bid.agent_id, bid.signed_bytes()))


@dataclass(frozen=True)
class BidResult:
    accepted: bool
    reason: Optional[RejectReason] = None

    def __bool__(self) -> bool:
        return self.accepted


@dataclass(frozen=True)
class ObjectiveVector:
    """Lower is better in every component."""

    cost: float
    latency: float
    risk: float
    privacy: float

    def __post_init__(self) -> None:
        for name in OBJECTIVES:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"objective {name}={value} must be finite and >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.cost, self.latency, self.risk, self.privacy], dtype=float)


def objective_vector(bid: Bid, reputation: float) -> ObjectiveVector:
    return ObjectiveVector(
        cost=float(bid.estimated_cost),
        latency=float(bid.estimated_duration),
        risk=min(1.0, max(0.0, 1.0 - reputation)),
        privacy=PRIVACY_PENALTY[bid.privacy_guarantee],
    )


@dataclass(frozen=True)
class Candidate:
    bid: Bid
    objectives: ObjectiveVector
    reputation: float

    @property
    def agent_id(self) -> str:
        return self.bid.agent_id


def pareto_mask(values: np.ndarray) -> np.ndarray:
    """Boolean mask of the rows no other row dominates.

    Row ``i`` dominates ``j`` when it is no worse in every column and strictly
    better in at least one.
    """

    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("objectives must be a 2-d array")
    if len(values) == 0:
        return np.zeros(0, dtype=bool)

    no_worse = (values[:, None, :] <= values[None, :, :]).all(axis=-1)
    better = (values[:, None, :] < values[None, :, :]).any(axis=-1)
    dominated = (no_worse & better).any(axis=0)
    return ~dominated


def pareto_filter(candidates: Sequence[Candidate]) -> List[Candidate]:
    """Non-dominated candidates ordered by agent id."""

    ordered = sorted(candidates, key=lambda c: c.agent_id)
    if not ordered:
        return []
    mask = pareto_mask(np.vstack([c.objectives.as_array() for c in ordered]))
    return [c for c, keep in zip(ordered, mask) if keep]


def scalarize(candidates: Sequence[Candidate], weights: Mapping[str, float]) -> np.ndarray:
    """Weighted sum of objectives, each normalised by its maximum over the set."""

    if not candidates:
        return np.zeros(0)
    values = np.vstack([c.objectives.as_array() for c in candidates])
    peak = values.max(axis=0)
    normalised = np.divide(values, peak, out=np.zeros_like(values), where=peak > 0)
    w = np.array([weights.get(name, 0.0) for name in OBJECTIVES], dtype=float)
    return normalised @ w


def select(
    candidates: Sequence[Candidate],
    weights: Mapping[str, float],
    trust_model: TrustModel,
    characteristics: TaskCharacteristics,
) -> Optional[Candidate]:
    """Pick the winner among non-dominated candidates, ``None`` for no match.

    Candidates below the trust threshold for the task's criticality are
    dropped. Ties on the scalarised score go to the higher reputation, then
    to the lexicographically smaller agent id.
    """

    threshold = trust_model.threshold(characteristics.criticality)
    survivors = [c for c in candidates if c.reputation >= threshold]
    if not survivors:
        return None

    scores = scalarize(survivors, weights)
    ranked = sorted(
        zip(survivors, scores),
        key=lambda pair: (round(float(pair[1]), 12), -pair[0].reputation, pair[0].agent_id),
    )
    return ranked[0][0]


def delegation_overhead(
    bids: int,
    contract: bool = False,
    mode: Optional[str] = None,
    config: Optional[MarketConfig] = None,
) -> int:
    """Transaction cost of running a task through the market."""

    config = config or MarketConfig()
    total = config.rfq_fee + bids * config.bid_eval_cost
    if contract:
        total += config.contract_cost
    if mode is not None:
        total += config.verification_costs[mode]
    return total


@dataclass
class Award:
    rfq_id: str
    winner: Optional[Candidate]
    candidates: List[Candidate] = field(default_factory=list)
    refunded: List[str] = field(default_factory=list)

    @property
    def matched(self) -> bool:
        return self.winner is not None


Listener = Callable[[str, Dict[str, Any]], None]


class Market:
    """Order book of open RFQs and the bonds locked against them.

    Args:
        accounts:
            Ledger the bonds are moved on.
        registry:
            Keys used to check bid signatures.
        config:
            Auction parameters.
        payer:
            Maps an agent to the account paying its bonds; sybil identities
            share one account.
    """

    def __init__(
        self,
        accounts: Accounts,
        registry: KeyRegistry,
        config: Optional[MarketConfig] = None,
        payer: Optional[Callable[[str], str]] = None,
    ) -> None:
        self.accounts = accounts
        self.registry = registry
        self.config = config or MarketConfig()
        self._payer = payer or (lambda agent: agent)
        self._rfqs: Dict[str, TaskRFQ] = {}
        self._bids: Dict[str, Dict[str, Bid]] = {}
        self._revised: Dict[str, Set[str]] = {}
        self._closed: Set[str] = set()
        self._listeners: List[Listener] = []
        self._counter = 0

    def on_event(self, callback: Listener) -> None:
        self._listeners.append(callback)

    def _emit(self, kind: str, payload: Dict[str, Any]) -> None:
        for callback in self._listeners:
            callback(kind, payload)

    def rfq(self, rfq_id: str) -> TaskRFQ:
        try:
            return self._rfqs[rfq_id]
        except KeyError:
            raise exc.NotFound(f"unknown rfq {rfq_id}") from None

    def broadcast_rfq(
        self,
        spec: TaskSpecification,
        delegator: str,
        now: int,
        weights: Optional[Mapping[str, float]] = None,
        min_stake: Optional[int] = None,
        window: Optional[int] = None,
    ) -> TaskRFQ:
        weights = dict(weights if weights is not None else self.config.weights)
        if abs(sum(weights.values()) - 1.0) > 1e-9 or any(w < 0 for w in weights.values()):
            raise ValueError(f"preference weights must be >= 0 and sum to 1: {weights}")

        self._counter += 1
        rfq = TaskRFQ(
            rfq_id=f"rfq-{self._counter:06d}",
            spec=spec,
            delegator=delegator,
            issued=now,
            deadline_for_bids=now + (window if window is not None else self.config.bid_window),
            min_stake=self.config.min_stake if min_stake is None else min_stake,
            preference_weights=weights,
        )
        self._rfqs[rfq.rfq_id] = rfq
        self._bids[rfq.rfq_id] = {}
        self._revised[rfq.rfq_id] = set()

        _logger.debug("rfq %s for %s open until %d", rfq.rfq_id, spec.task_id, rfq.deadline_for_bids)
        self._emit("RFQ", rfq.to_dict())
        return rfq

    def bids(self, rfq_id: str) -> List[Bid]:
        self.rfq(rfq_id)
        book = self._bids[rfq_id]
        return [book[a] for a in sorted(book)]

    def _check(self, rfq: TaskRFQ, bid: Bid, now: int, held: int) -> Optional[RejectReason]:
        if rfq.rfq_id in self._closed or now > rfq.deadline_for_bids:
            return RejectReason.WINDOW_CLOSED
        if bid.expiry <= now:
            return RejectReason.EXPIRED
        if (
            bid.rfq_id != rfq.rfq_id
            or bid.agent_id not in self.registry
            or not self.registry.check(bid.agent_id, bid.signed_bytes(), bid.signature)
        ):
            return RejectReason.BAD_SIGNATURE
        if bid.reputation_bond < rfq.min_stake:
            return RejectReason.STAKE_SHORT
        extra = bid.reputation_bond - held
        if extra > 0 and not self.accounts.can_pay(self._payer(bid.agent_id), extra):
            return RejectReason.INSUFFICIENT_FUNDS
        return None

    def _rebond(self, agent: str, held: int, wanted: int, now: int, memo: str) -> None:
        account = self._payer(agent)
        if wanted > held:
            self.accounts.transfer(account, BOND_POOL, wanted - held, LedgerReason.BOND, now, memo)
        elif held > wanted:
            self.accounts.transfer(BOND_POOL, account, held - wanted, LedgerReason.REFUND, now, memo)

    def submit_bid(self, rfq_id: str, bid: Bid, now: int) -> BidResult:
        """Admit a bid and lock its bond in the bond pool.

        A second bid from the same agent replaces the first.

        Raises:
            NotFound: if the RFQ is unknown.
        """

        rfq = self.rfq(rfq_id)
        previous = self._bids[rfq_id].get(bid.agent_id)
        held = previous.reputation_bond if previous else 0

        reason = self._check(rfq, bid, now, held)
        if reason is not None:
            _logger.debug("bid of %s on %s rejected: %s", bid.agent_id, rfq_id, reason.value)
            self._emit("BID_REJECTED", {"rfq_id": rfq_id, "agent_id": bid.agent_id, "reason": reason.value})
            return BidResult(False, reason)

        self._rebond(bid.agent_id, held, bid.reputation_bond, now, rfq_id)
        self._bids[rfq_id][bid.agent_id] = bid
        self._emit("BID", {"rfq_id": rfq_id, **bid.to_dict()})
        return BidResult(True)

    def requote(
        self,
        rfq_id: str,
        revisions: Mapping[str, Bid],
        now: int,
        best_score: Optional[float] = None,
    ) -> Dict[str, BidResult]:
        """Single re-quote round: each admitted bidder may revise once.

        The delegator publishes ``best_score``, the current best scalarised
        score. Revisions are admitted even after the bid deadline but must
        otherwise pass the same checks.
        """

        rfq = self.rfq(rfq_id)
        self._emit("REQUOTE", {"rfq_id": rfq_id, "best_score": best_score})
        results: Dict[str, BidResult] = {}

        for agent in sorted(revisions):
            bid = revisions[agent]
            previous = self._bids[rfq_id].get(agent)
            if previous is None or rfq_id in self._closed:
                results[agent] = BidResult(False, RejectReason.WINDOW_CLOSED)
                continue
            if agent in self._revised[rfq_id]:
                results[agent] = BidResult(False, RejectReason.ALREADY_REVISED)
                continue

            extended = replace(rfq, deadline_for_bids=max(rfq.deadline_for_bids, now))
            reason = self._check(extended, bid, now, previous.reputation_bond)
            if reason is not None:
                results[agent] = BidResult(False, reason)
                continue

            self._rebond(agent, previous.reputation_bond, bid.reputation_bond, now, rfq_id)
            self._bids[rfq_id][agent] = bid
            self._revised[rfq_id].add(agent)
            results[agent] = BidResult(True)

        return results

    def candidates(self, rfq_id: str, reputation: Callable[[str], float]) -> List[Candidate]:
        out = []
        for bid in self.bids(rfq_id):
            score = reputation(bid.agent_id)
            out.append(Candidate(bid, objective_vector(bid, score), score))
        return out

    def best_score(self, rfq_id: str, reputation: Callable[[str], float]) -> Optional[float]:
        front = pareto_filter(self.candidates(rfq_id, reputation))
        if not front:
            return None
        return float(scalarize(front, self.rfq(rfq_id).preference_weights).min())

    def award(
        self,
        rfq_id: str,
        trust_model: TrustModel,
        reputation: Callable[[str], float],
        now: int,
    ) -> Award:
        """Close the RFQ, choose a winner and refund every other bond.

        The winner's bond stays in the bond pool; it becomes the contract
        stake when the contract is funded, or is refunded by
        :meth:`release_bond`.
        """

        rfq = self.rfq(rfq_id)
        if rfq_id in self._closed:
            raise exc.InvalidTransition(f"{rfq_id} already awarded")
        self._closed.add(rfq_id)

        candidates = self.candidates(rfq_id, reputation)
        winner = select(
            pareto_filter(candidates),
            rfq.preference_weights,
            trust_model,
            rfq.spec.characteristics,
        )

        refunded = []
        for bid in self.bids(rfq_id):
            if winner is not None and bid.agent_id == winner.agent_id:
                continue
            self.accounts.transfer(
                BOND_POOL, self._payer(bid.agent_id), bid.reputation_bond,
                LedgerReason.REFUND, now, rfq_id,
            )
            refunded.append(bid.agent_id)

        self._emit(
            "AWARD",
            {"rfq_id": rfq_id, "winner": winner.agent_id if winner else None, "bids": len(candidates)},
        )
        return Award(rfq_id, winner, candidates, refunded)

    def release_bond(self, rfq_id: str, agent: str, now: int) -> None:
        """Refund a held winner bond when no contract is formed."""

        bid = self._bids.get(rfq_id, {}).get(agent)
        if bid is None:
            raise exc.NotFound(f"no bid of {agent} on {rfq_id}")
        self.accounts.transfer(
            BOND_POOL, self._payer(agent), bid.reputation_bond, LedgerReason.REFUND, now, rfq_id
        )
