"""Escrowed delegation contracts.

A contract walks the automaton::

    drafted -> funded -> active -> submitted -> settled
                                              -> disputed -> arbitrated -> settled
                         active -> defaulted -> reauctioned
    drafted | funded | active -> cancelled

Every money movement goes through :class:`~delegsim.ledger.Accounts`; the
contract's escrow account holds the payment, the delegatee's stake and any
challenger bond until settlement.
"""

__all__ = [
    "ContractState",
    "PenaltyTerms",
    "DelegationContract",
    "ContractBook",
    "draft",
    "compensation_fraction",
]

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

from . import exc, wire
from .config import ContractConfig, CoordinationConfig
from .decomposition import TaskSpecification
from .ledger import BOND_POOL, Accounts, LedgerReason, escrow_account
from .market import Bid
from .monitoring import MonitoringPlan
from .tasks import Artifact
from .verification import Verdict, VerificationPolicy

_logger = logging.getLogger("delegsim")


class ContractState(str, enum.Enum):
    DRAFTED = "drafted"
    FUNDED = "funded"
    ACTIVE = "active"
    SUBMITTED = "submitted"
    DISPUTED = "disputed"
    ARBITRATED = "arbitrated"
    SETTLED = "settled"
    DEFAULTED = "defaulted"
    REAUCTIONED = "reauctioned"
    CANCELLED = "cancelled"


_TRANSITIONS = {
    ContractState.DRAFTED: {ContractState.FUNDED, ContractState.CANCELLED},
    ContractState.FUNDED: {ContractState.ACTIVE, ContractState.CANCELLED},
    ContractState.ACTIVE: {
        ContractState.SUBMITTED,
        ContractState.DEFAULTED,
        ContractState.CANCELLED,
    },
    ContractState.SUBMITTED: {ContractState.SETTLED, ContractState.DISPUTED},
    ContractState.DISPUTED: {ContractState.ARBITRATED},
    ContractState.ARBITRATED: {ContractState.SETTLED},
    ContractState.DEFAULTED: {ContractState.REAUCTIONED},
}

TERMINAL = frozenset(
    {ContractState.SETTLED, ContractState.REAUCTIONED, ContractState.CANCELLED}
)


def compensation_fraction(schedule: Optional[str], fraction: float) -> float:
    """Share of escrow owed for a verified completion ``fraction``.

    Raises:
        Unsupported: if the contract carries no schedule.
    """

    if schedule is None:
        raise exc.Unsupported("contract has no checkpoint compensation schedule")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"completion fraction {fraction} outside [0, 1]")
    if schedule == "linear":
        return fraction
    if schedule == "steps":
        return math.floor(fraction * 4) / 4
    raise exc.Unsupported(f"unknown compensation schedule {schedule!r}")


@dataclass(frozen=True)
class PenaltyTerms:
    default_price_difference: bool = True
    redelegation_fee_schedule: Tuple[int, ...] = CoordinationConfig().redelegation_fees


@dataclass(frozen=True)
class DelegationContract:
    contract_id: str
    delegator: str
    delegatee: str
    spec: TaskSpecification
    verification_policy: VerificationPolicy
    escrow_amount: int
    delegatee_stake: int
    dispute_bond: int
    dispute_window: int
    monitoring_plan: MonitoringPlan = field(default_factory=MonitoringPlan)
    backup_agent: Optional[str] = None
    penalty_terms: PenaltyTerms = field(default_factory=PenaltyTerms)
    checkpoint_compensation: Optional[str] = "linear"
    cancellation_fraction: float = 0.1
    state: ContractState = ContractState.DRAFTED
    window_end: Optional[int] = None
    challenger: Optional[str] = None
    verdict: Optional[Verdict] = None
    released: int = 0
    penalty: int = 0
    shortfall: int = 0
    history: Tuple[Tuple[int, ContractState], ...] = ()
    artifact: Optional[Artifact] = None
    attestations: Tuple[Any, ...] = ()
    proofs: Tuple[Any, ...] = ()

    @property
    def account(self) -> str:
        return escrow_account(self.contract_id)

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL

    def to_dict(self) -> Dict[str, Any]:
        return {
            "contract_id": self.contract_id,
            "delegator": self.delegator,
            "delegatee": self.delegatee,
            "task_id": self.spec.task_id,
            "verification_policy": self.verification_policy.to_dict(),
            "escrow_amount": self.escrow_amount,
            "delegatee_stake": self.delegatee_stake,
            "dispute_bond": self.dispute_bond,
            "dispute_window": self.dispute_window,
            "backup_agent": self.backup_agent,
            "penalty_terms": {
                "default_price_difference": self.penalty_terms.default_price_difference,
                "redelegation_fee_schedule": list(self.penalty_terms.redelegation_fee_schedule),
            },
            "checkpoint_compensation": self.checkpoint_compensation,
            "state": self.state.value,
            "window_end": self.window_end,
            "challenger": self.challenger,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "released": self.released,
            "penalty": self.penalty,
            "shortfall": self.shortfall,
            "history": [[tick, state.value] for tick, state in self.history],
            "artifact_digest": wire.to_hex(self.artifact.content_digest) if self.artifact else None,
            "attestations": len(self.attestations),
            "proofs": len(self.proofs),
        }


def draft(
    contract_id: str,
    winner: Bid,
    spec: TaskSpecification,
    delegator: str,
    now: int,
    policy: Optional[VerificationPolicy] = None,
    config: Optional[ContractConfig] = None,
    backup_agent: Optional[str] = None,
    monitoring_plan: Optional[MonitoringPlan] = None,
    dispute_bond: Optional[int] = None,
) -> DelegationContract:
    """Bind a winning bid into a drafted contract.

    Escrow equals the bid's estimated cost, the stake equals its bond and
    the dispute bond matches the stake unless given.
    """

    config = config or ContractConfig()
    return DelegationContract(
        contract_id=contract_id,
        delegator=delegator,
        delegatee=winner.agent_id,
        spec=spec,
        verification_policy=policy or spec.verification_policy,
        escrow_amount=winner.estimated_cost,
        delegatee_stake=winner.reputation_bond,
        dispute_bond=winner.reputation_bond if dispute_bond is None else dispute_bond,
        dispute_window=config.dispute_window,
        monitoring_plan=monitoring_plan
        or MonitoringPlan(cadence=spec.cadence, granularity=spec.granularity),
        backup_agent=backup_agent,
        checkpoint_compensation=config.compensation,
        cancellation_fraction=config.cancellation_fraction,
        history=((now, ContractState.DRAFTED),),
    )


class ContractBook:
    """Store of contracts and the only place their state changes.

    Contracts are frozen; every operation returns the new snapshot.

    Args:
        accounts:
            Ledger holding escrow accounts.
        account_of:
            Maps an agent to its paying account.
    """

    def __init__(
        self,
        accounts: Accounts,
        config: Optional[ContractConfig] = None,
        account_of: Optional[Callable[[str], str]] = None,
    ) -> None:
        self.accounts = accounts
        self.config = config or ContractConfig()
        self._account_of = account_of or (lambda agent: agent)
        self._contracts: Dict[str, DelegationContract] = {}
        self._listeners: List[Callable[[DelegationContract, ContractState], None]] = []

    def __contains__(self, contract_id: str) -> bool:
        return contract_id in self._contracts

    def __iter__(self) -> Iterator[DelegationContract]:
        return iter(self._contracts[c] for c in sorted(self._contracts))

    def on_transition(self, callback: Callable[[DelegationContract, ContractState], None]) -> None:
        self._listeners.append(callback)

    def add(self, contract: DelegationContract) -> DelegationContract:
        if contract.contract_id in self._contracts:
            raise exc.InvalidTransition(f"contract {contract.contract_id} already exists")
        self._contracts[contract.contract_id] = contract
        return contract

    def get(self, contract_id: str) -> DelegationContract:
        try:
            return self._contracts[contract_id]
        except KeyError:
            raise exc.NotFound(f"unknown contract {contract_id}") from None

    def _move(
        self, contract: DelegationContract, state: ContractState, now: int, **changes: Any
    ) -> DelegationContract:
        if state not in _TRANSITIONS.get(contract.state, ()):
            raise exc.InvalidTransition(
                f"{contract.contract_id}: {contract.state.value} -> {state.value}"
            )
        previous = contract.state
        updated = dataclasses.replace(
            contract, state=state, history=contract.history + ((now, state),), **changes
        )
        self._contracts[contract.contract_id] = updated
        _logger.debug("%s %s -> %s at %d", contract.contract_id, previous.value, state.value, now)
        for callback in self._listeners:
            callback(updated, previous)
        return updated

    def _pay(self, source: str, agent_or_account: str, amount: int, reason: LedgerReason, now: int, memo: str) -> None:
        if amount > 0:
            self.accounts.transfer(source, agent_or_account, amount, reason, now, memo)

    def _escrow_left(self, contract: DelegationContract) -> int:
        return contract.escrow_amount - contract.released

    def fund(self, contract_id: str, now: int, stake_from: str = BOND_POOL) -> DelegationContract:
        """Lock the payment and the stake in escrow and start the contract.

        The stake normally comes from the bond pool, where the winning bid's
        bond was held.

        Raises:
            FundingFailed: if either party cannot cover its share; the
                contract stays drafted.
        """

        contract = self.get(contract_id)
        if contract.state is not ContractState.DRAFTED:
            raise exc.InvalidTransition(f"{contract_id} is {contract.state.value}, not drafted")

        payer = self._account_of(contract.delegator)
        if contract.escrow_amount <= 0:
            raise exc.FundingFailed(f"{contract_id}: escrow must be positive")
        if not self.accounts.can_pay(payer, contract.escrow_amount):
            raise exc.FundingFailed(
                f"{contract.delegator} holds {self.accounts.balance(payer)}, "
                f"escrow needs {contract.escrow_amount}"
            )
        if contract.delegatee_stake > 0 and not self.accounts.can_pay(
            stake_from, contract.delegatee_stake
        ):
            raise exc.FundingFailed(
                f"{stake_from} cannot cover stake {contract.delegatee_stake} of {contract.delegatee}"
            )

        self._pay(payer, contract.account, contract.escrow_amount, LedgerReason.FUND, now, contract_id)
        self._pay(stake_from, contract.account, contract.delegatee_stake, LedgerReason.STAKE, now, contract_id)

        contract = self._move(contract, ContractState.FUNDED, now)
        return self._move(contract, ContractState.ACTIVE, now)

    def submit_outcome(
        self,
        contract_id: str,
        now: int,
        artifact: Optional[Artifact] = None,
        attestations: Tuple[Any, ...] = (),
        proofs: Tuple[Any, ...] = (),
    ) -> DelegationContract:
        """Hand in the result and open the dispute window ``[now, now + window)``.

        The artifact, attestations and proofs stay on the contract for
        arbitration.
        """

        contract = self.get(contract_id)
        return self._move(
            contract,
            ContractState.SUBMITTED,
            now,
            window_end=now + contract.dispute_window,
            artifact=artifact,
            attestations=tuple(attestations),
            proofs=tuple(proofs),
        )

    def challenge(self, contract_id: str, challenger: str, bond: int, now: int) -> DelegationContract:
        """Dispute a submitted outcome by posting the matching bond.

        Raises:
            WindowClosed: if the dispute window has ended.
            BondShort: if ``bond`` is below the dispute bond.
            InsufficientFunds: if the challenger cannot pay the bond.
        """

        contract = self.get(contract_id)
        if contract.state is ContractState.SETTLED and contract.window_end is not None:
            raise exc.WindowClosed(f"{contract_id} settled at {contract.window_end}")
        if contract.state is not ContractState.SUBMITTED:
            raise exc.InvalidTransition(f"{contract_id} is {contract.state.value}, not submitted")
        if now >= contract.window_end:
            raise exc.WindowClosed(f"{contract_id} window closed at {contract.window_end}")
        if bond < contract.dispute_bond:
            raise exc.BondShort(f"bond {bond} below dispute bond {contract.dispute_bond}")

        self._pay(
            self._account_of(challenger), contract.account, contract.dispute_bond,
            LedgerReason.BOND, now, contract_id,
        )
        return self._move(contract, ContractState.DISPUTED, now, challenger=challenger)

    def expire_window(self, contract_id: str, now: int) -> Optional[DelegationContract]:
        """Optimistic settlement of an unchallenged outcome at window end.

        Contracts whose policy sets ``escrow_trigger`` wait for a verdict
        instead. Returns the settled contract, or ``None`` if nothing happened.
        """

        contract = self.get(contract_id)
        if (
            contract.state is not ContractState.SUBMITTED
            or contract.window_end is None
            or now < contract.window_end
            or contract.verification_policy.escrow_trigger
        ):
            return None
        return self._close(contract, True, now, None)

    def arbitrate(self, contract_id: str, verdict: Verdict, now: int) -> DelegationContract:
        contract = self.get(contract_id)
        return self._move(contract, ContractState.ARBITRATED, now, verdict=verdict)

    def settle(self, contract_id: str, verdict: Verdict, now: int) -> DelegationContract:
        """Release or slash the escrow according to ``verdict``.

        On a pass the delegatee receives the escrow and its stake back and a
        challenger forfeits its bond to the delegatee. On a fail the delegator
        recovers the escrow and the slashed stake and a challenger is refunded.
        """

        contract = self.get(contract_id)
        if contract.state is ContractState.DISPUTED:
            contract = self.arbitrate(contract_id, verdict, now)
        elif contract.state is ContractState.SUBMITTED:
            if not contract.verification_policy.escrow_trigger and now < contract.window_end:
                raise exc.InvalidTransition(
                    f"{contract_id} dispute window open until {contract.window_end}"
                )
        elif contract.state is not ContractState.ARBITRATED:
            raise exc.InvalidTransition(f"{contract_id} is {contract.state.value}, cannot settle")
        return self._close(contract, verdict.passed, now, verdict)

    def _close(
        self, contract: DelegationContract, passed: bool, now: int, verdict: Optional[Verdict]
    ) -> DelegationContract:
        cid, escrow = contract.contract_id, contract.account
        delegator = self._account_of(contract.delegator)
        delegatee = self._account_of(contract.delegatee)
        remaining = self._escrow_left(contract)

        if passed:
            self._pay(escrow, delegatee, remaining, LedgerReason.RELEASE, now, cid)
            self._pay(escrow, delegatee, contract.delegatee_stake, LedgerReason.REFUND, now, cid)
            if contract.challenger:
                self._pay(escrow, delegatee, contract.dispute_bond, LedgerReason.SLASH, now, cid)
        else:
            self._pay(escrow, delegator, remaining, LedgerReason.REFUND, now, cid)
            self._pay(escrow, delegator, contract.delegatee_stake, LedgerReason.SLASH, now, cid)
            if contract.challenger:
                self._pay(
                    escrow, self._account_of(contract.challenger), contract.dispute_bond,
                    LedgerReason.REFUND, now, cid,
                )

        return self._move(
            contract,
            ContractState.SETTLED,
            now,
            verdict=verdict or contract.verdict,
            released=contract.escrow_amount if passed else contract.released,
        )

    def mark_defaulted(self, contract_id: str, now: int) -> DelegationContract:
        return self._move(self.get(contract_id), ContractState.DEFAULTED, now)

    def default_and_reauction(self, contract_id: str, new_price: int, now: int) -> DelegationContract:
        """Close a defaulted contract once the replacement price is known.

        The defaulting delegatee covers ``max(0, new_price - price)`` out of its
        stake, capped at the stake; what the cap leaves uncovered is recorded
        as ``shortfall``. The rest of the stake returns to the delegatee and
        the unreleased escrow to the delegator, who funds the replacement.
        """

        contract = self.get(contract_id)
        if contract.state is ContractState.ACTIVE:
            contract = self.mark_defaulted(contract_id, now)
        elif contract.state is not ContractState.DEFAULTED:
            raise exc.InvalidTransition(f"{contract_id} is {contract.state.value}, not defaulted")

        difference = max(0, new_price - contract.escrow_amount)
        if not contract.penalty_terms.default_price_difference:
            difference = 0
        penalty = min(difference, contract.delegatee_stake)
        cid, escrow = contract.contract_id, contract.account

        self._pay(escrow, self._account_of(contract.delegator), penalty, LedgerReason.PENALTY, now, cid)
        self._pay(
            escrow, self._account_of(contract.delegatee), contract.delegatee_stake - penalty,
            LedgerReason.REFUND, now, cid,
        )
        self._pay(
            escrow, self._account_of(contract.delegator), self._escrow_left(contract),
            LedgerReason.REFUND, now, cid,
        )
        if difference > penalty:
            _logger.info("%s default penalty short by %d", cid, difference - penalty)

        return self._move(
            contract, ContractState.REAUCTIONED, now, penalty=penalty, shortfall=difference - penalty
        )

    def checkpoint_compensation(self, contract_id: str, fraction: float, now: int) -> int:
        """Pay the delegatee for a verified partial completion.

        Returns the amount released by this call; earlier releases count
        towards the schedule.

        Raises:
            Unsupported: if the contract has no compensation schedule.
        """

        contract = self.get(contract_id)
        share = compensation_fraction(contract.checkpoint_compensation, fraction)
        if contract.state not in (ContractState.ACTIVE, ContractState.DEFAULTED):
            raise exc.InvalidTransition(
                f"{contract_id} is {contract.state.value}, no checkpoint payment"
            )

        owed = math.floor(share * contract.escrow_amount) - contract.released
        if owed <= 0:
            return 0
        self._pay(
            contract.account, self._account_of(contract.delegatee), owed,
            LedgerReason.RELEASE, now, f"{contract_id}:checkpoint",
        )
        self._contracts[contract_id] = dataclasses.replace(
            contract, released=contract.released + owed
        )
        return owed

    def cancel(self, contract_id: str, now: int) -> DelegationContract:
        """Cancel before submission.

        An active contract pays the delegatee ``cancellation_fraction`` of the
        escrow as compensation; the rest returns to the delegator and the
        stake to the delegatee.
        """

        contract = self.get(contract_id)
        if contract.state in (ContractState.FUNDED, ContractState.ACTIVE):
            cid, escrow = contract.contract_id, contract.account
            remaining = self._escrow_left(contract)
            compensation = 0
            if contract.state is ContractState.ACTIVE:
                compensation = min(
                    remaining, math.floor(contract.cancellation_fraction * contract.escrow_amount)
                )
            delegatee = self._account_of(contract.delegatee)
            self._pay(escrow, delegatee, compensation, LedgerReason.RELEASE, now, f"{cid}:cancel")
            self._pay(
                escrow, self._account_of(contract.delegator), remaining - compensation,
                LedgerReason.REFUND, now, cid,
            )
            self._pay(escrow, delegatee, contract.delegatee_stake, LedgerReason.REFUND, now, cid)
        return self._move(contract, ContractState.CANCELLED, now)

    def stranded(self) -> Dict[str, int]:
        """Escrow balances left behind by contracts that reached a terminal state."""

        return {
            c.contract_id: self.accounts.balance(c.account)
            for c in self
            if c.terminal and self.accounts.balance(c.account) != 0
        }
