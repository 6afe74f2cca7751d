"""Deterministic discrete-event engine.

A :class:`Simulation` owns the whole world: identities, tokens, accounts,
market, contracts, monitoring streams and the reputation ledger. Events wait
in a priority queue ordered by ``(tick, seq)`` and the loop is the only
mutator of world state. Everything that happens is appended to the event log;
the log ends with a ``RUN_END`` footer carrying its digest and the metrics
recomputed from it, which :func:`replay` checks.
"""

__all__ = [
    "WorkloadSpec",
    "Scenario",
    "RunResult",
    "Simulation",
    "agent_from_dict",
    "inject",
    "run",
    "replay",
    "read_log",
    "log_digest",
]

import dataclasses
import heapq
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np

from . import exc, wire
from .agents import AdversaryKind, AdversaryProfile, make_agent
from .base import AgentSpec, BaseAgent, Role
from .config import SimConfig, load_config
from .contract import ContractBook, ContractState, DelegationContract, draft
from .coordination import (
    Action,
    HumanOverseer,
    StabilityOutcome,
    StabilityPolicy,
    StateSnapshot,
    Trigger,
    TriggerKind,
    apply_stability,
    checkpoint,
    detect,
    resume,
    select_response,
)
from .decomposition import (
    HUMAN_REVIEW,
    AgentStats,
    CapabilityRegistry,
    DecompositionProposal,
    LeafAssignmentPlan,
    TaskSpecification,
    Verifier,
    VerifierRegistry,
    finalize,
    propose,
)
from .identity import Claim, CredentialWallet, KeyRegistry, issue_credential
from .ledger import REWARD_POOL, TREASURY, Accounts, LedgerEntry, LedgerReason
from .market import Bid, Candidate, Market, PrivacyGuarantee, delegation_overhead, pareto_filter, select, sign_bid
from .metrics import EventType, compute_metrics
from .monitoring import EventKind, MonitoringHub, MonitoringPlan, make_event
from .reputation import (
    OutcomeRecord,
    ReputationLedger,
    TrustModel,
    circuit_breaker,
    graduated_authority,
)
from .tasks import (
    Artifact,
    FloorDecision,
    TaskNode,
    TaskProfile,
    complexity_floor,
    expected_digest,
    generate_task,
    task_from_dict,
)
from .tokens import (
    Caveat,
    CaveatKind,
    CapabilityToken,
    DenyReason,
    Operation,
    PermissionAuthority,
    RequestContext,
)
from .verification import (
    AUDITOR_CERTIFICATION,
    HUMAN_REVIEWER,
    Verdict,
    Mechanism,
    VerificationMode,
    issue_completion_credential,
    make_proof,
    schelling_consensus,
    verify_direct,
    verify_proof,
    verify_third_party,
)

_logger = logging.getLogger("delegsim")

_ROOT_KEY = "root"
_MAX_AUCTIONS = 3
_CERTIFIER = "delegsim-certifier"

# settles an escrow-gated contract no mechanism could check
_UNVERIFIED = Verdict(passed=False, quality=0.0, mechanism=Mechanism.DIRECT, evidence=("unverified",))


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of the generated task workload.

    Args:
        count:
            Number of root tasks.
        arrival_interval:
            Ticks between two arrivals.
        budget_factor:
            Root budget as a multiple of the root's cost estimate.
    """

    count: int = 0
    depth: int = 1
    branching: int = 2
    profile: TaskProfile = field(default_factory=TaskProfile)
    arrival_interval: int = 10
    budget_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.count < 0 or self.depth < 0 or self.branching < 1:
            raise exc.ConfigError("workload needs count >= 0, depth >= 0, branching >= 1")
        if self.arrival_interval < 0 or self.budget_factor <= 0:
            raise exc.ConfigError("workload needs arrival_interval >= 0 and budget_factor > 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorkloadSpec":
        values = dict(data)
        try:
            if "profile" in values:
                values["profile"] = TaskProfile.from_dict(values["profile"])
            return cls(**values)
        except (TypeError, exc.InvalidTask) as e:
            exc.raise_with_traceback(exc.ConfigError(f"workload: {e}"))
            raise


def agent_from_dict(data: Mapping[str, Any]) -> AgentSpec:
    """Scenario agent entry to :class:`~delegsim.base.AgentSpec`.

    ``policy`` is ``"honest"`` or an adversary profile object.

    Raises:
        ConfigError: if the entry is malformed.
    """

    try:
        policy = data.get("policy", "honest")
        profile = None if policy == "honest" else AdversaryProfile.from_dict(policy)
        return AgentSpec(
            label=data["label"],
            role=Role(data.get("role", "delegatee")),
            capabilities=frozenset(data.get("capabilities", ())),
            balance=int(data.get("balance", 0)),
            policy=profile,
            capacity=int(data.get("capacity", 8)),
            model_family=str(data.get("model_family", "")),
            privacy=PrivacyGuarantee(data.get("privacy", "none")),
            success_rate=float(data.get("success_rate", 1.0)),
            certifications=frozenset(data.get("certifications", ())),
            bond=int(data.get("bond", 0)),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        exc.raise_with_traceback(exc.ConfigError(f"agent {data!r}: {e}"))
        raise


@dataclass(frozen=True)
class Scenario:
    """Everything a run depends on; equal scenarios give equal logs.

    Args:
        seed:
            Seed of the single random generator of the run.
        horizon:
            Last tick that is simulated.
        agents:
            Participants, in scenario order.
        workload:
            Generated root tasks.
        config:
            Effective module configuration.
        tasks:
            Explicit root tasks, arriving before the generated ones.
        triggers:
            External triggers (spec changes, cancellations, resource shifts,
            preemptions) injected at fixed ticks.
        overseer_approves:
            Answer of the human overseer to escalations.
    """

    seed: int
    horizon: int
    agents: Tuple[AgentSpec, ...]
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    config: SimConfig = field(default_factory=SimConfig)
    tasks: Tuple[TaskNode, ...] = ()
    triggers: Tuple[Trigger, ...] = ()
    overseer_approves: bool = True

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise exc.ConfigError("horizon must be >= 1")
        labels = [a.label for a in self.agents]
        if len(set(labels)) != len(labels):
            raise exc.ConfigError("agent labels must be unique")
        if (self.tasks or self.workload.count) and not any(
            a.role is Role.DELEGATOR for a in self.agents
        ):
            raise exc.ConfigError("a workload needs at least one delegator")

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Any], environ: Optional[Mapping[str, str]] = None
    ) -> "Scenario":
        """Build a scenario from its JSON object.

        The ``config`` object is merged over the defaults and the file named
        in ``DELEGATION_SIM_CONFIG``.

        Raises:
            ConfigError: on any invalid field.
        """

        try:
            seed = int(data["seed"])
            horizon = int(data["horizon"])
        except (KeyError, TypeError, ValueError) as e:
            exc.raise_with_traceback(exc.ConfigError(f"scenario needs seed and horizon: {e}"))
            raise

        try:
            tasks = tuple(task_from_dict(t) for t in data.get("tasks", ()))
            triggers = tuple(
                Trigger(TriggerKind(t["kind"]), t["task_id"], int(t["tick"]), tuple(t.get("evidence", ())))
                for t in data.get("triggers", ())
            )
        except (exc.InvalidTask, KeyError, ValueError) as e:
            exc.raise_with_traceback(exc.ConfigError(f"scenario tasks or triggers: {e}"))
            raise

        return cls(
            seed=seed,
            horizon=horizon,
            agents=tuple(agent_from_dict(a) for a in data.get("agents", ())),
            workload=WorkloadSpec.from_dict(data.get("workload", {})),
            config=load_config(data.get("config"), environ),
            tasks=tasks,
            triggers=triggers,
            overseer_approves=bool(data.get("overseer_approves", True)),
        )

    @classmethod
    def from_json(cls, path: str, environ: Optional[Mapping[str, str]] = None) -> "Scenario":
        try:
            with open(path, "r") as fh:
                data = json.load(fh)
        except (OSError, ValueError) as e:
            exc.raise_with_traceback(exc.ConfigError(f"cannot read scenario {path}: {e}"))
            raise
        return cls.from_dict(data, environ)


def inject(
    scenario: Scenario, index: int, profile: Union[AdversaryProfile, Mapping[str, Any]]
) -> Scenario:
    """Replace the policy of the agent at ``index`` by an adversary profile.

    Colluding rings also take over the agents listed as ``members``.
    """

    if not 0 <= index < len(scenario.agents):
        raise IndexError(f"no agent at index {index}")
    if not isinstance(profile, AdversaryProfile):
        profile = AdversaryProfile.from_dict(profile)

    members = set(profile.members) if profile.kind is AdversaryKind.COLLUDING_RING else set()
    agents = tuple(
        dataclasses.replace(a, policy=profile) if i == index or a.label in members else a
        for i, a in enumerate(scenario.agents)
    )
    return dataclasses.replace(scenario, agents=agents)


def _line(record: Mapping[str, Any]) -> str:
    return wire.canonical_json(record)


def log_digest(body: Iterable[Mapping[str, Any]]) -> str:
    """Hex digest of the canonical lines of a log body."""

    data = "".join(_line(r) + "\n" for r in body).encode("utf-8")
    return wire.to_hex(wire.digest(data))


@dataclass
class RunResult:
    event_log: List[Dict[str, Any]]
    digest: str
    metrics: Dict[str, Any]
    ledger: List[LedgerEntry]
    reputation: Optional[ReputationLedger] = None

    @property
    def body(self) -> List[Dict[str, Any]]:
        return [r for r in self.event_log if r["type"] != EventType.RUN_END.value]

    def lines(self) -> List[str]:
        return [_line(r) for r in self.event_log]

    def write(self, out_dir: str) -> Dict[str, str]:
        """Write ``events.jsonl``, ``ledger.jsonl``, ``reputation.jsonl`` and ``metrics.json``."""

        os.makedirs(out_dir, exist_ok=True)
        paths = {
            name: os.path.join(out_dir, name)
            for name in ("events.jsonl", "ledger.jsonl", "reputation.jsonl", "metrics.json")
        }
        with open(paths["events.jsonl"], "w") as fh:
            fh.writelines(line + "\n" for line in self.lines())
        with open(paths["ledger.jsonl"], "w") as fh:
            fh.writelines(_line(e.to_dict()) + "\n" for e in self.ledger)
        with open(paths["reputation.jsonl"], "w") as fh:
            if self.reputation is not None:
                self.reputation.write_jsonl(fh)
        with open(paths["metrics.json"], "w") as fh:
            json.dump(self.metrics, fh, sort_keys=True, indent=2)
        return paths


@dataclass
class _Leaf:
    """Bookkeeping of one finalized leaf across its contracts."""

    spec: TaskSpecification
    node: TaskNode
    root_id: str
    delegator: str
    token: CapabilityToken
    delegated: Optional[CapabilityToken] = None
    alternatives: Tuple[str, ...] = ()
    contract_id: Optional[str] = None
    agent: Optional[str] = None
    backup: Optional[Candidate] = None
    started: int = 0
    base_fraction: float = 0.0
    remaining: int = 1
    spend: int = 0
    reports: int = 0
    reported: float = 0.0
    adjusted: bool = False
    suspended: bool = False
    redelegations: List[int] = field(default_factory=list)
    excluded: Set[str] = field(default_factory=set)
    auctions: int = 0
    defaulted: Optional[str] = None
    snapshot: Optional[StateSnapshot] = None
    artifact: Optional[Artifact] = None
    finished: bool = False

    @property
    def task_id(self) -> str:
        return self.spec.task_id


class Simulation:
    """One run of a scenario.

    Args:
        scenario:
            What to simulate.
        check_invariants:
            Check money conservation at the end of every tick.
    """

    def __init__(self, scenario: Scenario, check_invariants: bool = True) -> None:
        self.scenario = scenario
        self.config = scenario.config
        self.check_invariants = check_invariants
        self.rng = np.random.default_rng(scenario.seed)
        self.now = 0

        self.log: List[Dict[str, Any]] = []
        self._queue: List[Tuple[int, int, str, Dict[str, Any]]] = []
        self._seq = 0

        self.registry = KeyRegistry()
        self.wallet = CredentialWallet(self.registry)
        self.authority = PermissionAuthority()
        self.accounts = Accounts()
        self.hub = MonitoringHub()
        self.reputation = ReputationLedger(self.registry, self.config.reputation)

        seed_bytes = wire.canonical_bytes("seed", scenario.seed)
        self.authority.add_root(_ROOT_KEY, wire.mac(b"root", seed_bytes))
        self._proof_key = wire.mac(b"proof", seed_bytes)
        self._storage_key = wire.mac(b"storage", seed_bytes)
        self._certifier = self.registry.create(_CERTIFIER).id

        self.agents: Dict[str, BaseAgent] = {}
        self._accounts_of: Dict[str, str] = {}
        self._busy: Dict[str, int] = {}
        self._live: Dict[str, int] = {}
        self._pending: Dict[str, List[_Leaf]] = {}
        self._leaves: Dict[str, _Leaf] = {}
        self._by_contract: Dict[str, _Leaf] = {}
        self._contract_counter = 0
        self._coins: Dict[Tuple[str, int], bool] = {}
        self._handled: Set[Tuple[str, str, int]] = set()
        self._tripped: Set[str] = set()
        self._overseer = HumanOverseer(
            latency=self.config.coordination.human_latency, approve=scenario.overseer_approves
        )
        self._stability = StabilityPolicy.from_config(
            self.config.coordination, self.config.reputation
        )

        self.market = Market(self.accounts, self.registry, self.config.market, self.account_of)
        self.contracts = ContractBook(self.accounts, self.config.contract, self.account_of)

        self.accounts.on_entry(self._on_ledger)
        self.market.on_event(self._on_market)
        self.contracts.on_transition(self._on_transition)

        self._populate()
        self.capabilities = CapabilityRegistry(
            AgentStats(a.agent_id, a.spec.capabilities, a.spec.success_rate, a.behaviour.price_factor)
            for a in self._of_role(Role.DELEGATEE)
        )
        verifiers = list(VerifierRegistry.default())
        if any(self.wallet.has(a, HUMAN_REVIEWER) for a in self.agents):
            verifiers.append(Verifier(HUMAN_REVIEW, human=True))
        self.verifiers = VerifierRegistry(verifiers)

    # world construction

    def account_of(self, agent: str) -> str:
        return self._accounts_of.get(agent, agent)

    def _populate(self) -> None:
        for spec in self.scenario.agents:
            profile = spec.policy
            if profile is not None and profile.kind is AdversaryKind.SYBIL_OPERATOR:
                n = int(profile.resolved()["n"])
                identities = [(f"{spec.label}#{i}", spec.agent_id) for i in range(n)]
            else:
                identities = [(spec.label, spec.account or spec.agent_id)]

            self.accounts.open(identities[0][1], spec.balance, 0)
            for label, account in identities:
                agent_id = self.registry.create(label).id
                agent = make_agent(spec, agent_id, account)
                self.agents[agent_id] = agent
                self._accounts_of[agent_id] = account
                self._busy[agent_id] = 0
                for kind in sorted(spec.certifications):
                    self.wallet.certify(self._certifier, agent_id, kind)
                self._emit(
                    EventType.AGENT,
                    agent=agent_id,
                    label=label,
                    role=spec.role.value,
                    account=account,
                    adversary=agent.adversary,
                    capabilities=sorted(spec.capabilities),
                    model_family=spec.model_family,
                )

    def _of_role(self, role: Role) -> List[BaseAgent]:
        return [self.agents[a] for a in sorted(self.agents) if self.agents[a].spec.role is role]

    # logging

    def _emit(self, event_type: EventType, /, **fields: Any) -> None:
        record = {**fields, "seq": len(self.log), "tick": self.now, "type": event_type.value}
        self.log.append(json.loads(_line(record)))

    def _on_ledger(self, entry: LedgerEntry) -> None:
        data = entry.to_dict()
        data.pop("tick")
        self._emit(EventType.LEDGER, **data)

    def _on_market(self, kind: str, payload: Dict[str, Any]) -> None:
        self._emit(EventType(kind), **payload)

    def _on_transition(self, contract: DelegationContract, previous: ContractState) -> None:
        self._emit(
            EventType.CONTRACT,
            contract_id=contract.contract_id,
            task_id=contract.spec.task_id,
            delegator=contract.delegator,
            delegatee=contract.delegatee,
            previous=previous.value,
            state=contract.state.value,
        )

    # queue

    def _schedule(self, tick: int, kind: str, **payload: Any) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (tick, self._seq, kind, payload))

    def run(self) -> RunResult:
        """Execute the event loop up to the horizon.

        Raises:
            InvariantViolation: if money is created or destroyed, or escrow
                is stranded by a closed contract.
        """

        _logger.info(
            "run seed=%d horizon=%d agents=%d", self.scenario.seed, self.scenario.horizon, len(self.agents)
        )
        self._schedule_arrivals()

        while self._queue and self._queue[0][0] <= self.scenario.horizon:
            tick, _, kind, payload = heapq.heappop(self._queue)
            self.now = tick
            getattr(self, f"_on_{kind}")(**payload)
            if self.check_invariants and (not self._queue or self._queue[0][0] != tick):
                self._check_conservation()

        stranded = self.contracts.stranded()
        if stranded:
            raise exc.InvariantViolation(f"escrow stranded by closed contracts: {stranded}")

        body = list(self.log)
        metrics = compute_metrics(body)
        digest = log_digest(body)
        footer = {"seq": len(body), "tick": self.now, "type": EventType.RUN_END.value,
                  "digest": digest, "metrics": metrics}
        self.log.append(json.loads(_line(footer)))

        _logger.info("run done: %d events, digest %s", len(body), digest)
        return RunResult(self.log, digest, metrics, self.accounts.entries, self.reputation)

    def _check_conservation(self) -> None:
        if self.accounts.total() != 0:
            raise exc.InvariantViolation(
                f"tick {self.now}: ledger total is {self.accounts.total()}, expected 0"
            )
        for account, balance in self.accounts.balances().items():
            if balance < 0 and account != "genesis":
                raise exc.InvariantViolation(f"tick {self.now}: {account} is overdrawn ({balance})")

    def _schedule_arrivals(self) -> None:
        workload = self.scenario.workload
        roots = list(self.scenario.tasks)
        for i in range(workload.count):
            seed = int(self.rng.integers(0, 2 ** 31))
            roots.append(
                generate_task(seed, workload.depth, workload.branching, workload.profile, prefix=f"w{i}-")
            )

        delegators = [a.agent_id for a in self._of_role(Role.DELEGATOR)]
        for i, root in enumerate(roots):
            delegator = delegators[i % len(delegators)]
            self._schedule(i * workload.arrival_interval, "arrive", root=root, delegator=delegator)

    # arrival and decomposition

    def _on_arrive(self, root: TaskNode, delegator: str) -> None:
        if len(self.capabilities) == 0:
            self._emit(EventType.TASK_FAILED, task_id=root.task_id, reason="no delegatees")
            return
        try:
            proposals = propose(
                root, self.capabilities, self.config.decomposition.k, self.verifiers,
                self.config.decomposition,
            )
        except exc.UndecomposableTask as e:
            self._emit(EventType.TASK_FAILED, task_id=root.task_id, reason=f"undecomposable: {e}")
            return

        proposal = proposals[0]
        alternatives = tuple(p.proposal_id for p in proposals[1:])
        budget = int(self.scenario.workload.budget_factor * root.characteristics.cost_est)
        token = self.authority.mint(
            _ROOT_KEY,
            [
                Caveat(CaveatKind.RESOURCE_SCOPE, frozenset({"/tasks"})),
                Caveat(CaveatKind.OPERATIONS, frozenset(Operation)),
                Caveat(CaveatKind.MAX_DEPTH, 2),
            ],
            holder=delegator,
        )
        for plan, share in self._budget_shares(proposal, budget):
            self._open_leaf(plan, share, proposal, alternatives, delegator, token)

    @staticmethod
    def _budget_shares(
        proposal: DecompositionProposal, budget: int
    ) -> List[Tuple[LeafAssignmentPlan, int]]:
        total = sum(p.node.characteristics.cost_est for p in proposal.leaves) or 1
        return [
            (p, max(1, budget * p.node.characteristics.cost_est // total)) for p in proposal.leaves
        ]

    def _open_leaf(
        self,
        plan: LeafAssignmentPlan,
        share: int,
        proposal: DecompositionProposal,
        alternatives: Tuple[str, ...],
        delegator: str,
        token: CapabilityToken,
    ) -> None:
        spec = finalize(plan, share, self.config.monitoring)
        leaf = _Leaf(
            spec=spec,
            node=plan.node,
            root_id=proposal.root_task_id,
            delegator=delegator,
            token=token,
            alternatives=alternatives,
            remaining=spec.characteristics.duration_est,
        )
        self._leaves[spec.task_id] = leaf
        self._emit(
            EventType.TASK_OPEN,
            task_id=spec.task_id,
            root_id=leaf.root_id,
            delegator=delegator,
            mode=spec.verification_policy.mode.value,
            verifiability=spec.characteristics.verifiability,
            human_required=spec.human_required,
            proposal_id=proposal.proposal_id,
        )

        capable = sum(1 for a in self._of_role(Role.DELEGATEE) if self._eligible(a, leaf))
        overhead = delegation_overhead(
            capable, True, spec.verification_policy.mode.value, self.config.market
        )
        if complexity_floor(plan.node, overhead, self.config.floor) is FloorDecision.EXECUTE_DIRECTLY:
            self._emit(EventType.TASK_DIRECT, task_id=spec.task_id, overhead=overhead)
            self._schedule(self.now + spec.characteristics.duration_est, "direct", task_id=spec.task_id)
            return
        self._start(leaf)

    def _on_direct(self, task_id: str) -> None:
        leaf = self._leaves[task_id]
        leaf.finished = True
        self._emit(EventType.TASK_DONE, task_id=task_id, agent=leaf.delegator, direct=True)

    def _start(self, leaf: _Leaf) -> None:
        capacity = self.agents[leaf.delegator].spec.capacity
        if self._live.get(leaf.delegator, 0) >= capacity:
            self._pending.setdefault(leaf.delegator, []).append(leaf)
            self._emit(EventType.TASK_WAIT, task_id=leaf.task_id, delegator=leaf.delegator)
            return
        self._live[leaf.delegator] = self._live.get(leaf.delegator, 0) + 1
        self._auction(leaf)

    def _release_delegator(self, leaf: _Leaf) -> None:
        self._live[leaf.delegator] -= 1
        queue = self._pending.get(leaf.delegator)
        if queue:
            self._start(queue.pop(0))

    def _fail(self, leaf: _Leaf, reason: str) -> None:
        if leaf.finished:
            return
        leaf.finished = True
        self._emit(EventType.TASK_FAILED, task_id=leaf.task_id, reason=reason)
        self._release_delegator(leaf)

    # market

    def _eligible(self, agent: BaseAgent, leaf: _Leaf) -> bool:
        if agent.agent_id in leaf.excluded or agent.agent_id in self._tripped:
            return False
        if leaf.spec.human_required and not self.wallet.has(agent.agent_id, HUMAN_REVIEWER):
            return False
        return agent.can_serve(leaf.spec.characteristics)

    def _reputation(self, agent: str) -> float:
        return self.reputation.composite(agent, self.now)

    def _auction(self, leaf: _Leaf) -> None:
        leaf.auctions += 1
        rfq = self.market.broadcast_rfq(leaf.spec, leaf.delegator, self.now)
        for agent in self._of_role(Role.DELEGATEE):
            if self._busy[agent.agent_id] >= agent.spec.capacity or not self._eligible(agent, leaf):
                continue
            bid = agent.quote(rfq, self.rng, self.now)
            if bid is not None:
                self.market.submit_bid(rfq.rfq_id, sign_bid(self.registry, bid), self.now)
        self._schedule(rfq.deadline_for_bids, "close", task_id=leaf.task_id, rfq_id=rfq.rfq_id)

    def _on_close(self, task_id: str, rfq_id: str) -> None:
        leaf = self._leaves[task_id]
        if self.config.market.requote:
            best = self.market.best_score(rfq_id, self._reputation)
            revisions = {}
            for bid in self.market.bids(rfq_id):
                revised = self.agents[bid.agent_id].revise(bid, best)
                if revised is not None:
                    revisions[bid.agent_id] = sign_bid(self.registry, revised)
            self.market.requote(rfq_id, revisions, self.now, best)

        trust = TrustModel(leaf.delegator, self.config.market.trust_base, self.config.market.trust_slope)
        award = self.market.award(rfq_id, trust, self._reputation, self.now)
        if award.winner is None:
            self._no_match(leaf)
            return

        rest = [c for c in award.candidates if c.agent_id != award.winner.agent_id]
        backup = select(
            pareto_filter(rest), self.market.rfq(rfq_id).preference_weights, trust,
            leaf.spec.characteristics,
        )
        overhead = delegation_overhead(
            len(award.candidates), True, leaf.spec.verification_policy.mode.value, self.config.market
        )
        self._close_defaulted(leaf, award.winner.bid.estimated_cost)
        payer = self.account_of(leaf.delegator)
        if not self.accounts.can_pay(payer, overhead + award.winner.bid.estimated_cost):
            self._unpaid(leaf, overhead, "overhead")
            self.market.release_bond(rfq_id, award.winner.agent_id, self.now)
            self._fail(leaf, "insufficient funds")
            return
        self.accounts.transfer(payer, TREASURY, overhead, LedgerReason.FEE, self.now, rfq_id)
        if not self._contract(leaf, award.winner.bid, backup):
            self.market.release_bond(rfq_id, award.winner.agent_id, self.now)
            self._no_match(leaf)

    def _unpaid(self, leaf: _Leaf, fee: int, purpose: str) -> None:
        self._emit(
            EventType.FEE_UNPAID, task_id=leaf.task_id, payer=leaf.delegator, fee=fee, purpose=purpose
        )
        _logger.debug("tick %d: %s cannot pay %s of %d", self.now, leaf.delegator, purpose, fee)

    def _no_match(self, leaf: _Leaf) -> None:
        if leaf.auctions >= _MAX_AUCTIONS:
            self._close_defaulted(leaf, None)
            self._fail(leaf, "no match")
            return
        self._schedule(self.now + self.config.market.bid_window, "retry", task_id=leaf.task_id)

    def _on_retry(self, task_id: str) -> None:
        leaf = self._leaves[task_id]
        if not leaf.finished and leaf.contract_id is None:
            self._auction(leaf)

    def _close_defaulted(self, leaf: _Leaf, new_price: Optional[int]) -> None:
        if leaf.defaulted is None:
            return
        old = self.contracts.get(leaf.defaulted)
        self.contracts.default_and_reauction(
            old.contract_id, old.escrow_amount if new_price is None else new_price, self.now
        )
        leaf.defaulted = None

    # contracts and execution

    def _delegate(self, leaf: _Leaf, agent: str, horizon: int) -> CapabilityToken:
        return self.authority.grant(
            leaf.token,
            [
                Caveat(CaveatKind.RESOURCE_SCOPE, frozenset(leaf.spec.resource_boundaries.scope)),
                Caveat(CaveatKind.SPEND_CAP, leaf.spec.resource_boundaries.spend_cap),
                Caveat(CaveatKind.EXPIRY, self.now + horizon),
                Caveat(CaveatKind.MAX_DEPTH, 1),
            ],
            grantee=agent,
        )

    def _contract(
        self, leaf: _Leaf, bid: Bid, backup: Optional[Candidate], stake_from: Optional[str] = None
    ) -> bool:
        """Draft, fund and start a contract; False if funding failed."""

        agent = bid.agent_id
        grant = graduated_authority(self._reputation(agent), leaf.spec.characteristics.criticality)
        plan = MonitoringPlan(
            cadence=leaf.spec.cadence, granularity=max(leaf.spec.granularity, grant.granularity_floor)
        )
        self._contract_counter += 1
        cid = f"c-{self._contract_counter:06d}"
        contract = draft(
            cid, bid, leaf.spec, leaf.delegator, self.now, config=self.config.contract,
            backup_agent=backup.agent_id if backup else None, monitoring_plan=plan,
        )
        self.contracts.add(contract)
        try:
            if stake_from is None:
                self.contracts.fund(cid, self.now)
            else:
                self.contracts.fund(cid, self.now, stake_from=stake_from)
        except exc.FundingFailed as e:
            _logger.debug("%s not funded: %s", cid, e)
            self.contracts.cancel(cid, self.now)
            return False

        resumed = None
        if leaf.snapshot is not None:
            try:
                state = resume(leaf.snapshot, self._storage_key, agent, self.now)
                leaf.base_fraction, resumed = state.fraction, leaf.snapshot.tick
            except exc.CorruptSnapshot as e:
                _logger.warning("restarting %s from scratch: %s", leaf.task_id, e)
                leaf.base_fraction = 0.0

        duration = leaf.spec.characteristics.duration_est
        leaf.contract_id, leaf.agent, leaf.backup = cid, agent, backup
        leaf.started, leaf.reports, leaf.reported, leaf.spend = self.now, 0, 0.0, 0
        leaf.adjusted = False
        leaf.remaining = max(1, math.ceil(duration * (1.0 - leaf.base_fraction)))
        leaf.delegated = self._delegate(
            leaf, agent, 2 * (leaf.remaining + self.config.contract.dispute_window)
        )
        self._by_contract[cid] = leaf
        self._busy[agent] += 1

        self.hub.register(leaf.task_id, plan)
        self._emit(
            EventType.DELEGATE,
            contract_id=cid,
            task_id=leaf.task_id,
            delegator=leaf.delegator,
            delegatee=agent,
            escrow=contract.escrow_amount,
            stake=contract.delegatee_stake,
            backup=contract.backup_agent,
            grant=grant.to_dict(),
            token_id=leaf.delegated.token_id,
            depth=self.authority.depth_of(leaf.delegated),
            resumed_from=resumed,
        )

        worker = self.agents[agent]
        if worker.reports(self.now, self.now):
            self._publish(leaf, EventKind.TASK_STARTED, {"fraction": leaf.base_fraction})
        self._schedule(self.now + plan.cadence, "progress", cid=cid)
        self._schedule(self.now + plan.cadence, "check", cid=cid)
        if worker.finishes():
            self._schedule(self.now + leaf.remaining, "complete", cid=cid)
        return True

    def _active(self, cid: str) -> Optional[_Leaf]:
        leaf = self._by_contract.get(cid)
        if leaf is None or leaf.contract_id != cid:
            return None
        if self.contracts.get(cid).state is not ContractState.ACTIVE:
            return None
        return leaf

    def _own_progress(self, leaf: _Leaf) -> float:
        return min(1.0, (self.now - leaf.started) / leaf.remaining)

    def _publish(self, leaf: _Leaf, kind: EventKind, payload: Dict[str, Any]) -> None:
        plan = self.hub.plan(leaf.task_id)
        event = make_event(
            self.registry, self.now, leaf.task_id, leaf.agent, kind, plan.granularity, payload
        )
        self.hub.publish(event)
        self._emit(
            EventType.PROGRESS,
            task_id=leaf.task_id,
            agent=leaf.agent,
            kind=kind.value,
            level=plan.granularity.wire_name,
            **payload,
        )

    def _on_progress(self, cid: str) -> None:
        leaf = self._active(cid)
        if leaf is None:
            return
        worker = self.agents[leaf.agent]
        own = self._own_progress(leaf)
        leaf.spend = worker.spend(self.contracts.get(cid).escrow_amount, own)

        if worker.reports(leaf.started, self.now):
            decision = self.authority.verify(
                leaf.delegated,
                RequestContext(
                    resource=f"/tasks/{leaf.task_id}",
                    operation=Operation.EXECUTE,
                    now=self.now,
                    depth=self.authority.depth_of(leaf.delegated),
                    spend=leaf.spend,
                ),
            )
            self._emit(
                EventType.TOKEN_CHECK,
                task_id=leaf.task_id,
                agent=leaf.agent,
                token_id=leaf.delegated.token_id,
                allowed=decision.allowed,
                reason=decision.reason.value if decision.reason else None,
            )
            if not decision.allowed:
                self._deny(leaf, decision.reason)
                return
            fraction = round(leaf.base_fraction + (1.0 - leaf.base_fraction) * own, 6)
            leaf.reports += 1
            leaf.reported = fraction
            self._publish(leaf, EventKind.CHECKPOINT_REACHED, {"fraction": fraction, "spend": leaf.spend})

        cadence = self.hub.plan(leaf.task_id).cadence
        if self.now + cadence < leaf.started + leaf.remaining:
            self._schedule(self.now + cadence, "progress", cid=cid)

    def _deny(self, leaf: _Leaf, reason: Optional[DenyReason]) -> None:
        """Stop work the delegated token no longer covers."""

        kind = (
            TriggerKind.BUDGET_OVERRUN
            if reason in (DenyReason.SPEND_EXCEEDED, DenyReason.EXPIRED)
            else TriggerKind.SECURITY_FLAG
        )
        reason_text = reason.value if reason is not None else "denied"
        trigger = Trigger(kind, leaf.task_id, self.now, evidence=(f"token:{reason_text}",))
        self._log_trigger(trigger)
        if not leaf.suspended:
            self._respond(leaf, trigger)

    # coordination

    def _environment(self, leaf: _Leaf) -> List[Trigger]:
        out = []
        for t in self.scenario.triggers:
            if t.task_id not in (leaf.task_id, leaf.root_id):
                continue
            if (t.kind.value, leaf.task_id, t.tick) in self._handled:
                continue
            out.append(dataclasses.replace(t, task_id=leaf.task_id))
        return out

    def _log_trigger(self, trigger: Trigger) -> None:
        if not trigger.kind.internal:
            self._handled.add((trigger.kind.value, trigger.task_id, trigger.tick))
        self._emit(
            EventType.TRIGGER,
            task_id=trigger.task_id,
            kind=trigger.kind.value,
            raised=trigger.tick,
            evidence=list(trigger.evidence),
            velocity_ratio=round(trigger.velocity_ratio, 6),
        )
        _logger.debug("tick %d: %s on %s", self.now, trigger.kind.value, trigger.task_id)

    def _on_check(self, cid: str) -> None:
        leaf = self._active(cid)
        if leaf is None or leaf.suspended:
            return
        contract = self.contracts.get(cid)
        events = [
            e for e in self.hub.events(leaf.task_id)
            if e.emitter == leaf.agent and e.tick >= leaf.started
        ]
        triggers = detect(
            contract, events, self.now, leaf.spend, (), self._environment(leaf), self.config.coordination
        )
        for trigger in triggers:
            self._log_trigger(trigger)
        if triggers:
            self._respond(leaf, triggers[0])

        if self._active(cid) is leaf and not leaf.suspended:
            self._schedule(self.now + contract.monitoring_plan.cadence, "check", cid=cid)

    def _respond(self, leaf: _Leaf, trigger: Trigger) -> None:
        characteristics = leaf.spec.characteristics
        grant = None
        if leaf.agent is not None:
            grant = graduated_authority(self._reputation(leaf.agent), characteristics.criticality)
        backup = None
        if leaf.backup is not None and self._eligible(self.agents[leaf.backup.agent_id], leaf):
            backup = leaf.backup.agent_id

        plan = select_response(
            trigger, characteristics, leaf.alternatives, grant, backup, leaf.adjusted,
            self.config.coordination,
        )
        self._emit(EventType.RESPONSE, task_id=leaf.task_id, trigger=trigger.kind.value, **plan.to_dict())
        _logger.debug("tick %d: %s -> %s", self.now, leaf.task_id, plan.action.value)

        if plan.action is Action.ADJUST_PARAMS:
            leaf.adjusted = True
        elif plan.action is Action.REDELEGATE_SUBTASK:
            self._redelegate(leaf, use_backup=plan.uses_backup)
        elif plan.action is Action.REDECOMPOSE:
            self._redelegate(leaf, use_backup=False, restart=True)
        elif plan.action is Action.TERMINATE:
            self._terminate(leaf, trigger.kind.value)
        else:
            leaf.suspended = True
            decision = self._overseer.review(plan, self.now)
            self._emit(
                EventType.OVERSEER,
                task_id=leaf.task_id,
                overseer=self._overseer.agent_id,
                requested=True,
                due=decision.tick,
            )
            self._schedule(decision.tick, "overseer", task_id=leaf.task_id, action=decision.action.value)

    def _on_overseer(self, task_id: str, action: str) -> None:
        leaf = self._leaves[task_id]
        leaf.suspended = False
        self._emit(EventType.OVERSEER, task_id=task_id, overseer=self._overseer.agent_id, action=action)
        if leaf.finished:
            return
        if leaf.contract_id is not None and self._active(leaf.contract_id) is None:
            return
        if Action(action) is Action.REDELEGATE_SUBTASK:
            self._redelegate(leaf, use_backup=True)
        else:
            self._terminate(leaf, "overseer")

    def _terminate(self, leaf: _Leaf, reason: str) -> None:
        cid = leaf.contract_id
        if cid is not None and self.contracts.get(cid).state in (
            ContractState.DRAFTED, ContractState.FUNDED, ContractState.ACTIVE
        ):
            self.contracts.cancel(cid, self.now)
            self._busy[leaf.agent] -= 1
        leaf.contract_id = None
        self._close_defaulted(leaf, None)
        self._fail(leaf, reason)

    def _redelegate(self, leaf: _Leaf, use_backup: bool, restart: bool = False) -> None:
        decision = apply_stability(self._stability, leaf.redelegations, self.now)
        self._emit(
            EventType.STABILITY,
            task_id=leaf.task_id,
            outcome=decision.outcome.value,
            fee=decision.fee,
            until=decision.until,
        )
        if decision.outcome is StabilityOutcome.ABORT:
            self._terminate(leaf, "redelegation limit")
            return
        if decision.outcome is StabilityOutcome.DEFER:
            leaf.suspended = True
            self._schedule(
                decision.until, "deferred", task_id=leaf.task_id, use_backup=use_backup, restart=restart
            )
            return

        leaf.suspended = False
        payer = self.account_of(leaf.delegator)
        if decision.fee > 0 and not self.accounts.can_pay(payer, decision.fee):
            self._unpaid(leaf, decision.fee, "redelegation")
            self._terminate(leaf, "insufficient funds")
            return
        if decision.fee > 0:
            self.accounts.transfer(payer, TREASURY, decision.fee, LedgerReason.FEE, self.now, "redelegation")
        leaf.redelegations.append(self.now)

        backup = leaf.backup if use_backup else None
        if backup is not None and (
            not self._eligible(self.agents[backup.agent_id], leaf)
            or self._busy[backup.agent_id] >= self.agents[backup.agent_id].spec.capacity
        ):
            backup = None
        self._emit(
            EventType.REDELEGATE,
            task_id=leaf.task_id,
            from_agent=leaf.agent,
            to_agent=backup.agent_id if backup else None,
            n=len(leaf.redelegations),
            fee=decision.fee,
        )

        cid = leaf.contract_id
        if cid is not None and self.contracts.get(cid).state is ContractState.ACTIVE:
            self._busy[leaf.agent] -= 1
            if restart:
                self.contracts.cancel(cid, self.now)
                leaf.snapshot, leaf.base_fraction = None, 0.0
            else:
                self._checkpoint(leaf, cid)
                self.contracts.mark_defaulted(cid, self.now)
                leaf.defaulted = cid
                leaf.excluded.add(leaf.agent)
        elif leaf.agent is not None and not restart:
            leaf.excluded.add(leaf.agent)
        leaf.contract_id = None

        if backup is not None:
            self._close_defaulted(leaf, backup.bid.estimated_cost)
            if self._contract(leaf, backup.bid, None, stake_from=self.account_of(backup.agent_id)):
                return
        leaf.auctions = 0
        self._auction(leaf)

    def _on_deferred(self, task_id: str, use_backup: bool, restart: bool) -> None:
        leaf = self._leaves[task_id]
        leaf.suspended = False
        if leaf.finished:
            return
        if leaf.contract_id is not None and self._active(leaf.contract_id) is None:
            return
        self._redelegate(leaf, use_backup, restart)
        if leaf.contract_id is not None and self._active(leaf.contract_id) is leaf:
            cadence = self.contracts.get(leaf.contract_id).monitoring_plan.cadence
            self._schedule(self.now + cadence, "check", cid=leaf.contract_id)

    def _checkpoint(self, leaf: _Leaf, cid: str) -> None:
        if leaf.reports == 0:
            leaf.snapshot = None
            return
        digest = wire.digest(wire.canonical_bytes("partial", leaf.task_id, leaf.reported))
        leaf.snapshot = checkpoint(self._storage_key, leaf.task_id, leaf.reported, [digest], self.now)
        try:
            paid = self.contracts.checkpoint_compensation(cid, leaf.reported, self.now)
        except exc.Unsupported:
            paid = 0
        self._emit(
            EventType.CHECKPOINT,
            task_id=leaf.task_id,
            agent=leaf.agent,
            contract_id=cid,
            snapshot=leaf.snapshot.to_dict(),
            compensation=paid,
        )

    # completion and verification

    def _monoculture(self, worker: BaseAgent) -> bool:
        family, rate = worker.spec.model_family, self.config.monoculture_failure_rate
        if not family or rate <= 0:
            return False
        key = (family, self.now)
        if key not in self._coins:
            self._coins[key] = float(self.rng.random()) < rate
        return self._coins[key]

    def _on_complete(self, cid: str) -> None:
        leaf = self._active(cid)
        if leaf is None:
            return
        worker = self.agents[leaf.agent]
        contract = self.contracts.get(cid)
        artifact = worker.execute(leaf.node, self.rng, self._monoculture(worker))
        leaf.artifact = artifact
        leaf.spend = worker.spend(contract.escrow_amount, 1.0)
        self._publish(leaf, EventKind.TASK_COMPLETED, {"fraction": 1.0, "spend": leaf.spend})
        self.contracts.submit_outcome(cid, self.now, artifact)

        verdict = self._verify(leaf, contract, artifact)
        disputed = (verdict is not None and not verdict.passed) or self.agents[
            leaf.delegator
        ].challenges(self.rng)
        if disputed and self._challenge(leaf, cid, verdict):
            return

        if contract.verification_policy.escrow_trigger and verdict is not None:
            self._finish(leaf, self.contracts.settle(cid, verdict, self.now), verdict)
            return
        self._schedule(self.contracts.get(cid).window_end, "window", cid=cid, verdict=verdict)

    def _log_verdict(self, leaf: _Leaf, verdict: Verdict, stage: str) -> None:
        self._emit(
            EventType.VERDICT,
            task_id=leaf.task_id,
            contract_id=leaf.contract_id,
            agent=leaf.agent,
            stage=stage,
            **verdict.to_dict(),
        )

    def _verify(self, leaf: _Leaf, contract: DelegationContract, artifact: Artifact) -> Optional[Verdict]:
        policy = contract.verification_policy
        if policy.mode is VerificationMode.SPOT and float(self.rng.random()) >= self.config.verification.spot_rate:
            return None

        verdict: Optional[Verdict] = None
        if policy.mode is VerificationMode.STRICT:
            verdict = self._proof(leaf, artifact)
        if verdict is None:
            try:
                verdict = verify_direct(artifact, leaf.node, policy, self.config.verification)
            except exc.MechanismUnavailable:
                verdict = self._audit(leaf, policy, artifact) or self._panel(leaf, contract, artifact)
        if verdict is None and policy.escrow_trigger:
            verdict = _UNVERIFIED
        if verdict is not None:
            self._log_verdict(leaf, verdict, "submission")
        return verdict

    def _proof(self, leaf: _Leaf, artifact: Artifact) -> Optional[Verdict]:
        payer = self.account_of(leaf.delegator)
        fee = self.config.verification.proof_fee
        if not self.accounts.can_pay(payer, fee):
            self._unpaid(leaf, fee, "proof")
            return None
        spec_digest = leaf.spec.digest()
        proof = make_proof(self._proof_key, leaf.task_id, spec_digest, artifact.content_digest)
        return verify_proof(
            proof, spec_digest, expected_digest(leaf.node), self._proof_key, self.config.verification,
            self.accounts, payer, self.now,
        )

    def _audit(self, leaf: _Leaf, policy: Any, artifact: Artifact) -> Optional[Verdict]:
        payer = self.account_of(leaf.delegator)
        if not self.accounts.can_pay(payer, self.config.verification.audit_fee):
            return None
        for auditor in self._of_role(Role.AUDITOR):
            if auditor.agent_id in (leaf.delegator, leaf.agent) or auditor.account != auditor.agent_id:
                continue
            if not self.wallet.has(auditor.agent_id, AUDITOR_CERTIFICATION):
                continue
            return verify_third_party(
                artifact, leaf.node, auditor.agent_id, self.registry, self.wallet, policy,
                self.config.verification, self.accounts, payer, self.now,
                compromised=auditor.adversary is not None,
            )
        return None

    def _panel(self, leaf: _Leaf, contract: DelegationContract, artifact: Artifact) -> Optional[Verdict]:
        k = self.config.contract.arbitration_panel
        excluded = {contract.delegator, contract.delegatee}
        members = [
            a
            for role in (Role.VERIFIER, Role.AUDITOR, Role.DELEGATEE)
            for a in self._of_role(role)
            if a.agent_id not in excluded and a.account == a.agent_id
        ][:k]
        reward = self.config.verification.panel_reward
        payer = self.account_of(contract.delegator)
        if len(members) < k or not self.accounts.can_pay(payer, reward):
            return None

        self.accounts.transfer(payer, REWARD_POOL, reward, LedgerReason.FEE, self.now, f"panel:{leaf.task_id}")
        result = schelling_consensus(
            artifact, leaf.node, [a.voter() for a in members], reward, self.registry,
            self.config.verification, self.accounts, REWARD_POOL, self.now,
        )
        return result.verdict

    def _challenge(self, leaf: _Leaf, cid: str, verdict: Optional[Verdict]) -> bool:
        contract = self.contracts.get(cid)
        try:
            self.contracts.challenge(cid, leaf.delegator, contract.dispute_bond, self.now)
        except (exc.InsufficientFunds, exc.BondShort, exc.WindowClosed, exc.InvalidTransition) as e:
            _logger.debug("%s not challenged: %s", cid, e)
            return False
        self._emit(
            EventType.CHALLENGE,
            task_id=leaf.task_id,
            contract_id=cid,
            challenger=leaf.delegator,
            bond=contract.dispute_bond,
        )

        artifact = leaf.artifact
        try:
            ruling = verify_direct(artifact, leaf.node, contract.verification_policy, self.config.verification)
        except exc.MechanismUnavailable:
            ruling = self._panel(leaf, contract, artifact) or self._proof(leaf, artifact) or _UNVERIFIED
        self._log_verdict(leaf, ruling, "arbitration")
        self._finish(leaf, self.contracts.settle(cid, ruling, self.now), ruling)
        return True

    def _on_window(self, cid: str, verdict: Optional[Verdict]) -> None:
        leaf = self._by_contract[cid]
        if verdict is not None and not verdict.passed:
            # an unchallenged failure still settles against the delegatee
            if self.contracts.get(cid).state is ContractState.SUBMITTED:
                self._finish(leaf, self.contracts.settle(cid, verdict, self.now), verdict)
            return
        settled = self.contracts.expire_window(cid, self.now)
        if settled is None:
            return
        if verdict is None:
            verdict = Verdict(
                passed=True,
                quality=leaf.artifact.quality_hint,
                mechanism=Mechanism.DIRECT,
                evidence=("optimistic",),
            )
        self._finish(leaf, settled, verdict)

    def _finish(self, leaf: _Leaf, contract: DelegationContract, verdict: Verdict) -> None:
        agent = contract.delegatee
        self._busy[agent] -= 1
        leaf.contract_id = None

        characteristics = leaf.spec.characteristics
        cadence = contract.monitoring_plan.cadence
        # timeliness counts up to delivery, not to settlement
        delivered = next(
            (tick for tick, state in contract.history if state is ContractState.SUBMITTED), self.now
        )
        expected_reports = max(1, (delivered - leaf.started) // cadence)
        within_cap = leaf.spend <= leaf.spec.resource_boundaries.spend_cap
        outcome = OutcomeRecord(
            tick=self.now,
            success=verdict.passed,
            quality=min(max(verdict.quality, 0.0), 1.0),
            resources_ratio=round(leaf.spend / max(1, contract.escrow_amount), 6),
            deadline_met=delivered - leaf.started <= leaf.remaining,
            constraints_met=within_cap,
            transparency=min(1.0, leaf.reports / expected_reports),
            safety=1.0 if within_cap else 0.0,
            complexity=characteristics.complexity,
        )
        credential = issue_completion_credential(self.registry, contract, verdict, self.now)
        entry = self.reputation.record(credential, outcome)
        self._log_reputation(agent, entry.seq)

        if verdict.passed:
            leaf.finished = True
            self._emit(EventType.TASK_DONE, task_id=leaf.task_id, agent=agent, contract_id=contract.contract_id)
            self._release_delegator(leaf)
            if self.agents[agent].behaviour.backdoor:
                self._schedule(
                    self.now + self.config.discovery_delay, "discovery",
                    entry_seq=entry.seq, cid=contract.contract_id,
                )
        else:
            triggers = detect(
                contract, (), self.now, verdicts=((self.now, verdict),), config=self.config.coordination
            )
            for trigger in triggers:
                self._log_trigger(trigger)
            self._respond(leaf, triggers[0])
        self._check_breaker(agent)

    def _log_reputation(self, agent: str, entry_seq: int) -> None:
        self._emit(
            EventType.REPUTATION,
            agent=agent,
            entry=entry_seq,
            composite=round(self.reputation.composite(agent, self.now), 12),
        )

    def _on_discovery(self, entry_seq: int, cid: str) -> None:
        contract = self.contracts.get(cid)
        entry = self.reputation.entry(entry_seq)
        corrected = dataclasses.replace(entry.outcome, success=False, quality=0.0, safety=0.0)
        claim = Claim(
            kind="task_failed",
            task_id=contract.spec.task_id,
            date=self.now,
            spec_digest=wire.to_hex(contract.spec.digest()),
            quality=0.0,
        )
        credential = issue_credential(self.registry, contract.delegator, entry.agent, claim)
        correction = self.reputation.retroactive_update(entry_seq, corrected, credential, self.now)
        self._emit(
            EventType.RETRO,
            agent=entry.agent,
            task_id=contract.spec.task_id,
            corrects=entry_seq,
            entry=correction.seq,
        )
        self._log_reputation(entry.agent, correction.seq)
        self._check_breaker(entry.agent)

    def _check_breaker(self, agent: str) -> None:
        if agent in self._tripped:
            return
        history = self.reputation.score_history(agent, self.now)
        if not circuit_breaker(history, self.config.reputation):
            return

        self._tripped.add(agent)
        self._emit(EventType.BREAKER, agent=agent, composite=round(history[-1][1], 12))
        try:
            notice = self.authority.revoke(agent=agent, tick=self.now)
            self._emit(EventType.REVOKE, agent=agent, tokens=len(notice.affected))
        except exc.NotFound:
            pass

        for task_id in sorted(self._leaves):
            leaf = self._leaves[task_id]
            if leaf.agent != agent or leaf.contract_id is None or self._active(leaf.contract_id) is None:
                continue
            trigger = Trigger(TriggerKind.SECURITY_FLAG, task_id, self.now, (f"breaker:{agent}",))
            self._log_trigger(trigger)
            self._respond(leaf, trigger)


def run(scenario: Scenario, check_invariants: bool = True) -> RunResult:
    """Simulate ``scenario``; equal scenarios give byte-identical logs."""

    return Simulation(scenario, check_invariants).run()


def read_log(path: str) -> List[str]:
    with open(path, "r") as fh:
        return fh.readlines()


def replay(event_log: Iterable[Union[str, Mapping[str, Any]]]) -> RunResult:
    """Recompute digest and metrics of a log without simulating.

    Args:
        event_log:
            Lines of an ``events.jsonl`` file, or parsed records.

    Raises:
        ReplayMismatch: if the log is malformed or does not match its footer.
    """

    records: List[Dict[str, Any]] = []
    for n, item in enumerate(event_log, start=1):
        if isinstance(item, str):
            if not item.strip():
                continue
            try:
                records.append(json.loads(item))
            except ValueError:
                raise exc.ReplayMismatch(f"line {n} is not JSON") from None
        else:
            records.append(dict(item))

    if not records or records[-1].get("type") != EventType.RUN_END.value:
        raise exc.ReplayMismatch("log has no RUN_END footer")
    footer, body = records[-1], records[:-1]

    last = 0
    for i, record in enumerate(body):
        if record.get("seq") != i:
            raise exc.ReplayMismatch(f"record {i} has sequence number {record.get('seq')}")
        tick = record.get("tick")
        if not isinstance(tick, int) or tick < last:
            raise exc.ReplayMismatch(f"record {i} goes back in time")
        last = tick

    digest = log_digest(body)
    if digest != footer.get("digest"):
        raise exc.ReplayMismatch(f"digest {digest} does not match footer {footer.get('digest')}")

    try:
        metrics = compute_metrics(body)
        ledger = [LedgerEntry.from_dict(r) for r in body if r["type"] == EventType.LEDGER.value]
    except (KeyError, TypeError, ValueError) as e:
        exc.raise_with_traceback(exc.ReplayMismatch(f"unreadable log: {e}"))
        raise
    if wire.canonical_json(metrics) != wire.canonical_json(footer.get("metrics")):
        raise exc.ReplayMismatch("recomputed metrics differ from the footer")

    return RunResult(records, digest, metrics, ledger)
