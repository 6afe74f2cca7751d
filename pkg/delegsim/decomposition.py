"""Contract-first decomposition.

A proposal cuts the task tree at some depth. Every leaf of the cut must be
checkable by an available verifier; leaves that are not are split again
(:func:`refine_contract_first`) until they are, or handed to a human
reviewer when they are too subjective to be specified.
"""

__all__ = [
    "AgentStats",
    "CapabilityRegistry",
    "Verifier",
    "VerifierRegistry",
    "LeafAssignmentPlan",
    "Estimates",
    "DecompositionProposal",
    "ResourceBoundaries",
    "TaskSpecification",
    "propose",
    "refine_contract_first",
    "mark_human_nodes",
    "finalize",
    "HUMAN_REVIEW",
]

import dataclasses
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

from . import exc, wire
from .config import DecompositionConfig, HumanAllocationPolicy, MonitoringConfig
from .monitoring import Granularity
from .tasks import Ordering, TaskCharacteristics, TaskNode, task_to_dict
from .verification import (
    HUMAN_REVIEWER,
    ArtifactRequirement,
    VerificationMode,
    VerificationPolicy,
)

HUMAN_REVIEW = "human_review"

# ground truths stay inside a signed 8-byte wire int
_GROUND_TRUTH_MASK = (1 << 62) - 1

# assurance of each verification mode, cheapest first
_MODE_ASSURANCE = (
    (VerificationMode.SPOT, 0.5),
    (VerificationMode.STANDARD, 0.8),
    (VerificationMode.STRICT, 0.95),
)

_MODE_GRANULARITY = {
    VerificationMode.SPOT: Granularity.L0,
    VerificationMode.STANDARD: Granularity.L1,
    VerificationMode.STRICT: Granularity.L2,
}


@dataclass(frozen=True)
class AgentStats:
    agent_id: str
    capabilities: frozenset
    success_rate: float = 0.9
    cost_factor: float = 1.0


class CapabilityRegistry:
    """Market statistics used to estimate a proposal."""

    def __init__(self, agents: Iterable[AgentStats] = ()) -> None:
        self._agents: Dict[str, AgentStats] = {}
        for stats in agents:
            self.add(stats)

    def __len__(self) -> int:
        return len(self._agents)

    def add(self, stats: AgentStats) -> None:
        if not 0.0 <= stats.success_rate <= 1.0:
            raise ValueError(f"success_rate of {stats.agent_id} outside [0, 1]")
        if stats.cost_factor < 0:
            raise ValueError(f"cost_factor of {stats.agent_id} must be >= 0")
        self._agents[stats.agent_id] = stats

    def providers(self, requirements: Iterable[str]) -> List[AgentStats]:
        needed = set(requirements)
        return [
            self._agents[a]
            for a in sorted(self._agents)
            if needed <= self._agents[a].capabilities
        ]

    def best(self, requirements: Iterable[str]) -> Optional[AgentStats]:
        """Most reliable provider, the cheapest one on ties."""

        candidates = self.providers(requirements)
        if not candidates:
            return None
        return min(candidates, key=lambda s: (-s.success_rate, s.cost_factor, s.agent_id))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CapabilityRegistry":
        return cls(
            AgentStats(
                agent_id=a["agent_id"],
                capabilities=frozenset(a.get("capabilities", ())),
                success_rate=float(a.get("success_rate", 0.9)),
                cost_factor=float(a.get("cost_factor", 1.0)),
            )
            for a in data.get("agents", [])
        )


@dataclass(frozen=True)
class Verifier:
    name: str
    min_verifiability: float = 0.0
    human: bool = False


class VerifierRegistry:
    def __init__(self, verifiers: Iterable[Verifier] = ()) -> None:
        self._verifiers = {v.name: v for v in verifiers}

    def __iter__(self) -> Iterator[Verifier]:
        return iter(self._verifiers[name] for name in sorted(self._verifiers))

    @property
    def has_human(self) -> bool:
        return any(v.human for v in self)

    def modes_for(self, node: TaskNode) -> Tuple[str, ...]:
        """Verification mechanisms able to check ``node``."""

        modes = []
        for v in self:
            if v.human:
                if node.human_required:
                    modes.append(v.name)
            elif node.characteristics.verifiability >= v.min_verifiability:
                modes.append(v.name)
        return tuple(modes)

    @classmethod
    def default(cls) -> "VerifierRegistry":
        return cls(
            [
                Verifier("direct", 0.5),
                Verifier("third_party", 0.3),
                Verifier("consensus", 0.0),
            ]
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VerifierRegistry":
        entries = data.get("verifiers")
        if entries is None:
            return cls.default()
        return cls(
            Verifier(
                name=v["name"],
                min_verifiability=float(v.get("min_verifiability", 0.0)),
                human=bool(v.get("human", False)),
            )
            for v in entries
        )


@dataclass(frozen=True)
class LeafAssignmentPlan:
    task_id: str
    required_capabilities: Tuple[str, ...]
    candidate_verification_modes: Tuple[str, ...]
    node: TaskNode
    success_prob: float = 1.0
    cost_factor: float = 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "required_capabilities": list(self.required_capabilities),
            "candidate_verification_modes": list(self.candidate_verification_modes),
            "human_required": self.node.human_required,
            "node": task_to_dict(self.node),
        }


@dataclass(frozen=True)
class Estimates:
    success_prob: float
    total_cost: int
    makespan: int

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DecompositionProposal:
    """One way of cutting ``source`` into delegable leaves.

    ``tree`` is the refined plan tree; its leaves are exactly ``leaves``.
    """

    proposal_id: str
    root_task_id: str
    leaves: Tuple[LeafAssignmentPlan, ...]
    dag: Tuple[Tuple[str, str], ...]
    estimates: Estimates
    tree: TaskNode
    source: TaskNode

    def leaf(self, task_id: str) -> LeafAssignmentPlan:
        for plan in self.leaves:
            if plan.task_id == task_id:
                return plan
        raise exc.NotFound(f"leaf {task_id} not in proposal {self.proposal_id}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "proposal_id": self.proposal_id,
            "root_task_id": self.root_task_id,
            "leaves": [p.to_dict() for p in self.leaves],
            "dag": [list(edge) for edge in self.dag],
            "estimates": self.estimates.to_dict(),
        }


def _prune(node: TaskNode, depth: int) -> TaskNode:
    if node.is_leaf:
        return node
    if depth == 0:
        return dataclasses.replace(node, children=())
    return dataclasses.replace(node, children=tuple(_prune(c, depth - 1) for c in node.children))


def _height(node: TaskNode) -> int:
    if node.is_leaf:
        return 0
    return 1 + max(_height(c) for c in node.children)


def _layout(node: TaskNode) -> Tuple[List[str], List[str], List[Tuple[str, str]]]:
    """Sources, sinks and precedence edges of the leaves under ``node``."""

    if node.is_leaf:
        return [node.task_id], [node.task_id], []

    parts = [_layout(c) for c in node.children]
    edges = [e for _, _, part in parts for e in part]

    if node.ordering is Ordering.SEQUENTIAL:
        for (_, sinks, _), (sources, _, _) in zip(parts, parts[1:]):
            edges.extend((a, b) for a in sinks for b in sources)
        return parts[0][0], parts[-1][1], edges

    sources = [s for part in parts for s in part[0]]
    sinks = [s for part in parts for s in part[1]]
    return sources, sinks, edges


def _leaf_cost(plan: LeafAssignmentPlan, human: HumanAllocationPolicy) -> Tuple[int, int]:
    c = plan.node.characteristics
    duration, cost = c.duration_est, int(round(c.cost_est * plan.cost_factor))
    if plan.node.human_required:
        duration *= human.latency_multiplier
        cost *= human.cost_multiplier
    return duration, cost


def _estimate(
    leaves: Sequence[LeafAssignmentPlan],
    dag: Sequence[Tuple[str, str]],
    human: HumanAllocationPolicy,
) -> Estimates:
    success, total = 1.0, 0
    finish: Dict[str, int] = {}
    preds: Dict[str, List[str]] = {p.task_id: [] for p in leaves}
    for a, b in dag:
        preds[b].append(a)

    # leaves are in pre-order, which is a topological order of the dag
    for plan in leaves:
        duration, cost = _leaf_cost(plan, human)
        success *= plan.success_prob
        total += cost
        finish[plan.task_id] = duration + max((finish[p] for p in preds[plan.task_id]), default=0)

    return Estimates(
        success_prob=success, total_cost=total, makespan=max(finish.values(), default=0)
    )


def _assemble(
    tree: TaskNode,
    source: TaskNode,
    registry: CapabilityRegistry,
    verifiers: VerifierRegistry,
    human: HumanAllocationPolicy,
) -> DecompositionProposal:
    plans = []
    for node in tree.leaves():
        requirements = tuple(sorted(node.characteristics.resource_requirements))
        provider = registry.best(requirements)
        if provider is None:
            raise exc.UndecomposableTask(
                f"no registered agent offers {list(requirements)} for {node.task_id}"
            )
        plans.append(
            LeafAssignmentPlan(
                task_id=node.task_id,
                required_capabilities=requirements,
                candidate_verification_modes=verifiers.modes_for(node),
                node=node,
                success_prob=provider.success_rate,
                cost_factor=provider.cost_factor,
            )
        )

    _, _, edges = _layout(tree)
    dag = tuple(sorted(set(edges)))
    leaf_ids = [p.task_id for p in plans]
    proposal_id = "p-" + wire.to_hex(wire.digest(wire.canonical_bytes(source.task_id, leaf_ids)))[:16]

    return DecompositionProposal(
        proposal_id=proposal_id,
        root_task_id=source.task_id,
        leaves=tuple(plans),
        dag=dag,
        estimates=_estimate(plans, dag, human),
        tree=tree,
        source=source,
    )


def _split(node: TaskNode, source: TaskNode, delta_v: float) -> TaskNode:
    """Replace ``node`` by its children, real ones when the source tree has them.

    Every child is at least ``delta_v`` more verifiable than ``node``, capped at 1.
    """

    c = node.characteristics
    original = source.find(node.task_id)
    lifted = round(min(1.0, c.verifiability + delta_v), 12)

    if original is not None and original.children:
        children = []
        for child in original.children:
            cc = child.characteristics
            if cc.verifiability < lifted:
                child = dataclasses.replace(
                    child,
                    characteristics=dataclasses.replace(cc, verifiability=lifted),
                )
            children.append(_prune(child, 0))
        return dataclasses.replace(node, children=tuple(children))

    child_c = dataclasses.replace(
        c,
        verifiability=lifted,
        cost_est=c.cost_est // 2,
        duration_est=max(1, (c.duration_est + 1) // 2),
    )
    children = tuple(
        TaskNode(
            task_id=f"{node.task_id}.s{i}",
            characteristics=child_c,
            ground_truth=_GROUND_TRUTH_MASK
            & int.from_bytes(
                wire.digest(wire.canonical_bytes("split", node.ground_truth, i))[:8], "big"
            ),
        )
        for i in range(2)
    )
    return dataclasses.replace(node, children=children, ordering=Ordering.SEQUENTIAL)


def _refine(
    node: TaskNode,
    source: TaskNode,
    verifiers: VerifierRegistry,
    config: DecompositionConfig,
    depth: int,
) -> TaskNode:
    if not node.is_leaf:
        return dataclasses.replace(
            node,
            children=tuple(_refine(c, source, verifiers, config, depth) for c in node.children),
        )

    c = node.characteristics
    if node.human_required and verifiers.modes_for(node):
        return node
    if c.subjectivity > config.tau_s and verifiers.has_human:
        return dataclasses.replace(node, human_required=True)
    if (
        c.verifiability >= config.tau_v
        and c.subjectivity <= config.tau_s
        and verifiers.modes_for(node)
    ):
        return node

    if depth >= config.max_refine_depth:
        raise exc.UndecomposableTask(
            f"{node.task_id} still unverifiable after {config.max_refine_depth} refinements"
        )
    return _refine(_split(node, source, config.delta_v), source, verifiers, config, depth + 1)


def refine_contract_first(
    proposal: DecompositionProposal,
    verifiers: Optional[VerifierRegistry] = None,
    config: Optional[DecompositionConfig] = None,
    registry: Optional[CapabilityRegistry] = None,
) -> DecompositionProposal:
    """Split leaves until each one is checkable by some verifier.

    A leaf is kept when its verifiability reaches ``tau_v``, its subjectivity
    stays within ``tau_s`` and a verifier accepts it. A too-subjective leaf is
    handed to a human reviewer when one is registered. Anything else is split:
    into its real children when it has any, otherwise into two synthetic
    halves with verifiability raised by ``delta_v`` and cost halved.

    Raises:
        UndecomposableTask: when ``max_refine_depth`` splits are not enough.
    """

    verifiers = verifiers or VerifierRegistry.default()
    config = config or DecompositionConfig()
    tree = _refine(proposal.tree, proposal.source, verifiers, config, 0)
    if tree == proposal.tree:
        return proposal

    if registry is None:
        stats = {p.task_id: p for p in proposal.leaves}
        registry = CapabilityRegistry(
            AgentStats(
                agent_id=f"estimate:{p.task_id}",
                capabilities=frozenset(p.required_capabilities),
                success_rate=p.success_prob,
                cost_factor=p.cost_factor,
            )
            for p in stats.values()
        )
    return _assemble(tree, proposal.source, registry, verifiers, config.human)


def mark_human_nodes(
    proposal: DecompositionProposal,
    policy: Optional[HumanAllocationPolicy] = None,
    verifiers: Optional[VerifierRegistry] = None,
) -> DecompositionProposal:
    """Flag leaves that need a human and re-estimate with human latency and cost."""

    policy = policy or HumanAllocationPolicy()
    verifiers = verifiers or VerifierRegistry.default()
    marked: Set[str] = set()

    for plan in proposal.leaves:
        c = plan.node.characteristics
        if c.subjectivity > policy.subjectivity_threshold or (
            policy.oversee_critical and c.criticality >= policy.criticality_threshold
        ):
            marked.add(plan.task_id)

    def mark(node: TaskNode) -> TaskNode:
        if node.is_leaf:
            if node.task_id in marked and not node.human_required:
                return dataclasses.replace(node, human_required=True)
            return node
        return dataclasses.replace(node, children=tuple(mark(c) for c in node.children))

    tree = mark(proposal.tree)
    leaves = tuple(
        dataclasses.replace(
            p,
            node=tree.find(p.task_id) or p.node,
            candidate_verification_modes=verifiers.modes_for(tree.find(p.task_id) or p.node)
            or p.candidate_verification_modes,
        )
        for p in proposal.leaves
    )
    return dataclasses.replace(
        proposal,
        tree=tree,
        leaves=leaves,
        estimates=_estimate(leaves, proposal.dag, policy),
    )


def propose(
    root: TaskNode,
    registry: CapabilityRegistry,
    k: int = 3,
    verifiers: Optional[VerifierRegistry] = None,
    config: Optional[DecompositionConfig] = None,
) -> List[DecompositionProposal]:
    """Up to ``k`` contract-first proposals, best scalarised estimate first.

    One candidate is built per cut depth of the tree. Cuts that cannot be
    refined or matched to a registered agent are dropped.

    Raises:
        UndecomposableTask: if no cut survives.
    """

    if k < 1:
        raise ValueError("k must be >= 1")
    if len(registry) == 0:
        raise ValueError("capability registry is empty")

    verifiers = verifiers or VerifierRegistry.default()
    config = config or DecompositionConfig()

    candidates: Dict[Tuple[str, ...], DecompositionProposal] = {}
    last_error: Optional[Exception] = None

    for depth in range(_height(root) + 1):
        try:
            proposal = _assemble(_prune(root, depth), root, registry, verifiers, config.human)
            proposal = refine_contract_first(proposal, verifiers, config, registry)
            proposal = mark_human_nodes(proposal, config.human, verifiers)
        except exc.UndecomposableTask as e:
            last_error = e
            continue
        key = tuple(p.task_id for p in proposal.leaves)
        candidates.setdefault(key, proposal)

    if not candidates:
        raise exc.UndecomposableTask(str(last_error) if last_error else root.task_id)

    proposals = list(candidates.values())
    max_cost = max(p.estimates.total_cost for p in proposals) or 1
    max_span = max(p.estimates.makespan for p in proposals) or 1

    def score(p: DecompositionProposal) -> Tuple[float, str]:
        e = p.estimates
        value = (1.0 - e.success_prob) + e.total_cost / max_cost + e.makespan / max_span
        return round(value / 3.0, 12), p.proposal_id

    return sorted(proposals, key=score)[:k]


@dataclass(frozen=True)
class ResourceBoundaries:
    spend_cap: int
    scope: Tuple[str, ...]


@dataclass(frozen=True)
class TaskSpecification:
    task_id: str
    role: str
    resource_boundaries: ResourceBoundaries
    cadence: int
    granularity: Granularity
    required_certifications: frozenset
    verification_policy: VerificationPolicy
    human_required: bool
    characteristics: TaskCharacteristics

    def __post_init__(self) -> None:
        if self.cadence < 1:
            raise ValueError("reporting cadence must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "role": self.role,
            "resource_boundaries": {
                "spend_cap": self.resource_boundaries.spend_cap,
                "scope": list(self.resource_boundaries.scope),
            },
            "reporting": {"cadence": self.cadence, "granularity": self.granularity.wire_name},
            "required_certifications": sorted(self.required_certifications),
            "verification_policy": self.verification_policy.to_dict(),
            "human_required": self.human_required,
            "characteristics": self.characteristics.to_dict(),
        }

    def digest(self) -> bytes:
        return wire.digest(wire.canonical_json(self.to_dict()).encode("utf-8"))


def _policy_for(mode: VerificationMode, task_id: str) -> VerificationPolicy:
    if mode is VerificationMode.STRICT:
        circuit = wire.to_hex(wire.digest(wire.canonical_bytes("circuit", task_id)))
        artifacts: Tuple[ArtifactRequirement, ...] = (
            ArtifactRequirement("unit_test_log", validator="pytest_v8", signature_required=True),
            ArtifactRequirement(
                "zk_snark_trace", params={"circuit_hash": "0x" + circuit[:16]}
            ),
        )
    elif mode is VerificationMode.STANDARD:
        artifacts = (ArtifactRequirement("unit_test_log"),)
    else:
        artifacts = ()
    return VerificationPolicy(
        mode=mode, artifacts=artifacts, escrow_trigger=mode is VerificationMode.STRICT
    )


def finalize(
    plan: LeafAssignmentPlan,
    budget_share: int,
    monitoring: Optional[MonitoringConfig] = None,
) -> TaskSpecification:
    """Turn a refined leaf into the specification put out to tender.

    The verification mode is the cheapest one whose assurance covers the
    leaf's criticality; strict when none does.
    """

    if budget_share < 0:
        raise ValueError("budget_share must be >= 0")

    monitoring = monitoring or MonitoringConfig()
    node = plan.node
    criticality = node.characteristics.criticality

    mode = next(
        (m for m, assurance in _MODE_ASSURANCE if assurance >= criticality),
        VerificationMode.STRICT,
    )
    cadence = {
        VerificationMode.STRICT: monitoring.min_cadence,
        VerificationMode.STANDARD: monitoring.standard_cadence,
        VerificationMode.SPOT: monitoring.max_cadence,
    }[mode]

    certifications = set(plan.required_capabilities)
    if node.human_required:
        certifications.add(HUMAN_REVIEWER)

    return TaskSpecification(
        task_id=plan.task_id,
        role=HUMAN_REVIEWER if node.human_required else "executor",
        resource_boundaries=ResourceBoundaries(
            spend_cap=budget_share, scope=(f"/tasks/{plan.task_id}",)
        ),
        cadence=cadence,
        granularity=_MODE_GRANULARITY[mode],
        required_certifications=frozenset(certifications),
        verification_policy=_policy_for(mode, plan.task_id),
        human_required=node.human_required,
        characteristics=node.characteristics,
    )

