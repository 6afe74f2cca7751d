"""Verification of completed work.

Four mechanisms are provided: direct inspection with the task oracle, a
certified third-party auditor, an emulated succinct proof and a Schelling
panel. The proof is a keyed commitment under a verifier-shared key; it
offers the cheap-to-check interface of a succinct argument but is neither
zero-knowledge nor publicly verifiable.
"""

__all__ = [
    "VerificationMode",
    "Mechanism",
    "ArtifactRequirement",
    "VerificationPolicy",
    "Verdict",
    "ProofArtifact",
    "Voter",
    "ConsensusResult",
    "ChainResult",
    "make_proof",
    "verify_direct",
    "verify_proof",
    "verify_third_party",
    "schelling_consensus",
    "verify_chain",
    "issue_completion_credential",
    "AUDITOR_CERTIFICATION",
    "HUMAN_REVIEWER",
]

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Optional, Sequence, Tuple

from . import exc, wire
from .config import VerificationConfig
from .identity import Claim, CredentialWallet, KeyRegistry, VerifiableCredential, issue_credential
from .ledger import REWARD_POOL, TREASURY, Accounts, LedgerReason
from .monitoring import AttestationReport, ChainVerdict, MonitoringRegistry, verify_attestation_chain
from .tasks import Artifact, TaskNode, oracle_evaluate

if TYPE_CHECKING:  # pragma: no cover
    from .contract import DelegationContract

AUDITOR_CERTIFICATION = "auditor_certified"
HUMAN_REVIEWER = "human_reviewer"


class VerificationMode(str, enum.Enum):
    STRICT = "strict"
    STANDARD = "standard"
    SPOT = "spot"


class Mechanism(str, enum.Enum):
    DIRECT = "direct"
    THIRD_PARTY = "third_party"
    PROOF = "proof"
    CONSENSUS = "consensus"


ARTIFACT_TYPES = frozenset(
    {"unit_test_log", "proof_trace", "audit_report", "consensus_verdict", "zk_snark_trace"}
)


@dataclass(frozen=True)
class ArtifactRequirement:
    """Evidence a delegatee must supply.

    Unrecognised keys such as ``circuit_hash`` or ``proof_protocol`` are kept
    verbatim in ``params``.
    """

    type: str
    validator: str = ""
    signature_required: bool = False
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.type not in ARTIFACT_TYPES:
            raise ValueError(f"unknown artifact type {self.type!r}")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"type": self.type}
        if self.validator:
            data["validator"] = self.validator
        if self.signature_required:
            data["signature_required"] = True
        data.update(self.params)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ArtifactRequirement":
        known = {"type", "validator", "signature_required"}
        return cls(
            type=data["type"],
            validator=data.get("validator", ""),
            signature_required=bool(data.get("signature_required", False)),
            params={k: v for k, v in data.items() if k not in known},
        )


@dataclass(frozen=True)
class VerificationPolicy:
    mode: VerificationMode
    artifacts: Tuple[ArtifactRequirement, ...] = ()
    escrow_trigger: bool = False

    def __post_init__(self) -> None:
        if self.mode is VerificationMode.STRICT and not any(
            a.signature_required for a in self.artifacts
        ):
            raise ValueError("strict policies need a signed artifact")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "artifacts": [a.to_dict() for a in self.artifacts],
            "escrow_trigger": self.escrow_trigger,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VerificationPolicy":
        return cls(
            mode=VerificationMode(data["mode"]),
            artifacts=tuple(ArtifactRequirement.from_dict(a) for a in data.get("artifacts", [])),
            escrow_trigger=bool(data.get("escrow_trigger", False)),
        )


@dataclass(frozen=True)
class Verdict:
    passed: bool
    quality: float
    mechanism: Mechanism
    evidence: Tuple[str, ...] = ()
    verifiers: Tuple[str, ...] = ()
    signatures: Tuple[bytes, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pass": self.passed,
            "quality": self.quality,
            "mechanism": self.mechanism.value,
            "evidence": list(self.evidence),
            "verifiers": list(self.verifiers),
            "signatures": [wire.to_hex(s) for s in self.signatures],
        }


def _verdict_bytes(task_id: str, passed: bool, quality: float, mechanism: Mechanism) -> bytes:
    return wire.canonical_bytes("verdict", task_id, passed, quality, mechanism.value)


def verify_direct(
    artifact: Artifact,
    task: TaskNode,
    policy: Optional[VerificationPolicy] = None,
    config: Optional[VerificationConfig] = None,
) -> Verdict:
    """Inspect the artifact with the task oracle.

    Raises:
        MechanismUnavailable: if the task is not auto-verifiable.
    """

    config = config or VerificationConfig()
    if task.characteristics.verifiability < config.direct_min_verifiability:
        raise exc.MechanismUnavailable(
            f"{task.task_id} verifiability {task.characteristics.verifiability} "
            f"below {config.direct_min_verifiability}"
        )

    quality = oracle_evaluate(task, artifact)
    return Verdict(
        passed=quality >= config.pass_threshold,
        quality=quality,
        mechanism=Mechanism.DIRECT,
        evidence=(f"oracle:{task.task_id}",),
    )


@dataclass(frozen=True)
class ProofArtifact:
    program_id: str
    input_digest: bytes
    output_digest: bytes
    commitment: bytes


def make_proof(
    key: bytes, program_id: str, input_digest: bytes, output_digest: bytes
) -> ProofArtifact:
    commitment = wire.mac(key, wire.canonical_bytes(program_id, input_digest, output_digest))
    return ProofArtifact(program_id, input_digest, output_digest, commitment)


def verify_proof(
    proof: ProofArtifact,
    expected_input: bytes,
    expected_output: bytes,
    key: bytes,
    config: Optional[VerificationConfig] = None,
    accounts: Optional[Accounts] = None,
    payer: Optional[str] = None,
    tick: int = 0,
) -> Verdict:
    """Check an emulated proof; the fee does not depend on task size."""

    config = config or VerificationConfig()
    recomputed = wire.mac(
        key, wire.canonical_bytes(proof.program_id, proof.input_digest, proof.output_digest)
    )
    passed = (
        wire.tags_equal(recomputed, proof.commitment)
        and wire.tags_equal(proof.input_digest, expected_input)
        and wire.tags_equal(proof.output_digest, expected_output)
    )

    if accounts is not None and payer is not None and config.proof_fee > 0:
        accounts.transfer(payer, TREASURY, config.proof_fee, LedgerReason.FEE, tick, "proof_check")

    return Verdict(
        passed=passed,
        quality=1.0 if passed else 0.0,
        mechanism=Mechanism.PROOF,
        evidence=(f"program:{proof.program_id}", f"fee:{config.proof_fee}"),
    )


def verify_third_party(
    artifact: Artifact,
    task: TaskNode,
    auditor: str,
    registry: KeyRegistry,
    wallet: CredentialWallet,
    policy: Optional[VerificationPolicy] = None,
    config: Optional[VerificationConfig] = None,
    accounts: Optional[Accounts] = None,
    payer: Optional[str] = None,
    tick: int = 0,
    compromised: bool = False,
) -> Verdict:
    """Have a certified auditor run the oracle on the delegator's behalf.

    Args:
        compromised:
            The auditor passes every artifact at full quality.

    Raises:
        UncertifiedAuditor: if the auditor lacks the certification, or a
            validator capability the policy names.
    """

    config = config or VerificationConfig()
    if not wallet.has(auditor, AUDITOR_CERTIFICATION):
        raise exc.UncertifiedAuditor(auditor)
    for requirement in policy.artifacts if policy else ():
        if requirement.type == "audit_report" and requirement.validator:
            if not wallet.has(auditor, requirement.validator):
                raise exc.UncertifiedAuditor(f"{auditor} lacks {requirement.validator}")

    quality = 1.0 if compromised else oracle_evaluate(task, artifact)
    passed = quality >= config.pass_threshold

    if accounts is not None and payer is not None and config.audit_fee > 0:
        accounts.transfer(payer, auditor, config.audit_fee, LedgerReason.FEE, tick, "audit")

    signature = registry.tag(
        auditor, _verdict_bytes(task.task_id, passed, quality, Mechanism.THIRD_PARTY)
    )
    return Verdict(
        passed=passed,
        quality=quality,
        mechanism=Mechanism.THIRD_PARTY,
        evidence=(f"audit:{task.task_id}",),
        verifiers=(auditor,),
        signatures=(signature,),
    )


@dataclass(frozen=True)
class Voter:
    """Panel member; ``behaviour`` is honest, always_pass, always_fail or invert."""

    agent: str
    behaviour: str = "honest"

    def vote(self, artifact: Artifact, task: TaskNode, threshold: float) -> Tuple[bool, float]:
        quality = oracle_evaluate(task, artifact)
        honest = quality >= threshold
        if self.behaviour == "honest":
            return honest, quality
        if self.behaviour == "always_pass":
            return True, 1.0
        if self.behaviour == "always_fail":
            return False, 0.0
        if self.behaviour == "invert":
            return not honest, 1.0 - quality
        raise ValueError(f"unknown voter behaviour {self.behaviour!r}")


@dataclass(frozen=True)
class ConsensusResult:
    verdict: Verdict
    rewards: Dict[str, int]
    votes: Dict[str, bool]


def schelling_consensus(
    artifact: Artifact,
    task: TaskNode,
    voters: Sequence[Voter],
    reward_pool: int,
    registry: KeyRegistry,
    config: Optional[VerificationConfig] = None,
    accounts: Optional[Accounts] = None,
    pool_account: str = REWARD_POOL,
    tick: int = 0,
) -> ConsensusResult:
    """Majority vote of an odd panel; the pool is split among the majority.

    Votes are reduced in agent id order. Each majority voter receives
    ``reward_pool // m``; the remainder goes to the first majority voter, so
    rewards always sum to the pool. Minority voters receive nothing.

    Raises:
        InvalidPanel: if the panel is even, smaller than 3, or the pool is empty.
    """

    config = config or VerificationConfig()
    k = len(voters)
    if k < 3 or k % 2 == 0:
        raise exc.InvalidPanel(f"panel size {k} must be odd and >= 3")
    if reward_pool <= 0:
        raise exc.InvalidPanel("reward pool must be positive")

    ballots: List[Tuple[str, bool, float]] = []
    for voter in sorted(voters, key=lambda v: v.agent):
        passed, quality = voter.vote(artifact, task, config.pass_threshold)
        ballots.append((voter.agent, passed, quality))

    yes = sum(1 for _, passed, _ in ballots if passed)
    outcome = yes * 2 > k
    majority = [(agent, quality) for agent, passed, quality in ballots if passed == outcome]

    share, remainder = divmod(reward_pool, len(majority))
    rewards = {agent: 0 for agent, _, _ in ballots}
    for n, (agent, _) in enumerate(majority):
        rewards[agent] = share + (remainder if n == 0 else 0)

    if accounts is not None:
        for agent, amount in rewards.items():
            if amount > 0:
                accounts.transfer(pool_account, agent, amount, LedgerReason.REWARD, tick, "panel")

    quality = sum(q for _, q in majority) / len(majority)
    signatures = tuple(
        registry.tag(agent, _verdict_bytes(task.task_id, passed, q, Mechanism.CONSENSUS))
        for agent, passed, q in ballots
    )
    verdict = Verdict(
        passed=outcome,
        quality=quality,
        mechanism=Mechanism.CONSENSUS,
        evidence=(f"panel:{yes}/{k}",),
        verifiers=tuple(agent for agent, _, _ in ballots),
        signatures=signatures,
    )
    return ConsensusResult(
        verdict=verdict,
        rewards=rewards,
        votes={agent: passed for agent, passed, _ in ballots},
    )


@dataclass(frozen=True)
class ChainResult:
    verdict: Verdict
    stage: Optional[int] = None
    chain: Optional[ChainVerdict] = None


def verify_chain(
    work_verdict: Verdict,
    chain: Sequence[AttestationReport],
    registry: KeyRegistry,
    relationships: MonitoringRegistry,
    **chain_options: Any,
) -> ChainResult:
    """Two-stage check of a delegatee that sub-delegated.

    Stage 1 is the delegatee's own work, stage 2 the attestation chain about
    its sub-delegatees. ``chain_options`` are passed to
    :func:`~delegsim.monitoring.verify_attestation_chain`.
    """

    if not work_verdict.passed:
        return ChainResult(verdict=work_verdict, stage=1)

    chain_verdict = verify_attestation_chain(chain, registry, relationships, **chain_options)
    evidence = work_verdict.evidence + tuple(f"attestation:{r.subtask_id}" for r in chain)

    if not chain_verdict.valid:
        failed = Verdict(
            passed=False,
            quality=work_verdict.quality,
            mechanism=work_verdict.mechanism,
            evidence=evidence + (f"chain:{chain_verdict.reason}@{chain_verdict.locus}",),
            verifiers=work_verdict.verifiers,
            signatures=work_verdict.signatures,
        )
        return ChainResult(verdict=failed, stage=2, chain=chain_verdict)

    passed = Verdict(
        passed=True,
        quality=work_verdict.quality,
        mechanism=work_verdict.mechanism,
        evidence=evidence,
        verifiers=work_verdict.verifiers,
        signatures=work_verdict.signatures,
    )
    return ChainResult(verdict=passed, chain=chain_verdict)


def issue_completion_credential(
    registry: KeyRegistry, contract: "DelegationContract", verdict: Verdict, tick: int
) -> VerifiableCredential:
    """Receipt by the delegator that the delegatee completed (or failed) the task."""

    claim = Claim(
        kind="task_completed" if verdict.passed else "task_failed",
        task_id=contract.spec.task_id,
        date=tick,
        spec_digest=wire.to_hex(contract.spec.digest()),
        quality=verdict.quality,
    )
    return issue_credential(registry, contract.delegator, contract.delegatee, claim)
