"""Agent identities, keyed signatures and verifiable credentials.

Signatures are HMAC tags under per-agent secrets held by an in-process
:class:`KeyRegistry`. The registry plays the part of a trusted key directory:
authenticity and non-repudiation hold inside one simulation, nothing more.
"""

__all__ = [
    "AgentId",
    "KeyRegistry",
    "SignedEnvelope",
    "Claim",
    "VerifiableCredential",
    "CredentialWallet",
    "issue_credential",
    "agent_id_for",
]

import re
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterator, List, Mapping, Optional

from . import exc, wire

_DID = re.compile(r"^did:sim:[0-9a-f]+$")


def agent_id_for(label: str) -> str:
    """Deterministic ``did:sim:<hex>`` identifier for a scenario label."""

    return "did:sim:" + wire.digest(label.encode("utf-8"))[:8].hex()


@dataclass(frozen=True)
class AgentId:
    id: str
    public_key_id: str


@dataclass(frozen=True)
class SignedEnvelope:
    payload: bytes
    signer: str
    signature: bytes


class KeyRegistry:
    """Trusted directory of agent signing secrets.

    Every registered id resolves to exactly one active key.
    """

    def __init__(self) -> None:
        self._agents: Dict[str, AgentId] = {}
        self._secrets: Dict[str, bytes] = {}

    def __contains__(self, agent: str) -> bool:
        return agent in self._agents

    def __iter__(self) -> Iterator[AgentId]:
        return iter(self._agents.values())

    def __len__(self) -> int:
        return len(self._agents)

    def register(self, agent: str, secret: bytes) -> AgentId:
        """Register a new identity.

        Args:
            agent:
                Identifier of the form ``did:sim:<hex>``.
            secret:
                Signing secret of the identity.

        Raises:
            DuplicateAgent: if ``agent`` is already registered.
        """

        if not _DID.match(agent):
            raise ValueError(f"malformed agent id {agent!r}")
        if agent in self._agents:
            raise exc.DuplicateAgent(agent)

        key_id = "key:" + wire.digest(secret)[:8].hex()
        self._agents[agent] = AgentId(id=agent, public_key_id=key_id)
        self._secrets[agent] = secret
        return self._agents[agent]

    def create(self, label: str) -> AgentId:
        """Register an identity whose id and secret derive from ``label``."""

        secret = wire.digest(b"delegsim-secret:" + label.encode("utf-8"))
        return self.register(agent_id_for(label), secret)

    def get(self, agent: str) -> AgentId:
        try:
            return self._agents[agent]
        except KeyError:
            raise exc.UnknownAgent(agent) from None

    def tag(self, agent: str, payload: bytes) -> bytes:
        try:
            secret = self._secrets[agent]
        except KeyError:
            raise exc.UnknownAgent(agent) from None
        return wire.mac(secret, payload)

    def check(self, agent: str, payload: bytes, signature: bytes) -> bool:
        """Return True if ``signature`` is ``agent``'s tag over ``payload``."""

        if agent not in self._secrets:
            return False
        return wire.tags_equal(self.tag(agent, payload), signature)

    def sign(self, agent: str, payload: bytes) -> SignedEnvelope:
        return SignedEnvelope(
            payload=payload, signer=agent, signature=self.tag(agent, payload)
        )

    def verify(self, envelope: SignedEnvelope) -> bool:
        return self.check(envelope.signer, envelope.payload, envelope.signature)


@dataclass(frozen=True)
class Claim:
    """Structured assertion carried by a credential.

    Reads as: the issuer certifies that the subject completed ``task_id`` on
    tick ``date`` to the specification digested as ``spec_digest``, with the
    given quality.
    """

    kind: str
    task_id: str
    date: int
    spec_digest: str
    quality: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.quality <= 1.0:
            raise exc.InvalidCredential(f"quality {self.quality} outside [0, 1]")


@dataclass(frozen=True)
class VerifiableCredential:
    issuer: str
    subject: str
    claim: Claim
    signature: bytes

    def payload(self) -> bytes:
        return wire.canonical_bytes(self.issuer, self.subject, self.claim)

    def verify(self, registry: KeyRegistry) -> bool:
        return registry.check(self.issuer, self.payload(), self.signature)

    def to_dict(self) -> Dict[str, object]:
        return {
            "issuer": self.issuer,
            "subject": self.subject,
            "claim": {
                "kind": self.claim.kind,
                "task_id": self.claim.task_id,
                "date": self.claim.date,
                "spec_digest": self.claim.spec_digest,
                "quality": self.claim.quality,
            },
            "signature": wire.to_hex(self.signature),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VerifiableCredential":
        claim = data["claim"]
        return cls(
            issuer=data["issuer"],
            subject=data["subject"],
            claim=Claim(
                kind=claim["kind"],
                task_id=claim["task_id"],
                date=int(claim["date"]),
                spec_digest=claim["spec_digest"],
                quality=float(claim["quality"]),
            ),
            signature=wire.from_hex(data["signature"]),
        )


def issue_credential(
    registry: KeyRegistry, issuer: str, subject: str, claim: Claim
) -> VerifiableCredential:
    payload = wire.canonical_bytes(issuer, subject, claim)
    return VerifiableCredential(
        issuer=issuer,
        subject=subject,
        claim=claim,
        signature=registry.tag(issuer, payload),
    )


class CredentialWallet:
    """Verified credentials indexed by subject.

    Used for certifications: monitoring certification, auditor credentials,
    human-reviewer credentials and capability attestations.
    """

    def __init__(self, registry: KeyRegistry) -> None:
        self._registry = registry
        self._by_subject: Dict[str, List[VerifiableCredential]] = {}

    def add(self, credential: VerifiableCredential) -> None:
        """Store a credential.

        Raises:
            InvalidCredential: if the credential does not verify.
        """

        if not credential.verify(self._registry):
            raise exc.InvalidCredential(
                f"credential {credential.claim.kind} for {credential.subject} "
                f"does not verify against {credential.issuer}"
            )
        self._by_subject.setdefault(credential.subject, []).append(credential)

    def certify(
        self, issuer: str, subject: str, kind: str, date: int = 0
    ) -> VerifiableCredential:
        credential = issue_credential(
            self._registry,
            issuer,
            subject,
            Claim(kind=kind, task_id="", date=date, spec_digest="", quality=1.0),
        )
        self.add(credential)
        return credential

    def kinds(self, subject: str) -> FrozenSet[str]:
        return frozenset(c.claim.kind for c in self._by_subject.get(subject, []))

    def has(self, subject: str, kind: str) -> bool:
        return kind in self.kinds(subject)

    def credentials(self, subject: Optional[str] = None) -> List[VerifiableCredential]:
        if subject is not None:
            return list(self._by_subject.get(subject, []))
        return [c for creds in self._by_subject.values() for c in creds]
