"""Delegation capability tokens.

A token carries an ordered caveat list and a chained tag::

    tag_0 = MAC(root_secret, token_id)
    tag_i = MAC(tag_{i-1}, canonical bytes of caveat i)

Anyone holding a token can append caveats without the root secret, only the
authority holding the secret can verify. Appending can only narrow the
effective permission, which is the intersection of all caveats.
"""

__all__ = [
    "CaveatKind",
    "Operation",
    "DenyReason",
    "Caveat",
    "CapabilityToken",
    "RequestContext",
    "Decision",
    "RevocationNotice",
    "PermissionAuthority",
    "mint_token",
    "attenuate",
    "verify_token",
    "effective_operations",
    "effective_limit",
]

import enum
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from . import exc, wire


class CaveatKind(str, enum.Enum):
    RESOURCE_SCOPE = "resource_scope"
    OPERATIONS = "operations"
    EXPIRY = "expiry"
    MAX_DEPTH = "max_depth"
    SPEND_CAP = "spend_cap"
    HOLDER = "holder"


class Operation(str, enum.Enum):
    READ = "READ"
    WRITE = "WRITE"
    EXECUTE = "EXECUTE"


class DenyReason(str, enum.Enum):
    INVALID_CHAIN = "invalid_chain"
    SCOPE = "scope"
    OPERATION = "operation"
    EXPIRED = "expired"
    DEPTH_EXCEEDED = "depth_exceeded"
    SPEND_EXCEEDED = "spend_exceeded"
    REVOKED = "revoked"


_INT_KINDS = (CaveatKind.EXPIRY, CaveatKind.MAX_DEPTH, CaveatKind.SPEND_CAP)


@dataclass(frozen=True)
class Caveat:
    """A single restriction.

    ``value`` is a set of path prefixes for ``resource_scope``, a set of
    :class:`Operation` for ``operations`` and a non-negative integer for the
    integer kinds (tick, hop count, micro-units). A ``holder`` caveat names the
    agent a grant was made to and restricts nothing.
    """

    kind: CaveatKind
    value: Any

    def validate(self) -> None:
        """Raise :class:`~delegsim.exc.InvalidCaveat` if the value is malformed."""

        try:
            kind = CaveatKind(self.kind)
        except ValueError:
            raise exc.InvalidCaveat(f"unknown caveat kind {self.kind!r}") from None

        value = self.value
        if kind in _INT_KINDS:
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise exc.InvalidCaveat(f"{kind.value} must be a non-negative integer")
        elif kind is CaveatKind.RESOURCE_SCOPE:
            if not isinstance(value, (set, frozenset)) or not all(
                isinstance(p, str) and p.startswith("/") for p in value
            ):
                raise exc.InvalidCaveat("resource_scope must be a set of /paths")
        elif kind is CaveatKind.HOLDER:
            if not isinstance(value, str) or not value:
                raise exc.InvalidCaveat("holder must be a non-empty string")
        else:
            if not isinstance(value, (set, frozenset)) or not all(
                isinstance(op, Operation) for op in value
            ):
                raise exc.InvalidCaveat("operations must be a set of Operation")

    def normalized(self) -> Any:
        if CaveatKind(self.kind) in (CaveatKind.RESOURCE_SCOPE, CaveatKind.OPERATIONS):
            return sorted(
                v.value if isinstance(v, Operation) else v for v in self.value
            )
        return self.value

    def canonical(self) -> bytes:
        return wire.canonical_bytes(CaveatKind(self.kind).value, self.normalized())

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": CaveatKind(self.kind).value, "value": self.normalized()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Caveat":
        try:
            kind = CaveatKind(data["kind"])
            value = data["value"]
            if kind is CaveatKind.RESOURCE_SCOPE:
                value = frozenset(value)
            elif kind is CaveatKind.OPERATIONS:
                value = frozenset(Operation(op) for op in value)
        except (KeyError, ValueError, TypeError) as e:
            raise exc.InvalidCaveat(f"malformed caveat {data!r}: {e}") from None
        caveat = cls(kind, value)
        caveat.validate()
        return caveat

    @classmethod
    def parse(cls, text: str) -> "Caveat":
        """Parse the command-line form ``<kind>=<value>``.

        Set-valued kinds take comma-separated items, e.g.
        ``operations=READ,WRITE`` or ``resource_scope=/Project_X``.
        """

        kind, sep, raw = text.partition("=")
        if not sep:
            raise exc.InvalidCaveat(f"expected <kind>=<value>, got {text!r}")
        items: Any = [s for s in raw.split(",") if s]
        try:
            if CaveatKind(kind) in _INT_KINDS:
                items = int(raw)
            elif CaveatKind(kind) is CaveatKind.HOLDER:
                items = raw
        except ValueError:
            raise exc.InvalidCaveat(f"malformed caveat {text!r}") from None
        return cls.from_dict({"kind": kind, "value": items})


@dataclass(frozen=True)
class CapabilityToken:
    token_id: str
    root_key_id: str
    caveats: Tuple[Caveat, ...]
    chain_tag: bytes

    def to_dict(self) -> Dict[str, Any]:
        return {
            "token_id": self.token_id,
            "root_key_id": self.root_key_id,
            "caveats": [c.to_dict() for c in self.caveats],
            "chain_tag": wire.to_hex(self.chain_tag),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CapabilityToken":
        return cls(
            token_id=data["token_id"],
            root_key_id=data["root_key_id"],
            caveats=tuple(Caveat.from_dict(c) for c in data["caveats"]),
            chain_tag=wire.from_hex(data["chain_tag"]),
        )


@dataclass(frozen=True)
class RequestContext:
    resource: str
    operation: Operation
    now: int
    depth: int = 0
    spend: int = 0


@dataclass(frozen=True)
class Decision:
    """Outcome of token verification; Deny is a value, never an exception."""

    allowed: bool
    reason: Optional[DenyReason] = None
    caveat_index: Optional[int] = None

    def __bool__(self) -> bool:
        return self.allowed

    @classmethod
    def allow(cls) -> "Decision":
        return cls(True)

    @classmethod
    def deny(cls, reason: DenyReason, index: Optional[int] = None) -> "Decision":
        return cls(False, reason, index)


def _chain(root_secret: bytes, token_id: str, caveats: Iterable[Caveat]) -> bytes:
    tag = wire.mac(root_secret, token_id.encode("utf-8"))
    for caveat in caveats:
        tag = wire.mac(tag, caveat.canonical())
    return tag


def mint_token(
    root_secret: bytes,
    initial_caveats: Sequence[Caveat],
    token_id: str,
    root_key_id: str = "root",
) -> CapabilityToken:
    """Mint a token whose effective scope is the intersection of ``initial_caveats``.

    Raises:
        InvalidCaveat: if any caveat is malformed.
    """

    for caveat in initial_caveats:
        caveat.validate()

    caveats = tuple(initial_caveats)
    return CapabilityToken(
        token_id=token_id,
        root_key_id=root_key_id,
        caveats=caveats,
        chain_tag=_chain(root_secret, token_id, caveats),
    )


def attenuate(token: CapabilityToken, caveat: Caveat) -> CapabilityToken:
    """Append one caveat. The original token is left untouched.

    Raises:
        InvalidCaveat: if the caveat is malformed.
    """

    caveat.validate()
    return CapabilityToken(
        token_id=token.token_id,
        root_key_id=token.root_key_id,
        caveats=token.caveats + (caveat,),
        chain_tag=wire.mac(token.chain_tag, caveat.canonical()),
    )


def _in_scope(resource: str, prefixes: Iterable[str]) -> bool:
    for prefix in prefixes:
        base = prefix.rstrip("/")
        if base == "" or resource == base or resource.startswith(base + "/"):
            return True
    return False


def _admits(caveat: Caveat, request: RequestContext) -> Optional[DenyReason]:
    kind = CaveatKind(caveat.kind)

    if kind is CaveatKind.RESOURCE_SCOPE:
        return None if _in_scope(request.resource, caveat.value) else DenyReason.SCOPE
    if kind is CaveatKind.OPERATIONS:
        return None if request.operation in caveat.value else DenyReason.OPERATION
    if kind is CaveatKind.EXPIRY:
        # valid until and including the expiry tick
        return None if request.now <= caveat.value else DenyReason.EXPIRED
    if kind is CaveatKind.MAX_DEPTH:
        return None if request.depth <= caveat.value else DenyReason.DEPTH_EXCEEDED
    if kind is CaveatKind.HOLDER:
        return None
    return None if request.spend <= caveat.value else DenyReason.SPEND_EXCEEDED


def verify_token(
    token: CapabilityToken,
    root_secret: bytes,
    request: RequestContext,
    revoked: bool = False,
) -> Decision:
    """Check a request against a token.

    The chain is replayed from the root secret first, then revocation, then
    each caveat in order; the first failure wins.

    Args:
        token:
            Token presented with the request.
        root_secret:
            Secret of the token's root key.
        request:
            Resource, operation, tick, delegation depth and spend.
        revoked:
            Whether the authority has revoked this token or its holders.
    """

    try:
        expected = _chain(root_secret, token.token_id, token.caveats)
    except (TypeError, ValueError):
        return Decision.deny(DenyReason.INVALID_CHAIN)

    if not wire.tags_equal(expected, token.chain_tag):
        return Decision.deny(DenyReason.INVALID_CHAIN)
    if revoked:
        return Decision.deny(DenyReason.REVOKED)

    for index, caveat in enumerate(token.caveats):
        reason = _admits(caveat, request)
        if reason is not None:
            return Decision.deny(reason, index)

    return Decision.allow()


def effective_operations(token: CapabilityToken) -> FrozenSet[Operation]:
    """Intersection of all ``operations`` caveats; every operation if none."""

    ops = frozenset(Operation)
    for caveat in token.caveats:
        if CaveatKind(caveat.kind) is CaveatKind.OPERATIONS:
            ops &= frozenset(caveat.value)
    return ops


def effective_limit(token: CapabilityToken, kind: CaveatKind) -> Optional[int]:
    """Tightest integer limit of ``kind`` along the chain, None if unbounded."""

    limits = [c.value for c in token.caveats if CaveatKind(c.kind) is kind]
    return min(limits) if limits else None


@dataclass(frozen=True)
class RevocationNotice:
    """Broadcast event emitted by :meth:`PermissionAuthority.revoke`."""

    tick: int
    target: str
    target_kind: str
    affected: Tuple[str, ...] = field(default_factory=tuple)


class PermissionAuthority:
    """Holder of root secrets, token lineage and the revocation set.

    Lineage maps each issued chain tag to the agents the token passed
    through, so revoking an agent denies every token downstream of it.
    """

    def __init__(self) -> None:
        self._roots: Dict[str, bytes] = {}
        self._lineage: Dict[str, Tuple[str, ...]] = {}
        self._token_ids: Dict[str, str] = {}
        self._revoked_agents: Set[str] = set()
        self._revoked_tokens: Set[str] = set()
        self._issued = 0

    def add_root(self, root_key_id: str, secret: bytes) -> None:
        self._roots[root_key_id] = secret

    def has_root(self, root_key_id: str) -> bool:
        return root_key_id in self._roots

    def mint(
        self,
        root_key_id: str,
        caveats: Sequence[Caveat],
        holder: str,
        token_id: Optional[str] = None,
    ) -> CapabilityToken:
        """Mint a token for ``holder`` under a registered root."""

        try:
            secret = self._roots[root_key_id]
        except KeyError:
            raise exc.NotFound(f"root key {root_key_id}") from None

        if token_id is None:
            self._issued += 1
            token_id = f"{root_key_id}/t{self._issued}"

        token = mint_token(secret, caveats, token_id, root_key_id)
        self._record(token, (holder,))
        return token

    def grant(
        self, token: CapabilityToken, caveats: Sequence[Caveat], grantee: str
    ) -> CapabilityToken:
        """Attenuate ``token`` and record ``grantee`` as the next holder.

        A holder caveat naming ``grantee`` closes the chain, so every grant
        gets its own tag even when ``caveats`` is empty.
        """

        child = token
        for caveat in caveats:
            child = attenuate(child, caveat)
        child = attenuate(child, Caveat(CaveatKind.HOLDER, grantee))
        self._record(child, self.lineage(token) + (grantee,))
        return child

    def lineage(self, token: CapabilityToken) -> Tuple[str, ...]:
        """Holders of the longest recorded prefix of the token's chain.

        Caveats appended offline after a grant keep the lineage of that grant.
        """

        tag = wire.to_hex(token.chain_tag)
        if tag in self._lineage:
            return self._lineage[tag]
        secret = self._roots.get(token.root_key_id)
        if secret is None:
            return ()

        prefix = wire.mac(secret, token.token_id.encode("utf-8"))
        found = self._lineage.get(wire.to_hex(prefix), ())
        for caveat in token.caveats:
            prefix = wire.mac(prefix, caveat.canonical())
            found = self._lineage.get(wire.to_hex(prefix), found)
        return found

    def depth_of(self, token: CapabilityToken) -> int:
        return max(len(self.lineage(token)) - 1, 0)

    def is_revoked(self, token: CapabilityToken) -> bool:
        if token.token_id in self._revoked_tokens:
            return True
        return any(a in self._revoked_agents for a in self.lineage(token))

    def verify(self, token: CapabilityToken, request: RequestContext) -> Decision:
        secret = self._roots.get(token.root_key_id)
        if secret is None:
            return Decision.deny(DenyReason.INVALID_CHAIN)
        return verify_token(token, secret, request, revoked=self.is_revoked(token))

    def revoke(
        self,
        token_id: Optional[str] = None,
        agent: Optional[str] = None,
        tick: int = 0,
    ) -> RevocationNotice:
        """Revoke a token id or every token passing through an agent.

        Raises:
            NotFound: if the token id or agent was never issued a token.
        """

        if (token_id is None) == (agent is None):
            raise ValueError("revoke takes exactly one of token_id, agent")

        if token_id is not None:
            affected = sorted(
                tag for tag, tid in self._token_ids.items() if tid == token_id
            )
            if not affected:
                raise exc.NotFound(f"token {token_id}")
            self._revoked_tokens.add(token_id)
            return RevocationNotice(tick, token_id, "token", tuple(affected))

        assert agent is not None
        affected = self.descendants(agent)
        if not affected:
            raise exc.NotFound(f"agent {agent} holds no tokens")
        self._revoked_agents.add(agent)
        return RevocationNotice(tick, agent, "agent", tuple(affected))

    def descendants(self, agent: str) -> List[str]:
        """Chain tags of every token whose lineage passes through ``agent``."""

        return sorted(tag for tag, path in self._lineage.items() if agent in path)

    def _record(self, token: CapabilityToken, path: Tuple[str, ...]) -> None:
        tag = wire.to_hex(token.chain_tag)
        self._lineage[tag] = path
        self._token_ids[tag] = token.token_id
