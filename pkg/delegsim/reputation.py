"""Append-only reputation ledger, damped scores and graduated authority.

Each component of a score is an exponentially weighted mean folded over an
agent's outcomes in recording order::

    s <- s + (1 - damping) * w * (x - s)

starting from the prior. With anti-gaming on, ``w = 0.5 + 0.5 * complexity``
so that trivial tasks move the score half as much as the hardest ones; with
it off ``w = 1`` and the rule reduces to ``s <- damping * s + (1 - damping) * x``.
"""

__all__ = [
    "OutcomeRecord",
    "ReputationEntry",
    "ReputationScore",
    "ReputationLedger",
    "TrustModel",
    "Autonomy",
    "AuthorityGrant",
    "graduated_authority",
    "circuit_breaker",
    "fold",
    "resolve_history",
    "score_entries",
]

import enum
import json
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

from . import exc, wire
from .config import ReputationConfig
from .identity import KeyRegistry, VerifiableCredential
from .monitoring import Granularity


@dataclass(frozen=True)
class OutcomeRecord:
    """Outcome metadata stored next to a credential.

    ``transparency`` and ``safety`` are observations made by monitors, never
    self-reported.
    """

    tick: int
    success: bool
    quality: float = 1.0
    resources_ratio: float = 1.0
    deadline_met: bool = True
    constraints_met: bool = True
    transparency: float = 1.0
    safety: float = 1.0
    complexity: float = 1.0

    def __post_init__(self) -> None:
        for name in ("quality", "transparency", "safety", "complexity"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ReputationEntry:
    seq: int
    tick: int
    agent: str
    credential: VerifiableCredential
    outcome: OutcomeRecord
    corrects: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seq": self.seq,
            "tick": self.tick,
            "agent": self.agent,
            "credential": self.credential.to_dict(),
            "outcome": self.outcome.to_dict(),
            "corrects": self.corrects,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ReputationEntry":
        return cls(
            seq=int(data["seq"]),
            tick=int(data["tick"]),
            agent=data["agent"],
            credential=VerifiableCredential.from_dict(data["credential"]),
            outcome=OutcomeRecord(**data["outcome"]),
            corrects=data.get("corrects"),
        )


@dataclass(frozen=True)
class ReputationScore:
    completion: float
    transparency: float
    safety: float
    composite: float
    sample_count: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ReputationLedger:
    """Signed outcome history of every agent.

    Entries are never changed. A discovered error is a new entry that
    references the one it corrects.
    """

    def __init__(self, registry: KeyRegistry, config: Optional[ReputationConfig] = None) -> None:
        self.registry = registry
        self.config = config or ReputationConfig()
        self._entries: List[ReputationEntry] = []
        self._cache: Dict[Tuple[str, Optional[int]], ReputationScore] = {}

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> List[ReputationEntry]:
        return list(self._entries)

    def entry(self, seq: int) -> ReputationEntry:
        if not 0 <= seq < len(self._entries):
            raise exc.NotFound(f"no reputation entry {seq}")
        return self._entries[seq]

    def _append(
        self,
        credential: VerifiableCredential,
        outcome: OutcomeRecord,
        tick: int,
        corrects: Optional[int],
    ) -> ReputationEntry:
        if not credential.verify(self.registry):
            raise exc.InvalidCredential(
                f"{credential.claim.kind} credential for {credential.subject} does not verify"
            )
        entry = ReputationEntry(
            seq=len(self._entries),
            tick=tick,
            agent=credential.subject,
            credential=credential,
            outcome=outcome,
            corrects=corrects,
        )
        self._entries.append(entry)
        self._cache.clear()
        return entry

    def record(self, credential: VerifiableCredential, outcome: OutcomeRecord) -> ReputationEntry:
        """Append an outcome.

        Raises:
            InvalidCredential: if the credential does not verify.
        """

        return self._append(credential, outcome, outcome.tick, None)

    def retroactive_update(
        self,
        seq: int,
        corrected: OutcomeRecord,
        credential: VerifiableCredential,
        tick: int,
    ) -> ReputationEntry:
        """Append a correction of entry ``seq`` discovered at ``tick``.

        The corrected outcome replaces the original at its original position
        in the fold. Correcting a correction targets the same original entry;
        the latest correction wins. No money moves.

        Raises:
            NotFound: if ``seq`` is unknown.
        """

        target = self.entry(seq)
        original = target.corrects if target.corrects is not None else target.seq
        if credential.subject != target.agent:
            raise exc.InvalidCredential(
                f"correction credential is about {credential.subject}, entry about {target.agent}"
            )
        return self._append(credential, corrected, tick, original)

    def score(self, agent: str, now: Optional[int] = None) -> ReputationScore:
        """Score of ``agent`` from the entries recorded up to ``now``."""

        key = (agent, now)
        if key not in self._cache:
            self._cache[key] = score_entries(self._entries, agent, now, self.config)
        return self._cache[key]

    def composite(self, agent: str, now: Optional[int] = None) -> float:
        return self.score(agent, now).composite

    def score_history(self, agent: str, now: Optional[int] = None) -> List[Tuple[int, float]]:
        """Composite score after each tick on which the agent's record changed."""

        ticks = sorted(
            {
                e.tick
                for e in self._entries
                if e.agent == agent and (now is None or e.tick <= now)
            }
        )
        return [(t, self.composite(agent, t)) for t in ticks]

    def write_jsonl(self, fh: TextIO) -> None:
        for entry in self._entries:
            fh.write(wire.canonical_json(entry.to_dict()) + "\n")

    @classmethod
    def read_jsonl(
        cls,
        lines: Iterable[str],
        registry: KeyRegistry,
        config: Optional[ReputationConfig] = None,
    ) -> "ReputationLedger":
        ledger = cls(registry, config)
        for line in lines:
            if not line.strip():
                continue
            entry = ReputationEntry.from_dict(json.loads(line))
            if entry.corrects is None:
                ledger.record(entry.credential, entry.outcome)
            else:
                ledger.retroactive_update(entry.corrects, entry.outcome, entry.credential, entry.tick)
        return ledger


def resolve_history(
    entries: Iterable[ReputationEntry], agent: str, now: Optional[int] = None
) -> List[OutcomeRecord]:
    """Outcomes of ``agent`` recorded up to ``now``, with corrections applied in place."""

    corrections: Dict[int, OutcomeRecord] = {}
    originals: List[ReputationEntry] = []

    for entry in entries:
        if entry.agent != agent or (now is not None and entry.tick > now):
            continue
        if entry.corrects is None:
            originals.append(entry)
        else:
            corrections[entry.corrects] = entry.outcome

    return [corrections.get(e.seq, e.outcome) for e in originals]


def score_entries(
    entries: Iterable[ReputationEntry],
    agent: str,
    now: Optional[int] = None,
    config: Optional[ReputationConfig] = None,
) -> ReputationScore:
    return fold(resolve_history(entries, agent, now), config)


def fold(outcomes: Sequence[OutcomeRecord], config: Optional[ReputationConfig] = None) -> ReputationScore:
    """Damped fold of outcomes into a score."""

    config = config or ReputationConfig()
    rate = 1.0 - config.damping
    completion = transparency = safety = config.prior

    for o in outcomes:
        w = 0.5 + 0.5 * o.complexity if config.anti_gaming else 1.0
        step = rate * w
        completion += step * ((1.0 if o.success else 0.0) - completion)
        transparency += step * (o.transparency - transparency)
        safety += step * (o.safety - safety)

    wc, wt, ws = config.weights
    composite = wc * completion + wt * transparency + ws * safety
    return ReputationScore(
        completion=completion,
        transparency=transparency,
        safety=safety,
        composite=min(1.0, max(0.0, composite)),
        sample_count=len(outcomes),
    )


@dataclass(frozen=True)
class TrustModel:
    """A delegator's private threshold ``min(1, base + slope * criticality)``."""

    owner: str = ""
    base: float = 0.1
    slope: float = 0.35

    def __post_init__(self) -> None:
        if self.slope < 0:
            raise ValueError("trust threshold must be non-decreasing in criticality")

    def threshold(self, criticality: float) -> float:
        return min(1.0, max(0.0, self.base + self.slope * criticality))


class Autonomy(str, enum.Enum):
    ATOMIC = "atomic"
    BOUNDED = "bounded"
    OPEN_ENDED = "open_ended"


@dataclass(frozen=True)
class AuthorityGrant:
    autonomy: Autonomy
    spend_multiplier: float
    granularity_floor: Granularity
    human_approval_required: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "autonomy": self.autonomy.value,
            "spend_multiplier": self.spend_multiplier,
            "granularity_floor": self.granularity_floor.wire_name,
            "human_approval_required": self.human_approval_required,
        }


def graduated_authority(score: float, criticality: float) -> AuthorityGrant:
    """Constraints for an agent of composite ``score`` on a task.

    - score below 0.4: atomic, spend x0.1, L2 floor, human approval from
      criticality 0.5.
    - score 0.4 to 0.8: bounded, spend x0.5, L1 floor (L2 from criticality
      0.7), human approval from criticality 0.9.
    - score 0.8 and above: open-ended with an L0 floor below criticality 0.5,
      bounded with an L1 floor above it; full spend.

    Criticality 1.0 always requires human approval.
    """

    if score < 0.4:
        grant = AuthorityGrant(Autonomy.ATOMIC, 0.1, Granularity.L2, criticality >= 0.5)
    elif score < 0.8:
        grant = AuthorityGrant(
            Autonomy.BOUNDED,
            0.5,
            Granularity.L2 if criticality >= 0.7 else Granularity.L1,
            criticality >= 0.9,
        )
    elif criticality < 0.5:
        grant = AuthorityGrant(Autonomy.OPEN_ENDED, 1.0, Granularity.L0, False)
    else:
        grant = AuthorityGrant(Autonomy.BOUNDED, 1.0, Granularity.L1, False)

    if criticality >= 1.0 and not grant.human_approval_required:
        grant = AuthorityGrant(grant.autonomy, grant.spend_multiplier, grant.granularity_floor, True)
    return grant


def circuit_breaker(
    history: Sequence[Tuple[int, float]],
    config: Optional[ReputationConfig] = None,
) -> bool:
    """True when the composite fell by ``breaker_drop`` or more within ``breaker_window`` ticks.

    Args:
        history:
            ``(tick, composite)`` pairs in tick order.
    """

    config = config or ReputationConfig()
    for i, (t0, s0) in enumerate(history):
        for t1, s1 in history[i + 1 :]:
            if t1 - t0 > config.breaker_window:
                break
            if s0 - s1 >= config.breaker_drop - 1e-12:
                return True
    return False
