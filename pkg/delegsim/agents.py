"""Honest and adversarial agent policies.

Adversaries are rows of a table: each profile kind maps its parameters to a
:class:`~delegsim.base.Behaviour`. Sybil operators and colluding rings are
also structural (several identities on one account, a shared panel vote);
the simulator builds that structure from the profile.
"""

__all__ = [
    "AdversaryKind",
    "AdversaryProfile",
    "HonestAgent",
    "AdversarialAgent",
    "make_agent",
]

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from .base import AgentSpec, BaseAgent, Behaviour


class AdversaryKind(str, enum.Enum):
    DATA_POISONER = "data_poisoner"
    RESOURCE_EXHAUSTER = "resource_exhauster"
    UNRESPONSIVE = "unresponsive"
    BACKDOOR_IMPLANTER = "backdoor_implanter"
    REPUTATION_SABOTEUR = "reputation_saboteur"
    SYBIL_OPERATOR = "sybil_operator"
    COLLUDING_RING = "colluding_ring"
    LOW_RISK_GAMER = "low_risk_gamer"


# parameter -> (low, high, default)
_PARAMS: Dict[AdversaryKind, Dict[str, Tuple[float, float, Any]]] = {
    AdversaryKind.DATA_POISONER: {"corruption": (0.0, 1.0, 1.0)},
    AdversaryKind.RESOURCE_EXHAUSTER: {"overspend": (1.0, 100.0, 3.0)},
    AdversaryKind.UNRESPONSIVE: {"after": (0, 10**9, 0)},
    AdversaryKind.BACKDOOR_IMPLANTER: {"latent": (0, 1, True)},
    AdversaryKind.REPUTATION_SABOTEUR: {"rate": (0.0, 1.0, 1.0)},
    AdversaryKind.SYBIL_OPERATOR: {"n": (1, 1000, 3), "corruption": (0.0, 1.0, 0.5)},
    AdversaryKind.COLLUDING_RING: {"price_factor": (1.0, 10.0, 1.5)},
    AdversaryKind.LOW_RISK_GAMER: {"threshold": (0.0, 1.0, 0.3)},
}

_BEHAVIOURS: Dict[AdversaryKind, Callable[[Mapping[str, Any]], Behaviour]] = {
    AdversaryKind.DATA_POISONER: lambda p: Behaviour(corruption=p["corruption"]),
    AdversaryKind.RESOURCE_EXHAUSTER: lambda p: Behaviour(overspend=p["overspend"]),
    AdversaryKind.UNRESPONSIVE: lambda p: Behaviour(silent_after=int(p["after"])),
    AdversaryKind.BACKDOOR_IMPLANTER: lambda p: Behaviour(backdoor=bool(p["latent"])),
    AdversaryKind.REPUTATION_SABOTEUR: lambda p: Behaviour(false_failure_rate=p["rate"]),
    AdversaryKind.SYBIL_OPERATOR: lambda p: Behaviour(corruption=p["corruption"], price_factor=0.5),
    AdversaryKind.COLLUDING_RING: lambda p: Behaviour(vote="always_pass", price_factor=p["price_factor"]),
    AdversaryKind.LOW_RISK_GAMER: lambda p: Behaviour(max_difficulty=p["threshold"]),
}


@dataclass(frozen=True)
class AdversaryProfile:
    """Adversary kind with its parameters; omitted ones take defaults.

    Colluding rings also list their ``members`` by label.
    """

    kind: AdversaryKind
    params: Mapping[str, Any] = field(default_factory=dict)
    members: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ranges = _PARAMS[self.kind]
        unknown = set(self.params) - set(ranges)
        if unknown:
            raise ValueError(f"{self.kind.value}: unknown parameters {sorted(unknown)}")
        for name, value in self.resolved().items():
            low, high, _ = ranges[name]
            if not low <= value <= high:
                raise ValueError(f"{self.kind.value}.{name}={value} outside [{low}, {high}]")

    def resolved(self) -> Dict[str, Any]:
        values = {name: default for name, (_, _, default) in _PARAMS[self.kind].items()}
        values.update(self.params)
        return values

    def behaviour(self) -> Behaviour:
        return _BEHAVIOURS[self.kind](self.resolved())

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value, **self.resolved()}
        if self.members:
            data["members"] = list(self.members)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AdversaryProfile":
        values = dict(data)
        kind = AdversaryKind(values.pop("kind"))
        members = tuple(values.pop("members", ()))
        return cls(kind=kind, params=values, members=members)


class HonestAgent(BaseAgent):
    @property
    def behaviour(self) -> Behaviour:
        return Behaviour()


class AdversarialAgent(BaseAgent):
    def __init__(
        self,
        spec: AgentSpec,
        profile: AdversaryProfile,
        agent_id: Optional[str] = None,
        account: Optional[str] = None,
    ) -> None:
        super().__init__(spec, agent_id, account)
        self.profile = profile
        self._behaviour = profile.behaviour()

    @property
    def behaviour(self) -> Behaviour:
        return self._behaviour

    @property
    def adversary(self) -> Optional[str]:
        return self.profile.kind.value


def make_agent(
    spec: AgentSpec, agent_id: Optional[str] = None, account: Optional[str] = None
) -> BaseAgent:
    if spec.policy is None:
        return HonestAgent(spec, agent_id, account)
    return AdversarialAgent(spec, spec.policy, agent_id, account)
