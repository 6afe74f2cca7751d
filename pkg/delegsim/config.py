__all__ = [
    "FloorConfig",
    "HumanAllocationPolicy",
    "DecompositionConfig",
    "MarketConfig",
    "ContractConfig",
    "MonitoringConfig",
    "ReputationConfig",
    "CoordinationConfig",
    "VerificationConfig",
    "SimConfig",
    "load_config",
    "CONFIG_ENV",
]

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from . import exc

CONFIG_ENV = "DELEGATION_SIM_CONFIG"


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise exc.ConfigError(message)


def _unit(name: str, value: float) -> None:
    _check(0.0 <= value <= 1.0, f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class FloorConfig:
    """Thresholds of the complexity floor.

    Args:
        theta_crit:
            Highest criticality executed without delegation.
        theta_unc:
            Highest uncertainty executed without delegation.
        theta_dur:
            Longest duration estimate, in ticks, executed without delegation.
        phi:
            Overhead must reach ``phi * cost_est`` before direct execution
            pays off. The boundary is inclusive.
    """

    theta_crit: float = 0.2
    theta_unc: float = 0.3
    theta_dur: int = 10
    phi: float = 0.5

    def __post_init__(self) -> None:
        _unit("theta_crit", self.theta_crit)
        _unit("theta_unc", self.theta_unc)
        _check(self.theta_dur >= 1, "theta_dur must be >= 1")
        _check(self.phi >= 0, "phi must be >= 0")


@dataclass(frozen=True)
class HumanAllocationPolicy:
    subjectivity_threshold: float = 0.7
    criticality_threshold: float = 0.95
    oversee_critical: bool = True
    latency_multiplier: int = 10
    cost_multiplier: int = 3

    def __post_init__(self) -> None:
        _unit("subjectivity_threshold", self.subjectivity_threshold)
        _unit("criticality_threshold", self.criticality_threshold)
        _check(self.latency_multiplier >= 1, "latency_multiplier must be >= 1")
        _check(self.cost_multiplier >= 1, "cost_multiplier must be >= 1")


@dataclass(frozen=True)
class DecompositionConfig:
    tau_v: float = 0.6
    tau_s: float = 0.7
    delta_v: float = 0.2
    max_refine_depth: int = 6
    k: int = 3
    human: HumanAllocationPolicy = field(default_factory=HumanAllocationPolicy)

    def __post_init__(self) -> None:
        _unit("tau_v", self.tau_v)
        _unit("tau_s", self.tau_s)
        _check(0 < self.delta_v <= 1, "delta_v must be in (0, 1]")
        _check(self.max_refine_depth >= 0, "max_refine_depth must be >= 0")
        _check(self.k >= 1, "k must be >= 1")


@dataclass(frozen=True)
class MarketConfig:
    """Auction parameters and the delegation overhead cost table.

    All amounts are integer micro-units.
    """

    bid_window: int = 5
    min_stake: int = 500_000
    weights: Mapping[str, float] = field(
        default_factory=lambda: {
            "cost": 0.4,
            "latency": 0.3,
            "risk": 0.2,
            "privacy": 0.1,
        }
    )
    rfq_fee: int = 10_000
    bid_eval_cost: int = 2_000
    contract_cost: int = 20_000
    verification_costs: Mapping[str, int] = field(
        default_factory=lambda: {"spot": 5_000, "standard": 20_000, "strict": 50_000}
    )
    trust_base: float = 0.1
    trust_slope: float = 0.35
    requote: bool = False

    def __post_init__(self) -> None:
        _check(self.bid_window >= 1, "bid_window must be >= 1")
        _check(self.min_stake >= 0, "min_stake must be >= 0")
        _check(
            set(self.weights) <= {"cost", "latency", "risk", "privacy"},
            f"unknown objective in weights: {sorted(self.weights)}",
        )
        _check(all(w >= 0 for w in self.weights.values()), "weights must be >= 0")
        _check(
            abs(sum(self.weights.values()) - 1.0) < 1e-9, "weights must sum to 1"
        )
        for name in ("rfq_fee", "bid_eval_cost", "contract_cost"):
            _check(getattr(self, name) >= 0, f"{name} must be >= 0")
        _check(self.trust_slope >= 0, "trust_slope must be >= 0")
        _unit("trust_base", self.trust_base)


@dataclass(frozen=True)
class ContractConfig:
    dispute_window: int = 10
    cancellation_fraction: float = 0.1
    arbitration_panel: int = 3
    compensation: Optional[str] = "linear"

    def __post_init__(self) -> None:
        _check(self.dispute_window >= 1, "dispute_window must be >= 1")
        _unit("cancellation_fraction", self.cancellation_fraction)
        _check(
            self.arbitration_panel >= 3 and self.arbitration_panel % 2 == 1,
            "arbitration_panel must be odd and >= 3",
        )
        _check(
            self.compensation in (None, "linear", "steps"),
            f"unknown compensation schedule {self.compensation!r}",
        )


@dataclass(frozen=True)
class MonitoringConfig:
    min_cadence: int = 2
    standard_cadence: int = 5
    max_cadence: int = 20
    direct_confidence: float = 1.0
    indirect_confidence: float = 0.5

    def __post_init__(self) -> None:
        _check(
            1 <= self.min_cadence <= self.standard_cadence <= self.max_cadence,
            "cadences must satisfy 1 <= min <= standard <= max",
        )
        _unit("direct_confidence", self.direct_confidence)
        _unit("indirect_confidence", self.indirect_confidence)


@dataclass(frozen=True)
class ReputationConfig:
    damping: float = 0.8
    prior: float = 0.5
    weights: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    anti_gaming: bool = True
    breaker_drop: float = 0.25
    breaker_window: int = 50

    def __post_init__(self) -> None:
        _check(0 <= self.damping < 1, "damping must be in [0, 1)")
        _unit("prior", self.prior)
        _check(len(self.weights) == 3, "weights are (completion, transparency, safety)")
        _check(all(w >= 0 for w in self.weights), "weights must be >= 0")
        _check(abs(sum(self.weights) - 1.0) < 1e-9, "weights must sum to 1")
        _check(0 < self.breaker_drop <= 1, "breaker_drop must be in (0, 1]")
        _check(self.breaker_window >= 0, "breaker_window must be >= 0")


@dataclass(frozen=True)
class CoordinationConfig:
    rho: float = 0.3
    kappa: float = 0.7
    grace_cadences: int = 3
    slo_fraction: float = 0.5
    severe_fraction: float = 0.5
    cooldown: int = 10
    redelegation_fees: Tuple[int, ...] = (10_000, 20_000, 40_000, 80_000)
    max_redelegations: Optional[int] = 4
    human_latency: int = 20
    capacity: int = 8

    def __post_init__(self) -> None:
        _unit("rho", self.rho)
        _unit("kappa", self.kappa)
        _check(self.grace_cadences >= 1, "grace_cadences must be >= 1")
        _unit("slo_fraction", self.slo_fraction)
        _unit("severe_fraction", self.severe_fraction)
        _check(self.cooldown >= 0, "cooldown must be >= 0")
        _check(len(self.redelegation_fees) >= 1, "fee schedule must not be empty")
        fees = self.redelegation_fees
        _check(
            all(a <= b for a, b in zip(fees, fees[1:])) and fees[0] >= 0,
            "fee schedule must be non-negative and non-decreasing",
        )
        _check(
            self.max_redelegations is None or self.max_redelegations >= 0,
            "max_redelegations must be >= 0",
        )
        _check(self.human_latency >= 0, "human_latency must be >= 0")
        _check(self.capacity >= 1, "capacity must be >= 1")


@dataclass(frozen=True)
class VerificationConfig:
    pass_threshold: float = 0.8
    direct_min_verifiability: float = 0.5
    proof_fee: int = 5_000
    audit_fee: int = 20_000
    panel_reward: int = 30_000
    spot_rate: float = 0.5

    def __post_init__(self) -> None:
        _unit("pass_threshold", self.pass_threshold)
        _unit("direct_min_verifiability", self.direct_min_verifiability)
        _unit("spot_rate", self.spot_rate)
        _check(self.proof_fee >= 0 and self.audit_fee >= 0, "fees must be >= 0")
        _check(self.panel_reward > 0, "panel_reward must be > 0")


_SECTIONS = {
    "floor": FloorConfig,
    "decomposition": DecompositionConfig,
    "market": MarketConfig,
    "contract": ContractConfig,
    "monitoring": MonitoringConfig,
    "reputation": ReputationConfig,
    "coordination": CoordinationConfig,
    "verification": VerificationConfig,
}


@dataclass(frozen=True)
class SimConfig:
    """All module defaults, overridable from a scenario's ``config`` object."""

    floor: FloorConfig = field(default_factory=FloorConfig)
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    contract: ContractConfig = field(default_factory=ContractConfig)
    monitoring: MonitoringConfig = field(default_factory=MonitoringConfig)
    reputation: ReputationConfig = field(default_factory=ReputationConfig)
    coordination: CoordinationConfig = field(default_factory=CoordinationConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    monoculture_failure_rate: float = 0.0
    discovery_delay: int = 50

    def __post_init__(self) -> None:
        _unit("monoculture_failure_rate", self.monoculture_failure_rate)
        _check(self.discovery_delay >= 0, "discovery_delay must be >= 0")

    @classmethod
    def from_dict(cls, overrides: Optional[Mapping[str, Any]] = None) -> "SimConfig":
        return cls().merged(overrides or {})

    def merged(self, overrides: Mapping[str, Any]) -> "SimConfig":
        """Return a copy with nested ``overrides`` applied.

        Raises:
            ConfigError: on unknown keys or invalid values.
        """

        changes: Dict[str, Any] = {}

        for key, value in overrides.items():
            if key in _SECTIONS:
                if not isinstance(value, Mapping):
                    raise exc.ConfigError(f"section {key!r} must be an object")
                changes[key] = _replace(getattr(self, key), value, key)
            elif key in ("monoculture_failure_rate", "discovery_delay"):
                changes[key] = value
            else:
                raise exc.ConfigError(f"unknown config key {key!r}")

        try:
            return dataclasses.replace(self, **changes)
        except TypeError as e:
            exc.raise_with_traceback(exc.ConfigError(str(e)))
            raise

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _replace(section: Any, values: Mapping[str, Any], path: str) -> Any:
    names = {f.name for f in dataclasses.fields(section)}
    changes: Dict[str, Any] = {}

    for key, value in values.items():
        if key not in names:
            raise exc.ConfigError(f"unknown config key {path}.{key}")
        current = getattr(section, key)
        if dataclasses.is_dataclass(current):
            changes[key] = _replace(current, value, f"{path}.{key}")
        elif isinstance(current, tuple) and isinstance(value, list):
            changes[key] = tuple(value)
        elif isinstance(current, float) and isinstance(value, int):
            changes[key] = float(value)
        else:
            changes[key] = value

    try:
        return dataclasses.replace(section, **changes)
    except TypeError as e:
        exc.raise_with_traceback(exc.ConfigError(f"{path}: {e}"))
        raise


def load_config(
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> SimConfig:
    """Build the effective configuration.

    Defaults are overlaid first by the JSON file named in
    ``DELEGATION_SIM_CONFIG`` and then by ``overrides``, so explicit values win.

    Args:
        overrides:
            Nested mapping, usually the scenario's ``config`` object merged
            with command-line flags.
        environ:
            Environment to read, defaults to ``os.environ``.
    """

    env = os.environ if environ is None else environ
    config = SimConfig()

    base_path = env.get(CONFIG_ENV)
    if base_path:
        try:
            with open(base_path, "r") as fh:
                base = json.load(fh)
        except (OSError, ValueError) as e:
            exc.raise_with_traceback(
                exc.ConfigError(f"unable to read {CONFIG_ENV}={base_path}: {e}")
            )
        config = config.merged(base)

    if overrides:
        config = config.merged(overrides)

    return config
