"""Synthetic task trees, their ground-truth oracle and the complexity floor."""

__all__ = [
    "Ordering",
    "FloorDecision",
    "TaskCharacteristics",
    "TaskNode",
    "Artifact",
    "TaskProfile",
    "generate_task",
    "produce_artifact",
    "expected_digest",
    "degradation",
    "oracle_evaluate",
    "complexity_floor",
    "task_to_dict",
    "task_from_dict",
]

import dataclasses
import enum
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterator, List, Optional, Tuple

import numpy as np

from . import exc, wire
from .config import FloorConfig

_UNIT_FIELDS = (
    "complexity",
    "criticality",
    "uncertainty",
    "verifiability",
    "reversibility",
    "contextuality",
    "subjectivity",
)


class Ordering(str, enum.Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"


class FloorDecision(str, enum.Enum):
    EXECUTE_DIRECTLY = "execute_directly"
    DELEGATE = "delegate"


@dataclass(frozen=True)
class TaskCharacteristics:
    complexity: float = 0.0
    criticality: float = 0.0
    uncertainty: float = 0.0
    verifiability: float = 1.0
    reversibility: float = 1.0
    contextuality: float = 0.0
    subjectivity: float = 0.0
    duration_est: int = 1
    cost_est: int = 0
    resource_requirements: FrozenSet[str] = frozenset()
    constraints: FrozenSet[str] = frozenset()

    def __post_init__(self) -> None:
        for name in _UNIT_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise exc.InvalidTask(f"{name}={value} outside [0, 1]")
        if self.duration_est < 1:
            raise exc.InvalidTask(f"duration_est={self.duration_est} must be >= 1")
        if self.cost_est < 0:
            raise exc.InvalidTask(f"cost_est={self.cost_est} must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["resource_requirements"] = sorted(self.resource_requirements)
        data["constraints"] = sorted(self.constraints)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskCharacteristics":
        values = dict(data)
        values["resource_requirements"] = frozenset(
            values.get("resource_requirements", ())
        )
        values["constraints"] = frozenset(values.get("constraints", ()))
        try:
            return cls(**values)
        except TypeError as e:
            raise exc.InvalidTask(str(e)) from None


@dataclass(frozen=True)
class TaskNode:
    """Node of a task tree; a leaf iff it has no children."""

    task_id: str
    characteristics: TaskCharacteristics
    children: Tuple["TaskNode", ...] = ()
    ordering: Ordering = Ordering.PARALLEL
    ground_truth: int = 0
    human_required: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator["TaskNode"]:
        """Pre-order traversal."""

        yield self
        for child in self.children:
            yield from child.walk()

    def leaves(self) -> List["TaskNode"]:
        return [n for n in self.walk() if n.is_leaf]

    def find(self, task_id: str) -> Optional["TaskNode"]:
        for node in self.walk():
            if node.task_id == task_id:
                return node
        return None

    def size(self) -> int:
        return sum(1 for _ in self.walk())

    def structural_hash(self) -> str:
        return wire.to_hex(
            wire.digest(wire.canonical_json(task_to_dict(self)).encode("utf-8"))
        )


@dataclass(frozen=True)
class Artifact:
    """Output of a task execution.

    ``corruption`` is the degradation the producer applied; the oracle only
    trusts it when the digest is the one that corruption level yields.
    """

    task_id: str
    producer: str
    content_digest: bytes
    quality_hint: float = 1.0
    corruption: float = 0.0

    def __post_init__(self) -> None:
        if len(self.content_digest) != wire.DIGEST_SIZE:
            raise exc.InvalidTask("artifact digest must be 32 bytes")
        if not 0.0 <= self.quality_hint <= 1.0:
            raise exc.InvalidTask("quality_hint outside [0, 1]")


def expected_digest(task: TaskNode) -> bytes:
    return wire.digest(wire.canonical_bytes("artifact", task.task_id, task.ground_truth))


def _corrupt_digest(task: TaskNode, corruption: float) -> bytes:
    return wire.digest(
        wire.canonical_bytes("corrupt", task.task_id, task.ground_truth, corruption)
    )


def produce_artifact(
    task: TaskNode, producer: str, corruption: float = 0.0, quality_hint: float = 1.0
) -> Artifact:
    """Execute a task. ``corruption`` in [0, 1] degrades the result."""

    corruption = min(max(float(corruption), 0.0), 1.0)
    content = expected_digest(task) if corruption == 0.0 else _corrupt_digest(
        task, corruption
    )
    return Artifact(
        task_id=task.task_id,
        producer=producer,
        content_digest=content,
        quality_hint=quality_hint,
        corruption=corruption,
    )


def degradation(corruption: float) -> float:
    """Quality of an artifact produced at a corruption level."""

    return max(0.0, 1.0 - corruption) ** 2


def oracle_evaluate(task: TaskNode, artifact: Artifact) -> float:
    """Ground-truth quality of an artifact, a pure function.

    Raises:
        WrongTask: if the artifact belongs to another task.
    """

    if artifact.task_id != task.task_id:
        raise exc.WrongTask(f"artifact for {artifact.task_id}, task {task.task_id}")

    if wire.tags_equal(artifact.content_digest, expected_digest(task)):
        return 1.0
    if wire.tags_equal(
        artifact.content_digest, _corrupt_digest(task, artifact.corruption)
    ):
        return degradation(artifact.corruption)
    return 0.0


def complexity_floor(
    task: TaskNode, overhead: int, config: Optional[FloorConfig] = None
) -> FloorDecision:
    """Decide whether a task is cheap enough to run without delegation.

    Args:
        task:
            Task under consideration.
        overhead:
            Estimated delegation overhead in micro-units.
        config:
            Floor thresholds, defaults to :class:`~delegsim.config.FloorConfig`.
    """

    if overhead < 0:
        raise ValueError("overhead must be >= 0")

    config = config or FloorConfig()
    c = task.characteristics

    if (
        c.criticality <= config.theta_crit
        and c.uncertainty <= config.theta_unc
        and c.duration_est <= config.theta_dur
        and overhead >= config.phi * c.cost_est
    ):
        return FloorDecision.EXECUTE_DIRECTLY
    return FloorDecision.DELEGATE


@dataclass(frozen=True)
class TaskProfile:
    """Uniform ranges characteristics are drawn from.

    A range with equal bounds pins the axis.
    """

    complexity: Tuple[float, float] = (0.0, 1.0)
    criticality: Tuple[float, float] = (0.0, 0.8)
    uncertainty: Tuple[float, float] = (0.0, 1.0)
    verifiability: Tuple[float, float] = (0.2, 1.0)
    reversibility: Tuple[float, float] = (0.2, 1.0)
    contextuality: Tuple[float, float] = (0.0, 1.0)
    subjectivity: Tuple[float, float] = (0.0, 0.6)
    duration: Tuple[int, int] = (5, 40)
    cost: Tuple[int, int] = (1_000_000, 6_000_000)
    capabilities: Tuple[str, ...] = ("code", "data", "writing", "analysis")
    constraints: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in _UNIT_FIELDS:
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise exc.InvalidTask(f"profile range {name}=({lo}, {hi}) invalid")
        if not 1 <= self.duration[0] <= self.duration[1]:
            raise exc.InvalidTask("profile duration range invalid")
        if not 0 <= self.cost[0] <= self.cost[1]:
            raise exc.InvalidTask("profile cost range invalid")
        if not self.capabilities:
            raise exc.InvalidTask("profile needs at least one capability")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskProfile":
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        try:
            return cls(**values)
        except TypeError as e:
            raise exc.InvalidTask(str(e)) from None


def _draw(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    if lo == hi:
        return float(lo)
    return float(round(rng.uniform(lo, hi), 6))


def _draw_leaf(rng: np.random.Generator, profile: TaskProfile) -> TaskCharacteristics:
    values: Dict[str, Any] = {name: _draw(rng, getattr(profile, name)) for name in _UNIT_FIELDS}
    values["duration_est"] = int(rng.integers(profile.duration[0], profile.duration[1] + 1))
    values["cost_est"] = int(rng.integers(profile.cost[0], profile.cost[1] + 1))
    values["resource_requirements"] = frozenset(
        {str(profile.capabilities[int(rng.integers(0, len(profile.capabilities)))])}
    )
    if profile.constraints and rng.random() < 0.5:
        values["constraints"] = frozenset(
            {str(profile.constraints[int(rng.integers(0, len(profile.constraints)))])}
        )
    return TaskCharacteristics(**values)


def _build(
    rng: np.random.Generator,
    task_id: str,
    depth: int,
    branching: int,
    profile: TaskProfile,
) -> TaskNode:
    own = _draw_leaf(rng, profile)
    ground_truth = int(rng.integers(0, 2 ** 62))

    if depth == 0:
        return TaskNode(task_id=task_id, characteristics=own, ground_truth=ground_truth)

    ordering = Ordering.SEQUENTIAL if rng.random() < 0.5 else Ordering.PARALLEL
    children = tuple(
        _build(rng, f"{task_id}.{i}", depth - 1, branching, profile)
        for i in range(branching)
    )
    kids = [c.characteristics for c in children]
    durations = [k.duration_est for k in kids]

    characteristics = dataclasses.replace(
        own,
        criticality=max([own.criticality] + [k.criticality for k in kids]),
        duration_est=sum(durations) if ordering is Ordering.SEQUENTIAL else max(durations),
        cost_est=sum(k.cost_est for k in kids),
        resource_requirements=frozenset().union(*(k.resource_requirements for k in kids)),
        constraints=frozenset().union(*(k.constraints for k in kids)),
    )
    return TaskNode(
        task_id=task_id,
        characteristics=characteristics,
        children=children,
        ordering=ordering,
        ground_truth=ground_truth,
    )


def generate_task(
    seed: int,
    depth: int,
    branching: int,
    profile: Optional[TaskProfile] = None,
    prefix: str = "t",
) -> TaskNode:
    """Generate a deterministic task tree.

    Args:
        seed:
            Seed of the generator; equal seeds give equal trees.
        depth:
            Tree depth, 0 yields a single leaf.
        branching:
            Children per internal node.
        profile:
            Characteristic distribution, defaults to :class:`TaskProfile`.
        prefix:
            Prefix of the root task id.
    """

    if depth < 0:
        raise ValueError("depth must be >= 0")
    if branching < 1:
        raise ValueError("branching must be >= 1")

    rng = np.random.default_rng(seed)
    return _build(rng, f"{prefix}{seed}", depth, branching, profile or TaskProfile())


def task_to_dict(task: TaskNode) -> Dict[str, Any]:
    return {
        "task_id": task.task_id,
        "characteristics": task.characteristics.to_dict(),
        "ordering": task.ordering.value,
        "ground_truth": task.ground_truth,
        "human_required": task.human_required,
        "children": [task_to_dict(c) for c in task.children],
    }


def task_from_dict(data: Dict[str, Any]) -> TaskNode:
    try:
        return TaskNode(
            task_id=data["task_id"],
            characteristics=TaskCharacteristics.from_dict(data["characteristics"]),
            children=tuple(task_from_dict(c) for c in data.get("children", [])),
            ordering=Ordering(data.get("ordering", "parallel")),
            ground_truth=int(data.get("ground_truth", 0)),
            human_required=bool(data.get("human_required", False)),
        )
    except (KeyError, ValueError) as e:
        raise exc.InvalidTask(f"malformed task: {e}") from None
