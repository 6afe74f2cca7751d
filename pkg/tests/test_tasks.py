import dataclasses

import pytest

from delegsim import exc
from delegsim.config import FloorConfig
from delegsim.tasks import (
    Artifact,
    FloorDecision,
    TaskCharacteristics,
    TaskProfile,
    complexity_floor,
    degradation,
    expected_digest,
    generate_task,
    oracle_evaluate,
    produce_artifact,
    task_from_dict,
    task_to_dict,
)
from .conftest import leaf


def test_depth_zero_is_a_leaf():
    task = generate_task(7, 0, 3)
    assert task.is_leaf
    assert task.task_id == "t7"


def test_generation_is_deterministic():
    a = generate_task(7, 2, 2)
    b = generate_task(7, 2, 2)
    assert a.size() == 7
    assert a.structural_hash() == b.structural_hash()
    assert a.structural_hash() != generate_task(8, 2, 2).structural_hash()


def test_parent_criticality_covers_children():
    for node in generate_task(3, 3, 2).walk():
        for child in node.children:
            assert node.characteristics.criticality >= child.characteristics.criticality


def test_pinned_profile_axis():
    profile = TaskProfile(subjectivity=(0.0, 0.0))
    assert all(n.characteristics.subjectivity == 0.0 for n in generate_task(5, 2, 3, profile).walk())


def test_generate_rejects_bad_shape():
    with pytest.raises(ValueError):
        generate_task(1, -1, 2)
    with pytest.raises(ValueError):
        generate_task(1, 1, 0)


def test_characteristics_ranges():
    with pytest.raises(exc.InvalidTask):
        TaskCharacteristics(criticality=1.5)
    with pytest.raises(exc.InvalidTask):
        TaskCharacteristics(duration_est=0)
    with pytest.raises(exc.InvalidTask):
        TaskProfile(duration=(0, 3))


def test_oracle_scores():
    task = leaf()
    assert oracle_evaluate(task, produce_artifact(task, "p")) == 1.0
    assert oracle_evaluate(task, produce_artifact(task, "p", corruption=1.0)) == 0.0
    assert oracle_evaluate(task, produce_artifact(task, "p", corruption=0.5)) == pytest.approx(0.25)
    assert degradation(0.5) == pytest.approx((1 - 0.5) ** 2)


def test_oracle_is_monotone_in_corruption():
    task = leaf()
    scores = [oracle_evaluate(task, produce_artifact(task, "p", corruption=c / 10)) for c in range(11)]
    assert scores == sorted(scores, reverse=True)


def test_oracle_does_not_trust_claimed_corruption():
    task = leaf()
    honest = produce_artifact(task, "p", corruption=0.9)
    lying = dataclasses.replace(honest, corruption=0.0)
    assert oracle_evaluate(task, lying) == 0.0


def test_oracle_wrong_task():
    with pytest.raises(exc.WrongTask):
        oracle_evaluate(leaf("t1"), produce_artifact(leaf("t2"), "p"))


def test_artifact_validation():
    with pytest.raises(exc.InvalidTask):
        Artifact("t1", "p", b"short")
    with pytest.raises(exc.InvalidTask):
        Artifact("t1", "p", expected_digest(leaf()), quality_hint=2.0)


def test_floor_executes_trivial_tasks():
    task = leaf(criticality=0.0, uncertainty=0.0, duration_est=1, cost_est=100)
    assert complexity_floor(task, 100) is FloorDecision.EXECUTE_DIRECTLY


def test_floor_boundary_is_inclusive():
    task = leaf(criticality=0.1, uncertainty=0.1, duration_est=5, cost_est=1_000)
    assert complexity_floor(task, 500) is FloorDecision.EXECUTE_DIRECTLY
    assert complexity_floor(task, 499) is FloorDecision.DELEGATE


def test_floor_critical_tasks_always_delegate():
    task = leaf(criticality=1.0, uncertainty=0.0, duration_est=1, cost_est=0)
    assert complexity_floor(task, 10 ** 9) is FloorDecision.DELEGATE


def test_floor_uses_config():
    task = leaf(criticality=0.4, uncertainty=0.0, duration_est=1, cost_est=0)
    assert complexity_floor(task, 0, FloorConfig(theta_crit=0.5)) is FloorDecision.EXECUTE_DIRECTLY
    with pytest.raises(ValueError):
        complexity_floor(task, -1)


def test_dict_round_trip():
    task = generate_task(11, 2, 2)
    assert task_from_dict(task_to_dict(task)) == task
    with pytest.raises(exc.InvalidTask):
        task_from_dict({"characteristics": {}})
