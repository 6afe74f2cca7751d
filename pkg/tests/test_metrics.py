import json

import pytest

from delegsim.metrics import EventType, compute_metrics, events_frame, render


def log(*records):
    return [{"seq": n, **r} for n, r in enumerate(records)]


EVENTS = log(
    {"tick": 0, "type": "AGENT", "agent": "a1", "account": "a1", "role": "delegatee", "adversary": None},
    {"tick": 0, "type": "AGENT", "agent": "m1", "account": "m1", "role": "delegatee", "adversary": "data_poisoner"},
    {"tick": 0, "type": "AGENT", "agent": "boss", "account": "boss", "role": "delegator", "adversary": None},
    {"tick": 0, "type": "LEDGER", "from_account": "genesis", "to_account": "boss", "amount": 100, "reason": "open", "memo": ""},
    {"tick": 0, "type": "TASK_OPEN", "task_id": "t1"},
    {"tick": 0, "type": "TASK_OPEN", "task_id": "t2"},
    {"tick": 2, "type": "TRIGGER", "task_id": "t2", "kind": "Unresponsive"},
    {"tick": 2, "type": "TRIGGER", "task_id": "t2", "kind": "SpecChange"},
    {"tick": 3, "type": "REDELEGATE", "task_id": "t2"},
    {"tick": 8, "type": "REDELEGATE", "task_id": "t2"},
    {"tick": 9, "type": "LEDGER", "from_account": "escrow:c1", "to_account": "a1", "amount": 40, "reason": "release", "memo": "c1"},
    {"tick": 9, "type": "LEDGER", "from_account": "boss", "to_account": "treasury", "amount": 5, "reason": "fee", "memo": ""},
    {"tick": 9, "type": "LEDGER", "from_account": "escrow:c2", "to_account": "m1", "amount": 30, "reason": "release", "memo": "c2"},
    {"tick": 9, "type": "LEDGER", "from_account": "escrow:c2", "to_account": "m1", "amount": 7, "reason": "refund", "memo": "c2"},
    {"tick": 10, "type": "CONTRACT", "contract_id": "c1", "state": "settled"},
    {"tick": 10, "type": "TASK_DONE", "task_id": "t1"},
    {"tick": 10, "type": "REPUTATION", "agent": "a1", "composite": 0.6},
    {"tick": 11, "type": "BREAKER", "agent": "m1"},
)


def test_completion_and_makespan():
    metrics = compute_metrics(EVENTS)
    assert metrics["tasks_opened"] == 2
    assert metrics["tasks_completed"] == 1
    assert metrics["completion_rate"] == 0.5
    assert metrics["mean_makespan"] == 10.0
    assert metrics["settled_contracts"] == 1


def test_cost_and_earnings():
    metrics = compute_metrics(EVENTS)
    assert metrics["total_cost"] == 40 + 5 + 30
    assert metrics["honest_earnings"] == 40
    assert metrics["adversary_earnings"] == 37


def test_coordination_counts():
    metrics = compute_metrics(EVENTS)
    assert metrics["redelegation_count"] == 2
    assert metrics["oscillation_max_per_task"] == 2
    # one internal trigger plus the breaker trip
    assert metrics["breach_detections"] == 2
    assert metrics["reputation_trajectories"] == {"a1": [[10, 0.6]]}


def test_empty_log():
    metrics = compute_metrics([])
    assert metrics["completion_rate"] == 0.0
    assert metrics["total_cost"] == 0
    assert events_frame([]).empty


def test_events_frame_filters():
    frame = events_frame(EVENTS, EventType.REDELEGATE)
    assert list(frame["tick"]) == [3, 8]


def test_render():
    metrics = compute_metrics(EVENTS)
    assert json.loads(render(metrics)) == json.loads(json.dumps(metrics))
    csv = render(metrics, "csv").splitlines()
    assert csv[0] == "metric,value"
    assert not any(line.startswith("reputation_trajectories") for line in csv)
    with pytest.raises(ValueError):
        render(metrics, "xml")
