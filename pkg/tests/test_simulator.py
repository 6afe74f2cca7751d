import json
import os
from unittest.mock import patch

import pytest

from delegsim import exc
from delegsim.ledger import BOND_POOL, Accounts, verify_ledger
from delegsim.simulator import Scenario, inject, read_log, replay, run
from delegsim.tasks import task_to_dict

from .conftest import leaf


def scenario_dict(**overrides):
    data = {
        "seed": 7,
        "horizon": 2000,
        "agents": [
            {"label": "boss", "role": "delegator", "balance": 100_000_000},
            {"label": "w1", "balance": 10_000_000},
            {"label": "w2", "balance": 10_000_000},
        ],
        "tasks": [task_to_dict(leaf("job"))],
    }
    data.update(overrides)
    return data


def scenario(**overrides):
    return Scenario.from_dict(scenario_dict(**overrides), environ={})


def records(result, kind):
    return [r for r in result.event_log if r["type"] == kind]


def labels(result):
    return {r["agent"]: r["label"] for r in records(result, "AGENT")}


def test_honest_run_completes():
    result = run(scenario())

    assert result.metrics["tasks_opened"] == 1
    assert result.metrics["completion_rate"] == 1.0
    assert result.metrics["settled_contracts"] == 1
    assert result.metrics["redelegation_count"] == 0
    assert result.event_log[-1]["type"] == "RUN_END"
    assert result.event_log[-1]["digest"] == result.digest

    seqs = [r["seq"] for r in result.event_log]
    assert seqs == list(range(len(seqs)))
    ticks = [r["tick"] for r in result.event_log]
    assert ticks == sorted(ticks)


def test_money_is_conserved():
    result = run(scenario())

    audit = verify_ledger(result.ledger)
    assert audit.ok, audit.problems
    assert audit.stranded == {}
    assert sum(audit.balances.values()) == 0


def test_same_scenario_same_log():
    first = run(scenario())
    second = run(scenario())

    assert first.lines() == second.lines()
    assert first.digest == second.digest


def test_other_seed_other_log():
    assert run(scenario()).digest != run(scenario(seed=8)).digest


def test_replay_agrees():
    result = run(scenario())

    replayed = replay(result.lines())
    assert replayed.digest == result.digest
    assert replayed.metrics == result.metrics

    # parsed records work as well
    assert replay(result.event_log).digest == result.digest


def test_replay_detects_tampering():
    lines = run(scenario()).lines()
    n = next(i for i, line in enumerate(lines) if '"type":"LEDGER"' in line)
    record = json.loads(lines[n])
    record["amount"] += 1
    lines[n] = json.dumps(record, sort_keys=True, separators=(",", ":"))

    with pytest.raises(exc.ReplayMismatch):
        replay(lines)


@pytest.mark.parametrize(
    "edit",
    [
        lambda lines: lines[:-1],
        lambda lines: lines[:3] + lines[4:],
        lambda lines: ["not json"] + lines,
        lambda lines: [],
    ],
)
def test_replay_rejects_broken_logs(edit):
    lines = run(scenario()).lines()
    with pytest.raises(exc.ReplayMismatch):
        replay(edit(lines))


def test_unresponsive_winner_is_replaced_by_backup():
    base = scenario()
    honest = run(base)
    names = labels(honest)
    winner = names[records(honest, "DELEGATE")[0]["delegatee"]]
    index = [a.label for a in base.agents].index(winner)

    result = run(inject(base, index, {"kind": "unresponsive", "after": 0}))

    names = labels(result)
    delegations = records(result, "DELEGATE")
    assert names[delegations[0]["delegatee"]] == winner

    triggers = records(result, "TRIGGER")
    assert triggers[0]["kind"] == "Unresponsive"

    redelegations = records(result, "REDELEGATE")
    assert len(redelegations) == 1
    assert names[redelegations[0]["to_agent"]] != winner
    assert result.metrics["redelegation_count"] == 1
    assert result.metrics["completion_rate"] == 1.0
    assert verify_ledger(result.ledger).ok


def test_external_cancellation_fails_task():
    triggers = [{"kind": "Cancellation", "task_id": "job", "tick": 6}]
    tasks = [task_to_dict(leaf("job", duration_est=200))]
    result = run(scenario(tasks=tasks, triggers=triggers))

    kinds = [r["kind"] for r in records(result, "TRIGGER")]
    assert "Cancellation" in kinds
    assert result.metrics["completion_rate"] == 0.0
    assert records(result, "TASK_FAILED")
    assert verify_ledger(result.ledger).stranded == {}


def test_generated_workload():
    skills = ["code", "data", "writing", "analysis"]
    data = scenario_dict(tasks=[], workload={"count": 3, "depth": 1, "branching": 2})
    for agent in data["agents"][1:]:
        agent["capabilities"] = skills
    result = run(Scenario.from_dict(data, environ={}))

    assert result.metrics["tasks_opened"] > 0
    assert verify_ledger(result.ledger).ok
    assert run(Scenario.from_dict(data, environ={})).digest == result.digest


def test_no_delegatees():
    data = scenario_dict(agents=[{"label": "boss", "role": "delegator", "balance": 10}])
    result = run(Scenario.from_dict(data, environ={}))

    failed = records(result, "TASK_FAILED")
    assert failed[0]["reason"] == "no delegatees"
    assert result.metrics["tasks_opened"] == 0


def test_conservation_breach_aborts_run():
    with patch.object(Accounts, "total", return_value=1):
        with pytest.raises(exc.InvariantViolation):
            run(scenario())


def test_write_outputs(tmp_path):
    result = run(scenario())
    paths = result.write(str(tmp_path / "out"))

    assert sorted(os.path.basename(p) for p in paths.values()) == [
        "events.jsonl", "ledger.jsonl", "metrics.json", "reputation.jsonl",
    ]
    assert replay(read_log(paths["events.jsonl"])).digest == result.digest
    with open(paths["metrics.json"]) as fh:
        assert json.load(fh) == result.metrics
    with open(paths["ledger.jsonl"]) as fh:
        assert len(fh.readlines()) == len(result.ledger)


@pytest.mark.parametrize(
    "data",
    [
        {"horizon": 10, "agents": []},
        {"seed": 1, "agents": []},
        {"seed": 1, "horizon": 0, "agents": []},
        {"seed": 1, "horizon": 10, "agents": [{"label": "a"}, {"label": "a"}]},
        {"seed": 1, "horizon": 10, "agents": [{"label": "a"}], "workload": {"count": 1}},
        {"seed": 1, "horizon": 10, "agents": [{"role": "delegatee"}]},
        {"seed": 1, "horizon": 10, "agents": [{"label": "a", "role": "pilot"}]},
        {"seed": 1, "horizon": 10, "agents": [], "workload": {"branching": 0}},
        {"seed": 1, "horizon": 10, "agents": [], "triggers": [{"kind": "Nope", "task_id": "t", "tick": 1}]},
    ],
)
def test_invalid_scenarios(data):
    with pytest.raises(exc.ConfigError):
        Scenario.from_dict(data, environ={})


def test_scenario_from_json(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(scenario_dict()))
    assert Scenario.from_json(str(path), environ={}) == scenario()

    with pytest.raises(exc.ConfigError):
        Scenario.from_json(str(tmp_path / "missing.json"))


def test_inject():
    base = scenario()
    changed = inject(base, 1, {"kind": "data_poisoner"})

    assert changed.agents[1].policy is not None
    assert changed.agents[2].policy is None
    assert base.agents[1].policy is None

    with pytest.raises(IndexError):
        inject(base, 3, {"kind": "data_poisoner"})


def test_progress_and_trigger_records_keep_their_kind():
    result = run(scenario())

    progress = records(result, "PROGRESS")
    assert [r["kind"] for r in progress][:2] == ["TASK_STARTED", "CHECKPOINT_REACHED"]
    assert progress[-1]["kind"] == "TASK_COMPLETED"
    assert all(r["type"] == "PROGRESS" for r in progress)


def winner_of(base):
    """Label, scenario index and escrow of the first delegation of an honest run."""

    honest = run(base)
    delegation = records(honest, "DELEGATE")[0]
    label = labels(honest)[delegation["delegatee"]]
    return label, [a.label for a in base.agents].index(label), delegation["escrow"]


def test_unchallenged_failure_is_not_settled_as_pass():
    # enough for overhead and escrow, too little for the dispute bond
    agents = scenario_dict()["agents"]
    agents[0]["balance"] = 1_400_000
    base = scenario(agents=agents, tasks=[task_to_dict(leaf("job", criticality=0.7))])
    winner, index, _ = winner_of(base)

    result = run(inject(base, index, {"kind": "data_poisoner"}))

    names = labels(result)
    first = records(result, "VERDICT")[0]
    assert names[first["agent"]] == winner
    assert first["pass"] is False
    assert not records(result, "CHALLENGE")

    agent_ids = {label: agent for agent, label in names.items()}
    releases = [
        r for r in records(result, "LEDGER")
        if r["reason"] == "release" and r["to_account"] == agent_ids[winner]
    ]
    assert releases == []
    assert "VerificationFailure" in [r["kind"] for r in records(result, "TRIGGER")]
    assert names[records(result, "TASK_DONE")[0]["agent"]] != winner
    assert verify_ledger(result.ledger).ok


def test_unaffordable_overhead_fails_the_task():
    agents = scenario_dict()["agents"]
    agents[0]["balance"] = 500_000
    result = run(scenario(agents=agents))

    assert [r["purpose"] for r in records(result, "FEE_UNPAID")] == ["overhead"]
    assert records(result, "TASK_FAILED")[0]["reason"] == "insufficient funds"
    assert not records(result, "DELEGATE")
    assert not [r for r in records(result, "LEDGER") if r["reason"] == "fee"]
    audit = verify_ledger(result.ledger)
    assert audit.ok
    assert audit.balances.get(BOND_POOL, 0) == 0


def test_unaffordable_redelegation_fee_terminates():
    base = scenario()
    _, index, escrow = winner_of(base)
    agents = scenario_dict()["agents"]
    # spot overhead with two bids, plus less than the first redelegation fee
    agents[0]["balance"] = 39_000 + escrow + 5_000
    base = scenario(agents=agents)

    result = run(inject(base, index, {"kind": "unresponsive", "after": 0}))

    assert [r["purpose"] for r in records(result, "FEE_UNPAID")] == ["redelegation"]
    assert not records(result, "REDELEGATE")
    assert records(result, "TASK_FAILED")[0]["reason"] == "insufficient funds"
    assert result.metrics["completion_rate"] == 0.0
    assert verify_ledger(result.ledger).stranded == {}


def test_unaffordable_proof_falls_back_to_direct_check():
    tasks = [task_to_dict(leaf("job", criticality=0.9))]
    _, _, escrow = winner_of(scenario(tasks=tasks))
    agents = scenario_dict()["agents"]
    # strict overhead with two bids, plus less than the proof fee
    agents[0]["balance"] = 84_000 + escrow + 1_000
    result = run(scenario(agents=agents, tasks=tasks))

    assert [r["purpose"] for r in records(result, "FEE_UNPAID")] == ["proof"]
    [verdict] = records(result, "VERDICT")
    assert verdict["mechanism"] == "direct"
    assert not [r for r in records(result, "LEDGER") if r.get("memo") == "proof_check"]
    assert result.metrics["completion_rate"] == 1.0


def test_overspending_worker_is_stopped_by_its_token():
    base = scenario()
    winner, index, _ = winner_of(base)

    result = run(inject(base, index, {"kind": "resource_exhauster"}))

    names = labels(result)
    check = records(result, "TOKEN_CHECK")[0]
    assert names[check["agent"]] == winner
    assert check["allowed"] is False
    assert check["reason"] == "spend_exceeded"

    trigger = records(result, "TRIGGER")[0]
    assert trigger["kind"] == "BudgetOverrun"
    assert trigger["evidence"] == ["token:spend_exceeded"]

    finished = [r for r in records(result, "PROGRESS") if r["kind"] == "TASK_COMPLETED"]
    assert finished
    assert all(names[r["agent"]] != winner for r in finished)
    assert result.metrics["redelegation_count"] == 1
    assert result.metrics["completion_rate"] == 1.0


SKILLS = ["code", "data", "writing", "analysis"]


def population(seed, count, horizon=5000, **extra):
    """A delegator, ten honest workers and two adversaries on a generated workload."""

    agents = [{"label": "boss", "role": "delegator", "balance": 10 ** 10}]
    agents += [
        {"label": f"w{i}", "balance": 50_000_000, "capabilities": SKILLS} for i in range(10)
    ]
    agents += [
        {"label": "poisoner", "balance": 50_000_000, "capabilities": SKILLS, "policy": {"kind": "data_poisoner"}},
        {"label": "sleeper", "balance": 50_000_000, "capabilities": SKILLS,
         "policy": {"kind": "unresponsive", "after": 5}},
    ]
    data = {
        "seed": seed,
        "horizon": horizon,
        "agents": agents,
        "workload": {"count": count, "depth": 1, "branching": 2},
    }
    data.update(extra)
    return Scenario.from_dict(data, environ={})


@pytest.mark.parametrize("seed", range(1, 21))
def test_seeded_runs_are_reproducible_and_conserve_money(seed):
    base = population(seed, 30)
    first = run(base)
    second = run(base)

    assert first.lines() == second.lines()
    assert first.digest == second.digest
    assert replay(first.lines()).metrics == first.metrics

    audit = verify_ledger(first.ledger)
    assert audit.ok, audit.problems
    assert audit.stranded == {}
    assert sum(audit.balances.values()) == 0


def redelegation_ticks(result):
    return [r["tick"] for r in records(result, "REDELEGATE") if r["task_id"] == "job"]


def test_stability_policy_limits_redelegation():
    agents = scenario_dict()["agents"][:1]
    agents += [
        {"label": f"w{i}", "balance": 10_000_000, "policy": {"kind": "unresponsive", "after": 0}}
        for i in range(7)
    ]

    capped = run(scenario(agents=agents, config={"coordination": {"cooldown": 10, "max_redelegations": 4}}))
    ticks = redelegation_ticks(capped)
    assert 0 < len(ticks) <= 4
    assert all(b - a >= 10 for a, b in zip(ticks, ticks[1:]))
    assert records(capped, "TASK_FAILED")[0]["reason"] == "redelegation limit"

    free = run(scenario(agents=agents, config={"coordination": {"cooldown": 0, "max_redelegations": None}}))
    assert len(redelegation_ticks(free)) > len(ticks)
    assert verify_ledger(free.ledger).stranded == {}


def test_tripped_agent_gets_no_further_authority():
    tasks = [task_to_dict(leaf(f"job{i}")) for i in range(4)]
    config = {"reputation": {"breaker_drop": 0.05}, "discovery_delay": 10}
    base = scenario(tasks=tasks, config=config)
    winner, index, _ = winner_of(base)

    result = run(inject(base, index, {"kind": "backdoor_implanter"}))

    names = labels(result)
    [trip] = [r for r in records(result, "BREAKER") if names[r["agent"]] == winner]
    mole = trip["agent"]
    assert records(result, "RETRO")

    later = [r for r in result.event_log if r["seq"] > trip["seq"]]
    assert not [r for r in later if r["type"] == "TOKEN_CHECK" and r["agent"] == mole and r["allowed"]]
    assert not [r for r in later if r["type"] == "BID" and r["agent_id"] == mole]
    assert not [r for r in later if r["type"] == "DELEGATE" and r["delegatee"] == mole]
    assert verify_ledger(result.ledger).ok


def test_sybil_bids_are_bounded_by_stake():
    agents = scenario_dict()["agents"]
    agents.append({"label": "sybil", "balance": 1_200_000, "policy": {"kind": "sybil_operator", "n": 5}})
    result = run(scenario(agents=agents))

    names = labels(result)
    first_rfq = records(result, "RFQ")[0]["rfq_id"]
    bids = [
        r for r in records(result, "BID")
        if r["rfq_id"] == first_rfq and names[r["agent_id"]].startswith("sybil#")
    ]
    rejected = [
        r for r in records(result, "BID_REJECTED")
        if r["rfq_id"] == first_rfq and names[r["agent_id"]].startswith("sybil#")
    ]
    assert len(bids) <= 1_200_000 // 500_000
    assert len(bids) + len(rejected) == 5
    assert {r["reason"] for r in rejected} == {"insufficient_funds"}
    assert verify_ledger(result.ledger).ok


def final_state(result, label):
    [record] = [r for r in records(result, "AGENT") if r["label"] == label]
    agent, account = record["agent"], record["account"]
    composites = [r["composite"] for r in records(result, "REPUTATION") if r["agent"] == agent]
    return composites[-1] if composites else None, verify_ledger(result.ledger).balances[account]


def test_false_challenges_cost_the_saboteur_only():
    base = scenario()
    winner, _, _ = winner_of(base)
    baseline = run(base)
    sabotaged = run(inject(base, 0, {"kind": "reputation_saboteur"}))

    assert records(sabotaged, "CHALLENGE")
    assert all(r["pass"] for r in records(sabotaged, "VERDICT") if r["stage"] == "arbitration")

    honest_score, _ = final_state(baseline, winner)
    attacked_score, _ = final_state(sabotaged, winner)
    assert abs(attacked_score - honest_score) <= 0.05

    _, boss_before = final_state(baseline, "boss")
    _, boss_after = final_state(sabotaged, "boss")
    assert boss_after < boss_before


def test_strict_checks_never_pass_poisoned_work():
    tasks = [task_to_dict(leaf("job", criticality=0.9))]
    base = scenario(tasks=tasks)
    winner, index, _ = winner_of(base)

    result = run(inject(base, index, {"kind": "data_poisoner"}))

    names = labels(result)
    verdicts = [r for r in records(result, "VERDICT") if names[r["agent"]] == winner]
    assert verdicts
    assert not [r for r in verdicts if r["pass"]]
    assert names[records(result, "TASK_DONE")[0]["agent"]] != winner


def test_large_workload_runs_only_verifiable_leaves():
    data = scenario_dict(tasks=[], horizon=10_000, workload={"count": 200, "depth": 1, "branching": 2})
    data["agents"][0]["balance"] = 10 ** 10
    for agent in data["agents"][1:]:
        agent["capabilities"] = SKILLS
    data["agents"] += [
        {"label": f"x{i}", "balance": 10_000_000, "capabilities": SKILLS} for i in range(6)
    ]
    result = run(Scenario.from_dict(data, environ={}))

    opened = records(result, "TASK_OPEN")
    assert len({r["root_id"] for r in opened}) == 200
    assert all(r["verifiability"] >= 0.6 or r["human_required"] for r in opened)
    assert result.metrics["completion_rate"] == 1.0
    assert verify_ledger(result.ledger).stranded == {}
