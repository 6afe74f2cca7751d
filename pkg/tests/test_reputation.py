import io

import pytest

from delegsim import exc
from delegsim.config import ReputationConfig
from delegsim.identity import Claim, issue_credential
from delegsim.monitoring import Granularity
from delegsim.reputation import (
    Autonomy,
    OutcomeRecord,
    ReputationLedger,
    TrustModel,
    circuit_breaker,
    fold,
    graduated_authority,
    score_entries,
)
from .conftest import registry


def ledger_for(*labels):
    reg, ids = registry("boss", *labels)
    return ReputationLedger(reg), reg, ids


def credential(reg, issuer, subject, task_id="t1", tick=0, kind="task_completed"):
    return issue_credential(reg, issuer, subject, Claim(kind, task_id, tick, "00", 1.0))


def record(ledger, reg, boss, agent, tick, success):
    return ledger.record(credential(reg, boss, agent, tick=tick), OutcomeRecord(tick, success))


def test_prior_for_fresh_identity():
    ledger, _, [_, agent] = ledger_for("agent")
    score = ledger.score(agent)
    assert score.composite == 0.5
    assert score.sample_count == 0


def test_ewma_fold():
    ledger, reg, [boss, agent] = ledger_for("agent")
    record(ledger, reg, boss, agent, 1, True)
    assert ledger.score(agent).completion == pytest.approx(0.6)
    record(ledger, reg, boss, agent, 2, False)
    assert ledger.score(agent).completion == pytest.approx(0.48)
    assert ledger.score(agent, now=1).completion == pytest.approx(0.6)


def test_long_success_streak_converges():
    score = fold([OutcomeRecord(t, True) for t in range(100)])
    assert score.completion >= 0.99
    assert 0.0 <= score.composite <= 1.0


def test_easy_tasks_count_less():
    easy = fold([OutcomeRecord(0, True, complexity=0.0)])
    hard = fold([OutcomeRecord(0, True, complexity=1.0)])
    assert easy.completion < hard.completion
    flat = fold([OutcomeRecord(0, True, complexity=0.0)], ReputationConfig(anti_gaming=False))
    assert flat.completion == pytest.approx(hard.completion)


def test_record_rejects_forged_credentials():
    ledger, reg, [boss, agent] = ledger_for("agent")
    good = credential(reg, boss, agent)
    forged = good.__class__(good.issuer, good.subject, good.claim, b"\x00" * 32)
    with pytest.raises(exc.InvalidCredential):
        ledger.record(forged, OutcomeRecord(0, True))


def test_retroactive_flip_matches_fresh_failure():
    ledger, reg, [boss, agent] = ledger_for("agent")
    entry = record(ledger, reg, boss, agent, 1, True)
    ledger.retroactive_update(entry.seq, OutcomeRecord(1, False), credential(reg, boss, agent, tick=9), 9)
    assert ledger.score(agent).completion == pytest.approx(fold([OutcomeRecord(1, False)]).completion)
    assert len(ledger) == 2
    assert ledger.entry(0).outcome.success


def test_correction_of_correction_last_wins():
    ledger, reg, [boss, agent] = ledger_for("agent")
    entry = record(ledger, reg, boss, agent, 1, True)
    first = ledger.retroactive_update(entry.seq, OutcomeRecord(1, False), credential(reg, boss, agent), 5)
    second = ledger.retroactive_update(first.seq, OutcomeRecord(1, True), credential(reg, boss, agent), 6)
    assert second.corrects == entry.seq
    assert ledger.score(agent).completion == pytest.approx(0.6)


def test_correction_errors():
    ledger, reg, [boss, agent, other] = ledger_for("agent", "other")
    entry = record(ledger, reg, boss, agent, 1, True)
    with pytest.raises(exc.NotFound):
        ledger.retroactive_update(7, OutcomeRecord(1, False), credential(reg, boss, agent), 2)
    with pytest.raises(exc.InvalidCredential):
        ledger.retroactive_update(entry.seq, OutcomeRecord(1, False), credential(reg, boss, other), 2)


def test_history_is_not_transplanted():
    ledger, reg, [boss, agent, sybil] = ledger_for("agent", "sybil")
    for tick in range(5):
        record(ledger, reg, boss, agent, tick, True)
    assert ledger.score(sybil).sample_count == 0
    assert ledger.score(sybil).composite == 0.5


def test_jsonl_round_trip_scores_match():
    ledger, reg, [boss, agent] = ledger_for("agent")
    entry = record(ledger, reg, boss, agent, 1, True)
    record(ledger, reg, boss, agent, 2, False)
    ledger.retroactive_update(entry.seq, OutcomeRecord(1, False), credential(reg, boss, agent), 3)

    buf = io.StringIO()
    ledger.write_jsonl(buf)
    restored = ReputationLedger.read_jsonl(buf.getvalue().splitlines(), reg)
    assert restored.score(agent) == ledger.score(agent)
    assert score_entries(restored.entries, agent) == ledger.score(agent)


def test_authority_table():
    top = graduated_authority(0.95, 0.1)
    assert top.autonomy is Autonomy.OPEN_ENDED
    assert top.granularity_floor is Granularity.L0

    low = graduated_authority(0.2, 0.3)
    assert (low.autonomy, low.spend_multiplier, low.granularity_floor) == (
        Autonomy.ATOMIC, 0.1, Granularity.L2,
    )
    assert all(graduated_authority(s, 1.0).human_approval_required for s in (0.1, 0.5, 0.99))


def test_authority_is_monotone_in_score():
    rank = {Autonomy.ATOMIC: 0, Autonomy.BOUNDED: 1, Autonomy.OPEN_ENDED: 2}
    for criticality in (0.0, 0.3, 0.5, 0.7, 0.9, 1.0):
        grants = [graduated_authority(s / 20, criticality) for s in range(21)]
        for a, b in zip(grants, grants[1:]):
            assert rank[a.autonomy] <= rank[b.autonomy]
            assert a.spend_multiplier <= b.spend_multiplier
            assert a.granularity_floor >= b.granularity_floor
            assert a.human_approval_required >= b.human_approval_required


def test_trust_model_threshold():
    model = TrustModel(base=0.1, slope=0.35)
    assert model.threshold(0.0) == pytest.approx(0.1)
    assert model.threshold(1.0) == pytest.approx(0.45)
    with pytest.raises(ValueError):
        TrustModel(slope=-0.1)


def test_circuit_breaker():
    config = ReputationConfig(breaker_drop=0.25, breaker_window=50)
    assert not circuit_breaker([(t, 0.7) for t in range(10)], config)
    assert circuit_breaker([(0, 0.8), (10, 0.5)], config)
    assert not circuit_breaker([(0, 0.8), (60, 0.65), (120, 0.5)], config)


def test_breaker_trips_from_failures():
    ledger, reg, [boss, agent] = ledger_for("agent")
    for tick in range(5):
        record(ledger, reg, boss, agent, tick, True)
    for tick in range(5, 10):
        record(ledger, reg, boss, agent, tick, False)
    assert circuit_breaker(ledger.score_history(agent))
