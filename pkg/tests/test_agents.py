import numpy as np
import pytest

from delegsim.agents import AdversarialAgent, AdversaryKind, AdversaryProfile, HonestAgent, make_agent
from delegsim.base import AgentSpec, BaseAgent, Role
from delegsim.decomposition import AgentStats, CapabilityRegistry, finalize, propose
from delegsim.market import TaskRFQ
from delegsim.tasks import oracle_evaluate
from .conftest import leaf


def rfq_for(**kwargs):
    registry = CapabilityRegistry([AgentStats("a", frozenset({"code", "data"}))])
    [proposal] = propose(leaf(**kwargs), registry)
    spec = finalize(proposal.leaves[0], 5_000_000)
    return TaskRFQ("rfq-000001", spec, "boss", 0, 5, 500_000, {"cost": 1.0})


def adversary(kind, **params):
    profile = AdversaryProfile(AdversaryKind(kind), params)
    return make_agent(AgentSpec("mallory", policy=profile))


def test_base_agent_is_abstract():
    with pytest.raises(TypeError):
        BaseAgent(AgentSpec("x"))


def test_make_agent_dispatches_on_policy():
    honest = make_agent(AgentSpec("alice"))
    assert isinstance(honest, HonestAgent)
    assert honest.adversary is None
    assert honest.account == honest.agent_id

    bad = adversary("data_poisoner")
    assert isinstance(bad, AdversarialAgent)
    assert bad.adversary == "data_poisoner"


def test_spec_validation():
    with pytest.raises(ValueError):
        AgentSpec("x", balance=-1)
    with pytest.raises(ValueError):
        AgentSpec("x", capacity=0)
    assert AgentSpec("x").agent_id == AgentSpec("x", role=Role.VERIFIER).agent_id


def test_profile_validation():
    with pytest.raises(ValueError):
        AdversaryProfile(AdversaryKind.DATA_POISONER, {"corruption": 2.0})
    with pytest.raises(ValueError):
        AdversaryProfile(AdversaryKind.DATA_POISONER, {"speed": 1})
    profile = AdversaryProfile.from_dict({"kind": "colluding_ring", "members": ["a", "b"]})
    assert profile.members == ("a", "b")
    assert profile.to_dict() == {"kind": "colluding_ring", "price_factor": 1.5, "members": ["a", "b"]}


def test_honest_quote_and_work():
    agent = make_agent(AgentSpec("alice"))
    rng = np.random.default_rng(0)
    rfq = rfq_for()
    bid = agent.quote(rfq, rng, 1)
    assert 900_000 <= bid.estimated_cost <= 1_100_000
    assert bid.reputation_bond == 500_000
    assert bid.rfq_id == rfq.rfq_id

    task = leaf()
    assert oracle_evaluate(task, agent.execute(task, rng)) == 1.0
    assert oracle_evaluate(task, agent.execute(task, rng, shared_failure=True)) == 0.0


def test_quote_requires_capabilities():
    agent = make_agent(AgentSpec("alice", capabilities=frozenset({"code"})))
    rng = np.random.default_rng(0)
    assert agent.quote(rfq_for(resource_requirements=frozenset({"data"})), rng, 1) is None
    assert agent.quote(rfq_for(resource_requirements=frozenset({"code"})), rng, 1) is not None


def test_revise_is_cheaper():
    agent = make_agent(AgentSpec("alice"))
    bid = agent.quote(rfq_for(), np.random.default_rng(0), 1)
    assert agent.revise(bid, None) is None
    assert agent.revise(bid, 0.4).estimated_cost == bid.estimated_cost * 95 // 100


def test_poisoner_corrupts():
    task = leaf()
    artifact = adversary("data_poisoner").execute(task, np.random.default_rng(0))
    assert oracle_evaluate(task, artifact) == 0.0


def test_exhauster_overspends():
    assert adversary("resource_exhauster", overspend=3.0).spend(1_000, 0.5) == 1_500
    assert make_agent(AgentSpec("alice")).spend(1_000, 0.5) == 500


def test_unresponsive_goes_silent():
    agent = adversary("unresponsive", after=4)
    assert agent.reports(10, 13)
    assert not agent.reports(10, 14)
    assert not agent.finishes()


def test_saboteur_always_challenges():
    rng = np.random.default_rng(0)
    assert all(adversary("reputation_saboteur").challenges(rng) for _ in range(10))
    assert not any(make_agent(AgentSpec("alice")).challenges(rng) for _ in range(10))


def test_low_risk_gamer_declines_hard_tasks():
    agent = adversary("low_risk_gamer", threshold=0.3)
    rng = np.random.default_rng(0)
    assert agent.quote(rfq_for(complexity=0.9, criticality=0.1), rng, 1) is None
    assert agent.quote(rfq_for(complexity=0.2, criticality=0.2), rng, 1) is not None


def test_ring_votes_pass_and_inflates_price():
    agent = adversary("colluding_ring")
    assert agent.voter().behaviour == "always_pass"
    assert agent.behaviour.price_factor == 1.5
    assert adversary("backdoor_implanter").behaviour.backdoor


def test_unreliable_agent_sometimes_fails():
    agent = make_agent(AgentSpec("alice", success_rate=0.0))
    task = leaf()
    assert oracle_evaluate(task, agent.execute(task, np.random.default_rng(1))) == pytest.approx(0.25)
