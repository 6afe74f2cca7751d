import dataclasses
import itertools

import pytest

from delegsim import exc
from delegsim.config import VerificationConfig
from delegsim.identity import CredentialWallet
from delegsim.ledger import REWARD_POOL, TREASURY
from delegsim.tasks import expected_digest, produce_artifact
from delegsim.verification import (
    AUDITOR_CERTIFICATION,
    ArtifactRequirement,
    Mechanism,
    VerificationMode,
    VerificationPolicy,
    Voter,
    make_proof,
    schelling_consensus,
    verify_chain,
    verify_direct,
    verify_proof,
    verify_third_party,
)
from .conftest import attestation_chain, funded, leaf, registry

KEY = b"proof-key"


def test_direct_verdicts():
    task = leaf()
    honest = verify_direct(produce_artifact(task, "p"), task)
    assert (honest.passed, honest.quality, honest.mechanism) == (True, 1.0, Mechanism.DIRECT)
    broken = verify_direct(produce_artifact(task, "p", corruption=1.0), task)
    assert (broken.passed, broken.quality) == (False, 0.0)


def test_direct_threshold_is_inclusive():
    task = leaf()
    artifact = produce_artifact(task, "p", corruption=0.5)
    assert verify_direct(artifact, task, config=VerificationConfig(pass_threshold=0.25)).passed
    assert not verify_direct(artifact, task, config=VerificationConfig(pass_threshold=0.26)).passed


def test_direct_needs_verifiable_task():
    task = leaf(verifiability=0.2)
    with pytest.raises(exc.MechanismUnavailable):
        verify_direct(produce_artifact(task, "p"), task)


def test_proof_checks():
    task = leaf()
    output = expected_digest(task)
    proof = make_proof(KEY, "prog", b"\x00" * 32, output)
    assert verify_proof(proof, b"\x00" * 32, output, KEY).passed

    flipped = bytes([output[0] ^ 1]) + output[1:]
    assert not verify_proof(proof, b"\x00" * 32, flipped, KEY).passed
    assert not verify_proof(make_proof(KEY, "prog", b"\x00" * 32, flipped), b"\x00" * 32, output, KEY).passed
    assert not verify_proof(proof, b"\x00" * 32, output, b"wrong-key").passed


def test_proof_fee_is_flat():
    accounts = funded(boss=1_000_000)
    for cost in (1, 10 ** 9):
        task = leaf(cost_est=cost)
        output = expected_digest(task)
        verify_proof(make_proof(KEY, "p", b"", output), b"", output, KEY, accounts=accounts, payer="boss")
    assert accounts.balance(TREASURY) == 2 * 5_000


def test_third_party_audit():
    reg, [auditor, issuer] = registry("auditor", "issuer")
    wallet = CredentialWallet(reg)
    task = leaf()
    artifact = produce_artifact(task, "p")
    with pytest.raises(exc.UncertifiedAuditor):
        verify_third_party(artifact, task, auditor, reg, wallet)

    wallet.certify(issuer, auditor, AUDITOR_CERTIFICATION)
    verdict = verify_third_party(artifact, task, auditor, reg, wallet)
    assert verdict.passed
    assert verdict.verifiers == (auditor,)
    assert len(verdict.signatures) == 1

    bad = produce_artifact(task, "p", corruption=1.0)
    assert verify_third_party(bad, task, auditor, reg, wallet, compromised=True).passed


def test_audit_validator_capability():
    reg, [auditor, issuer] = registry("auditor", "issuer")
    wallet = CredentialWallet(reg)
    wallet.certify(issuer, auditor, AUDITOR_CERTIFICATION)
    policy = VerificationPolicy(
        VerificationMode.STANDARD, (ArtifactRequirement("audit_report", validator="pytest_v8"),)
    )
    task = leaf()
    with pytest.raises(exc.UncertifiedAuditor):
        verify_third_party(produce_artifact(task, "p"), task, auditor, reg, wallet, policy)


def panel(*behaviours):
    reg, ids = registry(*[f"v{i}" for i in range(len(behaviours))])
    return reg, [Voter(agent, b) for agent, b in zip(ids, behaviours)]


def test_unanimous_panel():
    reg, voters = panel("honest", "honest", "honest")
    task = leaf()
    result = schelling_consensus(produce_artifact(task, "p"), task, voters, 30_000, reg)
    assert result.verdict.passed
    assert sorted(result.rewards.values()) == [10_000] * 3


def test_dissenter_gets_nothing():
    reg, voters = panel("honest", "honest", "invert")
    task = leaf()
    result = schelling_consensus(produce_artifact(task, "p"), task, voters, 30_000, reg)
    assert result.verdict.passed
    assert result.verdict.evidence == ("panel:2/3",)
    assert result.rewards[voters[2].agent] == 0
    assert result.rewards[voters[0].agent] == result.rewards[voters[1].agent] == 15_000


def test_colluding_majority_wins():
    reg, voters = panel("honest", "always_pass", "always_pass")
    task = leaf()
    result = schelling_consensus(produce_artifact(task, "p", corruption=1.0), task, voters, 30_000, reg)
    assert result.verdict.passed


def test_rewards_sum_to_pool():
    reg, voters = panel("honest", "honest", "honest")
    task = leaf()
    accounts = funded(**{REWARD_POOL: 10})
    result = schelling_consensus(produce_artifact(task, "p"), task, voters, 10, reg, accounts=accounts)
    first = min(v.agent for v in voters)
    assert sum(result.rewards.values()) == 10
    assert result.rewards[first] == 4
    assert accounts.balance(REWARD_POOL) == 0


def test_invalid_panels():
    reg, voters = panel("honest", "honest")
    task = leaf()
    with pytest.raises(exc.InvalidPanel):
        schelling_consensus(produce_artifact(task, "p"), task, voters, 10, reg)
    reg, voters = panel("honest", "honest", "honest")
    with pytest.raises(exc.InvalidPanel):
        schelling_consensus(produce_artifact(task, "p"), task, voters, 0, reg)


def test_honest_mechanisms_agree():
    reg, [auditor, issuer, *ids] = registry("auditor", "issuer", "v0", "v1", "v2")
    wallet = CredentialWallet(reg)
    wallet.certify(issuer, auditor, AUDITOR_CERTIFICATION)
    for corruption in (0.0, 0.5, 1.0):
        task = leaf()
        artifact = produce_artifact(task, "p", corruption=corruption)
        proof = make_proof(KEY, "p", b"", artifact.content_digest)
        verdicts = [
            verify_direct(artifact, task).passed,
            verify_third_party(artifact, task, auditor, reg, wallet).passed,
            schelling_consensus(artifact, task, [Voter(i) for i in ids], 3, reg).verdict.passed,
            verify_proof(proof, b"", expected_digest(task), KEY).passed,
        ]
        assert len(set(verdicts)) == 1


def test_chain_both_stages():
    reg, _, relationships, chain, children = attestation_chain("a", "b", "c", "d")
    task = leaf()
    work = verify_direct(produce_artifact(task, "p"), task)
    result = verify_chain(work, chain, reg, relationships, children_of=children, root_task="root")
    assert result.verdict.passed
    assert result.stage is None
    assert len(chain) == 3


def test_chain_fails_at_stage_two():
    reg, ids, relationships, chain, _ = attestation_chain("a", "b", "c")
    chain[1] = dataclasses.replace(chain[1], embedded_in="forged")
    task = leaf()
    work = verify_direct(produce_artifact(task, "p"), task)
    result = verify_chain(work, chain, reg, relationships)
    assert not result.verdict.passed
    assert result.stage == 2
    assert result.chain.locus == f"{ids[1]}->{ids[2]}"


def test_chain_fails_at_stage_one():
    reg, _, relationships, chain, _ = attestation_chain("a", "b")
    task = leaf()
    work = verify_direct(produce_artifact(task, "p", corruption=1.0), task)
    assert verify_chain(work, chain, reg, relationships).stage == 1


@pytest.mark.parametrize("k", [3, 5])
def test_every_vote_pattern_pays_the_majority(k):
    task = leaf()
    artifact = produce_artifact(task, "p")
    pool = 1_001
    for pattern in itertools.product([True, False], repeat=k):
        reg, voters = panel(*["always_pass" if vote else "always_fail" for vote in pattern])
        result = schelling_consensus(artifact, task, voters, pool, reg)
        yes = sum(pattern)
        assert result.verdict.passed == (yes * 2 > k)
        assert result.verdict.evidence == (f"panel:{yes}/{k}",)

        votes = {voter.agent: vote for voter, vote in zip(voters, pattern)}
        majority = sorted(agent for agent, vote in votes.items() if vote == result.verdict.passed)
        share, remainder = divmod(pool, len(majority))
        for agent, vote in votes.items():
            if agent not in majority:
                assert result.rewards[agent] == 0
            elif agent == majority[0]:
                assert result.rewards[agent] == share + remainder
            else:
                assert result.rewards[agent] == share
        assert sum(result.rewards.values()) == pool
