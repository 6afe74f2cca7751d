import dataclasses

import pytest

from delegsim import exc
from delegsim.identity import (
    Claim,
    CredentialWallet,
    KeyRegistry,
    VerifiableCredential,
    agent_id_for,
    issue_credential,
)
from .conftest import registry


def test_create_is_deterministic():
    assert KeyRegistry().create("alice").id == KeyRegistry().create("alice").id
    assert agent_id_for("alice").startswith("did:sim:")
    assert agent_id_for("alice") != agent_id_for("bob")


def test_duplicate_and_malformed_ids():
    reg, _ = registry("alice")
    with pytest.raises(exc.DuplicateAgent):
        reg.create("alice")
    with pytest.raises(ValueError):
        reg.register("alice", b"secret")


def test_unknown_agent():
    reg = KeyRegistry()
    with pytest.raises(exc.UnknownAgent):
        reg.get("did:sim:00")
    assert not reg.check("did:sim:00", b"x", b"y")


def test_envelope_round_trip_and_tamper():
    reg, (alice,) = registry("alice")
    envelope = reg.sign(alice, b"payload")
    assert reg.verify(envelope)
    assert not reg.verify(dataclasses.replace(envelope, payload=b"payloaD"))


def _credential():
    reg, (issuer, subject) = registry("issuer", "subject")
    claim = Claim("task_completed", "t1", 12, "ab" * 32, 0.9)
    return reg, issue_credential(reg, issuer, subject, claim)


def test_credential_verifies_until_mutated():
    reg, credential = _credential()
    assert credential.verify(reg)

    mutated = dataclasses.replace(credential, claim=dataclasses.replace(credential.claim, quality=1.0))
    assert not mutated.verify(reg)
    assert not dataclasses.replace(credential, subject=credential.issuer).verify(reg)


def test_credential_dict_round_trip():
    reg, credential = _credential()
    restored = VerifiableCredential.from_dict(credential.to_dict())
    assert restored == credential
    assert restored.verify(reg)


def test_claim_quality_range():
    with pytest.raises(exc.InvalidCredential):
        Claim("task_completed", "t1", 0, "", 1.5)


def test_wallet_certify_and_reject_forgery():
    reg, (issuer, subject, forger) = registry("issuer", "subject", "forger")
    wallet = CredentialWallet(reg)
    wallet.certify(issuer, subject, "auditor")
    assert wallet.has(subject, "auditor")
    assert not wallet.has(subject, "human_reviewer")

    good = issue_credential(reg, issuer, subject, Claim("human_reviewer", "", 0, "", 1.0))
    forged = dataclasses.replace(good, issuer=forger)
    with pytest.raises(exc.InvalidCredential):
        wallet.add(forged)
    assert wallet.kinds(subject) == frozenset({"auditor"})
