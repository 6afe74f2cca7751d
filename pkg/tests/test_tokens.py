import dataclasses

import numpy as np
import pytest

from delegsim import exc
from delegsim.tokens import (
    Caveat,
    CaveatKind,
    CapabilityToken,
    DenyReason,
    Operation,
    RequestContext,
    attenuate,
    effective_limit,
    effective_operations,
    mint_token,
    verify_token,
)
from .conftest import SECRET, authority, project_x_caveats


def _request(resource="/Project_X/doc", op=Operation.READ, now=0, depth=0, spend=0):
    return RequestContext(resource, op, now, depth, spend)


def test_project_x_read_only():
    token = mint_token(SECRET, project_x_caveats(), "t")
    assert verify_token(token, SECRET, _request()).allowed

    decision = verify_token(token, SECRET, _request(op=Operation.WRITE))
    assert not decision.allowed
    assert decision.reason is DenyReason.OPERATION
    assert decision.caveat_index == 1


def test_scope_is_a_path_prefix():
    token = mint_token(SECRET, project_x_caveats(), "t")
    assert verify_token(token, SECRET, _request(resource="/Project_X")).allowed
    decision = verify_token(token, SECRET, _request(resource="/Project_XY/doc"))
    assert decision.reason is DenyReason.SCOPE


def test_empty_caveats_grant_everything():
    token = mint_token(SECRET, [], "t")
    assert verify_token(token, SECRET, _request(resource="/anything", op=Operation.EXECUTE)).allowed


def test_flipped_tag_is_invalid_chain():
    token = mint_token(SECRET, project_x_caveats(), "t")
    tag = bytearray(token.chain_tag)
    tag[0] ^= 0x01
    forged = dataclasses.replace(token, chain_tag=bytes(tag))
    assert verify_token(forged, SECRET, _request()).reason is DenyReason.INVALID_CHAIN


def test_dropping_a_caveat_breaks_the_chain():
    token = mint_token(SECRET, project_x_caveats(), "t")
    widened = dataclasses.replace(token, caveats=token.caveats[:1])
    assert verify_token(widened, SECRET, _request(op=Operation.WRITE)).reason is DenyReason.INVALID_CHAIN


def test_wrong_secret():
    token = mint_token(SECRET, [], "t")
    assert verify_token(token, b"other", _request()).reason is DenyReason.INVALID_CHAIN


def test_expiry_boundary_is_inclusive():
    token = mint_token(SECRET, [Caveat(CaveatKind.EXPIRY, 100)], "t")
    assert verify_token(token, SECRET, _request(now=100)).allowed
    assert verify_token(token, SECRET, _request(now=101)).reason is DenyReason.EXPIRED


def test_attenuation_narrows_operations():
    token = mint_token(SECRET, [Caveat(CaveatKind.OPERATIONS, frozenset({Operation.READ, Operation.WRITE}))], "t")
    narrowed = attenuate(token, Caveat(CaveatKind.OPERATIONS, frozenset({Operation.READ})))
    assert effective_operations(narrowed) == frozenset({Operation.READ})
    assert len(token.caveats) == 1
    assert verify_token(token, SECRET, _request(op=Operation.WRITE)).allowed
    assert not verify_token(narrowed, SECRET, _request(op=Operation.WRITE)).allowed


def test_spend_cap_is_the_minimum_over_the_chain():
    token = mint_token(SECRET, [Caveat(CaveatKind.SPEND_CAP, 5_000_000)], "t")
    narrowed = attenuate(token, Caveat(CaveatKind.SPEND_CAP, 500_000))
    assert effective_limit(narrowed, CaveatKind.SPEND_CAP) == 500_000
    assert verify_token(narrowed, SECRET, _request(spend=500_000)).allowed
    assert verify_token(narrowed, SECRET, _request(spend=500_001)).reason is DenyReason.SPEND_EXCEEDED


def test_depth_exhausted_after_three_hops():
    auth = authority()
    a = auth.mint("root", [Caveat(CaveatKind.MAX_DEPTH, 3)], holder="A")
    b = auth.grant(a, [Caveat(CaveatKind.MAX_DEPTH, 2)], grantee="B")
    c = auth.grant(b, [Caveat(CaveatKind.MAX_DEPTH, 1)], grantee="C")
    d = auth.grant(c, [Caveat(CaveatKind.MAX_DEPTH, 1)], grantee="D")

    assert auth.depth_of(c) == 2
    assert not auth.verify(c, _request(depth=auth.depth_of(c))).allowed
    decision = auth.verify(d, _request(depth=auth.depth_of(d)))
    assert decision.reason is DenyReason.DEPTH_EXCEEDED


def test_revoke_agent_denies_descendants_only():
    auth = authority()
    root = auth.mint("root", [], holder="A")
    b = auth.grant(root, [], grantee="B")
    c = auth.grant(b, [], grantee="C")
    other = auth.mint("root", [], holder="X")

    notice = auth.revoke(agent="B", tick=7)
    assert notice.tick == 7
    assert len(notice.affected) == 2
    assert auth.verify(c, _request()).reason is DenyReason.REVOKED
    assert auth.verify(b, _request()).reason is DenyReason.REVOKED
    assert auth.verify(root, _request()).allowed
    assert auth.verify(other, _request()).allowed


def test_revoke_token_id_and_unknowns():
    auth = authority()
    token = auth.mint("root", [], holder="A", token_id="tok-1")
    auth.revoke(token_id="tok-1")
    assert auth.verify(token, _request()).reason is DenyReason.REVOKED

    with pytest.raises(exc.NotFound):
        auth.revoke(token_id="tok-2")
    with pytest.raises(exc.NotFound):
        auth.revoke(agent="nobody")
    with pytest.raises(ValueError):
        auth.revoke()


def test_unknown_root():
    with pytest.raises(exc.NotFound):
        authority().mint("missing", [], holder="A")


@pytest.mark.parametrize(
    "caveat",
    [
        Caveat(CaveatKind.EXPIRY, -1),
        Caveat(CaveatKind.MAX_DEPTH, True),
        Caveat(CaveatKind.RESOURCE_SCOPE, frozenset({"relative"})),
        Caveat(CaveatKind.OPERATIONS, frozenset({"READ"})),
    ],
)
def test_malformed_caveats(caveat):
    with pytest.raises(exc.InvalidCaveat):
        mint_token(SECRET, [caveat], "t")


def test_parse_command_line_caveats():
    assert Caveat.parse("operations=READ,WRITE").value == frozenset({Operation.READ, Operation.WRITE})
    assert Caveat.parse("expiry=100").value == 100
    assert Caveat.parse("resource_scope=/Project_X").value == frozenset({"/Project_X"})
    with pytest.raises(exc.InvalidCaveat):
        Caveat.parse("expiry")
    with pytest.raises(exc.InvalidCaveat):
        Caveat.parse("expiry=soon")


def test_token_dict_round_trip_still_verifies():
    token = mint_token(SECRET, project_x_caveats() + [Caveat(CaveatKind.EXPIRY, 9)], "t")
    restored = CapabilityToken.from_dict(token.to_dict())
    assert verify_token(restored, SECRET, _request(now=9)).allowed


def test_offline_attenuation_keeps_lineage():
    auth = authority()
    root = auth.mint("root", [], holder="A")
    b = auth.grant(root, [Caveat(CaveatKind.SPEND_CAP, 1_000)], grantee="B")
    narrowed = attenuate(b, Caveat(CaveatKind.EXPIRY, 50))
    narrowed = attenuate(narrowed, Caveat(CaveatKind.SPEND_CAP, 500))

    assert auth.lineage(narrowed) == ("A", "B")
    assert auth.depth_of(narrowed) == 1
    assert auth.verify(narrowed, _request()).allowed

    auth.revoke(agent="B")
    assert auth.verify(narrowed, _request()).reason is DenyReason.REVOKED
    assert auth.verify(root, _request()).allowed


def test_empty_grant_gets_its_own_tag():
    auth = authority()
    root = auth.mint("root", [], holder="A")
    b = auth.grant(root, [], grantee="B")

    assert b.chain_tag != root.chain_tag
    assert b.caveats[-1] == Caveat(CaveatKind.HOLDER, "B")
    assert auth.lineage(root) == ("A",)
    assert auth.lineage(b) == ("A", "B")


def test_holder_caveat_restricts_nothing():
    token = mint_token(SECRET, project_x_caveats(), "t")
    held = attenuate(token, Caveat.parse("holder=did:example:b"))

    assert held.caveats[-1].value == "did:example:b"
    assert verify_token(held, SECRET, _request()).allowed
    assert CapabilityToken.from_dict(held.to_dict()) == held
    with pytest.raises(exc.InvalidCaveat):
        attenuate(token, Caveat(CaveatKind.HOLDER, ""))


PATHS = ("/a", "/a/b", "/c")
RESOURCES = ("/a", "/a/b", "/a/b/c", "/c", "/d")
OPERATIONS = tuple(Operation)


def random_caveat(rng):
    kind = list(CaveatKind)[int(rng.integers(0, len(CaveatKind)))]
    if kind is CaveatKind.RESOURCE_SCOPE:
        value = frozenset(p for p in PATHS if rng.random() < 0.6)
    elif kind is CaveatKind.OPERATIONS:
        value = frozenset(op for op in OPERATIONS if rng.random() < 0.7)
    elif kind is CaveatKind.HOLDER:
        value = f"agent-{int(rng.integers(0, 5))}"
    elif kind is CaveatKind.SPEND_CAP:
        value = int(rng.integers(0, 1_000))
    else:
        value = int(rng.integers(0, 20))
    return Caveat(kind, value)


def random_request(rng):
    return RequestContext(
        resource=RESOURCES[int(rng.integers(0, len(RESOURCES)))],
        operation=OPERATIONS[int(rng.integers(0, len(OPERATIONS)))],
        now=int(rng.integers(0, 20)),
        depth=int(rng.integers(0, 20)),
        spend=int(rng.integers(0, 1_000)),
    )


def flip_bit(data, bit):
    flipped = bytearray(data)
    flipped[bit // 8] ^= 1 << (bit % 8)
    return bytes(flipped)


@pytest.mark.parametrize("block", range(10))
def test_attenuation_is_monotone_and_tamper_evident(block):
    rng = np.random.default_rng(block)
    allowed = 0
    for case in range(1_000):
        chain = [random_caveat(rng) for _ in range(int(rng.integers(0, 8)))]
        token = mint_token(SECRET, chain, f"t{block}-{case}")
        narrowed = attenuate(token, random_caveat(rng))
        request = random_request(rng)

        after = verify_token(narrowed, SECRET, request)
        if after.allowed:
            allowed += 1
            assert verify_token(token, SECRET, request).allowed

        bit = int(rng.integers(0, len(narrowed.chain_tag) * 8))
        forged = dataclasses.replace(narrowed, chain_tag=flip_bit(narrowed.chain_tag, bit))
        assert verify_token(forged, SECRET, request).reason is DenyReason.INVALID_CHAIN
    # the sweep must exercise the allow branch, not only denials
    assert allowed > 0
