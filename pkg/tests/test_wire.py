import pytest

from delegsim import wire


def test_frame_prefixes_length():
    assert wire.frame(b"abc") == b"\x00\x00\x00\x03abc"


def test_int_is_eight_bytes_big_endian():
    assert wire.encode(1) == b"\x00" * 7 + b"\x01"
    assert wire.encode(-1) == b"\xff" * 8


def test_bool_is_not_an_int():
    assert wire.encode(True) == b"\x01"
    assert wire.encode(False) == b"\x00"


def test_sets_and_mappings_are_order_free():
    assert wire.encode({"b", "a"}) == wire.encode(frozenset(["a", "b"]))
    assert wire.encode({"x": 1, "y": 2}) == wire.encode({"y": 2, "x": 1})


def test_field_boundaries_are_unambiguous():
    assert wire.canonical_bytes("ab", "c") != wire.canonical_bytes("a", "bc")


def test_unknown_type_raises():
    with pytest.raises(TypeError):
        wire.encode(object())


def test_digest_and_mac_sizes():
    assert len(wire.digest(b"x")) == wire.DIGEST_SIZE
    assert len(wire.mac(b"k", b"x")) == wire.DIGEST_SIZE
    assert wire.mac(b"k", b"x") != wire.mac(b"j", b"x")


def test_hex_accepts_prefix():
    assert wire.from_hex("0x" + wire.to_hex(b"\x01\x02")) == b"\x01\x02"


def test_canonical_json_sorts_keys():
    assert wire.canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
