"""Canonical byte encoding shared by every signed or tagged message.

Fields are framed as a 4-byte big-endian length followed by the field bytes,
in declared order. Integers are 8-byte big-endian two's complement, floats
are IEEE-754 big-endian doubles, strings are UTF-8. Containers encode an
element count followed by framed elements; sets and mappings are sorted so
equal values always produce equal bytes.
"""

__all__ = [
    "encode",
    "frame",
    "canonical_bytes",
    "digest",
    "mac",
    "tags_equal",
    "to_hex",
    "from_hex",
    "canonical_json",
    "DIGEST_SIZE",
]

import dataclasses
import enum
import hashlib
import hmac
import json
import struct
from typing import Any, Mapping

DIGEST_SIZE = 32


def frame(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def encode(value: Any) -> bytes:
    """Encode a value into its canonical bytes.

    Args:
        value:
            bytes, str, bool, int, float, None, Enum, dataclass instance,
            sequence, set or mapping of the above.

    Raises:
        TypeError: if the value has no canonical encoding.
    """

    if value is None:
        return b""
    if isinstance(value, enum.Enum):
        return encode(value.value)
    if isinstance(value, (bytes, bytearray)):
        return bytes(value)
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        return value.to_bytes(8, "big", signed=True)
    if isinstance(value, float):
        return struct.pack(">d", value)
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return b"".join(
            frame(encode(getattr(value, f.name))) for f in dataclasses.fields(value)
        )
    if isinstance(value, Mapping):
        items = sorted((encode(k), encode(v)) for k, v in value.items())
        body = b"".join(frame(k) + frame(v) for k, v in items)
        return struct.pack(">I", len(items)) + body
    if isinstance(value, (set, frozenset)):
        parts = sorted(encode(v) for v in value)
        return struct.pack(">I", len(parts)) + b"".join(frame(p) for p in parts)
    if isinstance(value, (list, tuple)):
        return struct.pack(">I", len(value)) + b"".join(
            frame(encode(v)) for v in value
        )

    raise TypeError(f"no canonical encoding for {type(value).__name__}")


def canonical_bytes(*values: Any) -> bytes:
    """Concatenate the framed encodings of ``values`` in order."""

    return b"".join(frame(encode(v)) for v in values)


def digest(data: bytes) -> bytes:
    """32-byte SHA-256 digest."""

    return hashlib.sha256(data).digest()


def mac(key: bytes, data: bytes) -> bytes:
    """32-byte HMAC-SHA256 tag of ``data`` under ``key``."""

    return hmac.new(key, data, hashlib.sha256).digest()


def tags_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


def to_hex(data: bytes) -> str:
    return data.hex()


def from_hex(text: str) -> bytes:
    if text.startswith("0x"):
        text = text[2:]
    return bytes.fromhex(text)


def canonical_json(obj: Any) -> str:
    """Single-line JSON with sorted keys and no insignificant whitespace."""

    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
