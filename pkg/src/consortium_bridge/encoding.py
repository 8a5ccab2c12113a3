"""Canonical, type-tagged serialization used for every digest in the package.

The format is length-prefixed and key-sorted so that two equal values always
hash identically, independent of dict insertion order or hash seeds.
"""
from __future__ import annotations

import dataclasses
import hashlib
from enum import Enum
from fractions import Fraction
from typing import Any


def _len(n: int) -> bytes:
    return n.to_bytes(4, "big")


def _int(value: int) -> bytes:
    size = max(1, (value.bit_length() + 8) // 8)
    raw = value.to_bytes(size, "big", signed=True)
    return _len(len(raw)) + raw


def canonical(obj: Any) -> bytes:
    """Encode ``obj`` deterministically.

    Supports None, bool, int, str, bytes, Fraction, Enum, tuples/lists,
    dicts, sets, dataclasses, and objects exposing ``__canonical__()``.
    """
    hook = getattr(obj, "__canonical__", None)
    if hook is not None:
        raw = hook()
        return b"X" + _len(len(raw)) + raw
    if obj is None:
        return b"N"
    if obj is True:
        return b"T"
    if obj is False:
        return b"F"
    if isinstance(obj, Enum):
        return b"V" + canonical(obj.value)
    if isinstance(obj, int):
        return b"I" + _int(obj)
    if isinstance(obj, str):
        raw = obj.encode("utf-8")
        return b"S" + _len(len(raw)) + raw
    if isinstance(obj, (bytes, bytearray, memoryview)):
        raw = bytes(obj)
        return b"B" + _len(len(raw)) + raw
    if isinstance(obj, Fraction):
        return b"Q" + _int(obj.numerator) + _int(obj.denominator)
    if isinstance(obj, float):
        # floats only appear in configuration; repr is exact and stable
        raw = repr(obj).encode()
        return b"R" + _len(len(raw)) + raw
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        name = type(obj).__name__.encode()
        parts = [b"C", _len(len(name)), name]
        for f in dataclasses.fields(obj):
            if f.metadata.get("canonical", True):
                parts.append(canonical(getattr(obj, f.name)))
        return b"".join(parts)
    if isinstance(obj, (tuple, list)):
        return b"L" + _len(len(obj)) + b"".join(canonical(x) for x in obj)
    if isinstance(obj, dict):
        items = sorted((canonical(k), canonical(v)) for k, v in obj.items())
        return b"D" + _len(len(items)) + b"".join(k + v for k, v in items)
    if isinstance(obj, (set, frozenset)):
        items = sorted(canonical(x) for x in obj)
        return b"E" + _len(len(items)) + b"".join(items)
    raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def digest(obj: Any) -> bytes:
    return hashlib.sha256(canonical(obj)).digest()


def hexdigest(obj: Any, length: int = 64) -> str:
    return digest(obj).hex()[:length]


def length_prefixed(*fields: bytes) -> bytes:
    return b"".join(_len(len(f)) + f for f in fields)


def split_length_prefixed(data: bytes, count: int) -> list[bytes]:
    """Inverse of :func:`length_prefixed`; raises ValueError on malformed input."""
    out = []
    pos = 0
    for _ in range(count):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        size = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + size > len(data):
            raise ValueError("field overruns buffer")
        out.append(data[pos:pos + size])
        pos += size
    if pos != len(data):
        raise ValueError("trailing bytes")
    return out
