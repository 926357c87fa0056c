"""Deterministic, injective serialization used for every hash and signature.

Each value is ``tag (1 byte) | length (4 bytes, big-endian) | body``.  Maps are
written with keys sorted by their UTF-8 bytes, integers as minimal big-endian
magnitudes with the sign carried in the tag.  Decoding is strict: anything an
encoder would not have produced is rejected, so ``decode(encode(v)) == v`` and
distinct values never share an encoding.

Tuples are accepted on input and come back as lists.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Any

from .errors import EncodingFailure

_NONE = b"N"
_TRUE = b"T"
_FALSE = b"F"
_POS = b"I"
_NEG = b"J"
_BYTES = b"B"
_STR = b"S"
_LIST = b"L"
_MAP = b"M"

_HEADER = struct.Struct(">cI")


def _int_body(n: int) -> bytes:
    n = abs(n)
    return n.to_bytes((n.bit_length() + 7) // 8, "big") if n else b""


def _encode(value: Any, out: list[bytes]) -> None:
    if value is None:
        out.append(_HEADER.pack(_NONE, 0))
    elif value is True:
        out.append(_HEADER.pack(_TRUE, 0))
    elif value is False:
        out.append(_HEADER.pack(_FALSE, 0))
    elif isinstance(value, int):
        body = _int_body(value)
        out.append(_HEADER.pack(_NEG if value < 0 else _POS, len(body)))
        out.append(body)
    elif isinstance(value, (bytes, bytearray, memoryview)):
        body = bytes(value)
        out.append(_HEADER.pack(_BYTES, len(body)))
        out.append(body)
    elif isinstance(value, str):
        body = value.encode("utf-8")
        out.append(_HEADER.pack(_STR, len(body)))
        out.append(body)
    elif isinstance(value, (list, tuple)):
        parts: list[bytes] = []
        for item in value:
            _encode(item, parts)
        body = b"".join(parts)
        out.append(_HEADER.pack(_LIST, len(body)))
        out.append(body)
    elif isinstance(value, dict):
        keyed = []
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingFailure(f"map keys must be str, got {type(key).__name__}")
            keyed.append((key.encode("utf-8"), key, item))
        keyed.sort(key=lambda t: t[0])
        parts = []
        for _, key, item in keyed:
            _encode(key, parts)
            _encode(item, parts)
        body = b"".join(parts)
        out.append(_HEADER.pack(_MAP, len(body)))
        out.append(body)
    else:
        raise EncodingFailure(f"cannot encode {type(value).__name__}")


def encode(value: Any) -> bytes:
    out: list[bytes] = []
    _encode(value, out)
    return b"".join(out)


def _decode(buf: bytes, pos: int) -> tuple[Any, int]:
    if pos + _HEADER.size > len(buf):
        raise EncodingFailure("truncated header")
    tag, length = _HEADER.unpack_from(buf, pos)
    start = pos + _HEADER.size
    end = start + length
    if end > len(buf):
        raise EncodingFailure("truncated body")
    body = buf[start:end]
    if tag in (_NONE, _TRUE, _FALSE):
        if length:
            raise EncodingFailure("constant with body")
        return {_NONE: None, _TRUE: True, _FALSE: False}[tag], end
    if tag in (_POS, _NEG):
        if length and body[0] == 0:
            raise EncodingFailure("non-minimal integer")
        if tag == _NEG and not length:
            raise EncodingFailure("negative zero")
        n = int.from_bytes(body, "big")
        return (-n if tag == _NEG else n), end
    if tag == _BYTES:
        return bytes(body), end
    if tag == _STR:
        try:
            return body.decode("utf-8"), end
        except UnicodeDecodeError as exc:
            raise EncodingFailure("invalid utf-8") from exc
    if tag == _LIST:
        items = []
        p = start
        while p < end:
            item, p = _decode(buf[:end], p)
            items.append(item)
        return items, end
    if tag == _MAP:
        result: dict[str, Any] = {}
        p = start
        prev: bytes | None = None
        while p < end:
            key, p = _decode(buf[:end], p)
            if not isinstance(key, str):
                raise EncodingFailure("map key is not a string")
            raw = key.encode("utf-8")
            if prev is not None and raw <= prev:
                raise EncodingFailure("map keys unsorted or duplicated")
            prev = raw
            if p >= end:
                raise EncodingFailure("map key without value")
            result[key], p = _decode(buf[:end], p)
        return result, end
    raise EncodingFailure(f"unknown tag {tag!r}")


def decode(data: bytes) -> Any:
    value, end = _decode(bytes(data), 0)
    if end != len(data):
        raise EncodingFailure("trailing bytes")
    return value


def digest(value: Any) -> bytes:
    """SHA-256 of the canonical encoding."""
    return hashlib.sha256(encode(value)).digest()
