"""Byte-level helpers shared by the crypto and log modules."""

from __future__ import annotations

import base64
import struct


def b64url_encode(data: bytes) -> bytes:
    """Unpadded base64url per RFC 7515 appendix C."""
    return base64.urlsafe_b64encode(data).rstrip(b"=")


def b64url_decode(data: bytes | str) -> bytes:
    if isinstance(data, str):
        data = data.encode("ascii")
    pad = -len(data) % 4
    if pad == 3:
        raise ValueError("invalid base64url length")
    return base64.urlsafe_b64decode(data + b"=" * pad)


def int_to_bytes(value: int, length: int | None = None) -> bytes:
    """Big-endian encoding; minimal width unless a fixed length is given."""
    if value < 0:
        raise ValueError("negative integers are not encodable")
    if length is None:
        length = max(1, (value.bit_length() + 7) // 8)
    return value.to_bytes(length, "big")


def int_from_bytes(data: bytes) -> int:
    return int.from_bytes(data, "big")


def length_prefixed(data: bytes) -> bytes:
    """4-byte big-endian length prefix; makes hash transcripts injective."""
    return struct.pack(">I", len(data)) + data


def u64be(value: int) -> bytes:
    return struct.pack(">Q", value)
