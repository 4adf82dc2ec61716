"""Minimal DER TLV handling for certificate surgery.

Only splices at the byte level: untouched elements are never re-encoded,
so results stay byte-exact.  Used to recover a precertificate's TBS from
a final certificate (drop the timestamp extension) and to locate
extension byte ranges for size accounting and mutation testing.
"""

from __future__ import annotations

TAG_SEQUENCE = 0x30
TAG_OID = 0x06
TAG_EXPLICIT_3 = 0xA3


class DerError(ValueError):
    pass


def read_tlv(buf: bytes, offset: int) -> tuple[int, int, int]:
    """Return (tag, value_start, value_end) of the TLV at offset."""
    if offset + 2 > len(buf):
        raise DerError("truncated TLV header")
    tag = buf[offset]
    i = offset + 1
    length = buf[i]
    i += 1
    if length & 0x80:
        n = length & 0x7F
        if n == 0 or n > 8 or i + n > len(buf):
            raise DerError("bad long-form length")
        length = int.from_bytes(buf[i : i + n], "big")
        i += n
    if i + length > len(buf):
        raise DerError("TLV value overruns buffer")
    return tag, i, i + length


def encode_length(length: int) -> bytes:
    if length < 0x80:
        return bytes([length])
    raw = length.to_bytes((length.bit_length() + 7) // 8, "big")
    return bytes([0x80 | len(raw)]) + raw


def encode_tlv(tag: int, value: bytes) -> bytes:
    return bytes([tag]) + encode_length(len(value)) + value


def children(buf: bytes, start: int, end: int):
    offset = start
    while offset < end:
        tag, value_start, value_end = read_tlv(buf, offset)
        yield offset, tag, value_start, value_end
        offset = value_end
    if offset != end:
        raise DerError("children do not fill the container")


def oid_value(dotted: str) -> bytes:
    """DER content octets of an OBJECT IDENTIFIER."""
    arcs = [int(part) for part in dotted.split(".")]
    if len(arcs) < 2:
        raise DerError("OID needs at least two arcs")
    out = bytearray([arcs[0] * 40 + arcs[1]])
    for arc in arcs[2:]:
        chunk = [arc & 0x7F]
        arc >>= 7
        while arc:
            chunk.append(0x80 | (arc & 0x7F))
            arc >>= 7
        out += bytes(reversed(chunk))
    return bytes(out)


def is_wellformed_sequence(buf: bytes) -> bool:
    """True when buf is exactly one SEQUENCE whose children tile its value."""
    try:
        tag, value_start, value_end = read_tlv(buf, 0)
        if tag != TAG_SEQUENCE or value_end != len(buf):
            return False
        for _ in children(buf, value_start, value_end):
            pass
        return True
    except DerError:
        return False


def _extension_list_bounds(tbs: bytes) -> tuple[int, int, int]:
    """Locate the extensions SEQUENCE inside TBS bytes.

    Returns (wrapper_offset, list_value_start, list_value_end) for the
    [3] EXPLICIT wrapper and the extension SEQUENCE inside it.
    """
    tag, tbs_start, tbs_end = read_tlv(tbs, 0)
    if tag != TAG_SEQUENCE:
        raise DerError("TBS is not a SEQUENCE")
    wrapper = None
    for offset, child_tag, value_start, value_end in children(tbs, tbs_start, tbs_end):
        if child_tag == TAG_EXPLICIT_3:
            wrapper = (offset, value_start, value_end)
    if wrapper is None:
        raise DerError("TBS has no extensions block")
    wrapper_offset, wrapper_start, wrapper_end = wrapper
    list_tag, list_start, list_end = read_tlv(tbs, wrapper_start)
    if list_tag != TAG_SEQUENCE or list_end != wrapper_end:
        raise DerError("malformed extensions block")
    return wrapper_offset, list_start, list_end


def extension_ranges(tbs: bytes) -> dict[str, tuple[int, int]]:
    """Map OID content-hex -> (start, end) of each extension TLV in TBS bytes."""
    _, list_start, list_end = _extension_list_bounds(tbs)
    ranges: dict[str, tuple[int, int]] = {}
    for offset, _tag, value_start, value_end in children(tbs, list_start, list_end):
        oid_tag, oid_start, oid_end = read_tlv(tbs, value_start)
        if oid_tag != TAG_OID:
            raise DerError("extension does not start with an OID")
        ranges[tbs[oid_start:oid_end].hex()] = (offset, value_end)
    return ranges


def replace_tbs(cert_der: bytes, new_tbs: bytes) -> bytes:
    """Re-wrap a certificate around a different TBS, keeping algorithm and
    signature bytes (the result's signature is NOT valid; size accounting only)."""
    tag, value_start, value_end = read_tlv(cert_der, 0)
    if tag != TAG_SEQUENCE or value_end != len(cert_der):
        raise DerError("not a certificate SEQUENCE")
    parts = list(children(cert_der, value_start, value_end))
    if len(parts) != 3:
        raise DerError("certificate must have exactly three elements")
    tbs_offset, _, _, tbs_end = parts[0]
    rest = cert_der[tbs_end:value_end]
    return encode_tlv(TAG_SEQUENCE, new_tbs + rest)


def strip_extension(tbs: bytes, dotted_oid: str) -> bytes:
    """TBS bytes with one extension removed and all lengths fixed up."""
    wrapper_offset, list_start, list_end = _extension_list_bounds(tbs)
    target = oid_value(dotted_oid)
    drop = None
    for offset, _tag, value_start, value_end in children(tbs, list_start, list_end):
        oid_tag, oid_start, oid_end = read_tlv(tbs, value_start)
        if oid_tag == TAG_OID and tbs[oid_start:oid_end] == target:
            drop = (offset, value_end)
    if drop is None:
        raise DerError(f"extension {dotted_oid} not present")
    new_list_value = tbs[list_start:drop[0]] + tbs[drop[1]:list_end]
    new_list = encode_tlv(TAG_SEQUENCE, new_list_value)
    new_wrapper = encode_tlv(TAG_EXPLICIT_3, new_list)
    _, tbs_start, _ = read_tlv(tbs, 0)
    new_tbs_value = tbs[tbs_start:wrapper_offset] + new_wrapper
    return encode_tlv(TAG_SEQUENCE, new_tbs_value)
