"""Append-only Merkle tree with the RFC 6962 hashing convention.

Leaf hashes are SHA-256 over a 0x00 prefix, interior nodes over 0x01, and
an n-leaf tree splits at the largest power of two below n.  Inclusion and
consistency proofs follow the certificate-transparency algorithms so test
vectors interoperate.
"""

from __future__ import annotations

import hashlib

EMPTY_ROOT = hashlib.sha256(b"").digest()


def leaf_hash(data: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + data).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


def _split(n: int) -> int:
    """Largest power of two strictly below n (n >= 2)."""
    return 1 << (n - 1).bit_length() - 1


def _root(hashes) -> bytes:
    n = len(hashes)
    if n == 0:
        return EMPTY_ROOT
    if n == 1:
        return hashes[0]
    k = _split(n)
    return node_hash(_root(hashes[:k]), _root(hashes[k:]))


def _path(index: int, hashes) -> list[bytes]:
    n = len(hashes)
    if n == 1:
        return []
    k = _split(n)
    if index < k:
        return _path(index, hashes[:k]) + [_root(hashes[k:])]
    return _path(index - k, hashes[k:]) + [_root(hashes[:k])]


def _subproof(m: int, hashes, whole: bool) -> list[bytes]:
    n = len(hashes)
    if m == n:
        return [] if whole else [_root(hashes)]
    k = _split(n)
    if m <= k:
        return _subproof(m, hashes[:k], whole) + [_root(hashes[k:])]
    return _subproof(m - k, hashes[k:], False) + [_root(hashes[:k])]


class MerkleTree:
    """Stores leaf hashes; roots and proofs are recomputed on demand."""

    def __init__(self):
        self._leaves: list[bytes] = []

    def __len__(self) -> int:
        return len(self._leaves)

    def append_leaf(self, data: bytes) -> int:
        self._leaves.append(leaf_hash(data))
        return len(self._leaves) - 1

    def leaf(self, index: int) -> bytes:
        return self._leaves[index]

    def root(self, size: int | None = None) -> bytes:
        size = len(self._leaves) if size is None else size
        if not 0 <= size <= len(self._leaves):
            raise IndexError(f"size {size} out of range")
        return _root(self._leaves[:size])

    def inclusion_path(self, index: int, size: int) -> list[bytes]:
        if not 0 <= index < size <= len(self._leaves):
            raise IndexError(f"leaf {index} not in tree of size {size}")
        return _path(index, self._leaves[:size])

    def consistency_path(self, old_size: int, new_size: int) -> list[bytes]:
        if not 0 < old_size <= new_size <= len(self._leaves):
            raise IndexError(f"sizes ({old_size}, {new_size}) out of range")
        if old_size == new_size:
            return []
        return _subproof(old_size, self._leaves[:new_size], True)


def verify_inclusion(leaf: bytes, index: int, size: int, path: list[bytes], root: bytes) -> bool:
    """RFC 9162 inclusion-proof verification."""
    if index >= size or size < 1:
        return False
    fn, sn = index, size - 1
    acc = leaf
    for node in path:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            acc = node_hash(node, acc)
            if not fn & 1:
                while fn & 1 == 0 and fn != 0:
                    fn >>= 1
                    sn >>= 1
        else:
            acc = node_hash(acc, node)
        fn >>= 1
        sn >>= 1
    return sn == 0 and acc == root


def verify_consistency(old_size: int, new_size: int, old_root: bytes, new_root: bytes, path: list[bytes]) -> bool:
    """RFC 9162 consistency-proof verification."""
    if old_size < 1 or old_size > new_size:
        return False
    if old_size == new_size:
        return not path and old_root == new_root
    if not path:
        return False
    # When the old size is a power of two the old root itself starts the walk.
    if old_size & (old_size - 1) == 0:
        path = [old_root] + list(path)
    fn, sn = old_size - 1, new_size - 1
    while fn & 1:
        fn >>= 1
        sn >>= 1
    fr = sr = path[0]
    for node in path[1:]:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            fr = node_hash(node, fr)
            sr = node_hash(node, sr)
            if not fn & 1:
                while fn & 1 == 0 and fn != 0:
                    fn >>= 1
                    sn >>= 1
        else:
            sr = node_hash(sr, node)
        fn >>= 1
        sn >>= 1
    return sn == 0 and fr == old_root and sr == new_root
