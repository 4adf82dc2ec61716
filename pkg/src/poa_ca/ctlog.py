"""Minimal certificate-transparency log.

Accepts precertificate TBS bytes, answers with a signed timestamp, and
keeps the submissions in an inclusion-provable append-only tree (the same
Merkle machinery as the JWK Ledger).  Identical submissions are not
deduplicated: re-issuance is legitimate and each gets its own leaf.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, replace

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .der import is_wellformed_sequence
from .encoding import u64be
from .ledger import ConsistencyProof, InclusionProof, LedgerRangeError, SignedDigest
from .merkle import MerkleTree, leaf_hash


class CtError(Exception):
    pass


class MalformedTbs(CtError):
    pass


def _raw_public_bytes(key: Ed25519PublicKey) -> bytes:
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def log_id_for_key(key: Ed25519PublicKey) -> bytes:
    return hashlib.sha256(_raw_public_bytes(key)).digest()


@dataclass(frozen=True)
class Sct:
    """Signed promise to log a precertificate; its timestamp doubles as the
    verifier's notion of "current time"."""

    log_id: bytes
    timestamp_ms: int
    signature: bytes

    @staticmethod
    def signed_payload(log_id: bytes, timestamp_ms: int, tbs_hash: bytes) -> bytes:
        return log_id + u64be(timestamp_ms) + tbs_hash

    def to_json(self) -> dict:
        return {
            "log_id": self.log_id.hex(),
            "timestamp_ms": self.timestamp_ms,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Sct":
        return cls(
            log_id=bytes.fromhex(obj["log_id"]),
            timestamp_ms=obj["timestamp_ms"],
            signature=bytes.fromhex(obj["signature"]),
        )


def verify_sct(sct: Sct, tbs_bytes: bytes, ct_key: Ed25519PublicKey) -> bool:
    if sct.log_id != log_id_for_key(ct_key):
        return False
    tbs_hash = hashlib.sha256(tbs_bytes).digest()
    try:
        ct_key.verify(sct.signature, Sct.signed_payload(sct.log_id, sct.timestamp_ms, tbs_hash))
        return True
    except InvalidSignature:
        return False


class CtLog:
    def __init__(self, signing_key: Ed25519PrivateKey | None = None, clock=None):
        self._key = signing_key or Ed25519PrivateKey.generate()
        self._clock = clock or (lambda: int(time.time()))
        self._lock = threading.RLock()
        self._tree = MerkleTree()
        self._tbs_hashes: list[bytes] = []
        self.log_id = log_id_for_key(self._key.public_key())

    def public_key(self) -> Ed25519PublicKey:
        return self._key.public_key()

    @property
    def size(self) -> int:
        return len(self._tbs_hashes)

    def submit_precert(self, tbs_bytes: bytes, now: int | None = None) -> tuple[Sct, int]:
        """Append the precertificate and return (SCT, leaf index)."""
        if not is_wellformed_sequence(tbs_bytes):
            raise MalformedTbs("submission does not parse as a TBS structure")
        with self._lock:
            now = self._clock() if now is None else now
            timestamp_ms = now * 1000
            tbs_hash = hashlib.sha256(tbs_bytes).digest()
            index = self._tree.append_leaf(tbs_bytes)
            self._tbs_hashes.append(tbs_hash)
            signature = self._key.sign(Sct.signed_payload(self.log_id, timestamp_ms, tbs_hash))
            return Sct(log_id=self.log_id, timestamp_ms=timestamp_ms, signature=signature), index

    def lookup(self, tbs_hash: bytes) -> int | None:
        """Most recent leaf index whose submission hashes to tbs_hash."""
        with self._lock:
            for index in range(len(self._tbs_hashes) - 1, -1, -1):
                if self._tbs_hashes[index] == tbs_hash:
                    return index
            return None

    def digest(self, now: int | None = None) -> SignedDigest:
        with self._lock:
            now = self._clock() if now is None else now
            size = len(self._tbs_hashes)
            unsigned = SignedDigest(tree_size=size, root_hash=self._tree.root(size), timestamp=now, log_signature=b"")
            return replace(unsigned, log_signature=self._key.sign(unsigned.signed_bytes))

    def prove_inclusion(self, index: int, tree_size: int) -> InclusionProof:
        with self._lock:
            try:
                path = self._tree.inclusion_path(index, tree_size)
            except IndexError as exc:
                raise LedgerRangeError(str(exc)) from None
            return InclusionProof(leaf_index=index, tree_size=tree_size, path=tuple(path))

    def prove_consistency(self, old_size: int, new_size: int) -> ConsistencyProof:
        with self._lock:
            try:
                path = self._tree.consistency_path(old_size, new_size)
            except IndexError as exc:
                raise LedgerRangeError(str(exc)) from None
            return ConsistencyProof(old_size=old_size, new_size=new_size, path=tuple(path))

    def leaf_hash_at(self, index: int) -> bytes:
        with self._lock:
            return self._tree.leaf(index)


def ct_leaf_hash(tbs_bytes: bytes) -> bytes:
    return leaf_hash(tbs_bytes)
