"""The JWK Ledger: an append-only log of timestamped JWKS snapshots.

Every change to an issuer's key set becomes one Merkle leaf.  The log
signs a digest over (tree size, root, timestamp) and independent
witnesses cosign it after re-verifying the update; clients accept a
digest only with a quorum of cosignatures.  A query for "the key set at
time T" is answered with two adjacent entries whose timestamps bracket T,
both proven included under one cosigned digest.
"""

from __future__ import annotations

import logging
import threading
import time
from bisect import bisect_right
from dataclasses import dataclass, replace

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .encoding import length_prefixed, u64be
from .jose import Jwks, canonical_jwks
from .merkle import MerkleTree, leaf_hash, verify_consistency, verify_inclusion

logger = logging.getLogger(__name__)

WITNESS_CLOCK_SKEW = 120


class LedgerError(Exception):
    pass


class UnknownAtTime(LedgerError):
    """No recorded key set covers the requested time."""


class LedgerRangeError(LedgerError):
    pass


class WitnessRefusal(LedgerError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

def entry_body(issuer: str, recorded_at: int, jwks: Jwks) -> bytes:
    """Canonical leaf bytes: length-prefixed issuer, 8-byte time, sorted JWKS JSON."""
    return (
        length_prefixed(issuer.encode("utf-8"))
        + u64be(recorded_at)
        + length_prefixed(canonical_jwks(jwks))
    )


@dataclass(frozen=True)
class LedgerEntry:
    index: int
    issuer: str
    jwks: Jwks
    recorded_at: int

    @property
    def leaf_hash(self) -> bytes:
        return leaf_hash(entry_body(self.issuer, self.recorded_at, self.jwks))

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "issuer": self.issuer,
            "jwks": self.jwks.to_document().decode("ascii"),
            "recorded_at": self.recorded_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LedgerEntry":
        return cls(
            index=obj["index"],
            issuer=obj["issuer"],
            jwks=Jwks.from_document(obj["jwks"]),
            recorded_at=obj["recorded_at"],
        )


@dataclass(frozen=True)
class SignedDigest:
    tree_size: int
    root_hash: bytes
    timestamp: int
    log_signature: bytes
    witness_cosignatures: tuple[tuple[str, bytes], ...] = ()

    @property
    def signed_bytes(self) -> bytes:
        """The exact bytes every signature covers."""
        return u64be(self.tree_size) + self.root_hash + u64be(self.timestamp)

    def to_json(self) -> dict:
        return {
            "tree_size": self.tree_size,
            "root_hash": self.root_hash.hex(),
            "timestamp": self.timestamp,
            "log_signature": self.log_signature.hex(),
            "witness_cosignatures": [[wid, sig.hex()] for wid, sig in self.witness_cosignatures],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SignedDigest":
        return cls(
            tree_size=obj["tree_size"],
            root_hash=bytes.fromhex(obj["root_hash"]),
            timestamp=obj["timestamp"],
            log_signature=bytes.fromhex(obj["log_signature"]),
            witness_cosignatures=tuple((wid, bytes.fromhex(sig)) for wid, sig in obj["witness_cosignatures"]),
        )


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    tree_size: int
    path: tuple[bytes, ...]

    def to_json(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "tree_size": self.tree_size,
            "path": [h.hex() for h in self.path],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InclusionProof":
        return cls(obj["leaf_index"], obj["tree_size"], tuple(bytes.fromhex(h) for h in obj["path"]))


@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    path: tuple[bytes, ...]

    def to_json(self) -> dict:
        return {
            "old_size": self.old_size,
            "new_size": self.new_size,
            "path": [h.hex() for h in self.path],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConsistencyProof":
        return cls(obj["old_size"], obj["new_size"], tuple(bytes.fromhex(h) for h in obj["path"]))


@dataclass(frozen=True)
class TimestampBracket:
    before: LedgerEntry
    after: LedgerEntry | None
    proof_before: InclusionProof
    proof_after: InclusionProof | None
    digest: SignedDigest

    def to_json(self) -> dict:
        return {
            "before": self.before.to_json(),
            "after": self.after.to_json() if self.after else None,
            "proof_before": self.proof_before.to_json(),
            "proof_after": self.proof_after.to_json() if self.proof_after else None,
            "digest": self.digest.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TimestampBracket":
        return cls(
            before=LedgerEntry.from_json(obj["before"]),
            after=LedgerEntry.from_json(obj["after"]) if obj["after"] else None,
            proof_before=InclusionProof.from_json(obj["proof_before"]),
            proof_after=InclusionProof.from_json(obj["proof_after"]) if obj["proof_after"] else None,
            digest=SignedDigest.from_json(obj["digest"]),
        )


@dataclass(frozen=True)
class AppendResult:
    duplicate: bool
    entry: LedgerEntry | None
    digest: SignedDigest


# ---------------------------------------------------------------------------
# Witness
# ---------------------------------------------------------------------------

class Witness:
    """Cosigns digests only after independently re-verifying the update.

    On an append it checks consistency from the last digest it cosigned,
    that exactly one leaf was added and matches the claimed entry, that
    the recorded key set equals what the issuer's JWKS endpoint serves
    right now, and that the recorded time is within clock skew.  Digest
    refreshes (same tree, newer timestamp) only need the skew check.
    """

    def __init__(
        self,
        witness_id: str,
        signing_key: Ed25519PrivateKey,
        ledger_public_key: Ed25519PublicKey,
        jwks_source,
        clock=None,
        skew: int = WITNESS_CLOCK_SKEW,
    ):
        self.witness_id = witness_id
        self._key = signing_key
        self._ledger_key = ledger_public_key
        self._jwks_source = jwks_source
        self._clock = clock or (lambda: int(time.time()))
        self._skew = skew
        self.prev: SignedDigest | None = None

    def public_key(self) -> Ed25519PublicKey:
        return self._key.public_key()

    def _check_log_signature(self, digest: SignedDigest):
        try:
            self._ledger_key.verify(digest.log_signature, digest.signed_bytes)
        except InvalidSignature:
            raise WitnessRefusal("log-signature-invalid") from None

    def cosign_append(self, proposed: SignedDigest, delta: LedgerEntry, log_view) -> tuple[str, bytes]:
        self._check_log_signature(proposed)
        prev = self.prev
        if prev is not None:
            if proposed.tree_size != prev.tree_size + 1:
                raise WitnessRefusal("extra-entries")
            if prev.tree_size > 0:
                consistency = log_view.prove_consistency(prev.tree_size, proposed.tree_size)
                if not verify_consistency(
                    prev.tree_size, proposed.tree_size, prev.root_hash, proposed.root_hash, list(consistency.path)
                ):
                    raise WitnessRefusal("consistency-failed")
        inclusion = log_view.prove_inclusion(proposed.tree_size - 1, proposed.tree_size)
        if not verify_inclusion(
            delta.leaf_hash, proposed.tree_size - 1, proposed.tree_size, list(inclusion.path), proposed.root_hash
        ):
            raise WitnessRefusal("leaf-mismatch")
        live = self._jwks_source(delta.issuer)
        if live is None or canonical_jwks(live) != canonical_jwks(delta.jwks):
            raise WitnessRefusal("keyset-mismatch")
        if abs(delta.recorded_at - self._clock()) > self._skew:
            raise WitnessRefusal("recorded-at-skew")
        signature = self._key.sign(proposed.signed_bytes)
        self.prev = proposed
        return self.witness_id, signature

    def cosign_refresh(self, proposed: SignedDigest) -> tuple[str, bytes]:
        self._check_log_signature(proposed)
        prev = self.prev
        if prev is None or proposed.tree_size != prev.tree_size or proposed.root_hash != prev.root_hash:
            raise WitnessRefusal("refresh-tree-mismatch")
        if proposed.timestamp < prev.timestamp:
            raise WitnessRefusal("stale-timestamp")
        if abs(proposed.timestamp - self._clock()) > self._skew:
            raise WitnessRefusal("timestamp-skew")
        signature = self._key.sign(proposed.signed_bytes)
        self.prev = proposed
        return self.witness_id, signature


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

class JwkLedger:
    """Single logical log with per-issuer views.

    Appends are strictly serialized; proofs and queries read immutable
    prefixes of the leaf sequence, so an RLock suffices at desk scale.
    """

    def __init__(self, signing_key: Ed25519PrivateKey | None = None, clock=None):
        self._key = signing_key or Ed25519PrivateKey.generate()
        self._clock = clock or (lambda: int(time.time()))
        # _lock guards the data structures and is never held across witness
        # calls (remote witnesses call back into the ledger from other
        # threads); _append_lock serializes whole append/refresh rounds.
        self._lock = threading.RLock()
        self._append_lock = threading.Lock()
        self._tree = MerkleTree()
        self._entries: list[LedgerEntry] = []
        self._by_issuer: dict[str, list[int]] = {}
        self._latest_snapshot: dict[str, bytes] = {}
        self._witnesses: list[Witness] = []
        self._current = self._sign_digest(0, self._tree.root(0), self._clock())

    def public_key(self) -> Ed25519PublicKey:
        return self._key.public_key()

    def register_witness(self, witness):
        """Static witness set: register before the first append.

        Accepts anything with cosign_append/cosign_refresh; remote witness
        clients sync their own baseline digest at startup.
        """
        if isinstance(witness, Witness):
            witness.prev = self._current
        self._witnesses.append(witness)

    def _sign_digest(self, size: int, root: bytes, timestamp: int) -> SignedDigest:
        unsigned = SignedDigest(tree_size=size, root_hash=root, timestamp=timestamp, log_signature=b"")
        return replace(unsigned, log_signature=self._key.sign(unsigned.signed_bytes))

    def _collect_append_cosignatures(self, proposed: SignedDigest, delta: LedgerEntry) -> SignedDigest:
        cosignatures = []
        for witness in self._witnesses:
            try:
                cosignatures.append(witness.cosign_append(proposed, delta, self))
            except WitnessRefusal as refusal:
                logger.warning("witness %s refused append: %s", witness.witness_id, refusal.reason)
        return replace(proposed, witness_cosignatures=tuple(cosignatures))

    @property
    def size(self) -> int:
        return len(self._entries)

    def entry(self, index: int) -> LedgerEntry:
        with self._lock:
            if not 0 <= index < len(self._entries):
                raise LedgerRangeError(f"no entry at index {index}")
            return self._entries[index]

    def append(self, issuer: str, jwks: Jwks, now: int | None = None) -> AppendResult:
        with self._append_lock:
            with self._lock:
                now = self._clock() if now is None else now
                snapshot = canonical_jwks(jwks)
                if self._latest_snapshot.get(issuer) == snapshot:
                    return AppendResult(duplicate=True, entry=None, digest=self._current)
                issuer_rows = self._by_issuer.setdefault(issuer, [])
                if issuer_rows:
                    # recorded_at is non-decreasing per issuer even if the clock jumps back
                    now = max(now, self._entries[issuer_rows[-1]].recorded_at)
                entry = LedgerEntry(index=len(self._entries), issuer=issuer, jwks=jwks, recorded_at=now)
                self._tree.append_leaf(entry_body(issuer, now, jwks))
                self._entries.append(entry)
                issuer_rows.append(entry.index)
                self._latest_snapshot[issuer] = snapshot
                proposed = self._sign_digest(len(self._entries), self._tree.root(), now)
            digest = self._collect_append_cosignatures(proposed, entry)
            with self._lock:
                self._current = digest
            return AppendResult(duplicate=False, entry=entry, digest=digest)

    def digest(self) -> SignedDigest:
        with self._lock:
            return self._current

    def refresh_digest(self, now: int | None = None) -> SignedDigest:
        """Re-timestamp the current digest and gather fresh cosignatures."""
        with self._append_lock:
            with self._lock:
                now = self._clock() if now is None else now
                now = max(now, self._current.timestamp)
                proposed = self._sign_digest(self._current.tree_size, self._current.root_hash, now)
            cosignatures = []
            for witness in self._witnesses:
                try:
                    cosignatures.append(witness.cosign_refresh(proposed))
                except WitnessRefusal as refusal:
                    logger.warning("witness %s refused refresh: %s", witness.witness_id, refusal.reason)
            digest = replace(proposed, witness_cosignatures=tuple(cosignatures))
            with self._lock:
                self._current = digest
            return digest

    def attach_cosignature(self, witness_id: str, signature: bytes) -> bool:
        """Record an asynchronously delivered cosignature on the current digest.

        The ledger stores it unverified; clients judge cosignatures against
        their own witness trust configuration.
        """
        with self._lock:
            current = self._current
            if any(wid == witness_id for wid, _ in current.witness_cosignatures):
                return False
            self._current = replace(
                current,
                witness_cosignatures=current.witness_cosignatures + ((witness_id, signature),),
            )
            return True

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

    def query_at(self, issuer: str, t: int, now: int | None = None) -> TimestampBracket:
        """The bracketing entry pair for issuer at time t under one digest."""
        for _attempt in range(3):
            with self._lock:
                rows = self._by_issuer.get(issuer, [])
                times = [self._entries[i].recorded_at for i in rows]
                pos = bisect_right(times, t) - 1
                if pos < 0:
                    raise UnknownAtTime(f"no key set recorded for {issuer!r} at or before {t}")
                before = self._entries[rows[pos]]
                after = self._entries[rows[pos + 1]] if pos + 1 < len(rows) else None
                digest = self._current
                if after is not None or digest.timestamp >= t:
                    proof_before = self.prove_inclusion(before.index, digest.tree_size)
                    proof_after = self.prove_inclusion(after.index, digest.tree_size) if after else None
                    return TimestampBracket(
                        before=before,
                        after=after,
                        proof_before=proof_before,
                        proof_after=proof_after,
                        digest=digest,
                    )
            # open bracket with a stale digest: re-timestamp outside the data
            # lock (witness round-trips), then re-read in case appends raced
            digest = self.refresh_digest(now)
            if digest.timestamp < t:
                raise UnknownAtTime(f"cannot attest to the key set at future time {t}")
        raise LedgerError("bracket query kept racing appends")


# ---------------------------------------------------------------------------
# Client-side checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuorumCheck:
    ok: bool
    valid_cosigners: int
    reason: str | None = None


def check_quorum(
    digest: SignedDigest,
    ledger_key: Ed25519PublicKey,
    witness_keys: dict[str, Ed25519PublicKey],
    quorum: int,
) -> QuorumCheck:
    """Log signature plus >= quorum valid cosignatures from distinct witnesses."""
    try:
        ledger_key.verify(digest.log_signature, digest.signed_bytes)
    except InvalidSignature:
        return QuorumCheck(ok=False, valid_cosigners=0, reason="log-signature-invalid")
    valid: set[str] = set()
    for witness_id, signature in digest.witness_cosignatures:
        key = witness_keys.get(witness_id)
        if key is None:
            continue
        try:
            key.verify(signature, digest.signed_bytes)
        except InvalidSignature:
            continue
        valid.add(witness_id)
    if len(valid) < quorum:
        return QuorumCheck(ok=False, valid_cosigners=len(valid), reason="quorum-not-met")
    return QuorumCheck(ok=True, valid_cosigners=len(valid))


def check_bracket(
    bracket: TimestampBracket,
    issuer: str,
    t: int,
    ledger_key: Ed25519PublicKey,
    witness_keys: dict[str, Ed25519PublicKey],
    quorum: int,
) -> str | None:
    """Full client-side bracket validation; None when acceptable.

    Adjacency is the index-arithmetic check: with one configured issuer,
    adjacency in the log and adjacency among that issuer's entries agree.
    """
    digest = bracket.digest
    quorum_check = check_quorum(digest, ledger_key, witness_keys, quorum)
    if not quorum_check.ok:
        return quorum_check.reason
    before, after = bracket.before, bracket.after
    if before.issuer != issuer:
        return "bracket-wrong-issuer"
    if before.recorded_at > t:
        return "bracket-before-after-query-time"
    proof = bracket.proof_before
    if proof.tree_size != digest.tree_size or proof.leaf_index != before.index:
        return "inclusion-proof-mismatch"
    if not verify_inclusion(before.leaf_hash, before.index, digest.tree_size, list(proof.path), digest.root_hash):
        return "inclusion-invalid"
    if after is not None:
        if after.issuer != issuer:
            return "bracket-wrong-issuer"
        if after.index != before.index + 1:
            return "bracket-not-adjacent"
        if after.recorded_at <= t:
            return "bracket-after-not-after-query-time"
        proof_after = bracket.proof_after
        if proof_after is None:
            return "inclusion-proof-missing"
        if proof_after.tree_size != digest.tree_size or proof_after.leaf_index != after.index:
            return "inclusion-proof-mismatch"
        if not verify_inclusion(after.leaf_hash, after.index, digest.tree_size, list(proof_after.path), digest.root_hash):
            return "inclusion-invalid"
    else:
        if before.index != digest.tree_size - 1:
            return "open-bracket-not-last-entry"
        if digest.timestamp < t:
            return "open-bracket-stale-digest"
    return None


def make_witnesses(count: int, ledger: JwkLedger, jwks_source, clock=None) -> list[Witness]:
    """Convenience constructor for a static witness set wired to one ledger."""
    witnesses = []
    for i in range(count):
        witness = Witness(
            witness_id=f"w{i + 1}",
            signing_key=Ed25519PrivateKey.generate(),
            ledger_public_key=ledger.public_key(),
            jwks_source=jwks_source,
            clock=clock,
        )
        ledger.register_witness(witness)
        witnesses.append(witness)
    return witnesses
