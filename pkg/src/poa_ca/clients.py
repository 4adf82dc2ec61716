"""HTTP clients mirroring the in-process service objects.

Each client exposes the same method surface as the object it fronts, so
the CA, verifier and witnesses can be wired to either without caring.
"""

from __future__ import annotations

import requests

from .ca import IssuanceError
from .ctlog import Sct
from .encoding import b64url_encode
from .jose import Jwks
from .ledger import (
    AppendResult,
    ConsistencyProof,
    InclusionProof,
    LedgerEntry,
    LedgerRangeError,
    SignedDigest,
    TimestampBracket,
    UnknownAtTime,
    WitnessRefusal,
)

DEFAULT_TIMEOUT = 10


class HttpError(Exception):
    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(f"{code} ({status}): {detail}")
        self.status = status
        self.code = code
        self.detail = detail


def _call(method: str, url: str, params=None, json_body=None, raw: bool = False):
    response = requests.request(method, url, params=params, json=json_body, timeout=DEFAULT_TIMEOUT)
    if response.status_code >= 400:
        try:
            payload = response.json()
        except ValueError:
            payload = {"error": "http-error", "detail": response.text[:200]}
        raise HttpError(response.status_code, payload.get("error", "http-error"), payload.get("detail", ""))
    return response.content if raw else response.json()


class HttpIdpClient:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def jwks_document(self) -> bytes:
        return _call("GET", f"{self.base_url}/jwks", raw=True)

    def openid_configuration(self) -> dict:
        return _call("GET", f"{self.base_url}/.well-known/openid-configuration")

    def token(self, sub: str, aud: str, lifetime: int = 300, nonce: str | None = None) -> bytes:
        payload = {"sub": sub, "aud": aud, "lifetime": lifetime}
        if nonce is not None:
            payload["nonce"] = nonce
        return _call("POST", f"{self.base_url}/token", json_body=payload)["token"].encode("ascii")

    def rotate(self) -> int:
        return _call("POST", f"{self.base_url}/rotate")["rotation_counter"]


class HttpLedgerClient:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def append(self, issuer: str, jwks: Jwks, now: int | None = None) -> AppendResult:
        payload = {"issuer": issuer, "jwks": jwks.to_document().decode("ascii")}
        if now is not None:
            payload["now"] = now
        obj = _call("POST", f"{self.base_url}/append", json_body=payload)
        return AppendResult(
            duplicate=obj["duplicate"],
            entry=LedgerEntry.from_json(obj["entry"]) if obj["entry"] else None,
            digest=SignedDigest.from_json(obj["digest"]),
        )

    def digest(self) -> SignedDigest:
        return SignedDigest.from_json(_call("GET", f"{self.base_url}/digest"))

    def prove_inclusion(self, index: int, tree_size: int) -> InclusionProof:
        try:
            obj = _call("GET", f"{self.base_url}/inclusion", params={"index": index, "size": tree_size})
        except HttpError as exc:
            if exc.status == 404:
                raise LedgerRangeError(exc.detail) from None
            raise
        return InclusionProof.from_json(obj)

    def prove_consistency(self, old_size: int, new_size: int) -> ConsistencyProof:
        try:
            obj = _call("GET", f"{self.base_url}/consistency", params={"old": old_size, "new": new_size})
        except HttpError as exc:
            if exc.status == 404:
                raise LedgerRangeError(exc.detail) from None
            raise
        return ConsistencyProof.from_json(obj)

    def query_at(self, issuer: str, t: int) -> TimestampBracket:
        try:
            obj = _call("GET", f"{self.base_url}/at", params={"issuer": issuer, "t": t})
        except HttpError as exc:
            if exc.status == 404:
                raise UnknownAtTime(exc.detail) from None
            raise
        return TimestampBracket.from_json(obj)

    def public_key_hex(self) -> str:
        return _call("GET", f"{self.base_url}/pubkey")["ed25519"]


class HttpWitnessClient:
    """The ledger-side handle for a remote witness."""

    def __init__(self, base_url: str, witness_id: str | None = None):
        self.base_url = base_url.rstrip("/")
        self.witness_id = witness_id or self.base_url

    def cosign_append(self, proposed: SignedDigest, delta: LedgerEntry, _log_view) -> tuple[str, bytes]:
        try:
            obj = _call(
                "POST",
                f"{self.base_url}/propose",
                json_body={"kind": "append", "proposed": proposed.to_json(), "entry": delta.to_json()},
            )
        except HttpError as exc:
            raise WitnessRefusal(exc.code) from None
        except requests.RequestException as exc:
            raise WitnessRefusal(f"unreachable: {exc}") from None
        return obj["witness_id"], bytes.fromhex(obj["signature"])

    def cosign_refresh(self, proposed: SignedDigest) -> tuple[str, bytes]:
        try:
            obj = _call(
                "POST",
                f"{self.base_url}/propose",
                json_body={"kind": "refresh", "proposed": proposed.to_json()},
            )
        except HttpError as exc:
            raise WitnessRefusal(exc.code) from None
        except requests.RequestException as exc:
            raise WitnessRefusal(f"unreachable: {exc}") from None
        return obj["witness_id"], bytes.fromhex(obj["signature"])

    def public_key_hex(self) -> str:
        return _call("GET", f"{self.base_url}/pubkey")["ed25519"]


class HttpCtClient:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def submit_precert(self, tbs_bytes: bytes, now: int | None = None) -> tuple[Sct, int]:
        payload = {"tbs": b64url_encode(tbs_bytes).decode("ascii")}
        if now is not None:
            payload["now"] = now
        obj = _call("POST", f"{self.base_url}/submit", json_body=payload)
        return Sct.from_json(obj["sct"]), obj["index"]

    def lookup(self, tbs_hash: bytes) -> int | None:
        return _call("GET", f"{self.base_url}/lookup", params={"hash": tbs_hash.hex()})["index"]

    def digest(self) -> SignedDigest:
        return SignedDigest.from_json(_call("GET", f"{self.base_url}/digest"))

    def prove_inclusion(self, index: int, tree_size: int) -> InclusionProof:
        obj = _call("GET", f"{self.base_url}/inclusion", params={"index": index, "size": tree_size})
        return InclusionProof.from_json(obj)

    def leaf_hash_at(self, index: int) -> bytes:
        return bytes.fromhex(_call("GET", f"{self.base_url}/leaf", params={"index": index})["leaf_hash"])

    def public_key_hex(self) -> str:
        return _call("GET", f"{self.base_url}/pubkey")["ed25519"]


class HttpCaClient:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def challenge(self, subject_public_key: bytes) -> str:
        payload = {"public_key": b64url_encode(subject_public_key).decode("ascii")}
        return _call("POST", f"{self.base_url}/challenge", json_body=payload)["nonce"]

    def issue(self, token: bytes, subject_public_key: bytes, pop: bytes) -> tuple[bytes, bytes]:
        payload = {
            "token": token.decode("ascii"),
            "public_key": b64url_encode(subject_public_key).decode("ascii"),
            "pop": b64url_encode(pop).decode("ascii"),
        }
        try:
            obj = _call("POST", f"{self.base_url}/issue", json_body=payload)
        except HttpError as exc:
            raise IssuanceError(exc.code, exc.detail) from None
        return obj["certificate_pem"].encode("ascii"), obj["chain_pem"].encode("ascii")

    def root_pem(self) -> bytes:
        return _call("GET", f"{self.base_url}/root", raw=True)
