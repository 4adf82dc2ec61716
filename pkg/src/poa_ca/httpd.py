"""Thin JSON-over-HTTP wrappers around the in-process services.

One route table per service; handlers take (query, body) and return
(status, payload).  A bytes payload is passed through verbatim -- the
JWKS endpoint depends on byte-stable responses for cache-change
detection.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from cryptography.hazmat.primitives import serialization

from .ca import CertificateAuthority, IssuanceError, IssuanceRequest
from .ctlog import CtLog, MalformedTbs
from .encoding import b64url_decode
from .idp import IdentityProvider
from .jose import Jwks
from .ledger import JwkLedger, LedgerRangeError, UnknownAtTime, Witness, WitnessRefusal, LedgerEntry, SignedDigest

logger = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.status = status
        self.code = code


class _Handler(BaseHTTPRequestHandler):
    server_version = "poa-ca/0.1"

    def _dispatch(self, method: str):
        parsed = urlparse(self.path)
        handler = self.server.routes.get((method, parsed.path))  # type: ignore[attr-defined]
        if handler is None:
            self._send(404, {"error": "no-route", "detail": parsed.path})
            return
        query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        body = None
        if method == "POST":
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if raw:
                try:
                    body = json.loads(raw)
                except ValueError:
                    self._send(400, {"error": "bad-json"})
                    return
        try:
            status, payload = handler(query, body)
        except ServiceError as exc:
            self._send(exc.status, {"error": exc.code, "detail": str(exc)})
            return
        except Exception as exc:  # untrusted inputs must not kill the server
            logger.exception("unhandled error in %s %s", method, parsed.path)
            self._send(500, {"error": "internal", "detail": str(exc)})
            return
        self._send(status, payload)

    def _send(self, status: int, payload):
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        try:
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            logger.debug("client went away before the response was written")

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)


class JsonHttpService:
    def __init__(self, routes: dict, host: str = "127.0.0.1", port: int = 0):
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._server.routes = routes  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


def _healthz(_q, _b):
    return 200, {"ok": True}


def _pubkey_payload(key) -> dict:
    raw = key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return {"ed25519": raw.hex()}


# ---------------------------------------------------------------------------
# Route tables
# ---------------------------------------------------------------------------

def idp_routes(idp: IdentityProvider) -> dict:
    def openid_configuration(_q, _b):
        return 200, idp.openid_configuration()

    def jwks(_q, _b):
        return 200, idp.jwks_document()  # verbatim bytes, byte-stable

    def token(_q, body):
        if not body or "sub" not in body or "aud" not in body:
            raise ServiceError(400, "bad-request", "sub and aud are required")
        compact = idp.issue_compact(
            body["sub"], body["aud"], int(body.get("lifetime", 300)), nonce=body.get("nonce")
        )
        return 200, {"token": compact.decode("ascii")}

    def rotate(_q, _b):
        idp.rotate()
        return 200, {"rotation_counter": idp.rotation_counter, "kid": idp.active_kid}

    return {
        ("GET", "/healthz"): _healthz,
        ("GET", "/.well-known/openid-configuration"): openid_configuration,
        ("GET", "/jwks"): jwks,
        ("POST", "/token"): token,
        ("POST", "/rotate"): rotate,
    }


def ledger_routes(ledger: JwkLedger) -> dict:
    def append(_q, body):
        if not body or "issuer" not in body or "jwks" not in body:
            raise ServiceError(400, "bad-request", "issuer and jwks are required")
        jwks = Jwks.from_document(body["jwks"])
        result = ledger.append(body["issuer"], jwks, body.get("now"))
        return 200, {
            "duplicate": result.duplicate,
            "entry": result.entry.to_json() if result.entry else None,
            "digest": result.digest.to_json(),
        }

    def digest(_q, _b):
        return 200, ledger.digest().to_json()

    def inclusion(query, _b):
        try:
            proof = ledger.prove_inclusion(int(query["index"]), int(query["size"]))
        except (KeyError, ValueError):
            raise ServiceError(400, "bad-request", "index and size are required") from None
        except LedgerRangeError as exc:
            raise ServiceError(404, "not-found", str(exc)) from None
        return 200, proof.to_json()

    def consistency(query, _b):
        try:
            proof = ledger.prove_consistency(int(query["old"]), int(query["new"]))
        except (KeyError, ValueError):
            raise ServiceError(400, "bad-request", "old and new are required") from None
        except LedgerRangeError as exc:
            raise ServiceError(404, "not-found", str(exc)) from None
        return 200, proof.to_json()

    def at(query, _b):
        try:
            issuer, t = query["issuer"], int(query["t"])
        except (KeyError, ValueError):
            raise ServiceError(400, "bad-request", "issuer and t are required") from None
        try:
            bracket = ledger.query_at(issuer, t)
        except UnknownAtTime as exc:
            raise ServiceError(404, "unknown-at-time", str(exc)) from None
        return 200, bracket.to_json()

    def cosign(_q, body):
        if not body or "witness_id" not in body or "signature" not in body:
            raise ServiceError(400, "bad-request", "witness_id and signature are required")
        attached = ledger.attach_cosignature(body["witness_id"], bytes.fromhex(body["signature"]))
        return 200, {"attached": attached}

    def entry(query, _b):
        try:
            record = ledger.entry(int(query["index"]))
        except (KeyError, ValueError):
            raise ServiceError(400, "bad-request", "index is required") from None
        except LedgerRangeError as exc:
            raise ServiceError(404, "not-found", str(exc)) from None
        return 200, record.to_json()

    def pubkey(_q, _b):
        return 200, _pubkey_payload(ledger.public_key())

    return {
        ("GET", "/healthz"): _healthz,
        ("POST", "/append"): append,
        ("GET", "/digest"): digest,
        ("GET", "/inclusion"): inclusion,
        ("GET", "/consistency"): consistency,
        ("GET", "/at"): at,
        ("GET", "/entry"): entry,
        ("POST", "/cosign"): cosign,
        ("GET", "/pubkey"): pubkey,
    }


def witness_routes(witness: Witness, log_view) -> dict:
    def propose(_q, body):
        if not body or "kind" not in body or "proposed" not in body:
            raise ServiceError(400, "bad-request", "kind and proposed are required")
        proposed = SignedDigest.from_json(body["proposed"])
        try:
            if body["kind"] == "append":
                entry = LedgerEntry.from_json(body["entry"])
                witness_id, signature = witness.cosign_append(proposed, entry, log_view)
            elif body["kind"] == "refresh":
                witness_id, signature = witness.cosign_refresh(proposed)
            else:
                raise ServiceError(400, "bad-request", f"unknown kind {body['kind']!r}")
        except WitnessRefusal as refusal:
            raise ServiceError(409, refusal.reason) from None
        return 200, {"witness_id": witness_id, "signature": signature.hex()}

    def pubkey(_q, _b):
        payload = _pubkey_payload(witness.public_key())
        payload["witness_id"] = witness.witness_id
        return 200, payload

    return {
        ("GET", "/healthz"): _healthz,
        ("POST", "/propose"): propose,
        ("GET", "/pubkey"): pubkey,
    }


def ct_routes(ct: CtLog) -> dict:
    def submit(_q, body):
        if not body or "tbs" not in body:
            raise ServiceError(400, "bad-request", "tbs is required")
        try:
            tbs = b64url_decode(body["tbs"])
        except ValueError:
            raise ServiceError(400, "bad-request", "tbs is not base64url") from None
        try:
            sct, index = ct.submit_precert(tbs, body.get("now"))
        except MalformedTbs as exc:
            raise ServiceError(400, "malformed-tbs", str(exc)) from None
        return 200, {"sct": sct.to_json(), "index": index}

    def digest(_q, _b):
        return 200, ct.digest().to_json()

    def inclusion(query, _b):
        try:
            proof = ct.prove_inclusion(int(query["index"]), int(query["size"]))
        except (KeyError, ValueError):
            raise ServiceError(400, "bad-request", "index and size are required") from None
        except LedgerRangeError as exc:
            raise ServiceError(404, "not-found", str(exc)) from None
        return 200, proof.to_json()

    def lookup(query, _b):
        try:
            tbs_hash = bytes.fromhex(query["hash"])
        except (KeyError, ValueError):
            raise ServiceError(400, "bad-request", "hash (hex) is required") from None
        index = ct.lookup(tbs_hash)
        return 200, {"index": index}

    def leaf(query, _b):
        try:
            return 200, {"leaf_hash": ct.leaf_hash_at(int(query["index"])).hex()}
        except (KeyError, ValueError, IndexError):
            raise ServiceError(404, "not-found", "bad leaf index") from None

    def pubkey(_q, _b):
        return 200, _pubkey_payload(ct.public_key())

    return {
        ("GET", "/healthz"): _healthz,
        ("POST", "/submit"): submit,
        ("GET", "/digest"): digest,
        ("GET", "/inclusion"): inclusion,
        ("GET", "/lookup"): lookup,
        ("GET", "/leaf"): leaf,
        ("GET", "/pubkey"): pubkey,
    }


_ISSUANCE_HTTP_STATUS = {
    "invalid-token": 400,
    "challenge-not-found": 403,
    "challenge-expired": 403,
    "pop-invalid": 403,
    "bad-public-key": 400,
    "ledger-unavailable": 503,
    "ct-unavailable": 503,
    "proof-failure": 502,
    "unmappable-sub": 400,
}


def ca_routes(ca: CertificateAuthority) -> dict:
    def challenge(_q, body):
        if not body or "public_key" not in body:
            raise ServiceError(400, "bad-request", "public_key is required")
        nonce = ca.challenge(b64url_decode(body["public_key"]))
        return 200, {"nonce": nonce}

    def issue(_q, body):
        if not body or not all(k in body for k in ("token", "public_key", "pop")):
            raise ServiceError(400, "bad-request", "token, public_key and pop are required")
        request = IssuanceRequest(
            oidc_token=body["token"].encode("ascii"),
            subject_public_key=b64url_decode(body["public_key"]),
            proof_of_possession=b64url_decode(body["pop"]),
        )
        try:
            cert = ca.issue(request)
        except IssuanceError as exc:
            raise ServiceError(_ISSUANCE_HTTP_STATUS.get(exc.code, 500), exc.code, exc.detail) from None
        return 200, {
            "certificate_pem": cert.pem.decode("ascii"),
            "chain_pem": ca.root_pem().decode("ascii"),
        }

    def root(_q, _b):
        return 200, ca.root_pem()

    return {
        ("GET", "/healthz"): _healthz,
        ("POST", "/challenge"): challenge,
        ("POST", "/issue"): issue,
        ("GET", "/root"): root,
    }
