"""The certificate authority.

Issuance order matters: validate the token, record any key-set change in
the JWK Ledger (and insist on witness quorum), build the precertificate
with the token's signed bytes and the signature proof-of-knowledge, get a
timestamp from the CT log, then sign.  The token's RSA signature itself
never enters the certificate.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from . import gq, jose
from .ctlog import Sct
from .der import strip_extension
from .encoding import b64url_encode
from .jose import Jwks, OidcClaims
from .ledger import check_quorum

logger = logging.getLogger(__name__)

# Private-use OIDs per the 1.3.99XX example prefix; a real deployment
# would register proper arcs (see CaOids).
DEFAULT_OIDS = {
    "jwt": "1.3.9901",
    "proof": "1.3.9902",
    "issuer": "1.3.9903",
    "sct": "1.3.9904",
}

DEFAULT_CERT_LIFETIME = 600
CHALLENGE_TTL = 300


class IssuanceError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class MappingError(IssuanceError):
    def __init__(self, detail: str):
        super().__init__("unmappable-sub", detail)


@dataclass(frozen=True)
class CaOids:
    jwt: str = DEFAULT_OIDS["jwt"]
    proof: str = DEFAULT_OIDS["proof"]
    issuer: str = DEFAULT_OIDS["issuer"]
    sct: str = DEFAULT_OIDS["sct"]


@dataclass(frozen=True)
class SubjectFields:
    """Deterministic claim-to-certificate mapping, known to all parties."""

    san_kind: str  # "email" | "uri"
    san_value: str
    issuer_url: str
    not_before: int
    not_after: int

    def general_name(self) -> x509.GeneralName:
        if self.san_kind == "email":
            return x509.RFC822Name(self.san_value)
        return x509.UniformResourceIdentifier(self.san_value)


def claim_map(claims: OidcClaims, cert_lifetime: int = DEFAULT_CERT_LIFETIME) -> SubjectFields:
    """sub with an '@' becomes an email SAN, anything else a URI SAN."""
    if not claims.sub:
        raise MappingError("empty sub claim")
    kind = "email" if "@" in claims.sub else "uri"
    return SubjectFields(
        san_kind=kind,
        san_value=claims.sub,
        issuer_url=claims.iss,
        not_before=claims.iat,
        not_after=claims.iat + cert_lifetime,
    )


@dataclass(frozen=True)
class IssuanceRequest:
    oidc_token: bytes
    subject_public_key: bytes  # DER SubjectPublicKeyInfo
    proof_of_possession: bytes


@dataclass(frozen=True)
class PoaCertificate:
    der: bytes
    oids: CaOids = field(default_factory=CaOids)

    @property
    def certificate(self) -> x509.Certificate:
        return x509.load_der_x509_certificate(self.der)

    @property
    def pem(self) -> bytes:
        return self.certificate.public_bytes(serialization.Encoding.PEM)

    def _extension_bytes(self, dotted: str) -> bytes:
        ext = self.certificate.extensions.get_extension_for_oid(x509.ObjectIdentifier(dotted))
        return ext.value.public_bytes()

    def signing_input(self) -> bytes:
        return self._extension_bytes(self.oids.jwt)

    def proof_bytes(self) -> bytes:
        return self._extension_bytes(self.oids.proof)

    def issuer_url(self) -> str:
        return self._extension_bytes(self.oids.issuer).decode("utf-8")

    def sct(self) -> Sct:
        return Sct.from_json(json.loads(self._extension_bytes(self.oids.sct)))

    def precert_tbs(self) -> bytes:
        """TBS bytes as submitted to the CT log (timestamp extension absent)."""
        return strip_extension(self.certificate.tbs_certificate_bytes, self.oids.sct)


def _utc(ts: int) -> datetime.datetime:
    return datetime.datetime.fromtimestamp(ts, tz=datetime.timezone.utc)


def build_leaf_certificate(
    ca_key: ec.EllipticCurvePrivateKey,
    ca_cert: x509.Certificate,
    subject_spki: bytes,
    fields: SubjectFields,
    signing_input: bytes,
    proof_wire: bytes,
    serial: int,
    sct: Sct | None = None,
    oids: CaOids = CaOids(),
):
    """Assemble and sign a leaf; sct=None yields the precertificate form."""
    subject_key = serialization.load_der_public_key(subject_spki)
    builder = (
        x509.CertificateBuilder()
        .subject_name(x509.Name([]))
        .issuer_name(ca_cert.subject)
        .public_key(subject_key)
        .serial_number(serial)
        .not_valid_before(_utc(fields.not_before))
        .not_valid_after(_utc(fields.not_after))
        .add_extension(x509.SubjectAlternativeName([fields.general_name()]), critical=False)
        .add_extension(
            x509.UnrecognizedExtension(x509.ObjectIdentifier(oids.jwt), signing_input), critical=False
        )
        .add_extension(
            x509.UnrecognizedExtension(x509.ObjectIdentifier(oids.proof), proof_wire), critical=False
        )
        .add_extension(
            x509.UnrecognizedExtension(
                x509.ObjectIdentifier(oids.issuer), fields.issuer_url.encode("utf-8")
            ),
            critical=False,
        )
    )
    if sct is not None:
        sct_bytes = json.dumps(sct.to_json(), sort_keys=True, separators=(",", ":")).encode("ascii")
        builder = builder.add_extension(
            x509.UnrecognizedExtension(x509.ObjectIdentifier(oids.sct), sct_bytes), critical=False
        )
    return builder.sign(ca_key, hashes.SHA256())


def make_ca_root(ca_key: ec.EllipticCurvePrivateKey, common_name: str) -> x509.Certificate:
    name = x509.Name([x509.NameAttribute(x509.NameOID.COMMON_NAME, common_name)])
    now = datetime.datetime(2020, 1, 1, tzinfo=datetime.timezone.utc)
    return (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(ca_key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now)
        .not_valid_after(now + datetime.timedelta(days=3650))
        .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
        .sign(ca_key, hashes.SHA256())
    )


@dataclass
class CaConfig:
    ca_id: str = "poa-ca"
    expected_issuer: str = "https://idp.example.test"
    lambda_bits: int = 128
    cert_lifetime: int = DEFAULT_CERT_LIFETIME
    oids: CaOids = field(default_factory=CaOids)


@dataclass
class JwksCacheState:
    jwks: Jwks | None = None
    content_hash: str = ""
    fetched_at: int = 0
    pushed_hash: str = ""
    degraded: bool = False


class CertificateAuthority:
    """Issues proof-carrying certificates for one configured IdP.

    The JWKS cache swaps atomically under a lock; the ledger-push path is
    serialized so two concurrent polls cannot race an append (the ledger's
    duplicate no-op makes a lost race harmless anyway).
    """

    def __init__(
        self,
        config: CaConfig,
        jwks_source,
        ledger,
        ct,
        ledger_key: Ed25519PublicKey,
        witness_keys: dict[str, Ed25519PublicKey],
        quorum: int,
        signing_key: ec.EllipticCurvePrivateKey | None = None,
        rng=None,
        clock=None,
    ):
        self.config = config
        self._jwks_source = jwks_source
        self._ledger = ledger
        self._ct = ct
        self._ledger_key = ledger_key
        self._witness_keys = witness_keys
        self._quorum = quorum
        self._key = signing_key or ec.generate_private_key(ec.SECP256R1())
        self._rng = rng or random.SystemRandom()
        self._clock = clock or (lambda: int(time.time()))
        self.root_certificate = make_ca_root(self._key, config.ca_id)
        self._cache = JwksCacheState()
        self._cache_lock = threading.Lock()
        self._push_lock = threading.Lock()
        self._challenges: dict[str, tuple[str, int]] = {}

    # -- requester challenge / proof-of-possession -------------------------

    def challenge(self, subject_public_key: bytes, now: int | None = None) -> str:
        """One-time nonce the requester must embed in its token and sign."""
        now = self._clock() if now is None else now
        nonce = b64url_encode(self._rng.getrandbits(128).to_bytes(16, "big")).decode("ascii")
        key_fingerprint = hashlib.sha256(subject_public_key).hexdigest()
        self._challenges[key_fingerprint] = (nonce, now + CHALLENGE_TTL)
        return nonce

    def _take_challenge(self, subject_public_key: bytes, now: int) -> str:
        key_fingerprint = hashlib.sha256(subject_public_key).hexdigest()
        record = self._challenges.pop(key_fingerprint, None)
        if record is None:
            raise IssuanceError("challenge-not-found", "request a challenge first")
        nonce, expires = record
        if now > expires:
            raise IssuanceError("challenge-expired")
        return nonce

    @staticmethod
    def _verify_pop(subject_public_key: bytes, nonce: str, pop: bytes):
        try:
            key = serialization.load_der_public_key(subject_public_key)
        except (ValueError, TypeError) as exc:
            raise IssuanceError("bad-public-key", str(exc)) from exc
        try:
            if isinstance(key, ec.EllipticCurvePublicKey):
                key.verify(pop, nonce.encode("ascii"), ec.ECDSA(hashes.SHA256()))
            else:
                key.verify(pop, nonce.encode("ascii"))
        except (InvalidSignature, TypeError, ValueError) as exc:
            raise IssuanceError("pop-invalid", "challenge signature does not verify") from exc

    # -- JWKS cache and ledger push ----------------------------------------

    def poll_jwks(self, now: int | None = None) -> tuple[bool, Jwks | None]:
        """Refresh the key cache; True when the key-set bytes changed."""
        now = self._clock() if now is None else now
        try:
            document = self._jwks_source()
        except Exception as exc:
            logger.warning("JWKS fetch failed, keeping stale cache: %s", exc)
            with self._cache_lock:
                self._cache.degraded = True
                return False, self._cache.jwks
        content_hash = hashlib.sha256(document).hexdigest()
        jwks = Jwks.from_document(document, fetched_at=now)
        with self._cache_lock:
            changed = content_hash != self._cache.content_hash
            if changed:
                self._cache = JwksCacheState(
                    jwks=jwks, content_hash=content_hash, fetched_at=now, pushed_hash=self._cache.pushed_hash
                )
            else:
                self._cache.fetched_at = now
                self._cache.degraded = False
            return changed, self._cache.jwks

    def _ensure_ledger_current(self, now: int):
        """Record the cached key set in the ledger; refuse issuance without quorum."""
        with self._push_lock:
            with self._cache_lock:
                cache = self._cache
            if cache.jwks is None:
                raise IssuanceError("ledger-unavailable", "no key set cached")
            if cache.pushed_hash == cache.content_hash:
                return
            try:
                result = self._ledger.append(self.config.expected_issuer, cache.jwks, now)
            except Exception as exc:
                raise IssuanceError("ledger-unavailable", str(exc)) from exc
            verdict = check_quorum(result.digest, self._ledger_key, self._witness_keys, self._quorum)
            if not verdict.ok:
                raise IssuanceError(
                    "ledger-unavailable",
                    f"witness quorum not met ({verdict.valid_cosigners} valid cosignatures)",
                )
            with self._cache_lock:
                self._cache.pushed_hash = cache.content_hash

    # -- issuance -----------------------------------------------------------

    def issue(self, request: IssuanceRequest, now: int | None = None) -> PoaCertificate:
        now = self._clock() if now is None else now

        # 1. Parse and validate the token against a freshly fetched key set.
        try:
            token = jose.parse_compact(request.oidc_token)
        except jose.JoseError as exc:
            raise IssuanceError("invalid-token", str(exc)) from exc
        nonce = self._take_challenge(request.subject_public_key, now)
        self._verify_pop(request.subject_public_key, nonce, request.proof_of_possession)
        reason = jose.validate_claims(
            token.claims, self.config.ca_id, self.config.expected_issuer, now, check_nonce=nonce
        )
        if reason is not None:
            raise IssuanceError("invalid-token", reason)
        _, jwks = self.poll_jwks(now)
        if jwks is None:
            raise IssuanceError("invalid-token", "key-not-found (no key set available)")
        try:
            idp_key = jose.verify_with_jwks(jwks, token)
        except jose.KeyNotFound as exc:
            raise IssuanceError("invalid-token", f"key-not-found ({exc})") from exc

        # 2. Push any key-set change to the JWK Ledger before certifying.
        self._ensure_ledger_current(now)

        # 3-5. Precertificate: claim mapping, embedded token bytes, proof.
        fields = claim_map(token.claims, self.config.cert_lifetime)
        try:
            proof = gq.prove(
                idp_key, token.signing_input, token.signature, self.config.lambda_bits, self._rng
            )
        except gq.SignatureMismatch as exc:
            raise IssuanceError("proof-failure", str(exc)) from exc
        proof_wire = gq.encode_proof(proof, idp_key.byte_length)
        serial = self._rng.getrandbits(63) | 1
        precert = build_leaf_certificate(
            self._key,
            self.root_certificate,
            request.subject_public_key,
            fields,
            token.signing_input,
            proof_wire,
            serial,
            sct=None,
            oids=self.config.oids,
        )

        # 6. CT submission; the SCT lands in its own extension.
        try:
            sct, _index = self._ct.submit_precert(precert.tbs_certificate_bytes, now)
        except Exception as exc:
            raise IssuanceError("ct-unavailable", str(exc)) from exc

        # 7. Final signature.
        final = build_leaf_certificate(
            self._key,
            self.root_certificate,
            request.subject_public_key,
            fields,
            token.signing_input,
            proof_wire,
            serial,
            sct=sct,
            oids=self.config.oids,
        )
        return PoaCertificate(der=final.public_bytes(serialization.Encoding.DER), oids=self.config.oids)

    def root_pem(self) -> bytes:
        return self.root_certificate.public_bytes(serialization.Encoding.PEM)
