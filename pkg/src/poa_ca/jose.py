"""Compact JWS parsing, OIDC claim checks, RS256 and JWKS modelling.

Verification always operates on the verbatim signing-input bytes of a
token (the first two dot-separated segments).  JSON re-serialization is
never used to check a signature: key order is not canonical and the
certificate format embeds the original bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .encoding import b64url_decode, b64url_encode, int_from_bytes

# Clock skew tolerated by claim validation, seconds.
DEFAULT_CLOCK_SKEW = 60

# When a token's kid does not resolve in a key set, trial verification
# against every key is attempted, bounded to this many keys.
KID_FALLBACK_LIMIT = 16

# DER prefix of DigestInfo for SHA-256 (RFC 8017 section 9.2 notes).
SHA256_DIGEST_INFO = bytes.fromhex("3031300d060960864801650304020105000420")


class JoseError(Exception):
    """Base class for token and key-set handling failures."""


class MalformedToken(JoseError):
    pass


class EncryptedTokenDisallowed(JoseError):
    pass


class UnsupportedAlgorithm(JoseError):
    pass


class KeyNotFound(JoseError):
    pass


class InvalidParameter(JoseError):
    pass


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RsaPublicKey:
    """RSA verification key as found in a JWKS entry."""

    modulus: int
    public_exponent: int
    key_id: str = ""

    def __post_init__(self):
        if self.public_exponent < 3 or self.public_exponent % 2 == 0:
            raise ValueError("public exponent must be an odd integer >= 3")
        if self.modulus % 2 == 0 or self.modulus < 15:
            raise ValueError("modulus must be an odd composite")

    @property
    def byte_length(self) -> int:
        return (self.modulus.bit_length() + 7) // 8

    def to_jwk(self) -> dict:
        from .encoding import int_to_bytes

        return {
            "kty": "RSA",
            "kid": self.key_id,
            "n": b64url_encode(int_to_bytes(self.modulus)).decode("ascii"),
            "e": b64url_encode(int_to_bytes(self.public_exponent)).decode("ascii"),
            "alg": "RS256",
            "use": "sig",
        }

    @classmethod
    def from_jwk(cls, jwk: dict) -> "RsaPublicKey":
        if jwk.get("kty") != "RSA":
            raise ValueError(f"unsupported key type {jwk.get('kty')!r}")
        return cls(
            modulus=int_from_bytes(b64url_decode(jwk["n"])),
            public_exponent=int_from_bytes(b64url_decode(jwk["e"])),
            key_id=jwk.get("kid", ""),
        )


@dataclass(frozen=True)
class Jwks:
    """Immutable snapshot of an issuer's verification keys."""

    keys: tuple[RsaPublicKey, ...]
    fetched_at: int = 0

    def __post_init__(self):
        kids = [k.key_id for k in self.keys]
        if len(set(kids)) != len(kids):
            raise ValueError("duplicate kid in key set")

    def find(self, kid: str) -> RsaPublicKey | None:
        for key in self.keys:
            if key.key_id == kid:
                return key
        return None

    def to_document(self) -> bytes:
        keys = sorted(self.keys, key=lambda k: k.key_id)
        doc = {"keys": [k.to_jwk() for k in keys]}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")

    @classmethod
    def from_document(cls, doc: bytes | str, fetched_at: int = 0) -> "Jwks":
        if isinstance(doc, bytes):
            doc = doc.decode("utf-8")
        parsed = json.loads(doc)
        keys = tuple(RsaPublicKey.from_jwk(j) for j in parsed["keys"])
        return cls(keys=keys, fetched_at=fetched_at)


def canonical_jwks(jwks: Jwks) -> bytes:
    """Canonical bytes used for ledger leaves and cache-change detection."""
    return jwks.to_document()


# ---------------------------------------------------------------------------
# Tokens
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JwtHeader:
    alg: str
    kid: str | None = None
    typ: str | None = None


@dataclass(frozen=True)
class OidcClaims:
    iss: str
    sub: str
    aud: tuple[str, ...]
    exp: int
    iat: int
    nonce: str | None = None
    email: str | None = None
    extra: dict = field(default_factory=dict)

    def to_payload(self) -> dict:
        payload: dict = {
            "iss": self.iss,
            "sub": self.sub,
            "aud": list(self.aud) if len(self.aud) > 1 else self.aud[0],
            "exp": self.exp,
            "iat": self.iat,
        }
        if self.nonce is not None:
            payload["nonce"] = self.nonce
        if self.email is not None:
            payload["email"] = self.email
        payload.update(self.extra)
        return payload


@dataclass(frozen=True)
class OidcToken:
    header: JwtHeader
    claims: OidcClaims
    signature: int
    signing_input: bytes

    @property
    def raw_header_body(self) -> bytes:
        """The verbatim bytes the RSA signature covers (and the CA embeds)."""
        return self.signing_input

    def to_compact(self, modulus_len: int) -> bytes:
        from .encoding import int_to_bytes

        return self.signing_input + b"." + b64url_encode(int_to_bytes(self.signature, modulus_len))


def _decode_json_segment(segment: bytes, what: str) -> dict:
    try:
        parsed = json.loads(b64url_decode(segment))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedToken(f"{what} segment is not base64url-encoded JSON: {exc}") from exc
    if not isinstance(parsed, dict):
        raise MalformedToken(f"{what} segment is not a JSON object")
    return parsed


def _parse_header(raw: dict) -> JwtHeader:
    if "enc" in raw:
        raise EncryptedTokenDisallowed("encrypted tokens are not accepted")
    alg = raw.get("alg")
    if alg != "RS256":
        raise UnsupportedAlgorithm(f"alg {alg!r} not supported; only RS256")
    kid = raw.get("kid")
    if kid is not None and not isinstance(kid, str):
        raise MalformedToken("kid must be a string")
    return JwtHeader(alg=alg, kid=kid, typ=raw.get("typ"))


def _parse_claims(raw: dict) -> OidcClaims:
    try:
        iss, sub, aud = raw["iss"], raw["sub"], raw["aud"]
        exp, iat = int(raw["exp"]), int(raw["iat"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedToken(f"missing or malformed registered claim: {exc}") from exc
    if not isinstance(sub, str) or not sub:
        raise MalformedToken("sub must be a nonempty string")
    if isinstance(aud, str):
        aud_tuple = (aud,)
    elif isinstance(aud, list) and aud and all(isinstance(a, str) for a in aud):
        aud_tuple = tuple(aud)
    else:
        raise MalformedToken(f"aud must be a nonempty string or string list, got {aud!r}")
    if iat > exp:
        raise MalformedToken("iat exceeds exp")
    known = {"iss", "sub", "aud", "exp", "iat", "nonce", "email"}
    extra = {k: v for k, v in raw.items() if k not in known}
    return OidcClaims(
        iss=iss,
        sub=sub,
        aud=aud_tuple,
        exp=exp,
        iat=iat,
        nonce=raw.get("nonce"),
        email=raw.get("email"),
        extra=extra,
    )


def parse_header_body(signing_input: bytes) -> tuple[JwtHeader, OidcClaims]:
    """Parse the two signed segments (as embedded in a certificate)."""
    parts = signing_input.split(b".")
    if len(parts) != 2:
        raise MalformedToken(f"expected header.body, got {len(parts)} segments")
    header = _parse_header(_decode_json_segment(parts[0], "header"))
    claims = _parse_claims(_decode_json_segment(parts[1], "body"))
    return header, claims


def parse_compact(token_bytes: bytes) -> OidcToken:
    """Parse a compact JWS; the signing input is retained verbatim."""
    if isinstance(token_bytes, str):
        token_bytes = token_bytes.encode("ascii")
    parts = token_bytes.strip().split(b".")
    if len(parts) == 5:
        raise EncryptedTokenDisallowed("five-segment (JWE) tokens are not accepted")
    if len(parts) != 3:
        raise MalformedToken(f"expected 3 dot-separated segments, got {len(parts)}")
    signing_input = parts[0] + b"." + parts[1]
    header, claims = parse_header_body(signing_input)
    try:
        signature = int_from_bytes(b64url_decode(parts[2]))
    except ValueError as exc:
        raise MalformedToken(f"signature segment is not base64url: {exc}") from exc
    return OidcToken(header=header, claims=claims, signature=signature, signing_input=signing_input)


def validate_claims(
    claims: OidcClaims,
    expected_aud: str,
    expected_iss: str,
    now: int,
    check_nonce: str | None = None,
    skew: int = DEFAULT_CLOCK_SKEW,
) -> str | None:
    """Return None when the claims are acceptable, else a reason code.

    The verifier profile passes check_nonce=None: it cannot know the nonce
    and must not reject on it.
    """
    if claims.iss != expected_iss:
        return "iss-mismatch"
    if expected_aud not in claims.aud:
        return "aud-mismatch"
    if now < claims.iat - skew:
        return "not-yet-valid"
    if now > claims.exp + skew:
        return "expired"
    if check_nonce is not None and claims.nonce != check_nonce:
        return "nonce-mismatch"
    return None


# ---------------------------------------------------------------------------
# RS256 / EMSA-PKCS1-v1_5
# ---------------------------------------------------------------------------

def emsa_encode(digest: bytes, modulus_len: int) -> int:
    """EMSA-PKCS1-v1_5 over a SHA-256 digest, as a big-endian integer."""
    if len(digest) != 32:
        raise InvalidParameter("digest must be 32 bytes (SHA-256)")
    trailer = SHA256_DIGEST_INFO + digest
    # RFC 8017: at least 8 bytes of 0xFF padding -> emLen >= |DigestInfo| + 11.
    if modulus_len < len(trailer) + 11:
        raise InvalidParameter(f"modulus length {modulus_len} too short for PKCS#1 v1.5")
    padding = b"\xff" * (modulus_len - len(trailer) - 3)
    return int_from_bytes(b"\x00\x01" + padding + b"\x00" + trailer)


def statement_int(signing_input: bytes, modulus: int) -> int:
    """The integer an RS256 signature must be an e-th root of, mod n."""
    modulus_len = (modulus.bit_length() + 7) // 8
    return emsa_encode(hashlib.sha256(signing_input).digest(), modulus_len)


def verify_rs256(pk: RsaPublicKey, token: OidcToken) -> bool:
    if token.header.alg != "RS256":
        raise UnsupportedAlgorithm(token.header.alg)
    if not 0 < token.signature < pk.modulus:
        return False
    expected = statement_int(token.signing_input, pk.modulus)
    return pow(token.signature, pk.public_exponent, pk.modulus) == expected


def select_candidates(jwks: Jwks, kid: str | None) -> tuple[RsaPublicKey, ...]:
    """Keys to try for a given kid; bounded trial-all fallback when absent."""
    if kid is not None:
        key = jwks.find(kid)
        if key is not None:
            return (key,)
    if len(jwks.keys) > KID_FALLBACK_LIMIT:
        raise KeyNotFound(f"kid {kid!r} not in key set and set too large to scan")
    return jwks.keys


def verify_with_jwks(jwks: Jwks, token: OidcToken) -> RsaPublicKey:
    """Return the key the token verifies under, or raise KeyNotFound."""
    candidates = select_candidates(jwks, token.header.kid)
    for key in candidates:
        if verify_rs256(key, token):
            return key
    raise KeyNotFound(f"no key in set verifies the token (kid={token.header.kid!r})")
