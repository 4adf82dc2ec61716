"""Simulated OIDC identity provider.

A stand-in for the trusted token issuer: it generates RSA keys, signs
RS256 tokens for whoever asks (authentication itself is out of scope for
this artifact), rotates keys on command or on a timer, and serves a JWKS
document whose bytes are stable between rotations so that downstream
caches can detect changes by content hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import threading
import time
from dataclasses import dataclass

import gmpy2

from .encoding import b64url_encode
from .jose import Jwks, OidcClaims, OidcToken, JwtHeader, RsaPublicKey, emsa_encode

ALLOWED_MODULUS_BITS = (512, 2048)


@dataclass(frozen=True)
class RsaPrivateKey:
    p: int
    q: int
    n: int
    e: int
    d: int
    key_id: str

    def public(self) -> RsaPublicKey:
        return RsaPublicKey(modulus=self.n, public_exponent=self.e, key_id=self.key_id)

    @property
    def byte_length(self) -> int:
        return (self.n.bit_length() + 7) // 8


def _random_prime(bits: int, e: int, rng) -> int:
    # Top two bits forced so p*q has exactly 2*bits bits; the prime must
    # also keep e invertible mod p-1.
    while True:
        candidate = rng.getrandbits(bits) | (1 << bits - 1) | (1 << bits - 2) | 1
        if gmpy2.is_prime(candidate) and math.gcd(e, candidate - 1) == 1:
            return int(candidate)


def generate_rsa_key(bits: int, e: int, rng=None) -> RsaPrivateKey:
    """Fresh RSA keypair; retries prime draws until gcd(e, phi) = 1."""
    if bits not in ALLOWED_MODULUS_BITS:
        raise ValueError(f"modulus size must be one of {ALLOWED_MODULUS_BITS}, got {bits}")
    if e < 3 or e % 2 == 0:
        raise ValueError("public exponent must be odd and >= 3")
    rng = rng or random.SystemRandom()
    half = bits // 2
    while True:
        p = _random_prime(half, e, rng)
        q = _random_prime(half, e, rng)
        if p != q:
            break
    n = p * q
    d = pow(e, -1, math.lcm(p - 1, q - 1))
    key_id = hashlib.sha256(f"{n:x}:{e:x}".encode("ascii")).hexdigest()[:16]
    return RsaPrivateKey(p=p, q=q, n=n, e=e, d=d, key_id=key_id)


def sign_rs256(key: RsaPrivateKey, signing_input: bytes) -> int:
    padded = emsa_encode(hashlib.sha256(signing_input).digest(), key.byte_length)
    return pow(padded, key.d, key.n)


def _compact_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class IdentityProvider:
    """In-memory IdP with one active signing key and a rotation history.

    Rotation happens under a single writer lock; token issuance and JWKS
    reads work from immutable snapshots and never block each other.
    """

    def __init__(
        self,
        issuer_url: str,
        rsa_bits: int = 2048,
        public_exponent: int = 65537,
        rng=None,
        clock=None,
    ):
        self.issuer_url = issuer_url
        self._bits = rsa_bits
        self._e = public_exponent
        self._rng = rng or random.SystemRandom()
        self._clock = clock or (lambda: int(time.time()))
        self._lock = threading.Lock()
        self.retired_keys: list[tuple[Jwks, int]] = []
        self.rotation_counter = 0
        self._install_new_key()

    def _install_new_key(self):
        self._signing_key = generate_rsa_key(self._bits, self._e, self._rng)
        self.active_keys = Jwks(keys=(self._signing_key.public(),), fetched_at=self._clock())
        self._jwks_doc = self.active_keys.to_document()

    @property
    def active_kid(self) -> str:
        return self._signing_key.key_id

    def jwks_document(self) -> bytes:
        """Byte-stable between rotations; callers may hash it for change detection."""
        return self._jwks_doc

    def openid_configuration(self) -> dict:
        return {"issuer": self.issuer_url, "jwks_uri": "/jwks"}

    def issue_token(
        self,
        sub: str,
        aud: str,
        lifetime: int,
        nonce: str | None = None,
        now: int | None = None,
    ) -> OidcToken:
        if lifetime <= 0:
            raise ValueError("lifetime must be positive")
        now = self._clock() if now is None else now
        key = self._signing_key
        header = {"alg": "RS256", "kid": key.key_id, "typ": "JWT"}
        claims = OidcClaims(
            iss=self.issuer_url,
            sub=sub,
            aud=(aud,),
            exp=now + lifetime,
            iat=now,
            nonce=nonce,
            email=sub if "@" in sub else None,
        )
        signing_input = (
            b64url_encode(_compact_json(header))
            + b"."
            + b64url_encode(_compact_json(claims.to_payload()))
        )
        sigma = sign_rs256(key, signing_input)
        return OidcToken(
            header=JwtHeader(alg="RS256", kid=key.key_id, typ="JWT"),
            claims=claims,
            signature=sigma,
            signing_input=signing_input,
        )

    def issue_compact(self, sub: str, aud: str, lifetime: int, nonce: str | None = None, now: int | None = None) -> bytes:
        return self.issue_token(sub, aud, lifetime, nonce, now).to_compact(self._signing_key.byte_length)

    def rotate(self, now: int | None = None) -> None:
        """Retire the active key and start signing with a fresh one."""
        now = self._clock() if now is None else now
        with self._lock:
            self.retired_keys.append((self.active_keys, now))
            self._install_new_key()
            self.rotation_counter += 1
