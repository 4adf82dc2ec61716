from __future__ import annotations

import json
import random

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from poa_ca import jose
from poa_ca.encoding import b64url_decode, b64url_encode, int_from_bytes, int_to_bytes
from poa_ca.idp import IdentityProvider, generate_rsa_key, sign_rs256

# RFC 8017 DigestInfo prefix for SHA-256, written out independently here
# so the emsa tests do not trust the module constant.
ORACLE_DIGEST_INFO = bytes(
    [0x30, 0x31, 0x30, 0x0D, 0x06, 0x09, 0x60, 0x86, 0x48, 0x01, 0x65, 0x03, 0x04, 0x02, 0x01, 0x05, 0x00, 0x04, 0x20]
)


class TestB64Url:
    def test_round_trip(self, rng):
        for length in range(0, 70):
            data = bytes(rng.getrandbits(8) for _ in range(length))
            assert b64url_decode(b64url_encode(data)) == data

    def test_no_padding_chars(self):
        assert b"=" not in b64url_encode(b"x" * 10)

    def test_invalid_length(self):
        with pytest.raises(ValueError):
            b64url_decode(b"abcde")


class TestEmsaEncode:
    def test_oracle_construction_at_minimum_length(self):
        """62 bytes is the floor; build the expected encoding by hand."""
        digest = bytes(range(32))
        trailer = ORACLE_DIGEST_INFO + digest
        padding_bytes = 62 - len(trailer) - 3
        assert padding_bytes == 8  # exactly 8 bytes of 0xFF at the minimum
        expected = b"\x00\x01" + b"\xff" * 8 + b"\x00" + trailer
        assert jose.emsa_encode(digest, 62) == int_from_bytes(expected)

    def test_leading_bytes_are_00_01(self, rng):
        for modulus_len in (62, 64, 128, 256):
            digest = bytes(rng.getrandbits(8) for _ in range(32))
            encoded = int_to_bytes(jose.emsa_encode(digest, modulus_len), modulus_len)
            assert encoded[0] == 0x00 and encoded[1] == 0x01

    def test_distinct_digests_distinct_values(self):
        a = jose.emsa_encode(b"\x00" * 32, 64)
        b = jose.emsa_encode(b"\x01" + b"\x00" * 31, 64)
        assert a != b

    def test_too_short_modulus(self):
        with pytest.raises(jose.InvalidParameter):
            jose.emsa_encode(b"\x00" * 32, 61)
        with pytest.raises(jose.InvalidParameter):
            jose.emsa_encode(b"\x00" * 31, 64)


@pytest.fixture(scope="module")
def provider():
    return IdentityProvider(
        "https://idp.example.test",
        rsa_bits=512,
        public_exponent=7,
        rng=random.Random(7),
        clock=lambda: 1_700_000_000,
    )


class TestParseCompact:
    def test_round_trip_with_own_issuer(self, provider):
        token = provider.issue_token("alice@example.com", "poa-ca", 300)
        compact = token.to_compact(provider.active_keys.keys[0].byte_length)
        parsed = jose.parse_compact(compact)
        assert parsed.signing_input == token.signing_input
        assert parsed.signature == token.signature
        assert parsed.claims == token.claims
        # re-encoding the decoded JSON reproduces the embedded bytes
        header_json = json.loads(b64url_decode(parsed.signing_input.split(b".")[0]))
        assert b64url_encode(
            json.dumps(header_json, sort_keys=True, separators=(",", ":")).encode()
        ) == parsed.signing_input.split(b".")[0]

    def test_two_segments_malformed(self):
        with pytest.raises(jose.MalformedToken):
            jose.parse_compact(b"a.b")

    def test_jwe_five_segments_disallowed(self):
        """A syntactically plausible JWE compact envelope must be refused."""
        header = b64url_encode(json.dumps({"alg": "RSA-OAEP", "enc": "A256GCM"}).encode())
        parts = [header] + [b64url_encode(bytes(range(16)))] * 4
        with pytest.raises(jose.EncryptedTokenDisallowed):
            jose.parse_compact(b".".join(parts))

    def test_enc_header_disallowed_even_with_three_segments(self):
        header = b64url_encode(json.dumps({"alg": "RS256", "enc": "A128CBC-HS256"}).encode())
        body = b64url_encode(b"{}")
        with pytest.raises(jose.EncryptedTokenDisallowed):
            jose.parse_compact(header + b"." + body + b"." + b64url_encode(b"x"))

    def test_non_rs256_rejected(self):
        header = b64url_encode(json.dumps({"alg": "ES256", "kid": "k"}).encode())
        body = b64url_encode(
            json.dumps({"iss": "i", "sub": "s", "aud": "a", "exp": 2, "iat": 1}).encode()
        )
        with pytest.raises(jose.UnsupportedAlgorithm):
            jose.parse_compact(header + b"." + body + b"." + b64url_encode(b"x"))

    def test_garbage_segments_malformed(self):
        with pytest.raises(jose.MalformedToken):
            jose.parse_compact(b"!!!.???.###")

    @pytest.mark.parametrize(
        "claims",
        [
            {"iss": "i", "sub": "", "aud": "a", "exp": 2, "iat": 1},
            {"iss": "i", "sub": "s", "aud": [], "exp": 2, "iat": 1},
            {"iss": "i", "sub": "s", "aud": "a", "exp": 1, "iat": 2},
            {"iss": "i", "sub": "s", "aud": "a", "iat": 1},
        ],
    )
    def test_claim_invariants(self, claims):
        header = b64url_encode(json.dumps({"alg": "RS256", "kid": "k"}).encode())
        body = b64url_encode(json.dumps(claims).encode())
        with pytest.raises(jose.MalformedToken):
            jose.parse_compact(header + b"." + body + b"." + b64url_encode(b"\x01"))


def make_claims(**overrides):
    defaults = dict(iss="https://idp", sub="alice", aud=("ca",), exp=1000, iat=900)
    defaults.update(overrides)
    return jose.OidcClaims(**defaults)


class TestValidateClaims:
    def test_accepts_valid(self):
        assert jose.validate_claims(make_claims(), "ca", "https://idp", now=950) is None

    def test_expired_boundary(self):
        claims = make_claims(exp=949)
        assert jose.validate_claims(claims, "ca", "https://idp", now=950, skew=0) == "expired"
        assert jose.validate_claims(claims, "ca", "https://idp", now=949, skew=0) is None

    def test_not_yet_valid(self):
        assert jose.validate_claims(make_claims(iat=990), "ca", "https://idp", now=900, skew=0) == "not-yet-valid"

    def test_skew_tolerance(self):
        claims = make_claims(exp=949)
        assert jose.validate_claims(claims, "ca", "https://idp", now=1000, skew=60) is None

    def test_aud_list_membership(self):
        claims = make_claims(aud=("other", "poa-ca"))
        assert jose.validate_claims(claims, "poa-ca", "https://idp", now=950) is None
        assert jose.validate_claims(claims, "missing", "https://idp", now=950) == "aud-mismatch"

    def test_iss_mismatch(self):
        assert jose.validate_claims(make_claims(), "ca", "https://other", now=950) == "iss-mismatch"

    def test_nonce_checked_only_when_requested(self):
        claims = make_claims(nonce="abc")
        assert jose.validate_claims(claims, "ca", "https://idp", now=950, check_nonce="abc") is None
        assert jose.validate_claims(claims, "ca", "https://idp", now=950, check_nonce="xyz") == "nonce-mismatch"
        # the verifier profile never rejects on nonce
        assert jose.validate_claims(make_claims(nonce="arbitrary"), "ca", "https://idp", now=950) is None


class TestVerifyRs256:
    def test_own_issuer_round_trip(self, provider):
        token = provider.issue_token("bob@example.com", "poa-ca", 300)
        assert jose.verify_rs256(provider.active_keys.keys[0], token)

    def test_flipped_payload_rejected(self, provider):
        token = provider.issue_token("bob@example.com", "poa-ca", 300)
        tampered = bytearray(token.signing_input)
        tampered[-1] ^= 0x01
        mutated = jose.OidcToken(token.header, token.claims, token.signature, bytes(tampered))
        assert not jose.verify_rs256(provider.active_keys.keys[0], mutated)

    def test_cross_library_vectors(self):
        """Signatures from `cryptography` verify here, and vice versa."""
        private = rsa.generate_private_key(public_exponent=65537, key_size=2048)
        numbers = private.private_numbers()
        signing_input = b"eyJ0eXAiOiJKV1QifQ.eyJjcm9zcyI6ImNoZWNrIn0"
        reference = private.sign(signing_input, padding.PKCS1v15(), hashes.SHA256())
        pk = jose.RsaPublicKey(
            modulus=numbers.public_numbers.n, public_exponent=65537, key_id="xlib"
        )
        token = jose.OidcToken(
            header=jose.JwtHeader(alg="RS256", kid="xlib"),
            claims=make_claims(),
            signature=int_from_bytes(reference),
            signing_input=signing_input,
        )
        assert jose.verify_rs256(pk, token)

        ours = generate_rsa_key(512, 3, random.Random(3))
        # mirror our private key into cryptography and check its verdict on our signature
        sigma = sign_rs256(ours, signing_input)
        public = rsa.RSAPublicNumbers(ours.e, ours.n).public_key()
        public.verify(int_to_bytes(sigma, ours.byte_length), signing_input, padding.PKCS1v15(), hashes.SHA256())

    def test_sigma_out_of_range_rejected(self, provider):
        token = provider.issue_token("bob@example.com", "poa-ca", 300)
        pk = provider.active_keys.keys[0]
        too_big = jose.OidcToken(token.header, token.claims, pk.modulus + 5, token.signing_input)
        assert not jose.verify_rs256(pk, too_big)


class TestJwksSelection:
    def test_kid_fallback_when_absent(self, provider):
        token = provider.issue_token("carol@example.com", "poa-ca", 300)
        real = provider.active_keys.keys[0]
        renamed = jose.Jwks(
            keys=(jose.RsaPublicKey(real.modulus, real.public_exponent, "other-kid"),)
        )
        assert jose.verify_with_jwks(renamed, token).key_id == "other-kid"

    def test_fallback_bounded(self, provider, rng):
        token = provider.issue_token("carol@example.com", "poa-ca", 300)
        many = []
        for i in range(17):  # one over the scan bound
            key = generate_rsa_key(512, 7, rng)
            many.append(jose.RsaPublicKey(key.n, key.e, f"decoy-{i}"))
        with pytest.raises(jose.KeyNotFound):
            jose.verify_with_jwks(jose.Jwks(keys=tuple(many)), token)

    def test_wrong_keys_raise_key_not_found(self, provider, rng):
        token = provider.issue_token("carol@example.com", "poa-ca", 300)
        stranger = generate_rsa_key(512, 7, rng)
        jwks = jose.Jwks(keys=(stranger.public(),))
        with pytest.raises(jose.KeyNotFound):
            jose.verify_with_jwks(jwks, token)


class TestJwksDocument:
    def test_document_round_trip(self, provider):
        doc = provider.active_keys.to_document()
        parsed = jose.Jwks.from_document(doc)
        assert parsed.keys == provider.active_keys.keys
        assert parsed.to_document() == doc

    def test_duplicate_kid_rejected(self, provider):
        key = provider.active_keys.keys[0]
        with pytest.raises(ValueError):
            jose.Jwks(keys=(key, key))

    def test_non_rsa_rejected(self):
        doc = json.dumps({"keys": [{"kty": "EC", "kid": "e1"}]})
        with pytest.raises(ValueError):
            jose.Jwks.from_document(doc)
