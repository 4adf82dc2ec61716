from __future__ import annotations

import math
import random

import pytest

from poa_ca import jose
from poa_ca.idp import IdentityProvider, generate_rsa_key


@pytest.fixture()
def provider():
    clock = {"now": 1_700_000_000}
    idp = IdentityProvider(
        "https://idp.example.test",
        rsa_bits=512,
        public_exponent=7,
        rng=random.Random(11),
        clock=lambda: clock["now"],
    )
    idp._test_clock = clock  # let tests move time
    return idp


class TestGenerate:
    def test_parameter_echo(self):
        key = generate_rsa_key(512, 65537, random.Random(1))
        assert key.n.bit_length() == 512
        assert key.e == 65537

    def test_private_exponent_oracle(self):
        """d*e = 1 (mod lcm(p-1, q-1)), checked with the stdlib."""
        for seed in range(3):
            key = generate_rsa_key(512, 7, random.Random(seed))
            assert key.d * key.e % math.lcm(key.p - 1, key.q - 1) == 1
            assert key.p != key.q
            assert key.p * key.q == key.n

    def test_self_issued_token_verifies(self, provider):
        token = provider.issue_token("toy@example.com", "poa-ca", 60)
        assert jose.verify_rs256(provider.active_keys.keys[0], token)

    def test_rejected_sizes_and_exponents(self):
        with pytest.raises(ValueError):
            generate_rsa_key(1024, 65537)
        with pytest.raises(ValueError):
            generate_rsa_key(512, 4)


class TestIssueToken:
    def test_claims_and_kid(self, provider):
        token = provider.issue_token("alice@example.com", "poa-ca", 300, nonce="n1")
        assert token.claims.iss == "https://idp.example.test"
        assert token.claims.iat == 1_700_000_000
        assert token.claims.exp == 1_700_000_300
        assert token.claims.nonce == "n1"
        assert token.header.kid == provider.active_kid

    def test_deterministic_signatures(self, provider):
        """Identical payloads must produce byte-identical compact tokens."""
        first = provider.issue_compact("alice@example.com", "poa-ca", 300)
        second = provider.issue_compact("alice@example.com", "poa-ca", 300)
        assert first == second
        different = provider.issue_compact("alice@example.com", "poa-ca", 301)
        assert different != first

    def test_lifetime_positive(self, provider):
        with pytest.raises(ValueError):
            provider.issue_token("a@b.c", "poa-ca", 0)


class TestRotate:
    def test_single_fresh_key_after_rotate(self, provider):
        old_kid = provider.active_kid
        provider.rotate()
        assert len(provider.active_keys.keys) == 1
        assert provider.active_kid != old_kid
        assert provider.rotation_counter == 1
        assert len(provider.retired_keys) == 1

    def test_old_token_fails_against_new_jwks(self, provider):
        token = provider.issue_token("alice@example.com", "poa-ca", 300)
        provider.rotate()
        with pytest.raises(jose.KeyNotFound):
            jose.verify_with_jwks(provider.active_keys, token)

    def test_retired_key_never_signs(self, provider):
        provider.rotate()
        token = provider.issue_token("alice@example.com", "poa-ca", 300)
        assert token.header.kid == provider.active_kid
        retired_jwks, _ = provider.retired_keys[0]
        assert token.header.kid not in {k.key_id for k in retired_jwks.keys}


class TestJwksEndpoint:
    def test_byte_stable_between_rotations(self, provider):
        first = provider.jwks_document()
        provider.issue_token("x@y.z", "poa-ca", 60)
        assert provider.jwks_document() == first
        assert provider.jwks_document() is first or provider.jwks_document() == first
        provider.rotate()
        assert provider.jwks_document() != first

    def test_openid_configuration(self, provider):
        config = provider.openid_configuration()
        assert config["issuer"] == "https://idp.example.test"
        assert "jwks_uri" in config
