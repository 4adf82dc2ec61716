"""In-process wiring of all parties for tests, games and the demo.

Everything shares one injectable clock and one seeded RNG so runs are
reproducible; no network is involved.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519

from .ca import CaConfig, CertificateAuthority, IssuanceRequest, PoaCertificate
from .ctlog import CtLog
from .idp import IdentityProvider
from .jose import Jwks
from .ledger import JwkLedger, Witness, make_witnesses
from .profiles import get_profile
from .verifier import TrustRoots, VerificationReport, verify

DEFAULT_START_TIME = 1_700_000_000


class ManualClock:
    """Injectable clock; every service in a testbed shares one instance."""

    def __init__(self, start: int = DEFAULT_START_TIME):
        self._now = start

    def __call__(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        self._now += seconds
        return self._now

    def set(self, value: int):
        self._now = value


@dataclass
class Testbed:
    clock: ManualClock
    rng: random.Random
    idp: IdentityProvider
    ledger: JwkLedger
    witnesses: list[Witness]
    ct: CtLog
    ca: CertificateAuthority
    trust: TrustRoots
    # held here so compromise scenarios can hand the CA key to an adversary
    ca_signing_key: ec.EllipticCurvePrivateKey = None

    def request_certificate(
        self,
        sub: str,
        lifetime: int = 300,
        aud: str | None = None,
    ) -> PoaCertificate:
        """The full requester flow: keypair, challenge, token, PoP, issue."""
        aud = aud if aud is not None else self.ca.config.ca_id
        subject_key = ed25519.Ed25519PrivateKey.generate()
        spki = subject_key.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )
        nonce = self.ca.challenge(spki)
        token = self.idp.issue_compact(sub, aud, lifetime, nonce=nonce)
        pop = subject_key.sign(nonce.encode("ascii"))
        request = IssuanceRequest(oidc_token=token, subject_public_key=spki, proof_of_possession=pop)
        return self.ca.issue(request)

    def verify(self, cert: PoaCertificate | bytes, online_ct: bool = True) -> VerificationReport:
        return verify(cert, self.trust, self.ledger, self.ct if online_ct else None)


def build_testbed(
    profile: str = "toy",
    seed: int = 0,
    start_time: int = DEFAULT_START_TIME,
    witness_count: int = 3,
    quorum: int = 2,
    ca_id: str = "poa-ca",
    issuer: str = "https://idp.example.test",
    lambda_bits: int | None = None,
    rsa_bits: int | None = None,
    public_exponent: int | None = None,
) -> Testbed:
    params = get_profile(profile)
    clock = ManualClock(start_time)
    rng = random.Random(seed)

    idp = IdentityProvider(
        issuer,
        rsa_bits=rsa_bits if rsa_bits is not None else params.rsa_bits,
        public_exponent=public_exponent if public_exponent is not None else params.public_exponent,
        rng=rng,
        clock=clock,
    )
    ledger = JwkLedger(clock=clock)

    def live_jwks(requested_issuer: str) -> Jwks | None:
        if requested_issuer != issuer:
            return None
        return Jwks.from_document(idp.jwks_document(), fetched_at=clock())

    witnesses = make_witnesses(witness_count, ledger, live_jwks, clock=clock)
    ct = CtLog(clock=clock)
    witness_keys = {w.witness_id: w.public_key() for w in witnesses}

    config = CaConfig(
        ca_id=ca_id,
        expected_issuer=issuer,
        lambda_bits=lambda_bits if lambda_bits is not None else params.security_bits,
    )
    ca_key = ec.generate_private_key(ec.SECP256R1())
    ca = CertificateAuthority(
        config=config,
        jwks_source=idp.jwks_document,
        ledger=ledger,
        ct=ct,
        ledger_key=ledger.public_key(),
        witness_keys=witness_keys,
        quorum=quorum,
        signing_key=ca_key,
        rng=rng,
        clock=clock,
    )
    trust = TrustRoots(
        ca_root=ca.root_certificate,
        ledger_key=ledger.public_key(),
        witness_keys=witness_keys,
        quorum=quorum,
        ct_key=ct.public_key(),
        expected_issuer=issuer,
        expected_ca_audience=ca_id,
        lambda_bits=config.lambda_bits,
    )
    return Testbed(
        clock=clock,
        rng=rng,
        idp=idp,
        ledger=ledger,
        witnesses=witnesses,
        ct=ct,
        ca=ca,
        trust=trust,
        ca_signing_key=ca_key,
    )
