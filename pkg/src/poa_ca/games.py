"""Executable security games: completeness, unforgeability, replay.

Each game scripts concrete adversaries against a live in-process
topology and reports observed success counts.  The unforgeability
adversaries hold the CA signing key (the game's premise is a compromised
CA); the replay adversaries see only public artifacts.  A deliberately
vulnerable "embed the whole token" control confirms the harness can tell
a broken design from the real one.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from . import gq, jose
from .ca import build_leaf_certificate, claim_map, PoaCertificate
from .encoding import b64url_encode, int_to_bytes
from .idp import generate_rsa_key
from .jose import statement_int
from .topology import Testbed, build_testbed

TOY_MODULUS, TOY_EXPONENT, TOY_STATEMENT, TOY_ROOT = 77, 7, 15, 64


@dataclass
class GameReport:
    name: str
    trials: int
    successes: int
    passed: bool
    notes: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "successes": self.successes,
            "rate": self.rate,
            "passed": self.passed,
            "notes": self.notes,
        }


def wilson_interval(successes: int, trials: int, z: float = 2.5758) -> tuple[float, float]:
    """Wilson score interval; default z is the 99% two-sided quantile."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return center - half, center + half


# ---------------------------------------------------------------------------
# Completeness
# ---------------------------------------------------------------------------

def _random_identity(rng: random.Random) -> str:
    if rng.random() < 0.5:
        return f"user{rng.randrange(10**6)}@example.test"
    return f"https://ci.example.test/job/{rng.randrange(10**6)}"


def game_completeness(
    trials: int = 100,
    profile: str = "toy",
    seed: int = 0,
    rotate_every: int = 0,
) -> GameReport:
    """Issue-and-verify round trips; every one of them must accept."""
    testbed = build_testbed(profile=profile, seed=seed)
    rng = random.Random(seed + 1)
    successes = 0
    failures: list[dict] = []
    for trial in range(trials):
        sub = _random_identity(rng)
        lifetime = rng.randrange(60, 900)
        cert = testbed.request_certificate(sub, lifetime=lifetime)
        if rotate_every and (trial + 1) % rotate_every == 0:
            testbed.clock.advance(rng.randrange(1, 60))
            testbed.idp.rotate()
            testbed.clock.advance(rng.randrange(1, 60))
        report = testbed.verify(cert)
        if report.verdict:
            successes += 1
        elif len(failures) < 5:
            failures.append(report.to_json())
    return GameReport(
        name="completeness",
        trials=trials,
        successes=successes,
        passed=successes == trials,
        notes={"rotate_every": rotate_every, "failures": failures},
    )


# ---------------------------------------------------------------------------
# Unforgeability (adversary holds the CA key, never a token)
# ---------------------------------------------------------------------------

def _fabricated_signing_input(kid: str, iss: str, sub: str, aud: str, iat: int, lifetime: int = 300) -> bytes:
    header = {"alg": "RS256", "kid": kid, "typ": "JWT"}
    payload = {"iss": iss, "sub": sub, "aud": aud, "exp": iat + lifetime, "iat": iat}
    return (
        b64url_encode(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        + b"."
        + b64url_encode(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode())
    )


def forge_certificate(ca_key, ca_root, ct, signing_input: bytes, proof_wire: bytes, serial: int) -> PoaCertificate:
    """Rogue-CA assembly: correct shape, correct SCT, attacker-chosen proof.

    The CT log is not a validator, so the adversary gets a perfectly good
    timestamp for the forged precertificate.
    """
    from cryptography.hazmat.primitives import serialization
    from cryptography.hazmat.primitives.asymmetric import ed25519

    _header, claims = jose.parse_header_body(signing_input)
    fields = claim_map(claims)
    spki = (
        ed25519.Ed25519PrivateKey.generate()
        .public_key()
        .public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
    )
    precert = build_leaf_certificate(ca_key, ca_root, spki, fields, signing_input, proof_wire, serial, sct=None)
    sct, _ = ct.submit_precert(precert.tbs_certificate_bytes)
    final = build_leaf_certificate(ca_key, ca_root, spki, fields, signing_input, proof_wire, serial, sct=sct)
    return PoaCertificate(der=final.public_bytes(serialization.Encoding.DER))


def _forge_certificate(testbed: Testbed, signing_input: bytes, proof_wire: bytes) -> PoaCertificate:
    return forge_certificate(
        testbed.ca_signing_key,
        testbed.ca.root_certificate,
        testbed.ct,
        signing_input,
        proof_wire,
        testbed.rng.getrandbits(63) | 1,
    )


def gq_guessing_experiment(
    trials: int,
    rounds: int,
    seed: int = 0,
    public_exponent: int = 3,
    rsa_bits: int = 512,
) -> GameReport:
    """Interactive challenge-guessing forger against uniform challenges in [0, e).

    The classic per-round soundness experiment: without the signature, the
    best strategy is to guess the challenge and back-compute the commitment,
    succeeding with probability 1/e per round.
    """
    rng = random.Random(seed)
    key = generate_rsa_key(rsa_bits, public_exponent, rng)
    pk = key.public()
    statement = statement_int(b"soundness-experiment-message", pk.modulus)
    statement_inv = pow(statement, -1, pk.modulus)
    e, n = pk.public_exponent, pk.modulus
    successes = 0
    for _ in range(trials):
        accepted = True
        for _round in range(rounds):
            guess = rng.randrange(e)
            response = gq.rand_unit(n, rng)
            commitment = pow(response, e, n) * pow(statement_inv, guess, n) % n
            challenge = rng.randrange(e)  # the verifier's coin
            if not gq.round_check(pk, statement, commitment, response, challenge):
                accepted = False
                break
        successes += accepted
    lo, hi = wilson_interval(successes, trials)
    expected = (1 / e) ** rounds
    return GameReport(
        name=f"gq-guessing(e={public_exponent},t={rounds})",
        trials=trials,
        successes=successes,
        passed=True,  # callers assert on the rate; the experiment itself just measures
        notes={"ci99": [lo, hi], "expected_rate": expected},
    )


def game_unforgeability(
    trials: int = 1000,
    seed: int = 0,
    lambda_bits: int = 128,
) -> dict[str, GameReport]:
    """Scripted rogue-CA strategies; all must fail to produce accepted certs."""
    testbed = build_testbed(
        profile="toy", seed=seed, lambda_bits=lambda_bits, rsa_bits=512, public_exponent=65537
    )
    rng = random.Random(seed + 2)
    idp_key = testbed.idp.active_keys.keys[0]
    kid = idp_key.key_id
    issuer = testbed.ca.config.expected_issuer
    ca_id = testbed.ca.config.ca_id
    rounds = gq.round_count(lambda_bits, idp_key.public_exponent)

    # Public data the adversary may reuse: one honestly issued certificate.
    honest_cert = testbed.request_certificate("victim@example.test")
    honest_proof_wire = honest_cert.proof_bytes()

    reports: dict[str, GameReport] = {}

    def run_strategy(name: str, proof_for):
        successes = 0
        reject_steps: dict[int, int] = {}
        for trial in range(trials):
            sub = _random_identity(rng)
            signing_input = _fabricated_signing_input(kid, issuer, sub, ca_id, testbed.clock())
            cert = _forge_certificate(testbed, signing_input, proof_for(signing_input))
            report = testbed.verify(cert)
            if report.verdict:
                successes += 1
            else:
                step = report.failed_step()
                reject_steps[step] = reject_steps.get(step, 0) + 1
        reports[name] = GameReport(
            name=name,
            trials=trials,
            successes=successes,
            passed=successes == 0,
            notes={"reject_steps": reject_steps},
        )

    # (a) random bytes where the proof belongs
    run_strategy(
        "random-proof-bytes",
        lambda _si: bytes(rng.getrandbits(8) for _ in range(rng.randrange(8, 600))),
    )

    # (b) simulated transcripts spliced under the real transcript hash
    def simulated_proof(signing_input: bytes) -> bytes:
        statement = statement_int(signing_input, idp_key.modulus)
        chosen = tuple(rng.randrange(1 << gq.challenge_bits(idp_key.public_exponent)) for _ in range(rounds))
        commitments, responses = gq.simulate(idp_key, statement, chosen, rng)
        proof = gq.GqProof(
            rounds=rounds,
            challenge_bits=gq.challenge_bits(idp_key.public_exponent),
            commitments=commitments,
            responses=responses,
            key_id=kid,
        )
        return gq.encode_proof(proof, idp_key.byte_length)

    run_strategy("simulator-splice", simulated_proof)

    # (c) proof transplanted from a certificate for a different identity
    run_strategy("proof-transplant", lambda _si: honest_proof_wire)

    return reports


# ---------------------------------------------------------------------------
# Replay protection (adversary sees only the certificate)
# ---------------------------------------------------------------------------

def build_strawman_certificate(testbed: Testbed, sub: str, lifetime: int = 300) -> PoaCertificate:
    """The insecure design: the COMPLETE token, signature included, goes into
    the certificate.  Exists only so the replay harness has a positive control."""
    from cryptography.hazmat.primitives import serialization
    from cryptography.hazmat.primitives.asymmetric import ed25519

    token = testbed.idp.issue_token(sub, testbed.ca.config.ca_id, lifetime)
    modulus_len = testbed.idp.active_keys.keys[0].byte_length
    compact = token.to_compact(modulus_len)
    fields = claim_map(token.claims)
    spki = (
        ed25519.Ed25519PrivateKey.generate()
        .public_key()
        .public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
    )
    serial = testbed.rng.getrandbits(63) | 1
    precert = build_leaf_certificate(
        testbed.ca_signing_key, testbed.ca.root_certificate, spki, fields, compact, b"\x00", serial, sct=None
    )
    sct, _ = testbed.ct.submit_precert(precert.tbs_certificate_bytes)
    final = build_leaf_certificate(
        testbed.ca_signing_key, testbed.ca.root_certificate, spki, fields, compact, b"\x00", serial, sct=sct
    )
    return PoaCertificate(der=final.public_bytes(serialization.Encoding.DER))


def game_replay(trials: int = 1000, seed: int = 0) -> dict[str, GameReport]:
    """Token-recovery attempts from a certificate; the strawman control must win."""
    testbed = build_testbed(profile="toy", seed=seed)
    rng = random.Random(seed + 3)
    jwks = testbed.idp.active_keys

    def oidc_login_accepts(token_bytes: bytes) -> bool:
        """The relying-party oracle: does this parse and RS256-verify?"""
        try:
            token = jose.parse_compact(token_bytes)
            jose.verify_with_jwks(jwks, token)
            return True
        except jose.JoseError:
            return False

    # (a) re-attach bytes derived from the public certificate as a signature
    certs = [testbed.request_certificate(_random_identity(rng)) for _ in range(4)]
    successes = 0
    for trial in range(trials):
        cert = certs[trial % len(certs)]
        signing_input = cert.signing_input()
        proof_wire = cert.proof_bytes()
        choice = trial % 4
        if choice == 0:
            segment = proof_wire
        elif choice == 1:
            start = rng.randrange(0, max(1, len(proof_wire) - 64))
            segment = proof_wire[start : start + 64]
        elif choice == 2:
            segment = bytes(rng.getrandbits(8) for _ in range(64))
        else:
            proof, modulus_len = gq.decode_proof(proof_wire)
            segment = int_to_bytes(proof.responses[trial % proof.rounds], modulus_len)
        candidate = signing_input + b"." + b64url_encode(segment)
        if oidc_login_accepts(candidate):
            successes += 1
    reattach = GameReport(
        name="reattach-proof-bytes", trials=trials, successes=successes, passed=successes == 0
    )

    # (b) algebraic recombination z^i * T^j * X^k of one real transcript.
    # At real key sizes the group order dwarfs the exponent range, so no
    # combination can satisfy candidate^e = X: zero hits, structurally.
    recomb_bound = 5
    source_proof, _ = gq.decode_proof(certs[0].proof_bytes())
    idp_key = jwks.keys[0]
    statement = statement_int(certs[0].signing_input(), idp_key.modulus)
    challenges = gq.fiat_shamir(idp_key, statement, source_proof.commitments)
    commitment, response = source_proof.commitments[0], source_proof.responses[0]
    n = idp_key.modulus
    recomb_trials = 0
    recomb_successes = 0
    for i in range(-recomb_bound, recomb_bound + 1):
        for j in range(-recomb_bound, recomb_bound + 1):
            for k in range(-recomb_bound, recomb_bound + 1):
                recomb_trials += 1
                candidate = pow(response, i, n) * pow(commitment, j, n) * pow(statement, k, n) % n
                if pow(candidate, idp_key.public_exponent, n) == statement:
                    recomb_successes += 1
    recombination = GameReport(
        name="transcript-recombination",
        trials=recomb_trials,
        successes=recomb_successes,
        passed=recomb_successes == 0,
        notes={"round_challenge": challenges[0], "exponent_bound": recomb_bound},
    )

    # Toy-group audit: in Z_77 the unique 7th root of 15 is ALREADY public
    # (it equals a small power of the statement), so the only honest claim
    # is that a transcript adds nothing beyond public data.
    toy_audit = toy_recombination_audit(seed=seed)

    # control: the vulnerable design must be broken by the same adversary
    strawman = build_strawman_certificate(testbed, "victim@example.test")
    replayed_token = strawman.signing_input()
    control_success = oidc_login_accepts(replayed_token)
    control = GameReport(
        name="strawman-control",
        trials=1,
        successes=int(control_success),
        passed=control_success,  # the harness must DETECT the vulnerable design
        notes={"expected": "adversary succeeds against the full-token embedding"},
    )

    return {
        "reattach": reattach,
        "recombination": recombination,
        "toy_audit": toy_audit,
        "strawman_control": control,
    }


def toy_recombination_audit(seed: int = 0, exponent_bound: int = 5) -> GameReport:
    """Exhaustive recombination search in the 77-element toy group.

    The group is degenerate: every unit's order divides 30, so the search
    DOES recover e-th roots -- but only values an adversary computes from
    public data alone (exhaustive root search over the 60 units finds the
    same set without any transcript).  The audit asserts exactly that: no
    recombination success falls outside the public-search set.
    """
    n, e, statement = TOY_MODULUS, TOY_EXPONENT, TOY_STATEMENT
    pk = jose.RsaPublicKey(modulus=n, public_exponent=e, key_id="toy")
    public_roots = {
        x for x in range(1, n) if math.gcd(x, n) == 1 and pow(x, e, n) == statement
    }
    assert TOY_ROOT in public_roots
    trials = 0
    transcript_only_hits = 0
    hits = 0
    for challenge in range(1 << gq.challenge_bits(e)):
        nonce = gq.rand_unit(n, random.Random(seed + challenge))
        commitment = pow(nonce, e, n)
        response = nonce * pow(TOY_ROOT, challenge, n) % n
        assert gq.round_check(pk, statement, commitment, response, challenge)
        for i in range(-exponent_bound, exponent_bound + 1):
            for j in range(-exponent_bound, exponent_bound + 1):
                for k in range(-exponent_bound, exponent_bound + 1):
                    trials += 1
                    candidate = pow(response, i, n) * pow(commitment, j, n) * pow(statement, k, n) % n
                    if pow(candidate, e, n) == statement:
                        hits += 1
                        if candidate not in public_roots:
                            transcript_only_hits += 1
    return GameReport(
        name="toy-recombination-audit",
        trials=trials,
        successes=transcript_only_hits,
        passed=transcript_only_hits == 0,
        notes={"total_root_hits": hits, "public_roots": sorted(public_roots)},
    )
