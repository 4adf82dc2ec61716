"""Acceptance criteria, one test per criterion, at the stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one pass/fail line
per criterion with its runtime.
"""

from __future__ import annotations

import hashlib
import json
import random
import time

import pytest
from click.testing import CliRunner
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from poa_ca import der, gq, merkle
from poa_ca.ca import IssuanceRequest
from poa_ca.cli import main as cli_main
from poa_ca.encoding import b64url_encode, int_to_bytes
from poa_ca.games import (
    _fabricated_signing_input,
    _forge_certificate,
    game_completeness,
    game_replay,
    gq_guessing_experiment,
    wilson_interval,
)
from poa_ca.idp import generate_rsa_key
from poa_ca.jose import Jwks, parse_compact, statement_int
from poa_ca.ledger import (
    JwkLedger,
    SignedDigest,
    UnknownAtTime,
    check_bracket,
    check_quorum,
    entry_body,
    make_witnesses,
)
from poa_ca.topology import build_testbed
from poa_ca.verifier import MalformedCertificate, verify


class Budget:
    def __init__(self, criterion: int, description: str, seconds: float):
        self.criterion = criterion
        self.description = description
        self.seconds = seconds

    def __enter__(self):
        self.started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.started
        status = "PASS" if exc_type is None else "FAIL"
        print(f"[{status}] criterion {self.criterion}: {self.description} ({elapsed:.1f}s)")
        if exc_type is None:
            assert elapsed < self.seconds, (
                f"criterion {self.criterion} exceeded its {self.seconds}s budget ({elapsed:.1f}s)"
            )
        return False


def test_criterion_01_completeness():
    with Budget(1, "100/100 randomized end-to-end issuances verify", 60):
        report = game_completeness(trials=100, profile="toy", seed=2024)
        assert report.successes == report.trials == 100, report.notes


def test_criterion_02_per_round_soundness():
    with Budget(2, "challenge-guessing forger at e=3, t=1: 99% CI contains 1/3", 60):
        report = gq_guessing_experiment(trials=3000, rounds=1, seed=11)
        low, high = wilson_interval(report.successes, report.trials)
        assert low <= 1 / 3 <= high, (report.successes, low, high)


def test_criterion_03_soundness_amplification():
    with Budget(3, "same forger at e=3, t=8: success rate < 0.01 over 10000 trials", 120):
        report = gq_guessing_experiment(trials=10000, rounds=8, seed=12)
        assert report.rate < 0.01, report.successes


def test_criterion_04_round_count_formula():
    with Budget(4, "round_count(128, 65537) = 8 and round_count(64, 7) = 32", 5):
        assert gq.round_count(128, 65537) == 8
        assert gq.round_count(64, 7) == 32


def test_criterion_05_replay_protection():
    with Budget(5, "0 forged tokens in 1000 trials; strawman control succeeds", 60):
        reports = game_replay(trials=1000, seed=2025)
        assert reports["reattach"].successes == 0
        assert reports["reattach"].trials == 1000
        assert reports["recombination"].successes == 0
        assert reports["toy_audit"].passed
        assert reports["strawman_control"].successes == 1  # the vulnerable design falls


def test_criterion_06_never_embed_signature():
    with Budget(6, "RSA signature bytes absent from 200 issued certificates", 60):
        testbed = build_testbed(profile="toy", seed=2026)
        modulus_len = testbed.idp.active_keys.keys[0].byte_length
        for i in range(200):
            subject_key = ed25519.Ed25519PrivateKey.generate()
            spki = subject_key.public_key().public_bytes(
                serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
            )
            nonce = testbed.ca.challenge(spki)
            token_bytes = testbed.idp.issue_compact(f"user{i}@example.test", "poa-ca", 300, nonce=nonce)
            sigma = parse_compact(token_bytes).signature
            sigma_b64 = token_bytes.rsplit(b".", 1)[1]
            cert = testbed.ca.issue(
                IssuanceRequest(token_bytes, spki, subject_key.sign(nonce.encode()))
            )
            assert int_to_bytes(sigma, modulus_len) not in cert.der, i
            assert int_to_bytes(sigma) not in cert.der, i
            assert sigma_b64 not in cert.der, i


def _oracle_root(bodies: list[bytes]) -> bytes:
    if not bodies:
        return hashlib.sha256(b"").digest()
    level = [hashlib.sha256(b"\x00" + body).digest() for body in bodies]
    while len(level) > 1:
        nxt = [
            hashlib.sha256(b"\x01" + level[i] + level[i + 1]).digest()
            for i in range(0, len(level) - 1, 2)
        ]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@pytest.fixture(scope="module")
def jwks_pool():
    return [Jwks(keys=(generate_rsa_key(512, 7, random.Random(seed)).public(),)) for seed in range(6)]


def test_criterion_07_ledger_integrity(jwks_pool):
    with Budget(7, "exhaustive inclusion/consistency vs rebuild oracle (size <= 32); rewrites break", 30):
        clock = {"now": 1_700_000_000}
        ledger = JwkLedger(clock=lambda: clock["now"])
        live = {"jwks": jwks_pool[0]}
        make_witnesses(3, ledger, lambda _issuer: live["jwks"], clock=lambda: clock["now"])
        bodies = []
        for i in range(32):
            snapshot = jwks_pool[i % len(jwks_pool)]
            if i % len(jwks_pool) == 0 and i > 0:
                snapshot = jwks_pool[1 if (i // len(jwks_pool)) % 2 else 2]
            live["jwks"] = snapshot
            clock["now"] += 10
            result = ledger.append(f"https://idp-{i}.example", snapshot)
            assert not result.duplicate
            entry = result.entry
            bodies.append(entry_body(entry.issuer, entry.recorded_at, entry.jwks))

        # every inclusion proof against a from-scratch rebuilt root
        for size in range(1, 33):
            root = _oracle_root(bodies[:size])
            assert ledger._tree.root(size) == root, size
            for index in range(size):
                proof = ledger.prove_inclusion(index, size)
                leaf = hashlib.sha256(b"\x00" + bodies[index]).digest()
                assert merkle.verify_inclusion(leaf, index, size, list(proof.path), root), (index, size)

        # every consistency pair against rebuilt prefix roots
        for old in range(1, 33):
            for new in range(old, 33):
                proof = ledger.prove_consistency(old, new)
                assert merkle.verify_consistency(
                    old, new, _oracle_root(bodies[:old]), _oracle_root(bodies[:new]), list(proof.path)
                ), (old, new)

        # any single rewritten leaf breaks consistency against a pinned root
        pinned = _oracle_root(bodies[:8])
        for rewritten in range(8):
            evil_bodies = list(bodies[:10])
            evil_bodies[rewritten] = entry_body("https://evil.example", 1, jwks_pool[3])
            evil_tree = merkle.MerkleTree()
            for body in evil_bodies:
                evil_tree.append_leaf(body)
            evil_proof = evil_tree.consistency_path(8, 10)
            assert not merkle.verify_consistency(
                8, 10, pinned, evil_tree.root(10), evil_proof
            ), rewritten


def test_criterion_08_bracket_correctness(jwks_pool):
    with Budget(8, "50 randomized rotation schedules: brackets match a linear-scan oracle", 30):
        rng = random.Random(2028)
        issuer = "https://idp.example.test"
        for schedule in range(50):
            clock = {"now": 1_700_000_000}
            ledger = JwkLedger(clock=lambda: clock["now"])
            live = {"jwks": jwks_pool[0]}
            witnesses = make_witnesses(3, ledger, lambda _i: live["jwks"], clock=lambda: clock["now"])
            witness_keys = {w.witness_id: w.public_key() for w in witnesses}

            timeline = []  # (recorded_at, index into pool)
            count = rng.randrange(2, 6)
            for step in range(count):
                clock["now"] += rng.randrange(10, 500)
                snapshot = jwks_pool[(step + schedule) % len(jwks_pool)]
                live["jwks"] = snapshot
                result = ledger.append(issuer, snapshot)
                timeline.append((result.entry.recorded_at, result.entry.index))

            for _query in range(8):
                t = 1_700_000_000 + rng.randrange(0, clock["now"] - 1_700_000_000 + 400)
                clock["now"] = max(clock["now"], t)  # the ledger may re-timestamp
                expected = [entry for entry in timeline if entry[0] <= t]
                if not expected:
                    with pytest.raises(UnknownAtTime):
                        ledger.query_at(issuer, t)
                    continue
                bracket = ledger.query_at(issuer, t)
                assert check_quorum(bracket.digest, ledger.public_key(), witness_keys, 2).ok
                assert check_bracket(bracket, issuer, t, ledger.public_key(), witness_keys, 2) is None
                # linear-scan oracle over the honest append history
                assert bracket.before.index == expected[-1][1]
                later = [entry for entry in timeline if entry[0] > t]
                if later:
                    assert bracket.after is not None and bracket.after.index == later[0][1]
                else:
                    assert bracket.after is None


def test_criterion_09_rotation_survival():
    with Budget(9, "certificates verify after >= 3 subsequent key rotations", 60):
        testbed = build_testbed(profile="toy", seed=2029)
        cert = testbed.request_certificate("survivor@example.test")
        assert testbed.verify(cert).verdict
        for _rotation in range(3):
            testbed.clock.advance(300)
            testbed.idp.rotate()
            testbed.clock.advance(300)
            testbed.request_certificate("later@example.test")  # records the new key set
        report = testbed.verify(cert)
        assert report.verdict, report.to_json()


def test_criterion_10_compromise_scenarios():
    with Budget(10, "rogue-CA cert rejects at step 6; pinned client detects ledger rewrite", 60):
        # (a) adversary holds the CA key but no valid token
        testbed = build_testbed(profile="toy", seed=2030)
        testbed.request_certificate("primer@example.test")
        rng = random.Random(1)
        for _ in range(5):
            signing_input = _fabricated_signing_input(
                testbed.idp.active_kid,
                testbed.ca.config.expected_issuer,
                f"victim{rng.randrange(999)}@example.test",
                testbed.ca.config.ca_id,
                testbed.clock(),
            )
            forged = _forge_certificate(
                testbed, signing_input, bytes(rng.getrandbits(8) for _ in range(200))
            )
            report = testbed.verify(forged)
            assert not report.verdict
            assert report.failed_step() == 6, report.to_json()

        # (b) CA + ledger + witnesses compromised: a client that pinned an
        # earlier digest catches the rewrite through the consistency proof
        for _ in range(3):
            testbed.clock.advance(120)
            testbed.idp.rotate()
            testbed.request_certificate("x@example.test")
        pinned = testbed.ledger.digest()
        honest_bodies = [
            entry_body(e.issuer, e.recorded_at, e.jwks)
            for e in (testbed.ledger.entry(i) for i in range(testbed.ledger.size))
        ]
        evil_bodies = list(honest_bodies)
        evil_bodies[1] = entry_body(
            testbed.ca.config.expected_issuer,
            testbed.ledger.entry(1).recorded_at,
            Jwks(keys=(generate_rsa_key(512, 7, rng).public(),)),
        )
        evil_tree = merkle.MerkleTree()
        for body in evil_bodies:
            evil_tree.append_leaf(body)
        evil_tree.append_leaf(entry_body("pad", 9, Jwks(keys=())))
        new_size = len(evil_bodies) + 1
        # the compromised parties re-sign the forged digest with the REAL keys
        unsigned = SignedDigest(
            tree_size=new_size,
            root_hash=evil_tree.root(new_size),
            timestamp=testbed.clock(),
            log_signature=b"",
        )
        import dataclasses

        evil_digest = dataclasses.replace(
            unsigned,
            log_signature=testbed.ledger._key.sign(unsigned.signed_bytes),
            witness_cosignatures=tuple(
                (w.witness_id, w._key.sign(unsigned.signed_bytes)) for w in testbed.witnesses
            ),
        )
        trust_keys = {w.witness_id: w.public_key() for w in testbed.witnesses}
        assert check_quorum(evil_digest, testbed.ledger.public_key(), trust_keys, 2).ok
        evil_proof = evil_tree.consistency_path(pinned.tree_size, new_size)
        assert not merkle.verify_consistency(
            pinned.tree_size,
            new_size,
            pinned.root_hash,
            evil_digest.root_hash,
            evil_proof,
        ), "pinned client failed to detect the rewrite"
        # while the honest log still proves consistency to the same client
        honest_digest = testbed.ledger.digest()
        honest_proof = testbed.ledger.prove_consistency(pinned.tree_size, honest_digest.tree_size)
        assert merkle.verify_consistency(
            pinned.tree_size,
            honest_digest.tree_size,
            pinned.root_hash,
            honest_digest.root_hash,
            list(honest_proof.path),
        )


def test_criterion_11_size_report():
    with Budget(11, "bench at lambda=128, 2048-bit n: proof is exactly 4102+|kid| bytes", 120):
        result = CliRunner().invoke(cli_main, ["bench", "--profile", "default", "--seed", "7", "--json"])
        assert result.exit_code == 0, result.output
        data = json.loads(result.output)
        assert data["lambda_bits"] == 128 and data["modulus_bits"] == 2048
        assert data["proof_bytes"] == 4102 + data["kid_bytes"]
        assert data["proof_bytes"] == data["proof_bytes_formula"]
        assert "size_ratio" in data  # reported, deliberately not asserted


def test_criterion_12_extension_mutation_suite():
    with Budget(12, "500 sampled single-byte mutations of the custom extensions all reject", 120):
        testbed = build_testbed(profile="toy", seed=2032)
        cert = testbed.request_certificate("mutation@example.test")
        assert testbed.verify(cert).verdict

        tbs = cert.certificate.tbs_certificate_bytes
        tbs_offset = cert.der.find(tbs)
        assert tbs_offset > 0
        ranges = der.extension_ranges(tbs)
        spans = [
            ranges[der.oid_value(cert.oids.jwt).hex()],
            ranges[der.oid_value(cert.oids.proof).hex()],
        ]
        positions = [offset for start, end in spans for offset in range(start, end)]
        rng = random.Random(2033)
        rejected = 0
        for _ in range(500):
            position = tbs_offset + rng.choice(positions)
            mutation = rng.randrange(1, 256)
            mutated = bytearray(cert.der)
            mutated[position] ^= mutation
            try:
                report = verify(bytes(mutated), testbed.trust, testbed.ledger, testbed.ct)
                assert not report.verdict, (position, mutation)
            except MalformedCertificate:
                pass  # unparseable mutants count as rejected
            rejected += 1
        assert rejected == 500
