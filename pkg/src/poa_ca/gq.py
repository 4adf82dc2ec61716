"""Proof of knowledge of an RSA signature (Guillou-Quisquater style).

The prover holds sigma with sigma^e = X (mod n), where X is the PKCS#1
v1.5 encoding of the signed message.  One round commits T = r^e for random
unit r, answers a challenge c with z = r * sigma^c, and verifies as
z^e = T * X^c (mod n).  A round convinces a cheating prover's verifier
with probability about 2^-b for b-bit challenges, so rounds are repeated
until the configured security level is met.  Challenges are derived from
a hash transcript over the key, the statement and all commitments, which
pins a proof to one key and one message.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .encoding import int_from_bytes, int_to_bytes, length_prefixed
from .jose import RsaPublicKey, statement_int

DOMAIN_TAG = b"poa-gq-v1"
WIRE_VERSION = 0x01


class GqError(Exception):
    pass


class InvalidExponent(GqError):
    pass


class SignatureMismatch(GqError):
    """Refusal to prove a statement the prover cannot actually satisfy."""


class ProofDecodeError(GqError):
    """Malformed wire bytes; distinct from an honest verification reject."""


class CannotSimulate(GqError):
    """The statement shares a factor with the modulus."""


def challenge_bits(e: int) -> int:
    """Challenge width floor(log2 e); keeps every challenge below e."""
    if e < 3 or e % 2 == 0:
        raise InvalidExponent(f"public exponent must be odd and >= 3, got {e}")
    return e.bit_length() - 1


def round_count(lambda_bits: int, e: int) -> int:
    """Rounds needed for lambda-bit soundness: ceil(lambda / floor(log2 e))."""
    if lambda_bits < 1:
        raise ValueError("security level must be >= 1 bit")
    return -(-lambda_bits // challenge_bits(e))


@dataclass(frozen=True)
class GqProof:
    rounds: int
    challenge_bits: int
    commitments: tuple[int, ...]
    responses: tuple[int, ...]
    key_id: str


def rand_unit(n: int, rng) -> int:
    """Uniform element of the units mod n; re-draws on a shared factor."""
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def round_check(pk: RsaPublicKey, statement: int, commitment: int, response: int, challenge: int) -> bool:
    """The per-round verification gate: ranges, units, and the GQ equation."""
    n, e = pk.modulus, pk.public_exponent
    for v in (commitment, response):
        if not 1 <= v < n or math.gcd(v, n) != 1:
            return False
    if not 0 <= challenge < e:
        return False
    return pow(response, e, n) == commitment * pow(statement, challenge, n) % n


def fiat_shamir(pk: RsaPublicKey, statement: int, commitments: tuple[int, ...], context: bytes = b"") -> tuple[int, ...]:
    """Derive one challenge chunk per commitment from the transcript hash.

    The seed hash binds the domain tag, n, e, the statement and every
    commitment; the bit stream is the seed digest itself when it is long
    enough and a counter-mode extension of it otherwise.
    """
    if not commitments:
        raise ValueError("commitments must be nonempty")
    t = len(commitments)
    b = challenge_bits(pk.public_exponent)
    h = hashlib.sha256()
    h.update(DOMAIN_TAG)
    h.update(length_prefixed(int_to_bytes(pk.modulus)))
    h.update(length_prefixed(int_to_bytes(pk.public_exponent)))
    h.update(length_prefixed(int_to_bytes(statement)))
    for commitment in commitments:
        h.update(length_prefixed(int_to_bytes(commitment)))
    h.update(length_prefixed(context))
    seed = h.digest()

    needed_bits = t * b
    if needed_bits <= 256:
        stream = seed
    else:
        blocks = []
        for counter in range(-(-needed_bits // 256)):
            blocks.append(hashlib.sha256(seed + counter.to_bytes(4, "big")).digest())
        stream = b"".join(blocks)

    acc = int.from_bytes(stream, "big")
    total_bits = 8 * len(stream)
    mask = (1 << b) - 1
    return tuple((acc >> (total_bits - (i + 1) * b)) & mask for i in range(t))


def prove(
    pk: RsaPublicKey,
    signing_input: bytes,
    sigma: int,
    lambda_bits: int,
    rng,
    key_id: str | None = None,
    context: bytes = b"",
) -> GqProof:
    """Prove knowledge of the RS256 signature on signing_input.

    Refuses to prove a false statement: a proof over an invalid sigma
    would produce an unverifiable certificate downstream.
    """
    n, e = pk.modulus, pk.public_exponent
    statement = statement_int(signing_input, n)
    if not 0 < sigma < n or pow(sigma, e, n) != statement:
        raise SignatureMismatch("sigma does not verify against the padded message")
    t = round_count(lambda_bits, e)
    nonces = [rand_unit(n, rng) for _ in range(t)]
    commitments = tuple(pow(r, e, n) for r in nonces)
    challenges = fiat_shamir(pk, statement, commitments, context)
    responses = tuple(r * pow(sigma, c, n) % n for r, c in zip(nonces, challenges))
    return GqProof(
        rounds=t,
        challenge_bits=challenge_bits(e),
        commitments=commitments,
        responses=responses,
        key_id=key_id if key_id is not None else pk.key_id,
    )


def verify_proof(
    pk: RsaPublicKey,
    signing_input: bytes,
    proof: GqProof,
    lambda_bits: int,
    context: bytes = b"",
) -> bool:
    """Accept iff the proof demonstrates lambda_bits of soundness for pk."""
    n, e = pk.modulus, pk.public_exponent
    try:
        statement = statement_int(signing_input, n)
        expected_rounds = round_count(lambda_bits, e)
    except (GqError, ValueError):
        return False
    if proof.rounds != expected_rounds or proof.challenge_bits != challenge_bits(e):
        return False
    if len(proof.commitments) != proof.rounds or len(proof.responses) != proof.rounds:
        return False
    challenges = fiat_shamir(pk, statement, proof.commitments, context)
    return all(
        round_check(pk, statement, commitment, response, challenge)
        for commitment, response, challenge in zip(proof.commitments, proof.responses, challenges)
    )


def simulate(pk: RsaPublicKey, statement: int, challenges: tuple[int, ...], rng) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Transcripts for GIVEN challenges, distributed exactly like honest ones.

    Picks the response first and back-computes the commitment; useful for
    zero-knowledge testing of interactive transcripts.  It cannot program
    the transcript hash, so simulated rounds never pass verify_proof.
    """
    n, e = pk.modulus, pk.public_exponent
    b = challenge_bits(e)
    if any(not 0 <= c < (1 << b) for c in challenges):
        raise ValueError("challenge out of range for the chunk width")
    if math.gcd(statement % n, n) != 1:
        raise CannotSimulate("statement shares a factor with the modulus")
    statement_inv = pow(statement, -1, n)
    commitments, responses = [], []
    for c in challenges:
        z = rand_unit(n, rng)
        commitments.append(pow(z, e, n) * pow(statement_inv, c, n) % n)
        responses.append(z)
    return tuple(commitments), tuple(responses)


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------
# byte 0: version; byte 1: rounds t; byte 2: challenge width b;
# bytes 3-4: modulus length L (big-endian); then t L-byte commitments,
# t L-byte responses, a 1-byte key-id length and the key id.

def encode_proof(proof: GqProof, modulus_len: int) -> bytes:
    if not 1 <= proof.rounds <= 255:
        raise ValueError("rounds must fit one byte")
    kid = proof.key_id.encode("utf-8")
    if len(kid) > 255:
        raise ValueError("key id too long")
    out = bytearray()
    out.append(WIRE_VERSION)
    out.append(proof.rounds)
    out.append(proof.challenge_bits)
    out += modulus_len.to_bytes(2, "big")
    for value in proof.commitments:
        out += int_to_bytes(value, modulus_len)
    for value in proof.responses:
        out += int_to_bytes(value, modulus_len)
    out.append(len(kid))
    out += kid
    return bytes(out)


def decode_proof(data: bytes) -> tuple[GqProof, int]:
    """Decode wire bytes into (proof, modulus_len); strict about length."""
    if len(data) < 6:
        raise ProofDecodeError("truncated header")
    if data[0] != WIRE_VERSION:
        raise ProofDecodeError(f"unsupported version {data[0]:#x}")
    t = data[1]
    b = data[2]
    modulus_len = int.from_bytes(data[3:5], "big")
    if t < 1 or b < 1 or modulus_len < 1:
        raise ProofDecodeError("zero-valued header field")
    body_end = 5 + 2 * t * modulus_len
    if len(data) < body_end + 1:
        raise ProofDecodeError("truncated proof body")
    kid_len = data[body_end]
    if len(data) != body_end + 1 + kid_len:
        raise ProofDecodeError("trailing or missing bytes")
    values = [
        int_from_bytes(data[5 + i * modulus_len : 5 + (i + 1) * modulus_len])
        for i in range(2 * t)
    ]
    try:
        key_id = data[body_end + 1 :].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProofDecodeError("key id is not UTF-8") from exc
    proof = GqProof(
        rounds=t,
        challenge_bits=b,
        commitments=tuple(values[:t]),
        responses=tuple(values[t:]),
        key_id=key_id,
    )
    return proof, modulus_len


def proof_wire_size(rounds: int, modulus_len: int, key_id_len: int) -> int:
    """Exact wire size: 5 + 2*t*L + 1 + |kid|."""
    return 5 + 2 * rounds * modulus_len + 1 + key_id_len
