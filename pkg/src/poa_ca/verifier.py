"""Certificate verification against out-of-band trust roots.

Seven ordered checks, short-circuiting at the first failure:

  1. certificate signature and the embedded signed timestamp
  2. adopt the timestamp as "current time" (never the wall clock)
  3. extract and parse the embedded token header and body
  4. claim checks against that time (signature and nonce excluded)
  5. resolve the key set at that time from the JWK Ledger
  6. check the signature proof-of-knowledge against the resolved keys
  7. re-run the claim mapping and compare with the certificate fields

The verifier reads no clock of its own: every time comparison uses the
cosigned timestamp from step 2.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from . import gq, jose
from .ca import CaOids, PoaCertificate, claim_map
from .ctlog import verify_sct
from .der import DerError
from .ledger import LedgerError, check_bracket
from .merkle import verify_inclusion

STEP_NAMES = {
    1: "certificate-and-sct",
    2: "current-time-from-sct",
    3: "extract-token",
    4: "claim-checks",
    5: "key-set-at-time",
    6: "proof-of-knowledge",
    7: "claim-mapping",
}


class MalformedCertificate(Exception):
    """Input is not a proof-carrying certificate at all (distinct from reject)."""


@dataclass(frozen=True)
class TrustRoots:
    ca_root: x509.Certificate
    ledger_key: Ed25519PublicKey
    witness_keys: dict[str, Ed25519PublicKey]
    quorum: int
    ct_key: Ed25519PublicKey
    expected_issuer: str
    expected_ca_audience: str
    lambda_bits: int
    oids: CaOids = field(default_factory=CaOids)

    def __post_init__(self):
        if self.quorum > len(self.witness_keys):
            raise ValueError("quorum exceeds the number of configured witnesses")


@dataclass(frozen=True)
class StepResult:
    step: int
    name: str
    passed: bool
    reason: str | None = None


@dataclass(frozen=True)
class VerificationReport:
    verdict: bool
    steps: tuple[StepResult, ...]
    current_time_used: int | None
    offline_ct: bool = False

    def to_json(self) -> dict:
        return {
            "verdict": "accept" if self.verdict else "reject",
            "current_time_used": self.current_time_used,
            "offline_ct": self.offline_ct,
            "steps": [
                {"step": s.step, "name": s.name, "passed": s.passed, "reason": s.reason}
                for s in self.steps
            ],
        }

    def failed_step(self) -> int | None:
        for s in self.steps:
            if not s.passed:
                return s.step
        return None


class _StepFailure(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _load_certificate(cert: PoaCertificate | bytes, oids: CaOids) -> PoaCertificate:
    if isinstance(cert, PoaCertificate):
        return PoaCertificate(der=cert.der, oids=oids)
    data = bytes(cert)
    if b"-----BEGIN CERTIFICATE-----" in data:
        try:
            parsed = x509.load_pem_x509_certificate(data)
        except ValueError as exc:
            raise MalformedCertificate(f"PEM does not parse: {exc}") from exc
        return PoaCertificate(der=parsed.public_bytes(serialization.Encoding.DER), oids=oids)
    try:
        x509.load_der_x509_certificate(data)
    except ValueError as exc:
        raise MalformedCertificate(f"DER does not parse: {exc}") from exc
    return PoaCertificate(der=data, oids=oids)


def _require_extension(poa: PoaCertificate, getter, what: str):
    try:
        return getter()
    except x509.ExtensionNotFound as exc:
        raise MalformedCertificate(f"missing extension: {what}") from exc
    except (ValueError, DerError, KeyError, json.JSONDecodeError) as exc:
        raise _StepFailure(f"{what}-unreadable: {exc}") from exc


def verify(
    cert: PoaCertificate | bytes,
    trust: TrustRoots,
    ledger,
    ct=None,
) -> VerificationReport:
    """Run the seven checks; `ct=None` means the CT log is unreachable and
    only the SCT signature is checked (flagged in the report)."""
    poa = _load_certificate(cert, trust.oids)
    certificate = poa.certificate
    steps: list[StepResult] = []
    current_time: int | None = None
    offline_ct = ct is None

    def run(step: int, fn) -> bool:
        try:
            fn()
        except _StepFailure as failure:
            steps.append(StepResult(step, STEP_NAMES[step], False, failure.reason))
            return False
        except (LedgerError, jose.JoseError, gq.GqError) as exc:
            steps.append(StepResult(step, STEP_NAMES[step], False, f"{type(exc).__name__}: {exc}"))
            return False
        steps.append(StepResult(step, STEP_NAMES[step], True))
        return True

    state: dict = {}

    # 1. X.509 signature against the CA root, SCT signature, CT inclusion.
    def step1():
        if certificate.issuer != trust.ca_root.subject:
            raise _StepFailure("issuer-name-mismatch")
        ca_public = trust.ca_root.public_key()
        try:
            ca_public.verify(
                certificate.signature,
                certificate.tbs_certificate_bytes,
                ec.ECDSA(certificate.signature_hash_algorithm),
            )
        except InvalidSignature:
            raise _StepFailure("ca-signature-invalid") from None
        sct = _require_extension(poa, poa.sct, "sct")
        try:
            precert_tbs = poa.precert_tbs()
        except DerError as exc:
            raise _StepFailure(f"precert-tbs-unrecoverable: {exc}") from exc
        if not verify_sct(sct, precert_tbs, trust.ct_key):
            raise _StepFailure("sct-signature-invalid")
        state["sct"] = sct
        if ct is not None:
            tbs_hash = hashlib.sha256(precert_tbs).digest()
            index = ct.lookup(tbs_hash)
            if index is None:
                raise _StepFailure("ct-inclusion-not-found")
            digest = ct.digest()
            try:
                trust.ct_key.verify(digest.log_signature, digest.signed_bytes)
            except InvalidSignature:
                raise _StepFailure("ct-digest-signature-invalid") from None
            proof = ct.prove_inclusion(index, digest.tree_size)
            if not verify_inclusion(
                ct.leaf_hash_at(index), index, digest.tree_size, list(proof.path), digest.root_hash
            ):
                raise _StepFailure("ct-inclusion-invalid")

    # 2. The SCT timestamp is the only "now" used from here on.
    def step2():
        nonlocal current_time
        current_time = state["sct"].timestamp_ms // 1000
        not_before = int(certificate.not_valid_before_utc.timestamp())
        not_after = int(certificate.not_valid_after_utc.timestamp())
        if not not_before <= current_time <= not_after:
            raise _StepFailure("certificate-validity-window-excludes-sct-time")

    # 3. Extract and parse the embedded token bytes.
    def step3():
        signing_input = _require_extension(poa, poa.signing_input, "jwt")
        header, claims = jose.parse_header_body(signing_input)
        state["signing_input"] = signing_input
        state["header"] = header
        state["claims"] = claims

    # 4. Claim checks at the certified time; no signature or nonce check here.
    def step4():
        reason = jose.validate_claims(
            state["claims"],
            expected_aud=trust.expected_ca_audience,
            expected_iss=trust.expected_issuer,
            now=current_time,
            check_nonce=None,
        )
        if reason is not None:
            raise _StepFailure(reason)

    # 5. Resolve the issuer's key set at the certified time.
    def step5():
        bracket = ledger.query_at(trust.expected_issuer, current_time)
        reason = check_bracket(
            bracket,
            trust.expected_issuer,
            current_time,
            trust.ledger_key,
            trust.witness_keys,
            trust.quorum,
        )
        if reason is not None:
            raise _StepFailure(reason)
        state["jwks"] = bracket.before.jwks

    # 6. The proof of knowledge must verify under a resolved key.
    def step6():
        proof_wire = _require_extension(poa, poa.proof_bytes, "proof")
        try:
            proof, modulus_len = gq.decode_proof(proof_wire)
        except gq.ProofDecodeError as exc:
            raise _StepFailure(f"proof-decode-error: {exc}") from exc
        try:
            candidates = jose.select_candidates(state["jwks"], proof.key_id or None)
        except jose.KeyNotFound as exc:
            raise _StepFailure(f"proof-key-not-found: {exc}") from exc
        for key in candidates:
            if key.byte_length != modulus_len:
                continue
            if gq.verify_proof(key, state["signing_input"], proof, trust.lambda_bits):
                return
        raise _StepFailure("proof-invalid")

    # 7. The certificate fields must equal the public claim mapping.
    def step7():
        fields = claim_map(state["claims"])
        try:
            san = certificate.extensions.get_extension_for_class(x509.SubjectAlternativeName).value
        except x509.ExtensionNotFound:
            raise _StepFailure("san-missing") from None
        if list(san) != [fields.general_name()]:
            raise _StepFailure("san-mismatch")
        issuer_url = _require_extension(poa, poa.issuer_url, "issuer-url")
        if issuer_url != fields.issuer_url:
            raise _StepFailure("issuer-extension-mismatch")
        not_before = int(certificate.not_valid_before_utc.timestamp())
        if not_before != fields.not_before:
            raise _StepFailure("not-before-differs-from-iat")

    for step, fn in ((1, step1), (2, step2), (3, step3), (4, step4), (5, step5), (6, step6), (7, step7)):
        if not run(step, fn):
            return VerificationReport(
                verdict=False, steps=tuple(steps), current_time_used=current_time, offline_ct=offline_ct
            )
    return VerificationReport(
        verdict=True, steps=tuple(steps), current_time_used=current_time, offline_ct=offline_ct
    )


# ---------------------------------------------------------------------------
# Trust root (de)serialization
# ---------------------------------------------------------------------------

def _raw_ed25519(key: Ed25519PublicKey) -> str:
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw).hex()


def trust_roots_to_json(trust: TrustRoots) -> dict:
    return {
        "ca_root_pem": trust.ca_root.public_bytes(serialization.Encoding.PEM).decode("ascii"),
        "ledger_key": _raw_ed25519(trust.ledger_key),
        "witness_keys": {wid: _raw_ed25519(k) for wid, k in trust.witness_keys.items()},
        "quorum": trust.quorum,
        "ct_key": _raw_ed25519(trust.ct_key),
        "expected_issuer": trust.expected_issuer,
        "expected_ca_audience": trust.expected_ca_audience,
        "lambda_bits": trust.lambda_bits,
    }


def trust_roots_from_json(obj: dict) -> TrustRoots:
    return TrustRoots(
        ca_root=x509.load_pem_x509_certificate(obj["ca_root_pem"].encode("ascii")),
        ledger_key=Ed25519PublicKey.from_public_bytes(bytes.fromhex(obj["ledger_key"])),
        witness_keys={
            wid: Ed25519PublicKey.from_public_bytes(bytes.fromhex(hexkey))
            for wid, hexkey in obj["witness_keys"].items()
        },
        quorum=obj["quorum"],
        ct_key=Ed25519PublicKey.from_public_bytes(bytes.fromhex(obj["ct_key"])),
        expected_issuer=obj["expected_issuer"],
        expected_ca_audience=obj["expected_ca_audience"],
        lambda_bits=obj["lambda_bits"],
    )
