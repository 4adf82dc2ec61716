"""Operator and developer entry point.

Exit codes, used consistently across subcommands:

  0  success / certificate accepted / all properties hold
  1  verification reject, issuance refused, or a property breach
  2  malformed input (unparseable certificate, bad PEM)
  3  bad configuration
  4  port already in use
  5  topology or service error
"""

from __future__ import annotations

import json
import os
import random
import statistics
import subprocess
import sys
import time
from urllib.parse import urlparse

import click

try:
    import tomllib
except ImportError:  # 3.10
    import tomli as tomllib

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519

from . import games as games_mod
from . import gq
from .ca import CaConfig, CertificateAuthority, IssuanceError
from .clients import (
    HttpCaClient,
    HttpCtClient,
    HttpIdpClient,
    HttpLedgerClient,
    HttpWitnessClient,
)
from .ctlog import CtLog
from .der import replace_tbs, strip_extension
from .httpd import JsonHttpService, ca_routes, ct_routes, idp_routes, ledger_routes, witness_routes
from .idp import IdentityProvider
from .jose import Jwks
from .ledger import JwkLedger, Witness
from .profiles import get_profile
from .topology import build_testbed
from .verifier import MalformedCertificate, trust_roots_from_json, verify

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_MALFORMED = 2
EXIT_BAD_CONFIG = 3
EXIT_PORT_IN_USE = 4
EXIT_SERVICE = 5

DEFAULT_CONFIG = {
    "topology": {
        "profile": "toy",
        "idp": "http://127.0.0.1:8801",
        "ledger": "http://127.0.0.1:8802",
        "ct": "http://127.0.0.1:8803",
        "ca": "http://127.0.0.1:8804",
        "witnesses": [
            "http://127.0.0.1:8805",
            "http://127.0.0.1:8806",
            "http://127.0.0.1:8807",
        ],
        "quorum": 2,
    },
    "ca": {
        "ca_id": "poa-ca",
        "issuer": "https://idp.example.test",
        "cert_lifetime": 600,
    },
}


def load_config(path: str | None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        try:
            with open(path, "rb") as fh:
                loaded = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise click.ClickException(f"cannot read config {path}: {exc}")
        for section, values in loaded.items():
            config.setdefault(section, {}).update(values)
    # POA_<SECTION>_<KEY> environment overrides; lists are comma-separated.
    for section, values in config.items():
        for key in list(values):
            env = os.environ.get(f"POA_{section.upper()}_{key.upper()}")
            if env is None:
                continue
            current = values[key]
            if isinstance(current, list):
                values[key] = [item.strip() for item in env.split(",") if item.strip()]
            elif isinstance(current, int):
                values[key] = int(env)
            else:
                values[key] = env
    return config


def _host_port(url: str) -> tuple[str, int]:
    parsed = urlparse(url)
    if parsed.hostname is None or parsed.port is None:
        raise click.ClickException(f"endpoint {url!r} must include host and port")
    return parsed.hostname, parsed.port


def _clock(now: int | None):
    if now is None:
        return lambda: int(time.time())
    return lambda: now


def _fingerprint(public_bytes: bytes) -> str:
    import hashlib

    return hashlib.sha256(public_bytes).hexdigest()[:16]


def _load_or_create_key(path: str | None, generate: bool, kind: str):
    """kind: 'ed25519' or 'ec'.  Returns a private key object."""
    make = (lambda: ed25519.Ed25519PrivateKey.generate()) if kind == "ed25519" else (
        lambda: ec.generate_private_key(ec.SECP256R1())
    )
    if path is None:
        return make()
    if os.path.exists(path):
        with open(path, "rb") as fh:
            return serialization.load_pem_private_key(fh.read(), password=None)
    if not generate:
        raise click.ClickException(f"key file {path} does not exist (use --generate)")
    key = make()
    pem = key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    with open(path, "wb") as fh:
        fh.write(pem)
    public = key.public_key().public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    click.echo(f"generated {kind} key at {path}, fingerprint {_fingerprint(public)}", err=True)
    return key


@click.group(epilog=__doc__)
def main():
    """Proof-of-authentication certificate authority tooling."""


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

@main.command()
@click.argument("service", type=click.Choice(["idp", "ledger", "ct", "ca", "witness"]))
@click.option("--config", "config_path", type=click.Path(), default=None, help="TOML config file")
@click.option("--key", "key_path", type=click.Path(), default=None, help="private key file (PEM)")
@click.option("--generate", is_flag=True, help="create the key file when missing")
@click.option("--index", default=0, show_default=True, help="witness index into the configured list")
@click.option("--now", type=int, default=None, help="freeze the service clock at this unix time")
@click.option("--seed", type=int, default=None, help="seed the RNG (testing only)")
@click.option("--rotate-interval", type=int, default=0, help="IdP: rotate keys every N seconds")
def run(service, config_path, key_path, generate, index, now, seed, rotate_interval):
    """Run one service until interrupted."""
    config = load_config(config_path)
    topology = config["topology"]
    profile = get_profile(topology["profile"])
    clock = _clock(now)
    rng = random.Random(seed) if seed is not None else random.SystemRandom()

    try:
        if service == "idp":
            host, port = _host_port(topology["idp"])
            idp = IdentityProvider(
                config["ca"]["issuer"],
                rsa_bits=profile.rsa_bits,
                public_exponent=profile.public_exponent,
                rng=rng,
                clock=clock,
            )
            routes = idp_routes(idp)
            if rotate_interval > 0:
                import threading

                def rotation_timer():
                    while True:
                        time.sleep(rotate_interval)
                        idp.rotate()

                threading.Thread(target=rotation_timer, daemon=True).start()
        elif service == "ledger":
            host, port = _host_port(topology["ledger"])
            key = _load_or_create_key(key_path, generate, "ed25519")
            ledger = JwkLedger(signing_key=key, clock=clock)
            for witness_url in topology["witnesses"]:
                ledger.register_witness(HttpWitnessClient(witness_url))
            routes = ledger_routes(ledger)
        elif service == "ct":
            host, port = _host_port(topology["ct"])
            key = _load_or_create_key(key_path, generate, "ed25519")
            routes = ct_routes(CtLog(signing_key=key, clock=clock))
        elif service == "witness":
            witness_urls = topology["witnesses"]
            if not 0 <= index < len(witness_urls):
                raise click.ClickException(f"--index {index} out of range for {len(witness_urls)} witnesses")
            host, port = _host_port(witness_urls[index])
            key = _load_or_create_key(key_path, generate, "ed25519")
            ledger_client = HttpLedgerClient(topology["ledger"])
            idp_client = HttpIdpClient(topology["idp"])
            issuer = config["ca"]["issuer"]

            def jwks_source(requested_issuer: str) -> Jwks | None:
                if requested_issuer != issuer:
                    return None
                return Jwks.from_document(idp_client.jwks_document())

            witness = Witness(
                witness_id=f"w{index + 1}",
                signing_key=key,
                ledger_public_key=ed25519.Ed25519PublicKey.from_public_bytes(
                    bytes.fromhex(ledger_client.public_key_hex())
                ),
                jwks_source=jwks_source,
                clock=clock,
            )
            witness.prev = ledger_client.digest()
            routes = witness_routes(witness, ledger_client)
        else:  # ca
            host, port = _host_port(topology["ca"])
            key = _load_or_create_key(key_path, generate, "ec")
            ledger_client = HttpLedgerClient(topology["ledger"])
            witness_keys = {}
            for witness_url in topology["witnesses"]:
                info = _call_witness_info(HttpWitnessClient(witness_url))
                witness_keys[info["witness_id"]] = ed25519.Ed25519PublicKey.from_public_bytes(
                    bytes.fromhex(info["ed25519"])
                )
            ca = CertificateAuthority(
                config=CaConfig(
                    ca_id=config["ca"]["ca_id"],
                    expected_issuer=config["ca"]["issuer"],
                    lambda_bits=profile.security_bits,
                    cert_lifetime=int(config["ca"]["cert_lifetime"]),
                ),
                jwks_source=HttpIdpClient(topology["idp"]).jwks_document,
                ledger=ledger_client,
                ct=HttpCtClient(topology["ct"]),
                ledger_key=ed25519.Ed25519PublicKey.from_public_bytes(
                    bytes.fromhex(ledger_client.public_key_hex())
                ),
                witness_keys=witness_keys,
                quorum=int(topology["quorum"]),
                signing_key=key,
                rng=rng,
                clock=clock,
            )
            routes = ca_routes(ca)
    except click.ClickException:
        raise
    except Exception as exc:
        click.echo(f"service setup failed: {exc}", err=True)
        sys.exit(EXIT_SERVICE)

    try:
        server = JsonHttpService(routes, host=host, port=port)
    except OSError as exc:
        if exc.errno == 98:  # EADDRINUSE
            click.echo(f"port {port} already in use", err=True)
            sys.exit(EXIT_PORT_IN_USE)
        raise
    click.echo(f"{service} listening on {server.url}", err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


def _call_witness_info(client: HttpWitnessClient) -> dict:
    import requests

    return requests.get(f"{client.base_url}/pubkey", timeout=10).json()


# ---------------------------------------------------------------------------
# trust roots
# ---------------------------------------------------------------------------

def _assemble_trust_roots(config: dict) -> dict:
    topology = config["topology"]
    profile = get_profile(topology["profile"])
    ca_root_pem = HttpCaClient(topology["ca"]).root_pem().decode("ascii")
    ledger_key = HttpLedgerClient(topology["ledger"]).public_key_hex()
    ct_key = HttpCtClient(topology["ct"]).public_key_hex()
    witness_keys = {}
    for witness_url in topology["witnesses"]:
        info = _call_witness_info(HttpWitnessClient(witness_url))
        witness_keys[info["witness_id"]] = info["ed25519"]
    return {
        "ca_root_pem": ca_root_pem,
        "ledger_key": ledger_key,
        "witness_keys": witness_keys,
        "quorum": int(topology["quorum"]),
        "ct_key": ct_key,
        "expected_issuer": config["ca"]["issuer"],
        "expected_ca_audience": config["ca"]["ca_id"],
        "lambda_bits": profile.security_bits,
    }


@main.command("trust-roots")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None, help="write JSON here instead of stdout")
def trust_roots(config_path, out_path):
    """Assemble verifier trust roots from the running topology."""
    config = load_config(config_path)
    try:
        roots = _assemble_trust_roots(config)
    except Exception as exc:
        click.echo(f"failed to assemble trust roots: {exc}", err=True)
        sys.exit(EXIT_SERVICE)
    text = json.dumps(roots, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


# ---------------------------------------------------------------------------
# request
# ---------------------------------------------------------------------------

@main.command()
@click.option("--sub", required=True, help="identity to certify (email or URI)")
@click.option("--aud", default=None, help="token audience (defaults to the CA id)")
@click.option("--lifetime", default=300, show_default=True, help="token lifetime, seconds")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--key-out", type=click.Path(), default=None, help="write the generated signing key here")
@click.option("--out", "out_path", type=click.Path(), default=None, help="write the certificate PEM here")
def request(sub, aud, lifetime, config_path, key_out, out_path):
    """Request a certificate from the running topology (prints PEM)."""
    config = load_config(config_path)
    topology = config["topology"]
    aud = aud if aud is not None else config["ca"]["ca_id"]

    subject_key = ed25519.Ed25519PrivateKey.generate()
    spki = subject_key.public_key().public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    if key_out:
        with open(key_out, "wb") as fh:
            fh.write(
                subject_key.private_bytes(
                    serialization.Encoding.PEM,
                    serialization.PrivateFormat.PKCS8,
                    serialization.NoEncryption(),
                )
            )
    ca_client = HttpCaClient(topology["ca"])
    idp_client = HttpIdpClient(topology["idp"])
    try:
        nonce = ca_client.challenge(spki)
        token = idp_client.token(sub, aud, lifetime, nonce=nonce)
        pop = subject_key.sign(nonce.encode("ascii"))
        cert_pem, chain_pem = ca_client.issue(token, spki, pop)
    except IssuanceError as exc:
        click.echo(f"issuance refused: {exc}", err=True)
        sys.exit(EXIT_REJECT)
    except Exception as exc:
        click.echo(f"request failed: {exc}", err=True)
        sys.exit(EXIT_SERVICE)
    output = cert_pem + chain_pem
    if out_path:
        with open(out_path, "wb") as fh:
            fh.write(output)
    else:
        click.echo(output.decode("ascii"), nl=False)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

@main.command("verify")
@click.argument("cert_path", type=click.Path(exists=True))
@click.option("--trust-roots", "trust_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--offline", is_flag=True, help="skip the CT inclusion check")
def verify_cmd(cert_path, trust_path, config_path, offline):
    """Verify a certificate; exit 0 accept, 1 reject, 2 malformed."""
    config = load_config(config_path)
    topology = config["topology"]
    try:
        with open(trust_path) as fh:
            trust = trust_roots_from_json(json.load(fh))
    except (ValueError, KeyError) as exc:
        click.echo(f"bad trust roots: {exc}", err=True)
        sys.exit(EXIT_BAD_CONFIG)
    with open(cert_path, "rb") as fh:
        pem = fh.read()
    ledger_client = HttpLedgerClient(topology["ledger"])
    ct_client = None if offline else HttpCtClient(topology["ct"])
    try:
        report = verify(pem, trust, ledger_client, ct_client)
    except MalformedCertificate as exc:
        click.echo(f"malformed certificate: {exc}", err=True)
        sys.exit(EXIT_MALFORMED)
    except Exception as exc:
        click.echo(f"verification error: {exc}", err=True)
        sys.exit(EXIT_SERVICE)
    click.echo(json.dumps(report.to_json(), indent=2, sort_keys=True))
    sys.exit(EXIT_OK if report.verdict else EXIT_REJECT)


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

@main.command()
@click.option("--profile", default="default", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "json_only", is_flag=True, help="machine-readable output only")
def bench(profile, seed, json_only):
    """Measure proof and certificate sizes plus prove/verify timings."""
    testbed = build_testbed(profile=profile, seed=seed)
    params = get_profile(profile)

    t_issue0 = time.perf_counter()
    cert = testbed.request_certificate("bench@example.test")
    issuance_ms = (time.perf_counter() - t_issue0) * 1000

    proof_wire = cert.proof_bytes()
    proof, modulus_len = gq.decode_proof(proof_wire)
    kid_len = len(proof.key_id.encode("utf-8"))
    formula = gq.proof_wire_size(proof.rounds, modulus_len, kid_len)

    with_ext = len(cert.der)
    tbs = cert.certificate.tbs_certificate_bytes
    stripped = strip_extension(strip_extension(tbs, cert.oids.jwt), cert.oids.proof)
    without_ext = len(replace_tbs(cert.der, stripped))
    ratio = with_ext / without_ext

    idp_key = testbed.idp.active_keys.keys[0]
    token = testbed.idp.issue_token("bench@example.test", "poa-ca", 300)
    prove_times, verify_times = [], []
    for _ in range(5):
        t0 = time.perf_counter()
        proof_sample = gq.prove(
            idp_key, token.signing_input, token.signature, testbed.trust.lambda_bits, testbed.rng
        )
        prove_times.append((time.perf_counter() - t0) * 1000)
        t0 = time.perf_counter()
        assert gq.verify_proof(idp_key, token.signing_input, proof_sample, testbed.trust.lambda_bits)
        verify_times.append((time.perf_counter() - t0) * 1000)

    t0 = time.perf_counter()
    report = testbed.verify(cert)
    verification_ms = (time.perf_counter() - t0) * 1000
    assert report.verdict

    results = {
        "profile": profile,
        "lambda_bits": testbed.trust.lambda_bits,
        "public_exponent": params.public_exponent,
        "modulus_bits": params.rsa_bits,
        "rounds": proof.rounds,
        "kid_bytes": kid_len,
        "proof_bytes": len(proof_wire),
        "proof_bytes_formula": formula,
        "cert_bytes_with_extensions": with_ext,
        "cert_bytes_without_extensions": without_ext,
        "size_ratio": round(ratio, 2),
        "prove_ms_median": round(statistics.median(prove_times), 3),
        "verify_ms_median": round(statistics.median(verify_times), 3),
        "issuance_roundtrip_ms": round(issuance_ms, 3),
        "verification_roundtrip_ms": round(verification_ms, 3),
        "size_goal_note": "ratio REPORTED (not asserted) against the no-more-than-double goal",
    }
    if json_only:
        click.echo(json.dumps(results, indent=2, sort_keys=True))
        return
    width = max(len(k) for k in results)
    for key, value in results.items():
        click.echo(f"{key.ljust(width)}  {value}")
    click.echo(f"{'(machine-readable)'.ljust(width)}  {json.dumps(results, sort_keys=True)}")


# ---------------------------------------------------------------------------
# games
# ---------------------------------------------------------------------------

@main.command("games")
@click.option("--trials", default=1000, show_default=True, help="trials per adversary strategy")
@click.option("--profile", default="toy", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def games_cmd(trials, profile, seed):
    """Run the completeness / unforgeability / replay game suites."""
    failures = []

    def show(report):
        status = "pass" if report.passed else "FAIL"
        click.echo(f"[{status}] {report.name}: {report.successes}/{report.trials} (rate {report.rate:.4f})")
        if not report.passed:
            failures.append(report.name)

    completeness = games_mod.game_completeness(trials=100, profile=profile, seed=seed)
    show(completeness)
    rotated = games_mod.game_completeness(trials=30, profile=profile, seed=seed + 1, rotate_every=5)
    show(rotated)

    guess1 = games_mod.gq_guessing_experiment(trials=3000, rounds=1, seed=seed)
    lo, hi = guess1.notes["ci99"]
    ok1 = lo <= 1 / 3 <= hi
    click.echo(
        f"[{'pass' if ok1 else 'FAIL'}] {guess1.name}: rate {guess1.rate:.4f}, 99% CI [{lo:.4f}, {hi:.4f}] "
        f"must contain 1/3"
    )
    if not ok1:
        failures.append(guess1.name)

    guess8 = games_mod.gq_guessing_experiment(trials=10000, rounds=8, seed=seed + 1)
    ok8 = guess8.rate < 0.01
    click.echo(f"[{'pass' if ok8 else 'FAIL'}] {guess8.name}: rate {guess8.rate:.6f} must be < 0.01")
    if not ok8:
        failures.append(guess8.name)

    for report in games_mod.game_unforgeability(trials=trials, seed=seed).values():
        show(report)
    for report in games_mod.game_replay(trials=trials, seed=seed).values():
        show(report)

    if failures:
        click.echo(f"property breaches: {', '.join(failures)}", err=True)
        sys.exit(EXIT_REJECT)


# ---------------------------------------------------------------------------
# demo
# ---------------------------------------------------------------------------

def _wait_healthy(url: str, timeout: float = 20.0):
    import requests

    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            if requests.get(f"{url}/healthz", timeout=2).status_code == 200:
                return
        except requests.RequestException:
            pass
        time.sleep(0.1)
    raise RuntimeError(f"service at {url} did not become healthy")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--sub", default="demo@example.test", show_default=True)
@click.option("--now", type=int, default=None, help="freeze all service clocks")
@click.option("--seed", type=int, default=None)
def demo(config_path, sub, now, seed):
    """Spawn the whole topology as child processes and run one request/verify."""
    config = load_config(config_path)
    topology = config["topology"]
    base_cmd = [sys.executable, "-m", "poa_ca.cli", "run"]
    common = []
    if config_path:
        common += ["--config", config_path]
    if now is not None:
        common += ["--now", str(now)]
    if seed is not None:
        common += ["--seed", str(seed)]

    # dependency order: witnesses need the ledger and IdP up; the CA needs everyone.
    # demo mode runs the IdP with its timer-driven rotation (300 s).
    plan = [
        ("ledger", [], topology["ledger"]),
        ("idp", ["--rotate-interval", "300"], topology["idp"]),
        ("ct", [], topology["ct"]),
    ]
    plan += [("witness", ["--index", str(i)], url) for i, url in enumerate(topology["witnesses"])]
    plan += [("ca", [], topology["ca"])]

    processes: list[subprocess.Popen] = []
    try:
        for service, extra, url in plan:
            processes.append(subprocess.Popen(base_cmd + [service] + common + extra))
            _wait_healthy(url)

        roots = _assemble_trust_roots(config)
        trust = trust_roots_from_json(roots)

        subject_key = ed25519.Ed25519PrivateKey.generate()
        spki = subject_key.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )
        ca_client = HttpCaClient(topology["ca"])
        nonce = ca_client.challenge(spki)
        token = HttpIdpClient(topology["idp"]).token(sub, config["ca"]["ca_id"], 300, nonce=nonce)
        pop = subject_key.sign(nonce.encode("ascii"))
        cert_pem, _chain = ca_client.issue(token, spki, pop)

        report = verify(cert_pem, trust, HttpLedgerClient(topology["ledger"]), HttpCtClient(topology["ct"]))
        click.echo(json.dumps(report.to_json(), indent=2, sort_keys=True))
        sys.exit(EXIT_OK if report.verdict else EXIT_REJECT)
    except SystemExit:
        raise
    except Exception as exc:
        click.echo(f"demo failed: {exc}", err=True)
        sys.exit(EXIT_SERVICE)
    finally:
        for process in processes:
            process.terminate()
        for process in processes:
            try:
                process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                process.kill()


if __name__ == "__main__":
    main()
