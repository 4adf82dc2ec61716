from __future__ import annotations

import json
import socket
import subprocess
import sys
import time

import pytest
from click.testing import CliRunner

from poa_ca.cli import load_config, main
from poa_ca.verifier import trust_roots_to_json


@pytest.fixture()
def runner():
    return CliRunner()


class TestConfig:
    def test_defaults(self):
        config = load_config(None)
        assert config["topology"]["profile"] == "toy"
        assert len(config["topology"]["witnesses"]) == 3

    def test_toml_override(self, tmp_path):
        path = tmp_path / "demo.toml"
        path.write_text('[topology]\nprofile = "default"\nquorum = 3\n')
        config = load_config(str(path))
        assert config["topology"]["profile"] == "default"
        assert config["topology"]["quorum"] == 3
        assert config["ca"]["ca_id"] == "poa-ca"  # untouched section keeps defaults

    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("POA_TOPOLOGY_PROFILE", "default")
        monkeypatch.setenv("POA_TOPOLOGY_WITNESSES", "http://a:1,http://b:2")
        monkeypatch.setenv("POA_TOPOLOGY_QUORUM", "1")
        config = load_config(None)
        assert config["topology"]["profile"] == "default"
        assert config["topology"]["witnesses"] == ["http://a:1", "http://b:2"]
        assert config["topology"]["quorum"] == 1


class TestBench:
    def test_toy_bench_json(self, runner):
        result = runner.invoke(main, ["bench", "--profile", "toy", "--seed", "3", "--json"])
        assert result.exit_code == 0, result.output
        data = json.loads(result.output)
        assert data["proof_bytes"] == data["proof_bytes_formula"]
        assert data["rounds"] == 8
        assert data["cert_bytes_with_extensions"] > data["cert_bytes_without_extensions"]
        assert isinstance(data["size_ratio"], float)

    def test_table_output_contains_ratio(self, runner):
        result = runner.invoke(main, ["bench", "--profile", "toy", "--seed", "3"])
        assert result.exit_code == 0
        assert "size_ratio" in result.output


class TestVerifyCommand:
    @pytest.fixture()
    def http_world(self, tmp_path):
        """A live stack plus config/trust/cert files for the CLI."""
        from tests.test_http import Stack

        stack = Stack()
        config_path = tmp_path / "config.toml"
        config_path.write_text(
            "[topology]\n"
            f'idp = "{stack.idp_url}"\n'
            f'ledger = "{stack.ledger_url}"\n'
            f'ct = "{stack.ct_url}"\n'
            f'ca = "{stack.ca_url}"\n'
        )
        trust_path = tmp_path / "trust.json"
        trust_path.write_text(json.dumps(trust_roots_to_json(stack.trust_roots())))
        cert_path = tmp_path / "cert.pem"
        cert_path.write_bytes(stack.request_certificate("cli@example.test"))
        yield stack, str(config_path), str(trust_path), str(cert_path), tmp_path
        stack.stop()

    def test_accept_exit_0(self, runner, http_world):
        _stack, config, trust, cert, _tmp = http_world
        result = runner.invoke(main, ["verify", cert, "--trust-roots", trust, "--config", config])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["verdict"] == "accept"

    def test_reject_exit_1_names_failing_step(self, runner, http_world):
        stack, config, trust, _cert, tmp = http_world
        from poa_ca.games import _fabricated_signing_input, _forge_certificate
        from poa_ca.topology import build_testbed

        # forge against an in-process twin CA, then verify against the live trust
        twin = build_testbed(profile="toy", seed=77)
        twin.request_certificate("primer@example.test")
        forged = _forge_certificate(
            twin,
            _fabricated_signing_input(
                twin.idp.active_kid, twin.ca.config.expected_issuer, "x@y.z", "poa-ca", twin.clock()
            ),
            bytes(32),
        )
        bad_path = tmp / "forged.pem"
        bad_path.write_bytes(forged.pem)
        result = runner.invoke(main, ["verify", str(bad_path), "--trust-roots", trust, "--config", config])
        assert result.exit_code == 1

    def test_zeroed_proof_names_step_6(self, runner, http_world):
        """Rogue-CA rebuild of a live certificate with zeroed proof bytes and
        a fresh SCT: everything checks out except the proof itself."""
        stack, config, trust, _cert, tmp = http_world
        from cryptography import x509
        from cryptography.hazmat.primitives import serialization

        from poa_ca.ca import PoaCertificate
        from poa_ca.games import forge_certificate

        pem = stack.request_certificate("victim@example.test")
        parsed = x509.load_pem_x509_certificate(pem)
        original = PoaCertificate(der=parsed.public_bytes(serialization.Encoding.DER))
        doctored = forge_certificate(
            stack.ca._key,
            stack.ca.root_certificate,
            stack.ct,
            original.signing_input(),
            bytes(len(original.proof_bytes())),
            serial=987654321,
        )
        bad_path = tmp / "zeroed.pem"
        bad_path.write_bytes(doctored.pem)
        result = runner.invoke(main, ["verify", str(bad_path), "--trust-roots", trust, "--config", config])
        assert result.exit_code == 1
        report = json.loads(result.output)
        assert report["steps"][-1]["step"] == 6

    def test_truncated_pem_exit_2(self, runner, http_world):
        _stack, config, trust, cert, tmp = http_world
        broken = tmp / "broken.pem"
        broken.write_bytes(open(cert, "rb").read()[:120])
        result = runner.invoke(main, ["verify", str(broken), "--trust-roots", trust, "--config", config])
        assert result.exit_code == 2

    def test_request_flow_under_five_seconds(self, runner, http_world):
        stack, config, _trust, _cert, tmp = http_world
        started = time.perf_counter()
        result = runner.invoke(
            main,
            ["request", "--sub", "speed@example.test", "--config", config, "--out", str(tmp / "fast.pem")],
        )
        elapsed = time.perf_counter() - started
        assert result.exit_code == 0, result.output
        assert elapsed < 5.0
        assert b"BEGIN CERTIFICATE" in (tmp / "fast.pem").read_bytes()

    def test_request_surfaces_ca_error(self, runner, http_world):
        _stack, config, _trust, _cert, _tmp = http_world
        result = runner.invoke(
            main, ["request", "--sub", "x@y.z", "--aud", "not-the-ca", "--config", config]
        )
        assert result.exit_code == 1
        assert "invalid-token" in result.output


class TestRunCommand:
    def test_port_in_use_exit_4(self, tmp_path):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        blocker.listen(1)
        config = tmp_path / "config.toml"
        config.write_text(f'[topology]\nidp = "http://127.0.0.1:{port}"\n')
        try:
            process = subprocess.run(
                [sys.executable, "-m", "poa_ca.cli", "run", "idp", "--config", str(config)],
                capture_output=True,
                timeout=60,
            )
            assert process.returncode == 4, process.stderr
        finally:
            blocker.close()

    def test_missing_key_without_generate_fails(self, tmp_path):
        config = tmp_path / "config.toml"
        config.write_text('[topology]\nledger = "http://127.0.0.1:18999"\n')
        process = subprocess.run(
            [
                sys.executable,
                "-m",
                "poa_ca.cli",
                "run",
                "ledger",
                "--config",
                str(config),
                "--key",
                str(tmp_path / "missing.pem"),
            ],
            capture_output=True,
            timeout=60,
        )
        assert process.returncode != 0
        assert b"--generate" in process.stderr


@pytest.mark.slow
def test_demo_supervises_child_processes(tmp_path):
    """The demo spawns every service, runs one request/verify, tears down."""
    base = 28810
    config = tmp_path / "demo.toml"
    config.write_text(
        "[topology]\n"
        f'idp = "http://127.0.0.1:{base}"\n'
        f'ledger = "http://127.0.0.1:{base + 1}"\n'
        f'ct = "http://127.0.0.1:{base + 2}"\n'
        f'ca = "http://127.0.0.1:{base + 3}"\n'
        f'witnesses = ["http://127.0.0.1:{base + 4}", "http://127.0.0.1:{base + 5}", "http://127.0.0.1:{base + 6}"]\n'
    )
    process = subprocess.run(
        [sys.executable, "-m", "poa_ca.cli", "demo", "--config", str(config)],
        capture_output=True,
        timeout=120,
    )
    assert process.returncode == 0, process.stderr.decode()
    report = json.loads(process.stdout)
    assert report["verdict"] == "accept"
    # teardown killed the listeners (TIME_WAIT remnants are fine)
    time.sleep(0.2)
    probe = socket.socket()
    probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    probe.bind(("127.0.0.1", base))
    probe.close()


def test_report_determinism_with_fixed_seed_and_clock():
    """Same seed + same frozen clock => byte-identical verification reports."""
    outputs = []
    for _run in range(2):
        from poa_ca.topology import build_testbed

        testbed = build_testbed(profile="toy", seed=424242, start_time=1_800_000_000)
        cert = testbed.request_certificate("repeat@example.test")
        report = testbed.verify(cert)
        outputs.append(json.dumps(report.to_json(), sort_keys=True).encode())
    assert outputs[0] == outputs[1]
