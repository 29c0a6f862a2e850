"""
Tests for bin/trustplane.py: every --tamper mode must end in its own exit code.

`enroll` without --ca/--agent brings up its own CA and agent on loopback, so
these run without any external services.
"""

import pytest

import trustplane
from config.settings import KEYS
from src import randomness
from src.enrollment import EnrollmentSession, FailureReason, SessionState
from src.extended_ca import KnownGoodConfig


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """No trustplane keys from the outer environment or a stray .env."""
    for key in KEYS:
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setattr("config.settings.load_dotenv", lambda *a, **k: False)
    yield
    randomness.configure(None)


@pytest.mark.integration
def test_clean_enrollment_exits_zero(capsys):
    assert trustplane.main(["enroll"]) == 0
    out = capsys.readouterr().out
    assert "ENROLLED" in out
    assert "Total attestation time" in out


@pytest.mark.integration
@pytest.mark.parametrize("tamper, code", [
    ("quote-sig", 11),
    ("nonce-replay", 12),
    ("pcr-mismatch", 13),
    ("measurement", 14),
    ("missing-required", 15),
    ("csr", 16),
])
def test_tamper_exit_codes(tamper, code, capsys):
    assert trustplane.main(["enroll", "--tamper", tamper]) == code
    assert "FAILED" in capsys.readouterr().out


@pytest.mark.integration
def test_replay_nonce_flag():
    assert trustplane.main(["enroll", "--replay-nonce"]) == 12


@pytest.mark.integration
def test_hardened_policy_enrolls():
    assert trustplane.main(["enroll", "--cipher-policy", "hardened"]) == 0


@pytest.mark.integration
def test_unreachable_external_ca():
    code = trustplane.main(["enroll", "--ca", "127.0.0.1:1", "--agent", "127.0.0.1:1"])
    assert code == FailureReason.CA_UNREACHABLE.value


@pytest.mark.integration
def test_provision_then_enroll_against_the_file(tmp_path, monkeypatch):
    monkeypatch.setenv("TRUSTPLANE_SEED", "cli-test")
    allowlist = tmp_path / "known_good.json"
    assert trustplane.main(["provision", "--output", str(allowlist)]) == 0
    assert KnownGoodConfig.load(allowlist).allowed_template_digests
    assert trustplane.main(["enroll", "--known-good", str(allowlist)]) == 0


@pytest.mark.unit
def test_configuration_errors(tmp_path, capsys):
    assert trustplane.main(["enroll", "--config", str(tmp_path / "missing.env")]) == 2

    bad = tmp_path / "bad.env"
    bad.write_text("NOT_A_KEY=1\n", encoding="utf-8")
    assert trustplane.main(["enroll", "--config", str(bad)]) == 2

    assert trustplane.main(["enroll", "--agent", "10.0.0.5:7710"]) == 2
    assert trustplane.main(["enroll", "--known-good", str(tmp_path / "nope.json")]) == 2
    assert "Configuration error" in capsys.readouterr().err


@pytest.mark.unit
def test_unknown_tamper_is_an_argparse_error():
    with pytest.raises(SystemExit) as exc:
        trustplane.main(["enroll", "--tamper", "everything"])
    assert exc.value.code == 2


@pytest.mark.unit
def test_exit_code_mapping():
    enrolled = EnrollmentSession(common_name="x", state=SessionState.ENROLLED)
    assert trustplane.exit_code_for(enrolled) == 0
    for reason in FailureReason:
        session = EnrollmentSession(common_name="x")
        session.fail(reason)
        expected = 10 + reason.value if reason.value < 20 else reason.value
        assert trustplane.exit_code_for(session) == expected
