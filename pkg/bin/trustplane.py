#!/usr/bin/env python
"""
trustplane - one binary for the whole attestation-gated SDN pipeline

Subcommands:
    serve-ca      extended CA (binary protocol) + admin HTTP API
    serve-agent   attestation agent for a simulated host
    provision     write the known-good allowlist for the pristine host image
    enroll        run one enrollment and report how it went
    bench         keygen / CPU / latency / ECALL / attestation reports

`enroll` with no --ca/--agent (and no CA_ENDPOINT/AGENT_ENDPOINT set) starts
its own CA and agent on loopback, which is what the fault-injection runs use:

    python bin/trustplane.py enroll --tamper measurement; echo $?     # 14

Exit codes:
    0       enrolled
    11-17   CA rejection (10 + reason code)
    20-23   agent unreachable / CA unreachable / agent error / bad certificate
    2       configuration error
    1       bind failure or anything unexpected

Services running in separate processes only agree on the attestation key
when TRUSTPLANE_SEED is set (the simulated host derives its key from it).
"""

import argparse
import datetime
import hashlib
import signal
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

# Add parent directory to path so we can import from src/
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import TAMPER_CHOICES, CIPHER_POLICIES, ConfigError, ScenarioConfig, load_config
from src import randomness
from src.attestation_agent import AgentConfig, AttestationAgent
from src.benchmark import attestation_table, cpu_table, ecall_table, keygen_table, latency_table, write_reports
from src.enclave_tls import CipherPolicy, EnclaveCompartment
from src.enrollment import STAGE_LABELS, EnrollmentSession, FaultInjection, SessionState, run_enrollment
from src.extended_ca import CaError, CaService, ExtendedCA, KnownGoodConfig, derive_root_key
from src.host import SimulatedHost, image_without
from src.logger import get_logger, setup_logging
from src.sdn_harness import (
    Deployment,
    TopologyError,
    run_cpu_benchmark,
    run_ecall_trace,
    run_keygen_benchmark,
    run_latency_benchmark,
)
from src.wire import Endpoint, ServiceRunner

logger = get_logger("trustplane")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
REJECTION_EXIT_BASE = 10
LOOPBACK = "127.0.0.1"

HOST_ID = "switch-host"
# removed from the enrolling host by --tamper missing-required
REQUIRED_FILE_PATH = "/opt/vnf/bin/firewall"

CLIENT_FAULTS = {
    "quote-sig": FaultInjection.QUOTE_SIG,
    "csr": FaultInjection.CSR,
    "nonce-replay": FaultInjection.NONCE_REPLAY,
    "pcr-mismatch": FaultInjection.PCR_MISMATCH,
}
HOST_FAULTS = ("measurement", "missing-required")


def exit_code_for(session: EnrollmentSession) -> int:
    """Map a finished session to the process exit code."""
    if session.state is SessionState.ENROLLED:
        return EXIT_OK
    reason = session.failure_reason
    if reason is None:
        return EXIT_ERROR
    if reason.value < 20:
        return REJECTION_EXIT_BASE + reason.value
    return reason.value


def banner(title: str) -> None:
    print("\n" + "=" * 80)
    print(title)
    print("=" * 80 + "\n")


def _wait_for_termination() -> None:
    """Block until Ctrl-C or SIGTERM."""
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass


def build_ca(config: ScenarioConfig, known_good: KnownGoodConfig) -> ExtendedCA:
    root_key = None
    if config.ca.root_key_seed:
        root_key = derive_root_key(hashlib.sha256(config.ca.root_key_seed.encode("utf-8")).digest())
    return ExtendedCA(
        known_good,
        root_key=root_key,
        nonce_ttl=config.ca.nonce_ttl_seconds,
        cert_validity=datetime.timedelta(hours=config.ca.cert_validity_hours),
        measurement_pcr=config.agent.measurement_pcr,
    )


def pristine_known_good(config: ScenarioConfig, host: Optional[SimulatedHost] = None) -> KnownGoodConfig:
    """Allowlist from KNOWN_GOOD, or from a freshly booted (untampered) host."""
    if config.ca.known_good is not None:
        return KnownGoodConfig.load(config.ca.known_good)
    host = host or SimulatedHost(host_id=HOST_ID, measurement_pcr=config.agent.measurement_pcr)
    return KnownGoodConfig.from_entries(host.allowlist_entries(), [host.attestation_key()])


def print_session(session: EnrollmentSession) -> None:
    print(f"Session:  {session.common_name}")
    print(f"State:    {session.state.name}")
    if session.state is SessionState.FAILED:
        print(f"Reason:   {session.failure_reason.name} (entering {session.failed_transition.name})")
        if session.detail:
            print(f"Detail:   {session.detail}")
    print("\nStage timings:")
    for stage, label in STAGE_LABELS.items():
        if stage in session.timings:
            print(f"  {label:<24} {session.timings[stage]:.6f} s")
    if session.certificate is not None:
        print(f"\nCertificate serial {session.certificate.serial_number:x}, "
              f"valid until {session.certificate.not_valid_after_utc.isoformat()}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_serve_ca(config: ScenarioConfig, args) -> int:
    import uvicorn
    from src.ca_admin_api import create_admin_app

    banner("🔐 TRUSTPLANE - EXTENDED CA")
    if config.ca.known_good is None:
        logger.warning("no KNOWN_GOOD allowlist given; allowlisting the pristine simulated host")
    ca = build_ca(config, pristine_known_good(config))
    runner = ServiceRunner("ca", Endpoint.parse(config.ca.endpoint), CaService(ca).handle_connection)
    try:
        bound = runner.start()
    except OSError as e:
        print(f"❌ Cannot bind CA endpoint {config.ca.endpoint}: {e}")
        return EXIT_ERROR
    print(f"🚀 CA protocol on {bound}")

    try:
        if args.no_admin:
            _wait_for_termination()
        else:
            admin = Endpoint.parse(config.ca.admin_endpoint)
            print(f"📚 Admin API docs: http://{admin.host}:{admin.port}/docs")
            print(f"🔍 Health check:   http://{admin.host}:{admin.port}/health")
            uvicorn.run(create_admin_app(ca), host=admin.host, port=admin.port,
                        log_level=config.log_level.lower())
    finally:
        runner.stop()
    return EXIT_OK


def cmd_serve_agent(config: ScenarioConfig, args) -> int:
    banner("🛡️  TRUSTPLANE - ATTESTATION AGENT")
    host = SimulatedHost(host_id=HOST_ID, measurement_pcr=config.agent.measurement_pcr)
    if config.tamper == "measurement":
        host.tamper()
    elif config.tamper == "missing-required":
        host = SimulatedHost(host_id=HOST_ID, identity=host.identity,
                             measurement_pcr=config.agent.measurement_pcr,
                             image=image_without(REQUIRED_FILE_PATH))

    endpoint = Endpoint.parse(config.agent.endpoint)
    agent = AttestationAgent(AgentConfig(HOST_ID, endpoint, config.agent.pcr_selection), host)
    runner = ServiceRunner("agent", endpoint, agent.handle_connection)
    try:
        bound = runner.start()
    except OSError as e:
        print(f"❌ Cannot bind agent endpoint {config.agent.endpoint}: {e}")
        return EXIT_ERROR
    print(f"🚀 Agent for {HOST_ID} on {bound} (PCRs {list(config.agent.pcr_selection)})")
    try:
        _wait_for_termination()
    finally:
        runner.stop()
    return EXIT_OK


def cmd_provision(config: ScenarioConfig, args) -> int:
    if randomness.current_seed() is None:
        logger.warning("TRUSTPLANE_SEED is not set; the attestation key in this allowlist "
                       "won't match an agent started in another process")
    host = SimulatedHost(host_id=HOST_ID, measurement_pcr=config.agent.measurement_pcr)
    known_good = KnownGoodConfig.from_entries(host.allowlist_entries(), [host.attestation_key()])
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    known_good.save(output)
    print(f"✓ Wrote allowlist for {len(host.allowlist_entries())} measurements to {output}")
    return EXIT_OK


def cmd_enroll(config: ScenarioConfig, args) -> int:
    banner("📜 TRUSTPLANE - ENROLLMENT")
    fault = CLIENT_FAULTS.get(config.tamper, FaultInjection.NONE)
    policy = CipherPolicy.named(config.cipher_policy)
    external = ("endpoint" in config.ca.model_fields_set
                or "endpoint" in config.agent.model_fields_set)

    if external:
        if config.tamper in HOST_FAULTS:
            logger.warning("--tamper %s is applied by serve-agent, not by enroll", config.tamper)
        compartment = EnclaveCompartment(policy=policy)
        session = run_enrollment(Endpoint.parse(config.ca.endpoint),
                                 Endpoint.parse(config.agent.endpoint),
                                 compartment, fault=fault)
        print_session(session)
        return exit_code_for(session)

    pristine = SimulatedHost(host_id=HOST_ID, measurement_pcr=config.agent.measurement_pcr)
    ca = build_ca(config, pristine_known_good(config, pristine))
    host = pristine
    if config.tamper == "measurement":
        host.tamper()
    elif config.tamper == "missing-required":
        host = SimulatedHost(host_id=HOST_ID, identity=pristine.identity,
                             measurement_pcr=config.agent.measurement_pcr,
                             image=image_without(REQUIRED_FILE_PATH))

    agent = AttestationAgent(AgentConfig(HOST_ID, Endpoint(LOOPBACK, 0), config.agent.pcr_selection), host)
    ca_runner = ServiceRunner("ca", Endpoint(LOOPBACK, 0), CaService(ca).handle_connection)
    agent_runner = ServiceRunner("agent", Endpoint(LOOPBACK, 0), agent.handle_connection)
    with ca_runner, agent_runner:
        session = run_enrollment(ca_runner.bound, agent_runner.bound,
                                 EnclaveCompartment(policy=policy), fault=fault,
                                 ca_root=ca.root_certificate())
    print_session(session)
    return exit_code_for(session)


def cmd_bench(config: ScenarioConfig, args) -> int:
    banner("📊 TRUSTPLANE - BENCHMARKS")
    bench = config.bench
    policy = CipherPolicy.named(config.cipher_policy)
    tables = {}

    with Deployment(policy=policy, trace_ecalls=bench.trace_ecalls) as deployment:
        print(f"🔑 Keys and certificate: {bench.keygen_runs} runs")
        keygen = run_keygen_benchmark(deployment, bench.keygen_runs, policy)
        tables["keygen"] = keygen_table(keygen.init_seconds)
        tables["attestation"] = attestation_table(keygen.sessions)

        print(f"⏱️  Latency: {len(bench.sizes)} sizes x {bench.count} packets at {bench.rate:g} pps")
        report = run_latency_benchmark(bench.sizes, bench.rate, bench.count, bench.cutoff_ms,
                                       deployment=deployment)
        tables["latency"] = latency_table(report)

        print(f"🖥️  CPU utilization at {', '.join(f'{r:g}' for r in bench.cpu_rates)} pps")
        tables["cpu"] = cpu_table(run_cpu_benchmark(deployment, bench.cpu_rates))

        if bench.trace_ecalls:
            print("🔬 ECALL trace")
            profiles = run_ecall_trace(deployment, bench.sizes, bench.rate, bench.count)
            tables["ecall"] = ecall_table(profiles)
        else:
            print("   (ECALL table skipped; pass --trace-ecalls)")

    for path in write_reports(bench.report_dir, tables):
        print(f"✓ {path}")
    if report.fit is not None:
        print(f"\nLatency line: {report.fit.intercept:.1f} us + {report.slope_ns_per_byte:.1f} ns/byte "
              f"(residual {report.fit.residual_rms:.1f} us)")
    return EXIT_OK


COMMANDS = {
    "serve-ca": cmd_serve_ca,
    "serve-agent": cmd_serve_agent,
    "provision": cmd_provision,
    "enroll": cmd_enroll,
    "bench": cmd_bench,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE settings file (see config/default.env)")
    common.add_argument("--tamper", choices=TAMPER_CHOICES, help="fault to inject")
    common.add_argument("--replay-nonce", action="store_true", help="same as --tamper nonce-replay")
    common.add_argument("--ca", help="CA endpoint host:port")
    common.add_argument("--agent", help="agent endpoint host:port or unix:/path")
    common.add_argument("--known-good", help="allowlist JSON written by provision")
    common.add_argument("--cipher-policy", choices=CIPHER_POLICIES)
    common.add_argument("--sizes", help="frame sizes A:B:STEP or a comma list")
    common.add_argument("--rate", type=float, help="packets per second")
    common.add_argument("--count", type=int, help="packets per size")
    common.add_argument("--cutoff-ms", type=float, help="outlier cutoff in milliseconds")
    common.add_argument("--keygen-runs", type=int, help="library_init repetitions")
    common.add_argument("--trace-ecalls", action="store_true", help="record per-ECALL timings")
    common.add_argument("--report-dir", help="where bench writes its tables")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR")

    parser = argparse.ArgumentParser(prog="trustplane", description="Attestation-gated SDN trust anchor")
    sub = parser.add_subparsers(dest="command", required=True)
    serve_ca = sub.add_parser("serve-ca", parents=[common], help="run the extended CA")
    serve_ca.add_argument("--no-admin", action="store_true", help="skip the admin HTTP API")
    sub.add_parser("serve-agent", parents=[common], help="run an attestation agent")
    provision = sub.add_parser("provision", parents=[common], help="write the known-good allowlist")
    provision.add_argument("--output", default="known_good.json")
    sub.add_parser("enroll", parents=[common], help="enroll one compartment")
    sub.add_parser("bench", parents=[common], help="run the benchmark suite")
    return parser


def overrides_from(args) -> dict:
    tamper = args.tamper or ("nonce-replay" if args.replay_nonce else None)
    return {
        "TAMPER": tamper,
        "CA_ENDPOINT": args.ca,
        "AGENT_ENDPOINT": args.agent,
        "KNOWN_GOOD": args.known_good,
        "CIPHER_POLICY": args.cipher_policy,
        "BENCH_SIZES": args.sizes,
        "BENCH_RATE": args.rate,
        "BENCH_COUNT": args.count,
        "BENCH_CUTOFF_MS": args.cutoff_ms,
        "BENCH_KEYGEN_RUNS": args.keygen_runs,
        "BENCH_TRACE_ECALLS": True if args.trace_ecalls else None,
        "REPORT_DIR": args.report_dir,
        "LOG_LEVEL": args.log_level,
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, overrides_from(args))
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(config.log_level, config.log_file)
    randomness.configure(config.seed)

    try:
        return COMMANDS[args.command](config, args)
    except (CaError, ValueError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TopologyError as e:
        print(f"❌ Topology failure: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        print(f"❌ Unexpected error: {e}", file=sys.stderr)
        logger.debug("unexpected error", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
