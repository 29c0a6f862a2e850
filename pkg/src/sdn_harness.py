"""
SDN Harness - a desk-scale deployment and the measurements run on it

Deployment builds the whole topology in one process:

    CA service + attestation agent (loopback)
    switch compartment, enrolled through library_init
    controller with a CA-issued server certificate (TLS, client certs required)
    virtual switch: port 1 = traffic generator/sink, port 2 = echo server

and the run_* functions below drive it:

    run_latency_benchmark   RTT per frame size, outlier cutoff, regression
    run_cpu_benchmark       process CPU time per packet rate (best effort)
    run_ecall_trace         per-ECALL timings per frame size
    run_keygen_benchmark    library_init timings, one fresh compartment each
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from cryptography.hazmat.primitives.asymmetric import rsa

from src.attestation_agent import AgentConfig, AttestationAgent
from src.controller import ControllerServer, server_tls_context
from src.enclave_tls import CipherPolicy, EnclaveCompartment, TraceRecord
from src.enrollment import STAGES, EnrollmentSession, stage_timings
from src.extended_ca import CaService, ExtendedCA, KnownGoodConfig, build_csr
from src.host import SimulatedHost
from src.logger import get_logger
from src.statistics import LinearFit, Summary, filter_outliers, fit_line, summarize
from src.switch import VirtualSwitch
from src.traffic import EchoServer, TrafficGenerator, TrafficRun
from src.wire import Endpoint, ServiceRunner

logger = get_logger(__name__)

GENERATOR_PORT = 1
ECHO_PORT = 2
DEFAULT_SIZES = tuple(range(64, 1408 + 1, 64))
DEFAULT_RATE = 500
DEFAULT_COUNT = 1000
DEFAULT_CUTOFF_MS = 2.5
LOOPBACK = "127.0.0.1"


class TopologyError(Exception):
    """The deployment could not be brought up (or went down mid-run)."""


class Deployment:
    """
    Everything needed for one benchmark run, started and stopped together.

    Usage:
        with Deployment(trace_ecalls=True) as deployment:
            report = run_latency_benchmark([64, 128], 500, 100, deployment=deployment)
    """

    def __init__(
        self,
        policy: Optional[CipherPolicy] = None,
        trace_ecalls: bool = False,
        capture_boundary: bool = False,
        host: Optional[SimulatedHost] = None,
    ):
        self.policy = policy or CipherPolicy.default()
        self.trace_ecalls = trace_ecalls
        self.capture_boundary = capture_boundary
        self.host = host or SimulatedHost(host_id="switch-host")
        self.ca: Optional[ExtendedCA] = None
        self.ca_endpoint: Optional[Endpoint] = None
        self.agent_endpoint: Optional[Endpoint] = None
        self.compartment: Optional[EnclaveCompartment] = None
        self.enrollment: Optional[EnrollmentSession] = None
        self.controller: Optional[ControllerServer] = None
        self.switch: Optional[VirtualSwitch] = None
        self.echo: Optional[EchoServer] = None
        self._runners: List[ServiceRunner] = []
        self._generator: Optional[TrafficGenerator] = None

    def start_attestation_services(self) -> None:
        known_good = KnownGoodConfig.from_entries(
            self.host.allowlist_entries(), [self.host.attestation_key()])
        self.ca = ExtendedCA(known_good)
        ca_runner = ServiceRunner("ca", Endpoint(LOOPBACK, 0), CaService(self.ca).handle_connection)
        self.ca_endpoint = ca_runner.start()
        self._runners.append(ca_runner)

        agent = AttestationAgent(AgentConfig(self.host.host_id, Endpoint(LOOPBACK, 0)), self.host)
        agent_runner = ServiceRunner("agent", Endpoint(LOOPBACK, 0), agent.handle_connection)
        self.agent_endpoint = agent_runner.start()
        self._runners.append(agent_runner)

    def start(self) -> "Deployment":
        """
        Raises:
            TopologyError: enrollment or the southbound handshake failed
        """
        try:
            self.start_attestation_services()

            self.compartment = EnclaveCompartment(
                policy=self.policy, trace_ecalls=self.trace_ecalls,
                capture_boundary=self.capture_boundary)
            self.enrollment = self.compartment.library_init(self.ca_endpoint, self.agent_endpoint)

            controller_key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
            controller_cert = self.ca.issue_controller_certificate(build_csr(controller_key, "controller"))
            context = server_tls_context(controller_key, controller_cert, self.ca.root_certificate())
            self.controller = ControllerServer(context, Endpoint(LOOPBACK, 0))
            controller_endpoint = self.controller.start()

            self.switch = VirtualSwitch(self.compartment)
            self.echo = EchoServer(lambda frame: self.switch.switch_forward(frame, ECHO_PORT)).start()
            self.switch.attach(GENERATOR_PORT, self._to_generator)
            self.switch.attach(ECHO_PORT, self.echo.receive)
            self.switch.connect(controller_endpoint)
        except Exception as e:
            self.stop()
            raise TopologyError(f"deployment failed to start: {e}") from e
        logger.info("deployment up: ca=%s agent=%s controller=%s",
                    self.ca_endpoint, self.agent_endpoint, self.controller.bound)
        return self

    def _to_generator(self, frame: bytes) -> None:
        if self._generator is not None:
            self._generator.receive(frame)

    def send_from_generator(self, frame: bytes):
        return self.switch.switch_forward(frame, GENERATOR_PORT)

    def run_traffic(self, size: int, rate: float, count: int) -> TrafficRun:
        """
        Raises:
            TopologyError: southbound session is down
        """
        if self.switch is None or not self.switch.connected:
            raise TopologyError("southbound session is not established")
        generator = TrafficGenerator(self.send_from_generator, size, rate, count)
        self._generator = generator
        try:
            return generator.run()
        finally:
            self._generator = None

    def stop(self) -> None:
        if self.echo is not None:
            self.echo.stop()
            self.echo = None
        if self.switch is not None:
            self.switch.close()
            self.switch = None
        if self.controller is not None:
            self.controller.stop()
            self.controller = None
        for runner in reversed(self._runners):
            runner.stop()
        self._runners.clear()

    def __enter__(self) -> "Deployment":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# ---------------------------------------------------------------------------
# Latency sweep
# ---------------------------------------------------------------------------

@dataclass
class SizeResult:
    size: int
    summary: Optional[Summary]
    excluded: int
    lost: int
    samples_us: List[float] = field(default_factory=list)


@dataclass
class BenchmarkReport:
    rate_pps: float
    count_per_size: int
    cutoff_ms: float
    rows: List[SizeResult]
    fit: Optional[LinearFit]

    @property
    def slope_ns_per_byte(self) -> Optional[float]:
        # fit is in microseconds per byte
        return None if self.fit is None else self.fit.slope * 1000.0


def summarize_size(size: int, samples_us: Sequence[float], cutoff_ms: float, lost: int = 0) -> SizeResult:
    kept, excluded = filter_outliers(samples_us, cutoff_ms * 1000.0)
    summary = summarize(kept) if kept.size else None
    return SizeResult(size=size, summary=summary, excluded=excluded, lost=lost,
                      samples_us=[float(v) for v in samples_us])


def build_report(rows: List[SizeResult], rate_pps: float, count: int, cutoff_ms: float) -> BenchmarkReport:
    """Regression over per-size means; no fit with fewer than two usable sizes."""
    usable = [row for row in rows if row.summary is not None]
    fit = None
    if len({row.size for row in usable}) >= 2:
        fit = fit_line([row.size for row in usable], [row.summary.mean for row in usable])
    return BenchmarkReport(rate_pps=rate_pps, count_per_size=count, cutoff_ms=cutoff_ms, rows=rows, fit=fit)


def run_latency_benchmark(
    sizes: Sequence[int] = DEFAULT_SIZES,
    rate_pps: float = DEFAULT_RATE,
    count_per_size: int = DEFAULT_COUNT,
    outlier_cutoff_ms: float = DEFAULT_CUTOFF_MS,
    deployment: Optional[Deployment] = None,
) -> BenchmarkReport:
    """
    Round-trip latency through switch -> controller -> switch -> echo and back.

    Raises:
        TopologyError: topology not up or lost mid-run
    """
    owned = deployment is None
    if owned:
        deployment = Deployment().start()
    try:
        rows = []
        for size in sizes:
            run = deployment.run_traffic(size, rate_pps, count_per_size)
            row = summarize_size(size, [s.rtt_us for s in run.samples], outlier_cutoff_ms, run.lost)
            logger.info("size %4d: %d samples, %d excluded, %d lost",
                        size, len(run.samples), row.excluded, run.lost)
            rows.append(row)
        return build_report(rows, rate_pps, count_per_size, outlier_cutoff_ms)
    finally:
        if owned:
            deployment.stop()


# ---------------------------------------------------------------------------
# CPU, ECALL and key generation benchmarks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CpuSample:
    rate_pps: float
    utilization_pct: float


def run_cpu_benchmark(deployment: Deployment, rates: Sequence[float], duration_s: float = 1.0,
                      size: int = 64) -> List[CpuSample]:
    """Process CPU time over wall time while traffic runs at each rate."""
    samples = []
    for rate in rates:
        count = max(1, int(rate * duration_s))
        cpu_start, wall_start = time.process_time(), time.perf_counter()
        deployment.run_traffic(size, rate, count)
        cpu = time.process_time() - cpu_start
        wall = time.perf_counter() - wall_start
        samples.append(CpuSample(rate_pps=rate, utilization_pct=100.0 * cpu / wall if wall > 0 else 0.0))
    return samples


@dataclass
class EcallProfile:
    size: int
    frames: int
    records: List[TraceRecord]


def run_ecall_trace(deployment: Deployment, sizes: Sequence[int], rate_pps: float,
                    count_per_size: int) -> List[EcallProfile]:
    """
    Raises:
        TopologyError: the deployment was started without ECALL tracing
    """
    if not deployment.trace_ecalls:
        raise TopologyError("start the deployment with trace_ecalls=True")
    compartment, handle = deployment.compartment, deployment.switch.handle
    compartment.boundary_trace(handle, reset=True)
    profiles = []
    for size in sizes:
        before = deployment.switch.counters.received
        deployment.run_traffic(size, rate_pps, count_per_size)
        frames = deployment.switch.counters.received - before
        profiles.append(EcallProfile(size=size, frames=frames,
                                     records=compartment.boundary_trace(handle, reset=True)))
    return profiles


@dataclass
class KeygenRun:
    init_seconds: List[float]
    sessions: List[EnrollmentSession]


def run_keygen_benchmark(deployment: Deployment, runs: int, policy: Optional[CipherPolicy] = None) -> KeygenRun:
    """library_init (key generation through certificate install) on `runs` fresh compartments."""
    if deployment.ca_endpoint is None:
        deployment.start_attestation_services()
    result = KeygenRun(init_seconds=[], sessions=[])
    for i in range(runs):
        compartment = EnclaveCompartment(policy=policy or deployment.policy)
        session = compartment.library_init(deployment.ca_endpoint, deployment.agent_endpoint)
        result.init_seconds.append(compartment.init_seconds)
        result.sessions.append(session)
        logger.debug("keygen run %d: %.3fs", i + 1, compartment.init_seconds)
    return result


def stage_summaries(sessions: Sequence[EnrollmentSession]) -> Dict[str, Summary]:
    """Per-stage summaries over finished sessions."""
    by_stage: Dict[str, List[float]] = {stage: [] for stage in STAGES}
    for session in sessions:
        for stage, seconds in stage_timings(session).items():
            by_stage[stage].append(seconds)
    return {stage: summarize(values) for stage, values in by_stage.items() if values}
