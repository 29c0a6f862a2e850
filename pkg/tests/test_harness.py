"""
End-to-end tests on a full in-process deployment: CA, agent, enrolled switch
compartment, controller, generator and echo server.
"""

import pytest
from cryptography.hazmat.primitives import serialization

from src.enrollment import SessionState
from src.openflow import OFPT_FLOW_MOD
from src.sdn_harness import (
    Deployment,
    TopologyError,
    run_cpu_benchmark,
    run_ecall_trace,
    run_keygen_benchmark,
    run_latency_benchmark,
)


@pytest.fixture
def deployment():
    with Deployment() as running:
        yield running


@pytest.mark.integration
def test_deployment_comes_up_enrolled(deployment):
    assert deployment.enrollment.state is SessionState.ENROLLED
    assert deployment.switch.connected
    assert deployment.controller.sessions_established == 1


@pytest.mark.integration
def test_short_latency_sweep(deployment):
    report = run_latency_benchmark([64, 512, 1408], rate_pps=500, count_per_size=50, deployment=deployment)
    assert [row.size for row in report.rows] == [64, 512, 1408]
    assert all(row.lost == 0 for row in report.rows)
    assert all(len(row.samples_us) == 50 for row in report.rows)
    assert report.fit is not None
    assert deployment.controller.total_counters().flow_mods_sent == 0


@pytest.mark.integration
def test_cpu_and_keygen(deployment):
    samples = run_cpu_benchmark(deployment, [200, 400], duration_s=0.25)
    assert [s.rate_pps for s in samples] == [200, 400]
    assert all(s.utilization_pct >= 0 for s in samples)

    keygen = run_keygen_benchmark(deployment, runs=2)
    assert len(keygen.init_seconds) == 2
    assert all(t > 0 for t in keygen.init_seconds)
    assert all(s.state is SessionState.ENROLLED for s in keygen.sessions)


@pytest.mark.integration
def test_ecall_trace_needs_tracing(deployment):
    with pytest.raises(TopologyError):
        run_ecall_trace(deployment, [64], 500, 10)


@pytest.mark.integration
def test_ecall_trace_per_size():
    with Deployment(trace_ecalls=True) as deployment:
        profiles = run_ecall_trace(deployment, [64, 1408], rate_pps=500, count_per_size=20)
    assert [p.size for p in profiles] == [64, 1408]
    for profile in profiles:
        # generator frame and its echo both cross the switch
        assert profile.frames == 40
        names = {r.ecall for r in profile.records}
        assert {"ecall_ssl_write", "ecall_ssl_read", "ecall_ssl_get_state"} <= names


@pytest.mark.unit
def test_traffic_before_start():
    with pytest.raises(TopologyError):
        Deployment().run_traffic(64, 100, 1)


@pytest.mark.slow
def test_ten_thousand_packets_no_flow_updates(deployment):
    """Once both MACs are learned every frame is unicast and no flow is ever installed."""
    deployment.run_traffic(64, rate=100, count=1)
    counters = deployment.switch.counters
    controller = deployment.controller.controllers[0]
    flooded, unicast, packet_ins = counters.flooded, counters.unicast, controller.counters.packet_in

    run = deployment.run_traffic(64, rate=2000, count=10_000)
    assert run.lost == 0
    assert len(run.samples) == 10_000
    assert counters.flooded == flooded
    assert counters.unicast - unicast == 20_000
    assert controller.counters.packet_in - packet_ins == 20_000
    assert controller.sent_types[OFPT_FLOW_MOD] == 0


@pytest.mark.slow
def test_switch_secrets_stay_inside():
    with Deployment(capture_boundary=True) as deployment:
        # 5000 frames each way: 10,000 forwarded through the compartment
        deployment.run_traffic(512, rate=2000, count=5000)
        compartment = deployment.compartment
        private_key = compartment._vault.private_key
        master = compartment._sessions[deployment.switch.handle.id].connection.master_key()
        captured = compartment.boundary_capture()

    pkcs8 = private_key.private_bytes(serialization.Encoding.DER, serialization.PrivateFormat.PKCS8,
                                      serialization.NoEncryption())
    traditional = private_key.private_bytes(serialization.Encoding.DER,
                                            serialization.PrivateFormat.TraditionalOpenSSL,
                                            serialization.NoEncryption())
    d = private_key.private_numbers().d
    assert pkcs8 not in captured
    assert traditional not in captured
    assert d.to_bytes((d.bit_length() + 7) // 8, "big") not in captured
    assert master not in captured
