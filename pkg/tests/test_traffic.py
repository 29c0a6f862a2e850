"""
Tests for the traffic generator, echo server and pacing.
"""

import pytest

from src.packets import UdpFrame, swap_endpoints
from src.traffic import (
    ECHO_IP,
    GENERATOR_IP,
    EchoServer,
    LoopbackLink,
    TokenBucket,
    TrafficConfigError,
    TrafficGenerator,
    run_echo_server,
    run_traffic_generator,
)


class FakeTime:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def clock(self):
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds


@pytest.mark.unit
def test_token_bucket_paces_without_bursting():
    fake = FakeTime()
    bucket = TokenBucket(100, clock=fake.clock, sleep=fake.sleep)
    for _ in range(5):
        bucket.wait()
    assert fake.now == pytest.approx(0.04)

    # a stall must not turn into a burst afterwards
    fake.now += 1.0
    bucket.wait()
    slept = len(fake.sleeps)
    bucket.wait()
    assert len(fake.sleeps) == slept + 1
    assert fake.sleeps[-1] == pytest.approx(0.01)


@pytest.mark.unit
def test_bad_generator_settings():
    with pytest.raises(TrafficConfigError):
        TrafficGenerator(lambda f: None, size=57, rate=100, count=1)
    with pytest.raises(TrafficConfigError):
        TrafficGenerator(lambda f: None, size=64, rate=0, count=1)
    with pytest.raises(TrafficConfigError):
        TrafficGenerator(lambda f: None, size=64, rate=100, count=-1)


@pytest.mark.unit
def test_loopback_round_trip():
    link = LoopbackLink()
    generator = TrafficGenerator(link.to_echo, size=128, rate=2000, count=50)
    link.connect(generator)
    try:
        run = generator.run()
    finally:
        link.close()
    assert run.sent == 50
    assert run.lost == 0
    assert run.corrupted == 0
    assert len(run.samples) == 50
    assert sorted(s.sequence for s in run.samples) == list(range(50))
    assert all(s.packet_size == 128 and s.rtt_us > 0 for s in run.samples)
    assert link.echo.echoed == 50


@pytest.mark.unit
def test_generator_frames_are_addressed_to_the_echo():
    captured = []
    TrafficGenerator(captured.append, size=64, rate=5000, count=3, drain_timeout=0.05).run()
    assert len(captured) == 3
    decoded = UdpFrame.decode(captured[0])
    assert (decoded.src_ip, decoded.dst_ip) == (GENERATOR_IP, ECHO_IP)
    assert all(len(f) == 64 for f in captured)


@pytest.mark.unit
def test_lost_packets_are_counted_not_invented():
    run = TrafficGenerator(lambda f: None, size=64, rate=5000, count=10, drain_timeout=0.05).run()
    assert run.sent == 10
    assert run.lost == 10
    assert run.samples == []


@pytest.mark.unit
def test_corrupted_echo_is_not_a_sample():
    generator = None

    def damaging_echo(frame):
        damaged = frame[:-1] + bytes([frame[-1] ^ 0x01])
        generator.receive(swap_endpoints(damaged))

    generator = TrafficGenerator(damaging_echo, size=96, rate=5000, count=4, drain_timeout=0.05)
    run = generator.run()
    assert run.corrupted == 4
    assert run.samples == []
    assert run.lost == 0


@pytest.mark.unit
def test_echo_server_skips_garbage():
    replies = []
    echo = EchoServer(replies.append).start()
    try:
        echo.receive(b"not a frame")
        good = UdpFrame(src_mac="02:00:00:00:00:01", dst_mac="02:00:00:00:00:02",
                        src_ip="10.0.0.1", dst_ip="10.0.0.2", src_port=1, dst_port=7,
                        payload=b"ping").encode()
        echo.receive(good)
    finally:
        echo.stop()
    assert echo.malformed == 1
    assert echo.echoed == 1
    assert UdpFrame.decode(replies[0]).dst_ip == "10.0.0.1"


@pytest.mark.unit
def test_function_entry_points():
    """Without a sink wired back, every echo is counted as lost, never as a sample."""
    replies = []
    echo = run_echo_server(replies.append)
    try:
        run = run_traffic_generator(echo.receive, size=64, rate=5000, count=5)
    finally:
        echo.stop()
    assert (run.sent, run.lost, run.samples) == (5, 5, [])
    assert echo.echoed == 5
    assert all(UdpFrame.decode(r).dst_ip == GENERATOR_IP for r in replies)
