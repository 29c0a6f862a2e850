"""
Tests for the virtual switch: every frame goes through the compartment, the
controller answers, and the switch delivers.
"""

import time
from collections import Counter

import pytest

from src.controller import ControllerServer
from src.openflow import OFPT_FLOW_MOD
from src.packets import UdpFrame
from src.switch import Outcome, SwitchError, VirtualSwitch
from src.wire import Endpoint

MAC_A, MAC_B = "02:00:00:00:00:0a", "02:00:00:00:00:0b"


def frame(src_mac, dst_mac, size=128):
    return UdpFrame(src_mac=src_mac, dst_mac=dst_mac, src_ip="10.0.0.1", dst_ip="10.0.0.2",
                    src_port=1000, dst_port=2000, payload=bytes(size - 42)).encode()


@pytest.fixture
def controller(ca, make_server_context):
    server = ControllerServer(make_server_context(ca, ca.root_certificate()))
    endpoint = server.start()
    yield server, endpoint
    server.stop()


@pytest.fixture
def switch(ca, make_compartment, controller):
    """A connected switch with two ports; returns (switch, {port: received frames})."""
    _, endpoint = controller
    vswitch = VirtualSwitch(make_compartment(ca))
    inboxes = {1: [], 2: []}
    for port, inbox in inboxes.items():
        vswitch.attach(port, inbox.append)
    vswitch.connect(endpoint)
    yield vswitch, inboxes
    vswitch.close()


@pytest.mark.integration
def test_flood_then_unicast(switch, controller):
    vswitch, inboxes = switch
    a_to_b = frame(MAC_A, MAC_B)
    b_to_a = frame(MAC_B, MAC_A)

    first = vswitch.switch_forward(a_to_b, in_port=1)
    assert first.outcome is Outcome.FLOODED
    assert first.out_ports == [2]
    assert first.packet_ins == 1

    assert vswitch.switch_forward(b_to_a, in_port=2).out_ports == [1]
    again = vswitch.switch_forward(a_to_b, in_port=1)
    assert again.outcome is Outcome.UNICAST
    assert again.out_ports == [2]

    assert inboxes[2] == [a_to_b, a_to_b]
    assert inboxes[1] == [b_to_a]
    assert vswitch.counters.packet_ins_sent == 3
    assert vswitch.counters.packet_outs_received == 3

    server, _ = controller
    assert server.total_counters().packet_in == 3
    assert server.controllers[0].sent_types[OFPT_FLOW_MOD] == 0


@pytest.mark.integration
def test_jumbo_frame_goes_as_two_packet_ins(switch):
    vswitch, inboxes = switch
    big = frame(MAC_A, MAC_B, size=2000)
    result = vswitch.switch_forward(big, in_port=1)
    assert result.packet_ins == 2
    assert result.outcome is Outcome.FLOODED
    assert inboxes[2] == [big]


@pytest.mark.integration
def test_frame_sizes_survive_the_round_trip(switch):
    vswitch, inboxes = switch
    sizes = [64, 128, 512, 1024, 1408, 1500]
    for size in sizes:
        vswitch.switch_forward(frame(MAC_A, MAC_B, size), in_port=1)
    assert [len(f) for f in inboxes[2]] == sizes


@pytest.mark.integration
def test_disconnected_switch_drops(ca, make_compartment):
    vswitch = VirtualSwitch(make_compartment(ca))
    vswitch.attach(1, lambda f: None)
    result = vswitch.switch_forward(frame(MAC_A, MAC_B), in_port=1)
    assert result.outcome is Outcome.DROPPED
    assert not vswitch.connected


@pytest.mark.integration
def test_controller_gone_drops(switch, controller):
    vswitch, inboxes = switch
    vswitch.reply_timeout = 1.0
    server, _ = controller
    server.stop()
    result = vswitch.switch_forward(frame(MAC_A, MAC_B), in_port=1)
    assert result.outcome is Outcome.DROPPED
    assert inboxes[2] == []


@pytest.mark.integration
def test_untrusted_controller_is_refused(ca, rogue_ca, make_compartment, make_server_context):
    server = ControllerServer(make_server_context(rogue_ca, ca.root_certificate()))
    endpoint = server.start()
    try:
        with pytest.raises(SwitchError):
            VirtualSwitch(make_compartment(ca)).connect(endpoint)
    finally:
        server.stop()


@pytest.mark.unit
def test_unreachable_controller(ca, make_compartment):
    with pytest.raises(SwitchError):
        VirtualSwitch(make_compartment(ca)).connect(Endpoint("127.0.0.1", 1), timeout=1.0)


@pytest.mark.unit
def test_port_numbers(ca, make_compartment):
    vswitch = VirtualSwitch(make_compartment(ca))
    vswitch.attach(1, lambda f: None)
    with pytest.raises(ValueError):
        vswitch.attach(1, lambda f: None)
    with pytest.raises(ValueError):
        vswitch.attach(0xFFFB, lambda f: None)


@pytest.mark.integration
def test_one_forwarded_frame_uses_the_ecall_pattern(ca, make_compartment, controller):
    """One write, at least one read, and a state check on each side of the write."""
    _, endpoint = controller
    vswitch = VirtualSwitch(make_compartment(ca, trace_ecalls=True))
    vswitch.attach(1, lambda f: None)
    vswitch.attach(2, lambda f: None)
    vswitch.connect(endpoint)
    try:
        vswitch.compartment.boundary_trace(vswitch.handle, reset=True)
        assert vswitch.switch_forward(frame(MAC_A, MAC_B), in_port=1).outcome is Outcome.FLOODED
        calls = Counter(r.ecall for r in vswitch.compartment.boundary_trace(vswitch.handle))
    finally:
        vswitch.close()
    assert calls["ecall_ssl_write"] == 1
    assert calls["ecall_ssl_read"] >= 1
    assert calls["ecall_ssl_get_state"] >= 2


@pytest.mark.integration
def test_runt_frame_dropped_without_waiting(switch, controller):
    vswitch, inboxes = switch
    started = time.monotonic()
    result = vswitch.switch_forward(b"\x02" * 13, in_port=1)
    assert result.outcome is Outcome.DROPPED
    assert result.packet_ins == 0
    assert time.monotonic() - started < 1.0

    header_only = bytes.fromhex("02000000000b" "02000000000a" "0800")
    assert vswitch.switch_forward(header_only, in_port=1).outcome is Outcome.FLOODED
    assert inboxes[2] == [header_only]
    server, _ = controller
    assert server.total_counters().packet_in == 1
