"""
Tests for the learning controller and its TLS listener.
"""

import pytest

from src.controller import (
    BROADCAST_MAC,
    ControllerServer,
    LearningController,
    MacTable,
    controller_handle_packet_in,
)
from src.openflow import (
    OFPP_FLOOD,
    OFPT_FLOW_MOD,
    OFPT_PACKET_OUT,
    OfpHeader,
    PacketInMessage,
    PacketOutMessage,
    encode_packet_in,
)
from src.packets import mac_bytes
from src.switch import SwitchError, VirtualSwitch

MAC_A = mac_bytes("02:00:00:00:00:0a")
MAC_B = mac_bytes("02:00:00:00:00:0b")


def ethernet(src, dst, size=64):
    return dst + src + b"\x08\x00" + bytes(size - 14)


def packet_in(src, dst, in_port, xid=1, size=64):
    frame = ethernet(src, dst, size)
    return PacketInMessage(xid=xid, in_port=in_port, data=frame, total_len=len(frame))


@pytest.mark.unit
def test_unknown_destination_floods_then_learns():
    out, table = controller_handle_packet_in(packet_in(MAC_A, MAC_B, in_port=1), MacTable())
    assert out.out_port == OFPP_FLOOD
    assert table.lookup(MAC_A) == 1

    out, table = controller_handle_packet_in(packet_in(MAC_B, MAC_A, in_port=2, xid=2), table)
    assert out.out_port == 1
    assert out.xid == 2

    out, table = controller_handle_packet_in(packet_in(MAC_A, MAC_B, in_port=1, xid=3).encode(), table)
    assert out.out_port == 2
    assert len(table) == 2


@pytest.mark.unit
def test_packet_out_echoes_the_frame():
    message = packet_in(MAC_A, MAC_B, in_port=3, xid=77, size=200)
    out, _ = controller_handle_packet_in(message, MacTable())
    assert out.data == message.data
    assert out.in_port == 3
    assert out.buffer_id == message.buffer_id


@pytest.mark.unit
def test_broadcast_always_floods():
    table = MacTable().learn(BROADCAST_MAC, 4)
    out, _ = controller_handle_packet_in(packet_in(MAC_A, BROADCAST_MAC, in_port=1), table)
    assert out.out_port == OFPP_FLOOD


@pytest.mark.unit
def test_mac_table_is_persistent():
    empty = MacTable()
    learned = empty.learn(MAC_A, 1)
    assert len(empty) == 0
    assert learned.lookup(MAC_A) == 1
    assert learned.learn(MAC_A, 1) is learned
    assert learned.learn(MAC_A, 5).lookup(MAC_A) == 5
    assert learned.lookup(MAC_A) == 1


@pytest.mark.unit
def test_fragments_follow_the_first_decision():
    controller = LearningController()
    controller.handle_message(packet_in(MAC_B, MAC_A, in_port=2).encode())

    frame = ethernet(MAC_A, MAC_B, size=2000)
    replies = []
    for message in encode_packet_in(frame, in_port=1, xid=9):
        replies.extend(controller.handle_message(message))
    outs = [PacketOutMessage.decode(r) for r in replies]
    assert [o.out_port for o in outs] == [2, 2]
    assert b"".join(o.data for o in outs) == frame
    assert controller._fragments == {}


@pytest.mark.unit
def test_abandoned_fragments_are_evicted_oldest_first():
    controller = LearningController(max_pending=2)
    frame = ethernet(MAC_A, MAC_B, size=2000)
    for xid in (1, 2, 3):
        first, _ = encode_packet_in(frame, in_port=1, xid=xid)
        controller.handle_message(first)
    assert list(controller._fragments) == [2, 3]

    _, rest = encode_packet_in(frame, in_port=1, xid=3)
    (reply,) = controller.handle_message(rest)
    assert PacketOutMessage.decode(reply).out_port == OFPP_FLOOD
    assert list(controller._fragments) == [2]


@pytest.mark.unit
def test_never_sends_flow_mods():
    controller = LearningController()
    for i in range(50):
        src, dst = (MAC_A, MAC_B) if i % 2 else (MAC_B, MAC_A)
        controller.handle_message(packet_in(src, dst, in_port=1 + i % 2, xid=i).encode())
    assert controller.sent_types[OFPT_FLOW_MOD] == 0
    assert controller.sent_types[OFPT_PACKET_OUT] == 50
    assert controller.counters.flow_mods_sent == 0
    assert controller.counters.floods + controller.counters.unicasts == 50


@pytest.mark.unit
def test_malformed_and_foreign_messages():
    controller = LearningController()
    assert controller.handle_message(OfpHeader(0x01, OFPT_FLOW_MOD, 8, 1).pack()) == []
    assert controller.handle_message(PacketInMessage(xid=1, in_port=1, data=b"tiny", total_len=4).encode()) == []
    assert controller.counters.dropped == 1
    assert controller.counters.packet_in == 1


@pytest.mark.integration
def test_server_counts_handshakes(ca, rogue_ca, make_compartment, make_server_context):
    server = ControllerServer(make_server_context(ca, ca.root_certificate()))
    endpoint = server.start()
    try:
        good = VirtualSwitch(make_compartment(ca))
        good.connect(endpoint)
        with pytest.raises(SwitchError):
            VirtualSwitch(make_compartment(rogue_ca)).connect(endpoint)
        assert server.wait_for_outcome(2, timeout=10.0)
        assert server.sessions_established == 1
        assert server.handshake_failures == 1
        good.close()
    finally:
        server.stop()
