"""
Tests for the UDP frame builder used by the traffic generator.
"""

import pytest

from src.packets import (
    HEADERS_SIZE,
    MIN_FRAME_SIZE,
    PacketError,
    UdpFrame,
    ethernet_addresses,
    ipv4_checksum,
    mac_bytes,
    read_stamp,
    stamped_payload,
    swap_endpoints,
)


def sample(payload=b"hello"):
    return UdpFrame(src_mac="02:00:00:00:00:01", dst_mac="02:00:00:00:00:02",
                    src_ip="10.0.0.1", dst_ip="10.0.0.2",
                    src_port=5001, dst_port=7, payload=payload, ident=42)


@pytest.mark.unit
def test_frame_layout():
    frame = sample().encode()
    assert len(frame) == HEADERS_SIZE + 5
    assert frame[:6] == mac_bytes("02:00:00:00:00:02")
    assert frame[12:14] == b"\x08\x00"
    assert ipv4_checksum(frame[14:34]) == 0
    assert UdpFrame.decode(frame) == sample()


@pytest.mark.unit
def test_known_checksum():
    # RFC 1071 style example header with the checksum field zeroed
    header = bytes.fromhex("450000730000400040110000c0a80001c0a800c7")
    assert ipv4_checksum(header) == 0xB861


@pytest.mark.unit
def test_swap_endpoints_keeps_payload():
    swapped = UdpFrame.decode(swap_endpoints(sample(b"payload").encode()))
    assert (swapped.src_ip, swapped.dst_ip) == ("10.0.0.2", "10.0.0.1")
    assert (swapped.src_port, swapped.dst_port) == (7, 5001)
    assert swapped.src_mac == "02:00:00:00:00:02"
    assert swapped.payload == b"payload"


@pytest.mark.unit
def test_ethernet_addresses():
    src, dst = ethernet_addresses(sample().encode())
    assert src == mac_bytes("02:00:00:00:00:01")
    assert dst == mac_bytes("02:00:00:00:00:02")
    with pytest.raises(PacketError):
        ethernet_addresses(b"short")


@pytest.mark.unit
def test_stamped_frames_hit_exact_sizes():
    assert MIN_FRAME_SIZE == 58
    for size in (58, 64, 512, 1408, 1500):
        frame = sample(stamped_payload(sequence=size, send_ns=123, frame_size=size)).encode()
        assert len(frame) == size
        assert read_stamp(UdpFrame.decode(frame).payload) == (size, 123)
    with pytest.raises(PacketError):
        stamped_payload(1, 1, 57)


@pytest.mark.unit
def test_decode_rejects_damage():
    frame = bytearray(sample().encode())
    with pytest.raises(PacketError):
        UdpFrame.decode(bytes(frame[:30]))
    corrupted = bytearray(frame)
    corrupted[22] ^= 0xFF   # TTL, checksum no longer matches
    with pytest.raises(PacketError):
        UdpFrame.decode(bytes(corrupted))
    not_ip = bytearray(frame)
    not_ip[12:14] = b"\x86\xdd"
    with pytest.raises(PacketError):
        UdpFrame.decode(bytes(not_ip))
    with pytest.raises(PacketError):
        UdpFrame.decode(bytes(frame) + b"trailing")
    with pytest.raises(PacketError):
        mac_bytes("02:00")
