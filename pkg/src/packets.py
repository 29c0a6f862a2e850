"""
Packets - Ethernet / IPv4 / UDP frames for the latency harness

Sizes are whole frames (Ethernet + IP + UDP headers + payload), the way the
latency sweep counts them. The generator puts a 16-byte stamp at the front of
the UDP payload: sequence(8) || send time in ns(8), so the smallest frame the
harness can send is 14 + 20 + 8 + 16 = 58 bytes.
"""

import ipaddress
import struct
from dataclasses import dataclass, replace
from typing import Tuple

ETH_HEADER_SIZE = 14
IPV4_HEADER_SIZE = 20
UDP_HEADER_SIZE = 8
HEADERS_SIZE = ETH_HEADER_SIZE + IPV4_HEADER_SIZE + UDP_HEADER_SIZE   # 42

ETHERTYPE_IPV4 = 0x0800
IPPROTO_UDP = 17
DEFAULT_TTL = 64

_STAMP = struct.Struct("!QQ")
STAMP_SIZE = _STAMP.size                                              # 16
MIN_FRAME_SIZE = HEADERS_SIZE + STAMP_SIZE                            # 58

_ETH = struct.Struct("!6s6sH")
_IPV4 = struct.Struct("!BBHHHBBH4s4s")
_UDP = struct.Struct("!HHHH")


class PacketError(Exception):
    """Frame can't be built or parsed."""


def mac_bytes(text: str) -> bytes:
    raw = bytes.fromhex(text.replace(":", ""))
    if len(raw) != 6:
        raise PacketError(f"bad MAC address {text!r}")
    return raw


def mac_str(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def ipv4_checksum(header: bytes) -> int:
    """Ones' complement sum over 16-bit words (checksum field zeroed by the caller)."""
    if len(header) % 2:
        header += b"\x00"
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


@dataclass(frozen=True)
class UdpFrame:
    src_mac: str
    dst_mac: str
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    payload: bytes = b""
    ident: int = 0

    def encode(self) -> bytes:
        udp_length = UDP_HEADER_SIZE + len(self.payload)
        total_length = IPV4_HEADER_SIZE + udp_length
        if total_length > 0xFFFF:
            raise PacketError("payload too large for one IPv4 packet")

        src = ipaddress.IPv4Address(self.src_ip).packed
        dst = ipaddress.IPv4Address(self.dst_ip).packed
        ip_header = _IPV4.pack(0x45, 0, total_length, self.ident & 0xFFFF, 0,
                               DEFAULT_TTL, IPPROTO_UDP, 0, src, dst)
        ip_header = ip_header[:10] + struct.pack("!H", ipv4_checksum(ip_header)) + ip_header[12:]
        # UDP checksum 0 = not computed (allowed over IPv4)
        udp_header = _UDP.pack(self.src_port, self.dst_port, udp_length, 0)
        eth_header = _ETH.pack(mac_bytes(self.dst_mac), mac_bytes(self.src_mac), ETHERTYPE_IPV4)
        return eth_header + ip_header + udp_header + self.payload

    @classmethod
    def decode(cls, frame: bytes) -> "UdpFrame":
        """
        Raises:
            PacketError: not IPv4/UDP, truncated, or a bad header checksum
        """
        if len(frame) < HEADERS_SIZE:
            raise PacketError(f"frame of {len(frame)} bytes is shorter than the headers")
        dst_mac, src_mac, ethertype = _ETH.unpack_from(frame)
        if ethertype != ETHERTYPE_IPV4:
            raise PacketError(f"ethertype 0x{ethertype:04x} is not IPv4")
        ip_header = frame[ETH_HEADER_SIZE:ETH_HEADER_SIZE + IPV4_HEADER_SIZE]
        (version_ihl, _tos, total_length, ident, _frag, _ttl, proto, _csum,
         src, dst) = _IPV4.unpack(ip_header)
        if version_ihl != 0x45 or proto != IPPROTO_UDP:
            raise PacketError("only option-less IPv4/UDP is supported")
        if ipv4_checksum(ip_header) != 0:
            raise PacketError("IPv4 header checksum mismatch")
        if ETH_HEADER_SIZE + total_length != len(frame):
            raise PacketError("IPv4 total length does not match the frame")
        src_port, dst_port, _udp_length, _udp_csum = _UDP.unpack_from(
            frame, ETH_HEADER_SIZE + IPV4_HEADER_SIZE)
        return cls(
            src_mac=mac_str(src_mac), dst_mac=mac_str(dst_mac),
            src_ip=str(ipaddress.IPv4Address(src)), dst_ip=str(ipaddress.IPv4Address(dst)),
            src_port=src_port, dst_port=dst_port,
            payload=bytes(frame[HEADERS_SIZE:]), ident=ident,
        )

    def swapped(self) -> "UdpFrame":
        """The reply an echo server sends: endpoints swapped, payload untouched."""
        return replace(self, src_mac=self.dst_mac, dst_mac=self.src_mac,
                       src_ip=self.dst_ip, dst_ip=self.src_ip,
                       src_port=self.dst_port, dst_port=self.src_port)


def swap_endpoints(frame: bytes) -> bytes:
    return UdpFrame.decode(frame).swapped().encode()


def ethernet_addresses(frame: bytes) -> Tuple[bytes, bytes]:
    """(src MAC, dst MAC) straight from the Ethernet header."""
    if len(frame) < ETH_HEADER_SIZE:
        raise PacketError("frame shorter than an Ethernet header")
    dst_mac, src_mac, _ = _ETH.unpack_from(frame)
    return src_mac, dst_mac


def stamp(sequence: int, send_ns: int) -> bytes:
    return _STAMP.pack(sequence, send_ns)


def read_stamp(payload: bytes) -> Tuple[int, int]:
    """(sequence, send time ns) from the front of a generator payload."""
    if len(payload) < STAMP_SIZE:
        raise PacketError(f"payload of {len(payload)} bytes has no stamp")
    return _STAMP.unpack_from(payload)


def stamped_payload(sequence: int, send_ns: int, frame_size: int) -> bytes:
    """Stamp padded so the finished frame is exactly `frame_size` bytes."""
    if frame_size < MIN_FRAME_SIZE:
        raise PacketError(f"frame size {frame_size} is below the {MIN_FRAME_SIZE}-byte minimum")
    return stamp(sequence, send_ns) + bytes(frame_size - MIN_FRAME_SIZE)
