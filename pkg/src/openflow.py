"""
OpenFlow - the small OpenFlow 1.0 subset the southbound channel speaks

Only what a reactive, no-flow-update controller needs:

    ofp_header      version(1) type(1) length(2) xid(4)                  8 bytes
    packet_in       header + buffer_id(4) total_len(2) in_port(2)
                    reason(1) pad(1) + frame                            18 + n
    packet_out      header + buffer_id(4) in_port(2) actions_len(2)
                    + output action(8) + frame                          24 + n

All fields big-endian. Frames larger than the MTU go out as several
Packet-Ins sharing one xid; total_len always carries the full frame length
so the far side can tell a fragment from a whole frame.
"""

import struct
from dataclasses import dataclass
from typing import List, Union

OFP_VERSION = 0x01

OFPT_PACKET_IN = 10
OFPT_PACKET_OUT = 13
OFPT_FLOW_MOD = 14

OFPR_NO_MATCH = 0
OFPAT_OUTPUT = 0

OFPP_FLOOD = 0xFFFB
OFPP_NONE = 0xFFFF
OFP_NO_BUFFER = 0xFFFFFFFF

DEFAULT_MTU = 1500

_HEADER = struct.Struct("!BBHI")
_PACKET_IN = struct.Struct("!IHHBB")
_PACKET_OUT = struct.Struct("!IHH")
_ACTION_OUTPUT = struct.Struct("!HHHH")

OFP_HEADER_SIZE = _HEADER.size                              # 8
PACKET_IN_SIZE = OFP_HEADER_SIZE + _PACKET_IN.size          # 18
PACKET_OUT_SIZE = OFP_HEADER_SIZE + _PACKET_OUT.size + _ACTION_OUTPUT.size  # 24
MAX_MESSAGE = 0xFFFF


class OpenFlowError(Exception):
    """Malformed or unsupported OpenFlow message."""


@dataclass(frozen=True)
class OfpHeader:
    version: int
    type: int
    length: int
    xid: int

    def pack(self) -> bytes:
        return _HEADER.pack(self.version, self.type, self.length, self.xid)

    @classmethod
    def unpack(cls, data: bytes) -> "OfpHeader":
        if len(data) < OFP_HEADER_SIZE:
            raise OpenFlowError(f"truncated header ({len(data)} bytes)")
        return cls(*_HEADER.unpack_from(data))


@dataclass(frozen=True)
class PacketInMessage:
    xid: int
    in_port: int
    data: bytes
    total_len: int
    buffer_id: int = OFP_NO_BUFFER
    reason: int = OFPR_NO_MATCH

    @property
    def is_fragment(self) -> bool:
        return len(self.data) < self.total_len

    def encode(self) -> bytes:
        length = PACKET_IN_SIZE + len(self.data)
        if length > MAX_MESSAGE:
            raise OpenFlowError(f"packet_in of {length} bytes does not fit the length field")
        header = OfpHeader(OFP_VERSION, OFPT_PACKET_IN, length, self.xid)
        return (header.pack()
                + _PACKET_IN.pack(self.buffer_id, self.total_len, self.in_port, self.reason, 0)
                + self.data)

    @classmethod
    def decode(cls, message: bytes) -> "PacketInMessage":
        """
        Raises:
            OpenFlowError: short header, wrong type/version or length mismatch
        """
        if len(message) < PACKET_IN_SIZE:
            raise OpenFlowError(f"packet_in shorter than {PACKET_IN_SIZE} bytes")
        header = _checked_header(message, OFPT_PACKET_IN)
        buffer_id, total_len, in_port, reason, _pad = _PACKET_IN.unpack_from(message, OFP_HEADER_SIZE)
        return cls(xid=header.xid, in_port=in_port, data=bytes(message[PACKET_IN_SIZE:]),
                   total_len=total_len, buffer_id=buffer_id, reason=reason)


@dataclass(frozen=True)
class PacketOutMessage:
    xid: int
    in_port: int
    out_port: int
    data: bytes
    buffer_id: int = OFP_NO_BUFFER

    @property
    def is_flood(self) -> bool:
        return self.out_port == OFPP_FLOOD

    def encode(self) -> bytes:
        length = PACKET_OUT_SIZE + len(self.data)
        if length > MAX_MESSAGE:
            raise OpenFlowError(f"packet_out of {length} bytes does not fit the length field")
        header = OfpHeader(OFP_VERSION, OFPT_PACKET_OUT, length, self.xid)
        return (header.pack()
                + _PACKET_OUT.pack(self.buffer_id, self.in_port, _ACTION_OUTPUT.size)
                + _ACTION_OUTPUT.pack(OFPAT_OUTPUT, _ACTION_OUTPUT.size, self.out_port, 0)
                + self.data)

    @classmethod
    def decode(cls, message: bytes) -> "PacketOutMessage":
        if len(message) < PACKET_OUT_SIZE:
            raise OpenFlowError(f"packet_out shorter than {PACKET_OUT_SIZE} bytes")
        header = _checked_header(message, OFPT_PACKET_OUT)
        buffer_id, in_port, actions_len = _PACKET_OUT.unpack_from(message, OFP_HEADER_SIZE)
        if actions_len != _ACTION_OUTPUT.size:
            raise OpenFlowError(f"expected a single output action, got {actions_len} action bytes")
        action_type, action_len, out_port, _max_len = _ACTION_OUTPUT.unpack_from(
            message, OFP_HEADER_SIZE + _PACKET_OUT.size)
        if action_type != OFPAT_OUTPUT or action_len != _ACTION_OUTPUT.size:
            raise OpenFlowError(f"unsupported action type {action_type}")
        return cls(xid=header.xid, in_port=in_port, out_port=out_port,
                   data=bytes(message[PACKET_OUT_SIZE:]), buffer_id=buffer_id)


def _checked_header(message: bytes, expected_type: int) -> OfpHeader:
    header = OfpHeader.unpack(message)
    if header.version != OFP_VERSION:
        raise OpenFlowError(f"unsupported OpenFlow version 0x{header.version:02x}")
    if header.type != expected_type:
        raise OpenFlowError(f"expected message type {expected_type}, got {header.type}")
    if header.length != len(message):
        raise OpenFlowError(f"length field {header.length} != message size {len(message)}")
    return header


def message_type(message: bytes) -> int:
    return OfpHeader.unpack(message).type


def decode_message(message: bytes) -> Union[PacketInMessage, PacketOutMessage, OfpHeader]:
    """Decode the two message types we model; anything else comes back as its header."""
    kind = message_type(message)
    if kind == OFPT_PACKET_IN:
        return PacketInMessage.decode(message)
    if kind == OFPT_PACKET_OUT:
        return PacketOutMessage.decode(message)
    return OfpHeader.unpack(message)


def fragment(frame: bytes, mtu: int = DEFAULT_MTU) -> List[bytes]:
    """Split a frame into MTU-sized pieces (one piece if it already fits)."""
    if mtu <= 0:
        raise ValueError("mtu must be positive")
    if len(frame) <= mtu:
        return [frame]
    return [frame[i:i + mtu] for i in range(0, len(frame), mtu)]


def encode_packet_in(frame: bytes, in_port: int, xid: int, mtu: int = DEFAULT_MTU) -> List[bytes]:
    """One encoded Packet-In per fragment of `frame`."""
    return [
        PacketInMessage(xid=xid, in_port=in_port, data=piece, total_len=len(frame)).encode()
        for piece in fragment(frame, mtu)
    ]


class MessageBuffer:
    """
    Cuts a TLS plaintext byte stream into whole OpenFlow messages.

    Usage:
        buffer = MessageBuffer()
        for message in buffer.feed(chunk):
            handle(message)
    """

    def __init__(self):
        self._data = bytearray()

    def __len__(self) -> int:
        return len(self._data)

    def feed(self, chunk: bytes) -> List[bytes]:
        """
        Raises:
            OpenFlowError: a header announces a length below the header size
        """
        self._data += chunk
        messages = []
        while len(self._data) >= OFP_HEADER_SIZE:
            header = OfpHeader.unpack(bytes(self._data[:OFP_HEADER_SIZE]))
            if header.length < OFP_HEADER_SIZE:
                raise OpenFlowError(f"bad length field {header.length}")
            if len(self._data) < header.length:
                break
            messages.append(bytes(self._data[:header.length]))
            del self._data[:header.length]
        return messages
