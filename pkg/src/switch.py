"""
Virtual Switch - data plane whose southbound channel runs inside the compartment

Every frame that enters a port is wrapped in a Packet-In, pushed through the
compartment to the controller, and forwarded according to the Packet-Out that
comes back. The switch talks to the compartment only through ECALLs and uses
them in the same pattern ovs-vswitchd does:

    write:  get_state -> ssl_write -> get_state
    read:   ssl_read, and on a negative return get_error; WANT_READ means
            "wait for the socket and read again"
"""

import select
import socket
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional

from src.enclave_tls import EnclaveCompartment, SslError, SslState, TlsContextHandle
from src.logger import get_logger
from src.openflow import (
    DEFAULT_MTU,
    OFPP_FLOOD,
    OFPT_PACKET_OUT,
    MessageBuffer,
    OpenFlowError,
    PacketOutMessage,
    encode_packet_in,
    message_type,
)
from src.packets import ETH_HEADER_SIZE
from src.wire import Endpoint

logger = get_logger(__name__)

READ_CAPACITY = 16 * 1024
REPLY_TIMEOUT = 5.0
# longest single wait; queued ciphertext only leaves on the next ECALL
POLL_INTERVAL = 0.01

Deliver = Callable[[bytes], None]


class SwitchError(Exception):
    """Southbound channel could not be set up."""


class Outcome(Enum):
    UNICAST = "unicast"
    FLOODED = "flooded"
    DROPPED = "dropped"


@dataclass
class ForwardResult:
    outcome: Outcome
    out_ports: List[int]
    packet_ins: int = 0


@dataclass
class SwitchCounters:
    received: int = 0
    unicast: int = 0
    flooded: int = 0
    dropped: int = 0
    packet_ins_sent: int = 0
    packet_outs_received: int = 0


class VirtualSwitch:
    """
    Ports are callbacks that take a frame; the switch never blocks on them.

    Usage:
        switch = VirtualSwitch(compartment)
        switch.attach(1, host_a.receive)
        switch.attach(2, host_b.receive)
        switch.connect(controller_endpoint)
        switch.switch_forward(frame, in_port=1)
    """

    def __init__(self, compartment: EnclaveCompartment, mtu: int = DEFAULT_MTU,
                 reply_timeout: float = REPLY_TIMEOUT):
        self.compartment = compartment
        self.mtu = mtu
        self.reply_timeout = reply_timeout
        self.ports: Dict[int, Deliver] = {}
        self.counters = SwitchCounters()
        self.handle: Optional[TlsContextHandle] = None
        self._transport: Optional[socket.socket] = None
        self._buffer = MessageBuffer()
        self._southbound = threading.Lock()
        self._xid = 0

    def attach(self, port: int, deliver: Deliver) -> None:
        if port in self.ports or port >= OFPP_FLOOD:
            raise ValueError(f"port {port} unavailable")
        self.ports[port] = deliver

    def connect(self, controller: Endpoint, timeout: float = 10.0) -> TlsContextHandle:
        """
        Open the southbound TLS session.

        Raises:
            SwitchError: controller unreachable or handshake failed
        """
        try:
            transport = socket.create_connection((controller.host, controller.port), timeout=timeout)
        except OSError as e:
            raise SwitchError(f"controller {controller} unreachable: {e}") from e
        transport.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        handle = self.compartment.ssl_new_and_connect(transport, timeout)
        if self.compartment.ssl_get_state(handle) is not SslState.ESTABLISHED:
            self.compartment.ssl_free(handle)
            transport.close()
            raise SwitchError(f"southbound handshake with {controller} failed")
        self._transport = transport
        self.handle = handle
        return handle

    @property
    def connected(self) -> bool:
        return (self.handle is not None
                and self.compartment.ssl_get_state(self.handle) is SslState.ESTABLISHED)

    def _next_xid(self) -> int:
        self._xid = (self._xid + 1) & 0xFFFFFFFF
        return self._xid

    def switch_forward(self, frame: bytes, in_port: int) -> ForwardResult:
        """Send `frame` through the controller and deliver it where it says."""
        self.counters.received += 1
        with self._southbound:
            out_port, packet_ins = self._round_trip(frame, in_port)

        if out_port is None:
            self.counters.dropped += 1
            return ForwardResult(Outcome.DROPPED, [], packet_ins)
        if out_port == OFPP_FLOOD:
            targets = [port for port in self.ports if port != in_port]
            outcome = Outcome.FLOODED
            self.counters.flooded += 1
        elif out_port in self.ports:
            targets = [out_port]
            outcome = Outcome.UNICAST
            self.counters.unicast += 1
        else:
            logger.debug("controller chose unknown port %d", out_port)
            self.counters.dropped += 1
            return ForwardResult(Outcome.DROPPED, [], packet_ins)

        for port in targets:
            self.ports[port](frame)
        return ForwardResult(outcome, targets, packet_ins)

    def _round_trip(self, frame: bytes, in_port: int):
        """(output port or None, Packet-Ins written)."""
        if self.handle is None:
            return None, 0
        if len(frame) < ETH_HEADER_SIZE:
            logger.debug("dropping %d-byte runt frame", len(frame))
            return None, 0
        enclave, handle = self.compartment, self.handle
        xid = self._next_xid()
        deadline = time.monotonic() + self.reply_timeout

        sent = 0
        for message in encode_packet_in(frame, in_port, xid, self.mtu):
            if enclave.ssl_get_state(handle) is not SslState.ESTABLISHED:
                logger.warning("southbound session down, dropping frame")
                return None, sent
            if self._write(message, deadline) != len(message):
                return None, sent
            sent += 1
            self.counters.packet_ins_sent += 1

        received = bytearray()
        out_port = None
        while len(received) < len(frame):
            n, data = enclave.ssl_read(handle, READ_CAPACITY)
            if n > 0:
                try:
                    messages = self._buffer.feed(data)
                    for message in messages:
                        if message_type(message) != OFPT_PACKET_OUT:
                            continue
                        packet_out = PacketOutMessage.decode(message)
                        self.counters.packet_outs_received += 1
                        if packet_out.xid != xid:
                            logger.debug("stale packet_out xid %d", packet_out.xid)
                            continue
                        received += packet_out.data
                        out_port = packet_out.out_port
                except OpenFlowError as e:
                    logger.warning("bad message from controller: %s", e)
                    return None, sent
                continue

            error = enclave.ssl_get_error(handle, n)
            if error is not SslError.WANT_READ:
                logger.warning("southbound read failed: %s", error.name)
                enclave.ssl_get_state(handle)
                return None, sent
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                logger.warning("no packet_out for xid %d within %.1fs", xid, self.reply_timeout)
                return None, sent
            select.select([self._transport], [], [], min(remaining, POLL_INTERVAL))

        enclave.ssl_get_state(handle)
        if bytes(received) != frame:
            logger.warning("packet_out payload differs from the frame sent (xid %d)", xid)
            return None, sent
        return out_port, sent

    def _write(self, message: bytes, deadline: float) -> int:
        """get_state -> ssl_write -> get_state, retried while the compartment says WANT_WRITE."""
        enclave, handle = self.compartment, self.handle
        while True:
            written = enclave.ssl_write(handle, message)
            enclave.ssl_get_state(handle)
            if written >= 0:
                return written
            error = enclave.ssl_get_error(handle, written)
            remaining = deadline - time.monotonic()
            if error is not SslError.WANT_WRITE or remaining <= 0:
                logger.warning("ssl_write returned %d (%s)", written, error.name)
                return written
            select.select([], [self._transport], [], min(remaining, POLL_INTERVAL))

    def close(self) -> None:
        if self.handle is not None:
            self.compartment.ssl_shutdown(self.handle)
            self.compartment.ssl_free(self.handle)
            self.handle = None
        if self._transport is not None:
            self._transport.close()
            self._transport = None
