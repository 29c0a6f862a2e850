"""
Learning L2 controller behind a mutually authenticated TLS listener

The controller never installs flows. Every Packet-In is answered with a
Packet-Out carrying the same bytes and a single output action: the learned
port of the destination MAC, or FLOOD while the destination is unknown.
That keeps every data-plane packet on the switch -> controller -> switch
path, which is exactly what the latency harness wants to measure.
"""

import socket
import threading
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from cryptography import x509
from OpenSSL import SSL, crypto

from src.logger import get_logger
from src.openflow import (
    OFPP_FLOOD,
    OFPT_PACKET_IN,
    MessageBuffer,
    OpenFlowError,
    PacketInMessage,
    PacketOutMessage,
    message_type,
)
from src.packets import PacketError, ethernet_addresses
from src.wire import Endpoint

logger = get_logger(__name__)

BROADCAST_MAC = b"\xff" * 6
RECV_CHUNK = 64 * 1024
# frames whose last fragment never came; oldest goes first
MAX_PENDING_FRAGMENTS = 256


@dataclass(frozen=True)
class MacTable:
    """MAC -> port. learn() returns a new table; the old one is untouched."""
    entries: Dict[bytes, int] = field(default_factory=dict)

    def learn(self, mac: bytes, port: int) -> "MacTable":
        if self.entries.get(mac) == port:
            return self
        return MacTable({**self.entries, mac: port})

    def lookup(self, mac: bytes) -> Optional[int]:
        return self.entries.get(mac)

    def __len__(self) -> int:
        return len(self.entries)


def controller_handle_packet_in(
    msg: Union[bytes, PacketInMessage], table: MacTable
) -> Tuple[PacketOutMessage, MacTable]:
    """
    Learn the source, pick an output port for the destination.

    Raises:
        OpenFlowError: malformed Packet-In
        PacketError: payload too short to carry an Ethernet header
    """
    packet_in = msg if isinstance(msg, PacketInMessage) else PacketInMessage.decode(msg)
    src, dst = ethernet_addresses(packet_in.data)
    table = table.learn(src, packet_in.in_port)
    port = table.lookup(dst) if dst != BROADCAST_MAC else None
    out = PacketOutMessage(
        xid=packet_in.xid,
        in_port=packet_in.in_port,
        out_port=OFPP_FLOOD if port is None else port,
        data=packet_in.data,
        buffer_id=packet_in.buffer_id,
    )
    return out, table


@dataclass
class ControllerCounters:
    packet_in: int = 0
    floods: int = 0
    unicasts: int = 0
    dropped: int = 0
    flow_mods_sent: int = 0


class LearningController:
    """
    Stateful wrapper: owns the MAC table, counts outcomes, tracks fragments.

    Continuation fragments of a frame carry no Ethernet header; they reuse the
    decision made for the first fragment with the same xid.
    """

    def __init__(self, max_pending: int = MAX_PENDING_FRAGMENTS):
        self.table = MacTable()
        self.counters = ControllerCounters()
        self.sent_types: Counter = Counter()
        self.max_pending = max_pending
        # xid -> (out_port, bytes still expected), oldest first
        self._fragments: "OrderedDict[int, Tuple[int, int]]" = OrderedDict()

    def handle_message(self, message: bytes) -> List[bytes]:
        """One inbound message in, zero or more outbound messages out."""
        try:
            if message_type(message) != OFPT_PACKET_IN:
                logger.debug("ignoring OpenFlow message type %d", message_type(message))
                return []
            packet_in = PacketInMessage.decode(message)
            self.counters.packet_in += 1
            out = self._route(packet_in)
        except (OpenFlowError, PacketError) as e:
            self.counters.dropped += 1
            logger.debug("dropped malformed message: %s", e)
            return []

        if out.is_flood:
            self.counters.floods += 1
        else:
            self.counters.unicasts += 1
        encoded = out.encode()
        self.sent_types[message_type(encoded)] += 1
        return [encoded]

    def _route(self, packet_in: PacketInMessage) -> PacketOutMessage:
        pending = self._fragments.get(packet_in.xid)
        if pending is None:
            out, self.table = controller_handle_packet_in(packet_in, self.table)
            remaining = packet_in.total_len - len(packet_in.data)
            if remaining > 0:
                self._fragments[packet_in.xid] = (out.out_port, remaining)
                while len(self._fragments) > self.max_pending:
                    xid, _ = self._fragments.popitem(last=False)
                    logger.debug("forgetting incomplete frame xid %d", xid)
            return out

        out_port, remaining = pending
        remaining -= len(packet_in.data)
        if remaining > 0:
            self._fragments[packet_in.xid] = (out_port, remaining)
        else:
            del self._fragments[packet_in.xid]
        return PacketOutMessage(xid=packet_in.xid, in_port=packet_in.in_port,
                                out_port=out_port, data=packet_in.data,
                                buffer_id=packet_in.buffer_id)


def server_tls_context(private_key, certificate: x509.Certificate, ca_root: x509.Certificate,
                       cipher_list: Optional[bytes] = None) -> SSL.Context:
    """TLS 1.2 server context that demands a client certificate chaining to `ca_root`."""
    context = SSL.Context(SSL.TLS_METHOD)
    context.set_min_proto_version(SSL.TLS1_2_VERSION)
    context.set_max_proto_version(SSL.TLS1_2_VERSION)
    if cipher_list:
        context.set_cipher_list(cipher_list)
    context.use_privatekey(crypto.PKey.from_cryptography_key(private_key))
    context.use_certificate(crypto.X509.from_cryptography(certificate))
    context.check_privatekey()
    context.get_cert_store().add_cert(crypto.X509.from_cryptography(ca_root))
    context.set_verify(
        SSL.VERIFY_PEER | SSL.VERIFY_FAIL_IF_NO_PEER_CERT,
        lambda conn, cert, errno, depth, ok: bool(ok),
    )
    return context


class ControllerServer:
    """
    Accepts switch connections and runs a LearningController per connection.

    Usage:
        server = ControllerServer(context)
        endpoint = server.start()
        ...
        server.stop()
    """

    def __init__(self, context: SSL.Context, endpoint: Endpoint = Endpoint("127.0.0.1", 0)):
        self.context = context
        self.endpoint = endpoint
        self.bound: Optional[Endpoint] = None
        self.controllers: List[LearningController] = []
        self.handshake_failures = 0
        self.sessions_established = 0
        self._listener: Optional[socket.socket] = None
        self._threads: List[threading.Thread] = []
        self._connections: List[socket.socket] = []
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self._ready = threading.Condition(self._lock)

    def start(self) -> Endpoint:
        listener = socket.create_server((self.endpoint.host, self.endpoint.port))
        self._listener = listener
        self.bound = Endpoint(self.endpoint.host, listener.getsockname()[1])
        thread = threading.Thread(target=self._accept_loop, name="controller-accept", daemon=True)
        thread.start()
        self._threads.append(thread)
        logger.info("controller listening on %s", self.bound)
        return self.bound

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                sock, peer = self._listener.accept()
            except OSError:
                return
            with self._lock:
                self._connections.append(sock)
            thread = threading.Thread(target=self._serve, args=(sock, peer),
                                      name=f"controller-{peer[1]}", daemon=True)
            thread.start()
            self._threads.append(thread)

    def _serve(self, sock: socket.socket, peer) -> None:
        connection = SSL.Connection(self.context, sock)
        connection.set_accept_state()
        try:
            connection.do_handshake()
        except (SSL.Error, OSError) as e:
            with self._lock:
                self.handshake_failures += 1
                self._ready.notify_all()
            logger.warning("rejected switch %s: %s", peer, e)
            sock.close()
            return

        controller = LearningController()
        with self._lock:
            self.controllers.append(controller)
            self.sessions_established += 1
            self._ready.notify_all()
        logger.info("switch %s connected (%s)", peer, connection.get_cipher_name())

        buffer = MessageBuffer()
        try:
            while not self._stopping.is_set():
                try:
                    chunk = connection.recv(RECV_CHUNK)
                except SSL.ZeroReturnError:
                    connection.shutdown()
                    break
                for message in buffer.feed(chunk):
                    for reply in controller.handle_message(message):
                        connection.sendall(reply)
        except OpenFlowError as e:
            logger.warning("switch %s sent an unframeable stream: %s", peer, e)
        except (SSL.Error, OSError) as e:
            logger.debug("switch %s connection ended: %s", peer, e)
        finally:
            sock.close()

    def wait_for_outcome(self, count: int = 1, timeout: float = 10.0) -> bool:
        """Block until `count` handshakes have either succeeded or failed."""
        with self._ready:
            return self._ready.wait_for(
                lambda: self.sessions_established + self.handshake_failures >= count, timeout)

    def total_counters(self) -> ControllerCounters:
        total = ControllerCounters()
        with self._lock:
            for controller in self.controllers:
                for name in vars(total):
                    setattr(total, name, getattr(total, name) + getattr(controller.counters, name))
        return total

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._listener.close()
        with self._lock:
            connections = list(self._connections)
        for sock in connections:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        for thread in self._threads:
            thread.join(2.0)
        logger.info("controller stopped")
