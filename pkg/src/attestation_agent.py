"""
Attestation Agent - per-host proxy between containers and the root of trust

A container asks the agent for evidence by sending the CA's nonce; the agent
quotes the configured PCRs over that nonce and returns the quote together
with a fresh snapshot of the measurement list (the evidence half of enrollment).

Locality is the whole point: the agent only binds to loopback/unix endpoints
and drops any connection whose peer isn't local, so evidence can't be
relayed to some other, honest platform (cuckoo attack). It also never talks
to the CA itself and holds no CA endpoint at all.

Protocol (one request per connection):
    request  = 0x01 || nonce(32)
    response = 0x01 || quote_len(2) || quote || list_len(4) || list
    error    = 0xFF || code(1)
"""

import asyncio
import struct
from dataclasses import dataclass
from typing import Tuple

from src.host import SimulatedHost
from src.logger import get_logger, short_hex
from src.measurement_log import MeasurementList, parse, serialize
from src.root_of_trust import NONCE_SIZE, Quote, decode_quote, encode_quote, generate_quote
from src.wire import (
    DEFAULT_TIMEOUT,
    Endpoint,
    TransportError,
    is_local_peer,
    read_exactly,
    read_fixed,
    request,
)

logger = get_logger(__name__)

OP_EVIDENCE = 0x01
OP_ERROR = 0xFF

ERR_BAD_NONCE = 0x01
ERR_UNKNOWN_OP = 0x02
ERR_INTERNAL = 0x03


class AgentError(Exception):
    """Base class for agent failures."""


class AgentRefused(AgentError):
    """Request came from a non-local peer."""


class AgentProtocolError(AgentError):
    """Request or response didn't follow the protocol."""

    def __init__(self, code: int, message: str = ""):
        super().__init__(message or f"agent protocol error 0x{code:02x}")
        self.code = code


class AgentUnreachable(AgentError):
    """Transport-level failure talking to the agent."""


@dataclass
class AgentConfig:
    host_id: str
    bound_endpoint: Endpoint
    pcr_selection: Tuple[int, ...] = (10,)

    def __post_init__(self):
        if not self.bound_endpoint.is_local_only():
            raise ValueError(
                f"agent endpoint {self.bound_endpoint} is not local-only "
                "(use a loopback address or unix socket)"
            )
        if not self.pcr_selection:
            raise ValueError("agent needs at least one PCR to quote")
        self.pcr_selection = tuple(self.pcr_selection)


def encode_evidence(quote: Quote, mlist: MeasurementList) -> bytes:
    quote_bytes = encode_quote(quote)
    list_bytes = serialize(mlist).encode("utf-8")
    return (bytes([OP_EVIDENCE]) + struct.pack("!H", len(quote_bytes)) + quote_bytes
            + struct.pack("!I", len(list_bytes)) + list_bytes)


def decode_evidence(data: bytes) -> Tuple[bytes, bytes]:
    """
    Split an agent response into (quote bytes, list bytes) without interpreting them.

    Raises:
        AgentProtocolError: error frame or malformed response
    """
    if not data:
        raise AgentProtocolError(ERR_INTERNAL, "empty agent response")
    if data[0] == OP_ERROR:
        code = data[1] if len(data) > 1 else ERR_INTERNAL
        raise AgentProtocolError(code)
    if data[0] != OP_EVIDENCE or len(data) < 3:
        raise AgentProtocolError(ERR_INTERNAL, "malformed agent response")

    (quote_len,) = struct.unpack_from("!H", data, 1)
    offset = 3 + quote_len
    if len(data) < offset + 4:
        raise AgentProtocolError(ERR_INTERNAL, "truncated agent response")
    quote_bytes = data[3:offset]
    (list_len,) = struct.unpack_from("!I", data, offset)
    list_bytes = data[offset + 4:offset + 4 + list_len]
    if len(list_bytes) != list_len or offset + 4 + list_len != len(data):
        raise AgentProtocolError(ERR_INTERNAL, "agent response length mismatch")
    return quote_bytes, list_bytes


class AttestationAgent:
    """
    Serves evidence for one simulated host.

    Usage:
        agent = AttestationAgent(config, host)
        runner = ServiceRunner("agent", config.bound_endpoint, agent.handle_connection)
    """

    def __init__(self, config: AgentConfig, host: SimulatedHost):
        self.config = config
        self.host = host
        self.requests_served = 0
        self.refused = 0

    def handle_attestation_request(self, nonce: bytes) -> Tuple[Quote, MeasurementList]:
        """
        Quote the configured PCRs over `nonce` and snapshot the measurement list.

        Raises:
            AgentProtocolError: nonce is not 32 bytes
        """
        if len(nonce) != NONCE_SIZE:
            raise AgentProtocolError(ERR_BAD_NONCE, f"nonce must be {NONCE_SIZE} bytes")

        # one snapshot for both halves, so the pair is always self-consistent
        snap = self.host.snapshot()
        quote = generate_quote(self.host.identity, snap.bank, nonce, self.config.pcr_selection)
        self.requests_served += 1
        logger.info("%s: quote issued for nonce %s", self.config.host_id, short_hex(nonce))
        return quote, snap.measurement_list

    def serve_request(self, payload: bytes, peername) -> bytes:
        """
        Turn one raw request into one raw response.

        Raises:
            AgentRefused: the peer isn't local
        """
        if not is_local_peer(peername):
            self.refused += 1
            logger.warning("%s: refused non-local peer %s", self.config.host_id, peername)
            raise AgentRefused(f"non-local peer {peername}")

        if not payload or payload[0] != OP_EVIDENCE:
            return bytes([OP_ERROR, ERR_UNKNOWN_OP])
        try:
            quote, mlist = self.handle_attestation_request(payload[1:])
        except AgentProtocolError as e:
            return bytes([OP_ERROR, e.code])
        except Exception:
            logger.exception("%s: evidence generation failed", self.config.host_id)
            return bytes([OP_ERROR, ERR_INTERNAL])
        return encode_evidence(quote, mlist)

    async def handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peername = writer.get_extra_info("peername")
        try:
            if not is_local_peer(peername):
                # drop before reading anything
                self.serve_request(b"", peername)
                return
            try:
                opcode = await asyncio.wait_for(read_exactly(reader, 1), DEFAULT_TIMEOUT)
            except ValueError:
                return
            # a short or long nonce gets an error frame
            body = await read_fixed(reader, NONCE_SIZE) if opcode[0] == OP_EVIDENCE else b""
            writer.write(self.serve_request(opcode + body, peername))
            await writer.drain()
        except AgentRefused:
            pass
        except asyncio.TimeoutError:
            logger.debug("%s: request from %s never completed", self.config.host_id, peername)
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            logger.debug("agent connection dropped: %s", e)
        finally:
            writer.close()


class AgentClient:
    """Blocking client used by the enrollment state machine."""

    def __init__(self, endpoint: Endpoint, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def request_evidence_raw(self, nonce: bytes) -> Tuple[bytes, bytes]:
        """(quote bytes, serialized list bytes) exactly as the agent sent them."""
        try:
            response = request(self.endpoint, bytes([OP_EVIDENCE]) + nonce, self.timeout)
        except TransportError as e:
            raise AgentUnreachable(str(e)) from e
        return decode_evidence(response)

    def request_evidence(self, nonce: bytes) -> Tuple[Quote, MeasurementList]:
        quote_bytes, list_bytes = self.request_evidence_raw(nonce)
        return decode_quote(quote_bytes), parse(list_bytes.decode("utf-8"))
