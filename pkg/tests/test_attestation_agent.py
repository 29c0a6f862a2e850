"""
Tests for the attestation agent: evidence over a nonce, locality, error frames.
"""

import asyncio
import socket

import pytest

from src.attestation_agent import (
    ERR_BAD_NONCE,
    ERR_UNKNOWN_OP,
    OP_ERROR,
    OP_EVIDENCE,
    AgentClient,
    AgentConfig,
    AgentProtocolError,
    AgentRefused,
    AgentUnreachable,
    decode_evidence,
)
from src.measurement_log import replay
from src.root_of_trust import NONCE_SIZE, decode_quote, verify_quote
from src.wire import Endpoint, request

NONCE = b"\xab" * NONCE_SIZE


@pytest.mark.unit
def test_agent_config_must_be_local():
    """A routable bind address is refused outright."""
    with pytest.raises(ValueError):
        AgentConfig("h", Endpoint("0.0.0.0", 7710))
    with pytest.raises(ValueError):
        AgentConfig("h", Endpoint("10.1.2.3", 7710))
    AgentConfig("h", Endpoint("127.0.0.1", 7710))
    AgentConfig("h", Endpoint.parse("unix:/tmp/agent.sock"))


@pytest.mark.unit
def test_quote_covers_nonce_and_current_log(agent, host):
    quote, mlist = agent.handle_attestation_request(NONCE)
    assert quote.nonce == NONCE
    assert verify_quote(quote, NONCE, host.identity.public_key)
    assert replay(mlist) == host.snapshot().bank.read(10)
    assert agent.requests_served == 1


@pytest.mark.unit
def test_non_local_peer_is_refused(agent):
    with pytest.raises(AgentRefused):
        agent.serve_request(bytes([OP_EVIDENCE]) + NONCE, ("192.0.2.10", 40000))
    assert agent.refused == 1
    assert agent.requests_served == 0


@pytest.mark.unit
def test_error_frames(agent):
    local = ("127.0.0.1", 40000)
    assert agent.serve_request(b"\x07" + NONCE, local) == bytes([OP_ERROR, ERR_UNKNOWN_OP])
    assert agent.serve_request(bytes([OP_EVIDENCE]) + b"\x01" * 5, local) == bytes([OP_ERROR, ERR_BAD_NONCE])


@pytest.mark.integration
def test_client_round_trip(agent_endpoint, host):
    quote, mlist = AgentClient(agent_endpoint).request_evidence(NONCE)
    assert quote.nonce == NONCE
    assert mlist.paths() == [path for path, _ in host.allowlist_entries()]


@pytest.mark.integration
def test_short_nonce_over_the_wire(agent_endpoint):
    with pytest.raises(AgentProtocolError) as exc:
        decode_evidence(request(agent_endpoint, bytes([OP_EVIDENCE]) + b"\x00" * 8))
    assert exc.value.code == ERR_BAD_NONCE


@pytest.mark.integration
def test_request_without_half_close_is_answered(agent_endpoint):
    """A client that sends exactly 33 bytes and keeps its write side open still gets evidence."""
    with socket.create_connection((agent_endpoint.host, agent_endpoint.port), timeout=3.0) as sock:
        sock.sendall(bytes([OP_EVIDENCE]) + NONCE)
        chunks = []
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                break
            chunks.append(chunk)
    quote_bytes, _ = decode_evidence(b"".join(chunks))
    assert decode_quote(quote_bytes).nonce == NONCE


@pytest.mark.integration
def test_long_nonce_over_the_wire(agent_endpoint):
    with pytest.raises(AgentProtocolError) as exc:
        decode_evidence(request(agent_endpoint, bytes([OP_EVIDENCE]) + NONCE + b"\x00"))
    assert exc.value.code == ERR_BAD_NONCE


@pytest.mark.integration
def test_unreachable_agent():
    with pytest.raises(AgentUnreachable):
        AgentClient(Endpoint("127.0.0.1", 1), timeout=1.0).request_evidence(NONCE)


@pytest.mark.asyncio
async def test_handle_connection_serves_one_request(agent):
    """The asyncio handler answers exactly one request and closes."""
    server = await asyncio.start_server(agent.handle_connection, "127.0.0.1", 0)
    port = server.sockets[0].getsockname()[1]
    try:
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        writer.write(bytes([OP_EVIDENCE]) + NONCE)
        writer.write_eof()
        response = await reader.read()
        writer.close()
    finally:
        server.close()
        await server.wait_closed()

    quote_bytes, list_bytes = decode_evidence(response)
    assert decode_quote(quote_bytes).nonce == NONCE
    assert list_bytes.decode("utf-8").count("\n") == len(agent.host.allowlist_entries())


@pytest.mark.unit
def test_tampered_host_shows_up_in_evidence(agent, host):
    before = len(host.allowlist_entries())
    host.tamper()
    _, mlist = agent.handle_attestation_request(NONCE)
    assert len(mlist) == before + 1
    assert mlist.paths()[-1] == "/usr/sbin/ovs-vswitchd"
