"""
Shared fixtures: a simulated host, a CA that trusts it, and the two services
running on loopback ephemeral ports.
"""

import socket
import sys
import threading
from pathlib import Path

import pytest
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.serialization import Encoding
from OpenSSL import SSL

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT))
sys.path.insert(0, str(ROOT / "bin"))

from src.attestation_agent import AgentConfig, AttestationAgent
from src.controller import server_tls_context
from src.enclave_tls import EnclaveCompartment
from src.extended_ca import CaService, ExtendedCA, KnownGoodConfig, build_csr
from src.host import SimulatedHost
from src.wire import Endpoint, ServiceRunner

LOOPBACK = "127.0.0.1"


@pytest.fixture
def host():
    return SimulatedHost(host_id="test-host")


@pytest.fixture
def known_good(host):
    return KnownGoodConfig.from_entries(host.allowlist_entries(), [host.attestation_key()])


@pytest.fixture
def ca(known_good):
    return ExtendedCA(known_good)


@pytest.fixture
def ca_endpoint(ca):
    runner = ServiceRunner("ca", Endpoint(LOOPBACK, 0), CaService(ca).handle_connection)
    bound = runner.start()
    yield bound
    runner.stop()


@pytest.fixture
def agent(host):
    return AttestationAgent(AgentConfig(host.host_id, Endpoint(LOOPBACK, 0)), host)


@pytest.fixture
def agent_endpoint(agent):
    runner = ServiceRunner("agent", Endpoint(LOOPBACK, 0), agent.handle_connection)
    bound = runner.start()
    yield bound
    runner.stop()


@pytest.fixture
def enrolled_compartment(ca_endpoint, agent_endpoint):
    """A compartment that went through library_init against the fixture CA."""
    compartment = EnclaveCompartment()
    compartment.library_init(ca_endpoint, agent_endpoint)
    return compartment


# ---------------------------------------------------------------------------
# TLS plumbing: credentialed compartments and a scripted server peer
# ---------------------------------------------------------------------------


def issue_credentials(compartment, issuer, common_name="ovs-vswitchd"):
    """Give `compartment` a key and a certificate from `issuer` without attestation."""
    compartment.ecall_generate_key()
    csr = compartment.ecall_create_csr(common_name)
    certificate = issuer.issue_controller_certificate(csr)
    compartment.ecall_install_certificate(
        certificate.public_bytes(Encoding.DER),
        issuer.root_certificate().public_bytes(Encoding.DER),
    )
    return compartment


@pytest.fixture
def rogue_ca(known_good):
    """A second, unrelated CA."""
    return ExtendedCA(known_good, name="rogue root CA")


@pytest.fixture
def make_compartment():
    def build(issuer, **kwargs):
        return issue_credentials(EnclaveCompartment(**kwargs), issuer)
    return build


@pytest.fixture
def make_server_context():
    def build(issuer, trusted_root, cipher_list=None):
        key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
        certificate = issuer.issue_controller_certificate(build_csr(key, "controller"))
        return server_tls_context(key, certificate, trusted_root, cipher_list)
    return build


class TlsPeer(threading.Thread):
    """
    Server end of a socketpair: handshakes, then runs `script(connection, sock)`.
    """

    def __init__(self, context, sock, script=None):
        super().__init__(daemon=True)
        self.context = context
        self.sock = sock
        self.script = script
        self.handshake_ok = None
        self.error = None

    def run(self):
        connection = SSL.Connection(self.context, self.sock)
        connection.set_accept_state()
        try:
            connection.do_handshake()
        except (SSL.Error, OSError) as e:
            self.handshake_ok = False
            self.error = e
            self.sock.close()
            return
        self.handshake_ok = True
        if self.script is not None:
            try:
                self.script(connection, self.sock)
            except (SSL.Error, OSError) as e:
                self.error = e


@pytest.fixture
def tls_pair():
    """Factory: (client socket, started TlsPeer). Sockets are closed afterwards."""
    opened = []

    def build(context, script=None):
        client, server = socket.socketpair()
        opened.extend([client, server])
        peer = TlsPeer(context, server, script)
        peer.start()
        return client, peer

    yield build
    for sock in opened:
        try:
            sock.close()
        except OSError:
            pass
