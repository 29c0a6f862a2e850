"""
Enclave TLS - the compartment that owns the switch's keys and TLS sessions

A software stand-in for an SGX-hosted TLS library. Everything secret (the RSA keypair, the
CA-signed certificate, every TLS session and its master secret) lives inside
an EnclaveCompartment and is only reachable through ECALL-shaped methods:

    library_init               enroll and load credentials
    ssl_new_and_connect        client handshake (mutual auth) over a transport
    ssl_write / ssl_read       plaintext in, ciphertext out (and back)
    ssl_get_state              HANDSHAKING / ESTABLISHED / CLOSED / ERROR
    ssl_get_error              NONE / WANT_READ / WANT_WRITE / SYSCALL / SSL_FAILURE
    boundary_trace             per-ECALL timings for the ECALL benchmark

Sessions run on pyOpenSSL memory BIOs: the compartment encrypts into a BIO and
pushes the ciphertext onto the caller's non-blocking socket itself, so the
caller never sees anything but ciphertext and return codes.

Usage:
    enclave = EnclaveCompartment(trace_ecalls=True)
    enclave.library_init(ca_endpoint, agent_endpoint)
    handle = enclave.ssl_new_and_connect(sock)
    enclave.ssl_write(handle, packet_in)
"""

import functools
import select
import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import List, Optional, Tuple

from cryptography import x509
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import rsa
from OpenSSL import SSL, crypto

from src import randomness
from src.extended_ca import build_csr, chains_to
from src.logger import get_logger

logger = get_logger(__name__)

RSA_KEY_BITS = 2048
RSA_PUBLIC_EXPONENT = 65537
BIO_CHUNK = 64 * 1024
HANDSHAKE_TIMEOUT = 10.0
IO_TIMEOUT = 5.0


class SslState(Enum):
    HANDSHAKING = "HANDSHAKING"
    ESTABLISHED = "ESTABLISHED"
    CLOSED = "CLOSED"
    ERROR = "ERROR"


class SslError(Enum):
    NONE = "NONE"
    WANT_READ = "WANT_READ"
    WANT_WRITE = "WANT_WRITE"
    SYSCALL = "SYSCALL"
    SSL_FAILURE = "SSL_FAILURE"


_TRANSITIONS = {
    SslState.HANDSHAKING: {SslState.ESTABLISHED, SslState.ERROR},
    SslState.ESTABLISHED: {SslState.CLOSED, SslState.ERROR},
    SslState.CLOSED: set(),
    SslState.ERROR: set(),
}


class EcallStatus(IntEnum):
    NOT_INITIALIZED = 1
    ALREADY_INITIALIZED = 2
    INVALID_HANDLE = 3
    BAD_STATE = 4
    NO_KEY = 5
    BAD_CERTIFICATE = 6


class EnclaveError(Exception):
    """An ECALL was refused; `status` says why."""

    def __init__(self, status: EcallStatus, message: str = ""):
        super().__init__(f"{status.name}: {message}" if message else status.name)
        self.status = status


class EnclaveInitError(EnclaveError):
    """library_init failed; carries the finished enrollment session."""

    def __init__(self, session, message: str = ""):
        super().__init__(EcallStatus.NOT_INITIALIZED, message or f"enrollment failed: {session.failure_reason}")
        self.session = session


# ---------------------------------------------------------------------------
# Cipher policy
# ---------------------------------------------------------------------------

def _is_ecdhe(suite: str) -> bool:
    return suite.startswith("ECDHE-")


def _is_aead(suite: str) -> bool:
    return "GCM" in suite or "CHACHA20" in suite


@dataclass(frozen=True)
class CipherPolicy:
    """Which TLS 1.2 suites the compartment offers and accepts."""
    require_ecdhe: bool = False
    require_aead: bool = False
    allowed_suites: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.allowed_suites:
            raise ValueError("cipher policy needs at least one suite")
        for suite in self.allowed_suites:
            if self.require_ecdhe and not _is_ecdhe(suite):
                raise ValueError(f"{suite} has no ECDHE key exchange")
            if self.require_aead and not _is_aead(suite):
                raise ValueError(f"{suite} is not an AEAD suite")

    @classmethod
    def default(cls) -> "CipherPolicy":
        return cls(allowed_suites=(
            "ECDHE-RSA-AES256-SHA",
            "ECDHE-RSA-AES128-SHA",
            "ECDHE-RSA-AES256-GCM-SHA384",
            "ECDHE-RSA-AES128-GCM-SHA256",
            "AES256-SHA",
            "AES128-SHA",
        ))

    @classmethod
    def hardened(cls) -> "CipherPolicy":
        return cls(require_ecdhe=True, require_aead=True, allowed_suites=(
            "ECDHE-RSA-AES256-GCM-SHA384",
            "ECDHE-RSA-AES128-GCM-SHA256",
            "ECDHE-RSA-CHACHA20-POLY1305",
        ))

    @classmethod
    def named(cls, name: str) -> "CipherPolicy":
        if name == "default":
            return cls.default()
        if name == "hardened":
            return cls.hardened()
        raise ValueError(f"unknown cipher policy {name!r} (default | hardened)")

    def cipher_string(self) -> bytes:
        return ":".join(self.allowed_suites).encode("ascii")

    def permits(self, suite: Optional[str]) -> bool:
        return suite is not None and suite in self.allowed_suites


# ---------------------------------------------------------------------------
# Compartment internals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TlsContextHandle:
    """Opaque 64-bit token; meaningless outside the compartment that issued it."""
    id: int

    def __repr__(self) -> str:
        return f"TlsContextHandle({self.id:#018x})"


@dataclass(frozen=True)
class TraceRecord:
    ecall: str
    seconds: float
    nbytes: int = 0


@dataclass
class _Vault:
    private_key: Optional[rsa.RSAPrivateKey] = None
    certificate: Optional[x509.Certificate] = None
    ca_root: Optional[x509.Certificate] = None
    ssl_context: Optional[SSL.Context] = None


@dataclass
class _Session:
    connection: SSL.Connection
    transport: socket.socket
    state: SslState = SslState.HANDSHAKING
    last_error: SslError = SslError.NONE
    pending_out: bytes = b""
    transport_eof: bool = False
    trace: List[TraceRecord] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def move(self, new: SslState) -> None:
        if new is self.state:
            return
        if new not in _TRANSITIONS[self.state]:
            logger.debug("ignoring illegal transition %s -> %s", self.state.name, new.name)
            return
        self.state = new


def _returned_bytes(result) -> int:
    if isinstance(result, tuple):
        return max(result[0], 0)
    if isinstance(result, int) and not isinstance(result, bool):
        return max(result, 0)
    return 0


def _ecall(name: str):
    """Time the call, serialize on the session lock, record the boundary output."""
    def decorate(method):
        @functools.wraps(method)
        def wrapper(self, handle, *args):
            start = time.perf_counter()
            session = self._lookup(handle)
            with session.lock:
                result = method(self, session, *args)
            elapsed = time.perf_counter() - start
            if self.trace_ecalls:
                session.trace.append(TraceRecord(name, elapsed, _returned_bytes(result)))
            self._capture_value(result)
            return result
        return wrapper
    return decorate


class EnclaveCompartment:
    """
    One isolated TLS compartment: a single credential set, many sessions.

    Args:
        policy: Cipher suites offered during handshakes
        trace_ecalls: Record per-ECALL durations for boundary_trace()
        capture_boundary: Keep a copy of every boundary output (tests only)
        key_bits: RSA modulus size for the compartment keypair
    """

    def __init__(
        self,
        policy: Optional[CipherPolicy] = None,
        trace_ecalls: bool = False,
        capture_boundary: bool = False,
        key_bits: int = RSA_KEY_BITS,
    ):
        self.policy = policy or CipherPolicy.default()
        self.trace_ecalls = trace_ecalls
        self.capture_boundary = capture_boundary
        self.key_bits = key_bits
        self.init_seconds: Optional[float] = None
        self._vault = _Vault()
        self._initialized = False
        self._sessions = {}
        self._table_lock = threading.Lock()
        self._capture: List[bytes] = []
        self._capture_lock = threading.Lock()

    # -- initialization ---------------------------------------------------------

    @property
    def initialized(self) -> bool:
        return self._initialized

    def library_init(self, ca_endpoint, agent_endpoint, policy: Optional[CipherPolicy] = None, **enrollment_options):
        """
        Enroll with the CA and load the resulting credentials.

        Returns:
            The finished EnrollmentSession (state ENROLLED)

        Raises:
            EnclaveError: already initialized
            EnclaveInitError: enrollment ended FAILED (no credentials kept)
        """
        from src.enrollment import SessionState, run_enrollment

        if self._initialized:
            raise EnclaveError(EcallStatus.ALREADY_INITIALIZED)
        if policy is not None:
            self.policy = policy

        start = time.perf_counter()
        session = run_enrollment(ca_endpoint, agent_endpoint, self, **enrollment_options)
        if session.state is not SessionState.ENROLLED:
            raise EnclaveInitError(session)
        self.init_seconds = time.perf_counter() - start
        logger.info("compartment initialized in %.3fs", self.init_seconds)
        return session

    def ecall_generate_key(self) -> None:
        if self._initialized:
            raise EnclaveError(EcallStatus.ALREADY_INITIALIZED)
        self._vault = _Vault(private_key=rsa.generate_private_key(
            public_exponent=RSA_PUBLIC_EXPONENT, key_size=self.key_bits))

    def ecall_create_csr(self, common_name: str) -> bytes:
        """CSR in DER, signed with the compartment key."""
        if self._initialized:
            raise EnclaveError(EcallStatus.ALREADY_INITIALIZED)
        if self._vault.private_key is None:
            raise EnclaveError(EcallStatus.NO_KEY, "generate a key first")
        csr = build_csr(self._vault.private_key, common_name)
        self._capture_value(csr)
        return csr

    def ecall_install_certificate(self, cert_der: bytes, ca_root_der: bytes) -> None:
        """
        Accept the CA's certificate if it chains to the root and binds our key.

        Raises:
            EnclaveError: BAD_CERTIFICATE, NO_KEY or ALREADY_INITIALIZED
        """
        if self._initialized:
            raise EnclaveError(EcallStatus.ALREADY_INITIALIZED)
        key = self._vault.private_key
        if key is None:
            raise EnclaveError(EcallStatus.NO_KEY)
        try:
            certificate = x509.load_der_x509_certificate(cert_der)
            ca_root = x509.load_der_x509_certificate(ca_root_der)
        except ValueError as e:
            raise EnclaveError(EcallStatus.BAD_CERTIFICATE, f"undecodable certificate: {e}") from e
        if not chains_to(certificate, ca_root):
            raise EnclaveError(EcallStatus.BAD_CERTIFICATE, "certificate does not chain to the CA root")
        if certificate.public_key().public_numbers() != key.public_key().public_numbers():
            raise EnclaveError(EcallStatus.BAD_CERTIFICATE, "certificate does not bind the compartment key")

        self._vault.certificate = certificate
        self._vault.ca_root = ca_root
        self._vault.ssl_context = self._client_context()
        self._initialized = True

    def ecall_discard_credentials(self) -> None:
        self._vault = _Vault()
        self._initialized = False

    def certificate(self) -> Optional[x509.Certificate]:
        """The installed (public) certificate, if any."""
        return self._vault.certificate

    def ca_root(self) -> Optional[x509.Certificate]:
        return self._vault.ca_root

    def _client_context(self) -> SSL.Context:
        context = SSL.Context(SSL.TLS_METHOD)
        context.set_min_proto_version(SSL.TLS1_2_VERSION)
        context.set_max_proto_version(SSL.TLS1_2_VERSION)
        context.set_cipher_list(self.policy.cipher_string())
        context.use_privatekey(crypto.PKey.from_cryptography_key(self._vault.private_key))
        context.use_certificate(crypto.X509.from_cryptography(self._vault.certificate))
        context.check_privatekey()
        context.get_cert_store().add_cert(crypto.X509.from_cryptography(self._vault.ca_root))
        context.set_verify(
            SSL.VERIFY_PEER | SSL.VERIFY_FAIL_IF_NO_PEER_CERT,
            lambda conn, cert, errno, depth, ok: bool(ok),
        )
        return context

    # -- sessions ---------------------------------------------------------------

    def _lookup(self, handle: TlsContextHandle) -> _Session:
        if not isinstance(handle, TlsContextHandle):
            raise EnclaveError(EcallStatus.INVALID_HANDLE, f"not a handle: {handle!r}")
        with self._table_lock:
            session = self._sessions.get(handle.id)
        if session is None:
            raise EnclaveError(EcallStatus.INVALID_HANDLE, repr(handle))
        return session

    def _new_handle(self, session: _Session) -> TlsContextHandle:
        with self._table_lock:
            token = randomness.randbits(64)
            while token in self._sessions or token == 0:
                token = randomness.randbits(64)
            self._sessions[token] = session
        return TlsContextHandle(token)

    def ssl_new_and_connect(self, transport: socket.socket, timeout: float = HANDSHAKE_TIMEOUT) -> TlsContextHandle:
        """
        Run a mutually authenticated TLS 1.2 client handshake over `transport`.

        A handle is returned either way; a failed handshake leaves it in ERROR.

        Raises:
            EnclaveError: compartment not initialized
        """
        if not self._initialized:
            raise EnclaveError(EcallStatus.NOT_INITIALIZED)

        connection = SSL.Connection(self._vault.ssl_context, None)
        connection.set_connect_state()
        transport.setblocking(False)
        session = _Session(connection=connection, transport=transport)
        handle = self._new_handle(session)

        with session.lock:
            if self._handshake(session, time.monotonic() + timeout):
                suite = connection.get_cipher_name()
                if self.policy.permits(suite):
                    session.move(SslState.ESTABLISHED)
                    logger.info("southbound session established (%s, %s)",
                                connection.get_protocol_version_name(), suite)
                else:
                    logger.warning("negotiated suite %s violates the cipher policy", suite)
                    session.last_error = SslError.SSL_FAILURE
                    session.move(SslState.ERROR)
        self._capture_value(handle.id.to_bytes(8, "big"))
        return handle

    def _handshake(self, session: _Session, deadline: float) -> bool:
        connection = session.connection
        while True:
            try:
                connection.do_handshake()
                self._pump_out(session, deadline)
                return True
            except SSL.WantReadError:
                if not self._pump_out(session, deadline):
                    return self._handshake_failed(session, SslError.SYSCALL, "transport stalled")
                data = self._recv_wait(session, deadline)
                if data is None:
                    return self._handshake_failed(session, SslError.SYSCALL, "handshake timed out")
                if not data:
                    return self._handshake_failed(session, SslError.SYSCALL, "peer closed during handshake")
                connection.bio_write(data)
            except SSL.Error as e:
                # let the alert reach the peer
                self._pump_out(session, deadline)
                return self._handshake_failed(session, SslError.SSL_FAILURE, str(e))

    def _handshake_failed(self, session: _Session, error: SslError, detail: str) -> bool:
        logger.warning("southbound handshake failed: %s", detail)
        session.last_error = error
        session.move(SslState.ERROR)
        return False

    def _drain_bio(self, session: _Session) -> None:
        while True:
            try:
                chunk = session.connection.bio_read(BIO_CHUNK)
            except SSL.WantReadError:
                return
            if not chunk:
                return
            self._capture_value(chunk)
            session.pending_out += chunk

    def _pump_out(self, session: _Session, deadline: Optional[float] = None) -> bool:
        """
        Move ciphertext from the BIO to the transport. False while some is still queued.

        Without a deadline this never waits; what the transport refuses stays
        in pending_out for the next ECALL.
        """
        self._drain_bio(session)
        while session.pending_out:
            try:
                sent = session.transport.send(session.pending_out)
            except BlockingIOError:
                if deadline is None:
                    return False
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                select.select([], [session.transport], [], remaining)
                continue
            except OSError as e:
                logger.debug("transport send failed: %s", e)
                session.transport_eof = True
                return False
            session.pending_out = session.pending_out[sent:]
        return True

    def _recv_wait(self, session: _Session, deadline: float) -> Optional[bytes]:
        """Block (up to deadline) for transport bytes. b"" on EOF, None on timeout."""
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            readable, _, _ = select.select([session.transport], [], [], remaining)
            if not readable:
                continue
            try:
                return session.transport.recv(BIO_CHUNK)
            except BlockingIOError:
                continue
            except OSError:
                return b""

    def _pull_in(self, session: _Session) -> None:
        """Feed whatever the transport has right now into the BIO (never blocks)."""
        if session.transport_eof:
            return
        while True:
            try:
                data = session.transport.recv(BIO_CHUNK)
            except BlockingIOError:
                return
            except OSError:
                data = b""
            if not data:
                session.transport_eof = True
                session.connection.bio_shutdown()
                return
            session.connection.bio_write(data)

    # -- ECALLs -------------------------------------------------------------------

    @_ecall("ecall_ssl_write")
    def ssl_write(self, session: _Session, plaintext: bytes) -> int:
        """
        Encrypt `plaintext` and push it onto the transport. Never waits.

        Once accepted, the data is owned by the session: ciphertext the
        transport can't take yet leaves on the next write, read or shutdown.

        Returns:
            Bytes consumed, 0 for an empty buffer, -1 if nothing was accepted
            because earlier ciphertext is still queued (WANT_WRITE; retry later)

        Raises:
            EnclaveError: invalid handle or session not ESTABLISHED
        """
        if session.state is not SslState.ESTABLISHED:
            raise EnclaveError(EcallStatus.BAD_STATE, f"write in state {session.state.name}")
        data = bytes(plaintext)
        if not data:
            session.last_error = SslError.NONE
            return 0
        if not self._pump_out(session):
            return self._transport_stalled(session)
        try:
            view = memoryview(data)
            while view:
                written = session.connection.send(view[:16384].tobytes())
                view = view[written:]
        except SSL.Error as e:
            logger.warning("ssl_write failed: %s", e)
            session.last_error = SslError.SSL_FAILURE
            session.move(SslState.ERROR)
            return -1
        self._pump_out(session)
        if session.transport_eof:
            return self._transport_stalled(session)
        session.last_error = SslError.NONE
        return len(data)

    def _transport_stalled(self, session: _Session) -> int:
        if session.transport_eof:
            session.last_error = SslError.SYSCALL
            session.move(SslState.ERROR)
        else:
            session.last_error = SslError.WANT_WRITE
        return -1

    @_ecall("ecall_ssl_read")
    def ssl_read(self, session: _Session, capacity: int) -> Tuple[int, bytes]:
        """
        Non-blocking read of up to `capacity` plaintext bytes.

        Returns:
            (n, data) with n > 0 on data, (0, b"") once the peer closed,
            (-1, b"") otherwise; ssl_get_error says which case it was
        """
        if session.state is not SslState.ESTABLISHED:
            return (0, b"") if session.state is SslState.CLOSED else (-1, b"")
        self._pump_out(session)
        self._pull_in(session)
        try:
            data = session.connection.recv(capacity)
        except SSL.WantReadError:
            session.last_error = SslError.WANT_READ
            return -1, b""
        except SSL.ZeroReturnError:
            session.last_error = SslError.NONE
            session.move(SslState.CLOSED)
            return 0, b""
        except SSL.Error as e:
            # OpenSSL 3 reports EOF without close_notify as a protocol error, older ones as a syscall error
            if session.transport_eof or isinstance(e, SSL.SysCallError):
                logger.warning("southbound transport torn down: %s", e)
                session.last_error = SslError.SYSCALL
            else:
                logger.warning("ssl_read failed: %s", e)
                session.last_error = SslError.SSL_FAILURE
            session.move(SslState.ERROR)
            return -1, b""
        session.last_error = SslError.NONE
        return len(data), data

    @_ecall("ecall_ssl_get_state")
    def ssl_get_state(self, session: _Session) -> SslState:
        return session.state

    @_ecall("ecall_ssl_get_error")
    def ssl_get_error(self, session: _Session, last_return: int) -> SslError:
        if last_return > 0:
            return SslError.NONE
        if last_return == 0 and session.state is not SslState.ERROR:
            return SslError.NONE
        return session.last_error

    @_ecall("ecall_ssl_shutdown")
    def ssl_shutdown(self, session: _Session) -> SslState:
        """Send close_notify; the session ends up CLOSED."""
        if session.state is SslState.ESTABLISHED:
            try:
                session.connection.shutdown()
            except SSL.Error as e:
                logger.debug("shutdown raised %s", e)
            self._pump_out(session, time.monotonic() + IO_TIMEOUT)
            session.move(SslState.CLOSED)
        return session.state

    def ssl_free(self, handle: TlsContextHandle) -> None:
        """Forget a session; the handle becomes invalid."""
        session = self._lookup(handle)
        with self._table_lock:
            self._sessions.pop(handle.id, None)
        with session.lock:
            session.pending_out = b""

    def boundary_trace(self, handle: TlsContextHandle, reset: bool = False) -> List[TraceRecord]:
        """Per-ECALL timings for this session; empty when tracing is off."""
        session = self._lookup(handle)
        if not self.trace_ecalls:
            return []
        with session.lock:
            records = list(session.trace)
            if reset:
                session.trace.clear()
        return records

    # -- boundary capture --------------------------------------------------------

    def _capture_value(self, value) -> None:
        if not self.capture_boundary:
            return
        if isinstance(value, (bytes, bytearray)):
            raw = bytes(value)
        elif isinstance(value, tuple):
            raw = b"".join(v if isinstance(v, bytes) else repr(v).encode() for v in value)
        else:
            raw = repr(value).encode()
        with self._capture_lock:
            self._capture.append(raw)

    def boundary_capture(self) -> bytes:
        """Everything that crossed the boundary outward so far (ciphertext included)."""
        with self._capture_lock:
            return b"".join(self._capture)

    def public_key_der(self) -> Optional[bytes]:
        key = self._vault.private_key
        if key is None:
            return None
        return key.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
