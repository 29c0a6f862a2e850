"""
Enrollment - the client side of attestation-gated certificate issuance

Walks one compartment through the nine enrollment steps:

    1-2  ask the CA for a nonce
    3-5  ask the local attestation agent for a quote + measurement list over it
    6    generate a keypair and CSR inside the compartment
    7    submit quote + list + CSR to the CA
    8    (CA verifies)
    9    install the signed certificate into the compartment

The same state machine backs VNF enrollment and the virtual switch's
library_init. The private key never passes through this module; it only ever
handles the CSR and certificate bytes the compartment hands out.

Usage:
    session = run_enrollment(ca_endpoint, agent_endpoint, compartment)
    if session.state is SessionState.ENROLLED:
        print(stage_timings(session))
"""

import time
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, Optional, Tuple

from cryptography import x509
from cryptography.hazmat.primitives.serialization import Encoding

from src.attestation_agent import AgentClient, AgentProtocolError, AgentUnreachable
from src.extended_ca import (
    CaClient,
    CaError,
    CaRejection,
    CaUnreachable,
    RejectionReason,
    encode_enrollment_request,
)
from src.enclave_tls import EcallStatus, EnclaveCompartment, EnclaveError
from src.logger import get_logger, short_hex
from src.measurement_log import MeasurementList, MeasurementLogError, parse, serialize
from src.root_of_trust import Quote, RootOfTrustError, decode_quote
from src.wire import Endpoint

logger = get_logger(__name__)


class SessionState(Enum):
    INIT = "INIT"
    NONCE_RECEIVED = "NONCE_RECEIVED"
    EVIDENCE_COLLECTED = "EVIDENCE_COLLECTED"
    KEYED = "KEYED"
    SUBMITTED = "SUBMITTED"
    ENROLLED = "ENROLLED"
    FAILED = "FAILED"


_NEXT = {
    SessionState.INIT: SessionState.NONCE_RECEIVED,
    SessionState.NONCE_RECEIVED: SessionState.EVIDENCE_COLLECTED,
    SessionState.EVIDENCE_COLLECTED: SessionState.KEYED,
    SessionState.KEYED: SessionState.SUBMITTED,
    SessionState.SUBMITTED: SessionState.ENROLLED,
}

TERMINAL = (SessionState.ENROLLED, SessionState.FAILED)


class FailureReason(IntEnum):
    """CA rejection reasons keep their wire values; local failures start at 20."""
    QUOTE_SIG = RejectionReason.QUOTE_SIG.value
    NONCE = RejectionReason.NONCE.value
    PCR_MISMATCH = RejectionReason.PCR_MISMATCH.value
    UNKNOWN_MEASUREMENT = RejectionReason.UNKNOWN_MEASUREMENT.value
    MISSING_REQUIRED = RejectionReason.MISSING_REQUIRED.value
    BAD_CSR = RejectionReason.BAD_CSR.value
    MALFORMED = RejectionReason.MALFORMED.value
    AGENT_UNREACHABLE = 20
    CA_UNREACHABLE = 21
    AGENT_ERROR = 22
    BAD_CERTIFICATE = 23

    @classmethod
    def from_rejection(cls, reason: RejectionReason) -> "FailureReason":
        return cls(reason.value)


class FaultInjection(Enum):
    """Client-side faults, applied to the evidence just before submission."""
    NONE = "none"
    QUOTE_SIG = "quote-sig"
    CSR = "csr"
    NONCE_REPLAY = "nonce-replay"
    PCR_MISMATCH = "pcr-mismatch"


# stage key -> report label
STAGE_LABELS = {
    "tpm_quote": "TPM quote",
    "key_generation": "Key generation",
    "csr_signing": "CSR signing",
    "total": "Total attestation time",
}
STAGES = ("nonce", "tpm_quote", "key_generation", "csr_signing", "total")


class EnrollmentError(Exception):
    """Misuse of the state machine (e.g. timings of an unfinished session)."""


@dataclass
class EnrollmentSession:
    """Record of one enrollment attempt."""
    common_name: str
    state: SessionState = SessionState.INIT
    nonce: Optional[bytes] = None
    evidence: Optional[Tuple[Quote, MeasurementList]] = None
    failure_reason: Optional[FailureReason] = None
    failed_transition: Optional[SessionState] = None
    detail: str = ""
    certificate: Optional[x509.Certificate] = None
    request_bytes: Optional[bytes] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def finished(self) -> bool:
        return self.state in TERMINAL

    def advance(self, new: SessionState) -> None:
        if _NEXT.get(self.state) is not new:
            raise EnrollmentError(f"illegal transition {self.state.name} -> {new.name}")
        self.state = new
        logger.info("%s: %s", self.common_name, new.name)

    def fail(self, reason: FailureReason, detail: str = "") -> "EnrollmentSession":
        if self.finished:
            raise EnrollmentError(f"session already {self.state.name}")
        self.failed_transition = _NEXT[self.state]
        self.failure_reason = reason
        self.detail = detail
        self.state = SessionState.FAILED
        logger.warning("%s: enrollment failed entering %s: %s %s",
                       self.common_name, self.failed_transition.name, reason.name, detail)
        return self


def stage_timings(session: EnrollmentSession) -> Dict[str, float]:
    """
    Durations (seconds) for the nonce, TPM quote, key generation, CSR signing and total.

    Stages a failed session never reached are absent.

    Raises:
        EnrollmentError: session still in progress
    """
    if not session.finished:
        raise EnrollmentError(f"session in progress ({session.state.name})")
    return {stage: session.timings[stage] for stage in STAGES if stage in session.timings}


def _flip_last_byte(data: bytes) -> bytes:
    return data[:-1] + bytes([data[-1] ^ 0x01]) if data else b"\x01"


def _drop_last_entry(list_bytes: bytes) -> bytes:
    mlist = parse(list_bytes.decode("utf-8"))
    return serialize(MeasurementList(entries=mlist.entries[:-1], pcr_index=mlist.pcr_index)).encode("utf-8")


def _as_ca_client(ca) -> CaClient:
    if isinstance(ca, CaClient):
        return ca
    return CaClient(ca if isinstance(ca, Endpoint) else Endpoint.parse(str(ca)))


def _as_agent_client(agent) -> AgentClient:
    if isinstance(agent, AgentClient):
        return agent
    return AgentClient(agent if isinstance(agent, Endpoint) else Endpoint.parse(str(agent)))


def run_enrollment(
    ca,
    agent,
    compartment: EnclaveCompartment,
    common_name: str = "ovs-vswitchd",
    fault: FaultInjection = FaultInjection.NONE,
    ca_root: Optional[x509.Certificate] = None,
) -> EnrollmentSession:
    """
    Execute the enrollment sequence for `compartment`.

    Args:
        ca: CA endpoint (Endpoint, "host:port" or a CaClient)
        agent: Local attestation agent endpoint (or an AgentClient)
        compartment: Uninitialized EnclaveCompartment
        common_name: Subject CN for the CSR
        fault: Client-side fault to inject (tests and --tamper)
        ca_root: Pinned CA root; fetched from the CA when omitted

    Returns:
        The finished session (ENROLLED or FAILED). A FAILED session leaves
        the compartment without credentials.

    Raises:
        EnclaveError: the compartment already holds credentials
        Exception: anything unexpected from a stage is logged and re-raised;
            the session is marked FAILED with an "internal error" detail first
    """
    if compartment.initialized:
        raise EnclaveError(EcallStatus.ALREADY_INITIALIZED)
    ca_client = _as_ca_client(ca)
    agent_client = _as_agent_client(agent)
    session = EnrollmentSession(common_name=common_name)
    started = time.perf_counter()

    try:
        _run(session, ca_client, agent_client, compartment, fault, ca_root)
    except Exception as e:
        logger.exception("%s: enrollment crashed in %s", common_name, session.state.name)
        if not session.finished:
            session.fail(FailureReason.AGENT_ERROR, f"internal error: {type(e).__name__}: {e}")
        raise
    finally:
        session.timings["total"] = time.perf_counter() - started
        if session.state is not SessionState.ENROLLED:
            compartment.ecall_discard_credentials()
    return session


def _run(session, ca_client, agent_client, compartment, fault, ca_root) -> None:
    # 1-2: nonce
    t0 = time.perf_counter()
    try:
        nonce = ca_client.request_nonce()
    except CaUnreachable as e:
        session.fail(FailureReason.CA_UNREACHABLE, str(e))
        return
    except CaError as e:
        session.fail(FailureReason.MALFORMED, str(e))
        return
    session.timings["nonce"] = time.perf_counter() - t0
    session.nonce = nonce
    session.advance(SessionState.NONCE_RECEIVED)

    # 3-5: evidence from the local agent, over the CA's nonce
    t0 = time.perf_counter()
    try:
        quote_bytes, list_bytes = agent_client.request_evidence_raw(nonce)
    except AgentUnreachable as e:
        session.fail(FailureReason.AGENT_UNREACHABLE, str(e))
        return
    except AgentProtocolError as e:
        session.fail(FailureReason.AGENT_ERROR, str(e))
        return
    session.timings["tpm_quote"] = time.perf_counter() - t0
    try:
        quote = decode_quote(quote_bytes)
        mlist = parse(list_bytes.decode("utf-8"))
    except (RootOfTrustError, MeasurementLogError, UnicodeDecodeError) as e:
        session.fail(FailureReason.AGENT_ERROR, f"undecodable evidence: {e}")
        return
    if quote.nonce != nonce:
        session.fail(FailureReason.AGENT_ERROR, "agent quoted a different nonce")
        return
    session.evidence = (quote, mlist)
    session.advance(SessionState.EVIDENCE_COLLECTED)

    # 6: key + CSR inside the compartment
    t0 = time.perf_counter()
    compartment.ecall_generate_key()
    session.timings["key_generation"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    csr = compartment.ecall_create_csr(session.common_name)
    session.timings["csr_signing"] = time.perf_counter() - t0
    session.advance(SessionState.KEYED)

    if fault is FaultInjection.QUOTE_SIG:
        quote_bytes = _flip_last_byte(quote_bytes)
    elif fault is FaultInjection.PCR_MISMATCH:
        list_bytes = _drop_last_entry(list_bytes)
    elif fault is FaultInjection.CSR:
        csr = _flip_last_byte(csr)

    # 7-8: submit
    request_bytes = encode_enrollment_request(quote_bytes, list_bytes, csr)
    session.request_bytes = request_bytes
    session.advance(SessionState.SUBMITTED)
    try:
        if fault is FaultInjection.NONCE_REPLAY:
            # the first exchange is the one an attacker captured
            ca_client.submit(request_bytes)
            logger.warning("%s: replaying captured request for nonce %s",
                           session.common_name, short_hex(nonce))
        cert_der = ca_client.submit(request_bytes)
        root_der = (ca_root.public_bytes(Encoding.DER) if ca_root is not None else ca_client.request_root())
    except CaRejection as e:
        session.fail(FailureReason.from_rejection(e.reason), e.detail)
        return
    except CaUnreachable as e:
        session.fail(FailureReason.CA_UNREACHABLE, str(e))
        return
    except CaError as e:
        session.fail(FailureReason.MALFORMED, str(e))
        return

    # 9: install
    try:
        compartment.ecall_install_certificate(cert_der, root_der)
    except EnclaveError as e:
        session.fail(FailureReason.BAD_CERTIFICATE, str(e))
        return
    session.certificate = compartment.certificate()
    session.advance(SessionState.ENROLLED)

