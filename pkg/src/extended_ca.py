"""
Extended CA - a certificate authority that only signs for attested platforms

Besides the usual CA job (root certificate, signing CSRs) it:

1. hands out single-use nonces with a limited lifetime
2. verifies TPM-style quotes against pre-registered attestation keys
3. replays the measurement list and checks it reproduces the quoted PCR
4. checks every measured digest against the known-good allowlist
5. only then signs the CSR

Checks run in a fixed order so rejection codes are deterministic:

    (a) QUOTE_SIG  (b) NONCE  (c) PCR_MISMATCH
    (d) UNKNOWN_MEASUREMENT  (e) MISSING_REQUIRED  (f) BAD_CSR

Controller certificates skip attestation; they come through the separate
administrative listener (see src/ca_admin_api.py).

Service protocol (one request per connection):
    0x10                                          -> 0x11 || nonce(32)
    0x14                                          -> 0x15 || root cert DER
    0x12 || quote_len(2) || quote || list_len(4) || list || csr_len(4) || csr
                                                  -> 0x13 || cert DER
                                                   | 0x1F || reason(1)
"""

import asyncio
import datetime
import json
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Set, Tuple, Union

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.x509.oid import ExtendedKeyUsageOID, NameOID
from pydantic import BaseModel, Field, ValidationError

from src import randomness
from src.logger import get_logger, short_hex
from src.measurement_log import (
    DEFAULT_MEASUREMENT_PCR,
    ZERO_DIGEST,
    MeasurementList,
    MeasurementLogError,
    parse,
    replay,
)
from src.root_of_trust import (
    NONCE_SIZE,
    Quote,
    RootOfTrustError,
    composite_of_values,
    decode_quote,
    load_public_key,
    verify_quote,
)
from src.wire import Endpoint, TransportError, read_exactly, request

logger = get_logger(__name__)

OP_NONCE_REQUEST = 0x10
OP_NONCE = 0x11
OP_ENROLL = 0x12
OP_CERTIFICATE = 0x13
OP_ROOT_REQUEST = 0x14
OP_ROOT = 0x15
OP_REJECT = 0x1F

DEFAULT_NONCE_TTL = 60.0
DEFAULT_CERT_VALIDITY = datetime.timedelta(hours=24)
ROOT_VALIDITY = datetime.timedelta(days=3650)
MIN_RSA_BITS = 2048

# largest encoded request we accept (quote + list + csr)
MAX_LIST_BYTES = 1024 * 1024
MAX_CSR_BYTES = 64 * 1024

# order of the P-256 group, for deriving a root key from a seed
_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


class RejectionReason(IntEnum):
    QUOTE_SIG = 1
    NONCE = 2
    PCR_MISMATCH = 3
    UNKNOWN_MEASUREMENT = 4
    MISSING_REQUIRED = 5
    BAD_CSR = 6
    MALFORMED = 7


class CaError(Exception):
    """Base class for CA failures."""


class CaRejection(CaError):
    """The CA refused to sign; `reason` says which check failed."""

    def __init__(self, reason: RejectionReason, detail: str = ""):
        super().__init__(f"{reason.name}: {detail}" if detail else reason.name)
        self.reason = reason
        self.detail = detail


class CaUnreachable(CaError):
    """Transport-level failure talking to the CA."""


# ---------------------------------------------------------------------------
# Known-good configuration
# ---------------------------------------------------------------------------

class AllowedMeasurement(BaseModel):
    path: str
    template_digest: str = Field(pattern=r"^[0-9a-f]{64}$")


class AllowlistFile(BaseModel):
    """On-disk JSON form of the known-good configuration."""
    allowed: list[AllowedMeasurement] = []
    required_paths: list[str] = []
    attestation_keys: Dict[str, str] = {}
    expected_pcrs: Dict[int, str] = {}


@dataclass
class KnownGoodConfig:
    """
    CA-side allowlist.

    `registered_paths` keeps the path each allowed digest was registered
    under; required_paths must be a subset of those.
    """
    allowed_template_digests: Set[bytes] = field(default_factory=set)
    required_paths: Set[str] = field(default_factory=set)
    trusted_attestation_keys: Dict[bytes, object] = field(default_factory=dict)
    expected_pcrs: Dict[int, bytes] = field(default_factory=dict)
    registered_paths: Dict[bytes, str] = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.registered_paths.values())
        missing = set(self.required_paths) - known
        if missing:
            raise ValueError(f"required paths without an allowed digest: {sorted(missing)}")

    def allow(self, path: str, template_digest: bytes) -> None:
        self.allowed_template_digests.add(template_digest)
        self.registered_paths[template_digest] = path

    def trust_key(self, key_id: bytes, public_key_raw: bytes) -> None:
        self.trusted_attestation_keys[key_id] = load_public_key(public_key_raw)

    @classmethod
    def from_entries(
        cls,
        entries: Iterable[Tuple[str, bytes]],
        attestation_keys: Iterable[Tuple[bytes, bytes]] = (),
        required_paths: Optional[Iterable[str]] = None,
    ) -> "KnownGoodConfig":
        """
        Build from (path, template digest) pairs; by default every path is required.
        """
        config = cls()
        paths = []
        for path, template in entries:
            config.allow(path, template)
            paths.append(path)
        for key_id, raw in attestation_keys:
            config.trust_key(key_id, raw)
        config.required_paths = set(paths if required_paths is None else required_paths)
        config.__post_init__()
        return config

    def to_file(self) -> AllowlistFile:
        public_raw = {
            key_id.hex(): key.public_bytes(serialization.Encoding.Raw,
                                           serialization.PublicFormat.Raw).hex()
            for key_id, key in self.trusted_attestation_keys.items()
        }
        return AllowlistFile(
            allowed=[AllowedMeasurement(path=path, template_digest=digest.hex())
                     for digest, path in sorted(self.registered_paths.items(), key=lambda kv: kv[1])],
            required_paths=sorted(self.required_paths),
            attestation_keys=public_raw,
            expected_pcrs={i: v.hex() for i, v in self.expected_pcrs.items()},
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_file().model_dump_json(indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "KnownGoodConfig":
        """
        Raises:
            CaError: file missing or not a valid allowlist
        """
        try:
            data = AllowlistFile.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise CaError(f"cannot load allowlist {path}: {e}") from e

        config = cls(expected_pcrs={int(i): bytes.fromhex(v) for i, v in data.expected_pcrs.items()})
        for item in data.allowed:
            config.allow(item.path, bytes.fromhex(item.template_digest))
        for key_id_hex, raw_hex in data.attestation_keys.items():
            config.trust_key(bytes.fromhex(key_id_hex), bytes.fromhex(raw_hex))
        config.required_paths = set(data.required_paths)
        try:
            config.__post_init__()
        except ValueError as e:
            raise CaError(str(e)) from e
        return config


# ---------------------------------------------------------------------------
# Nonces
# ---------------------------------------------------------------------------

@dataclass
class NonceRecord:
    nonce: bytes
    issued_at: float
    consumed: bool = False


class NonceStore:
    """Single-use, expiring nonces. consume() is atomic under concurrency."""

    def __init__(self, ttl: float = DEFAULT_NONCE_TTL, clock: Callable[[], float] = time.monotonic):
        self.ttl = ttl
        self.clock = clock
        self._records: Dict[bytes, NonceRecord] = {}
        self._lock = threading.Lock()

    def issue(self) -> bytes:
        with self._lock:
            self._purge()
            nonce = randomness.token_bytes(NONCE_SIZE)
            while nonce in self._records:
                nonce = randomness.token_bytes(NONCE_SIZE)
            self._records[nonce] = NonceRecord(nonce=nonce, issued_at=self.clock())
        return nonce

    def consume(self, nonce: bytes) -> bool:
        """True exactly once per live, unexpired nonce."""
        with self._lock:
            record = self._records.get(nonce)
            if record is None or record.consumed:
                return False
            if self.clock() - record.issued_at > self.ttl:
                return False
            record.consumed = True
            return True

    def get(self, nonce: bytes) -> Optional[NonceRecord]:
        with self._lock:
            return self._records.get(nonce)

    def live_count(self) -> int:
        with self._lock:
            now = self.clock()
            return sum(1 for r in self._records.values()
                       if not r.consumed and now - r.issued_at <= self.ttl)

    def _purge(self) -> None:
        # consumed records are kept until expiry so replays still hit NONCE
        now = self.clock()
        expired = [n for n, r in self._records.items() if now - r.issued_at > 2 * self.ttl]
        for nonce in expired:
            del self._records[nonce]


# ---------------------------------------------------------------------------
# Requests
# ---------------------------------------------------------------------------

@dataclass
class EnrollmentRequest:
    """
    Quote + measurement list + CSR, as received.

    quote / measurement_list are None when the bytes didn't decode; the
    corresponding check then fails in its usual slot.
    """
    quote: Optional[Quote]
    measurement_list: Optional[MeasurementList]
    csr: bytes

    @classmethod
    def from_parts(cls, quote_bytes: bytes, list_bytes: bytes, csr: bytes) -> "EnrollmentRequest":
        try:
            quote = decode_quote(quote_bytes)
        except RootOfTrustError:
            quote = None
        try:
            mlist = parse(list_bytes.decode("utf-8"))
        except (MeasurementLogError, UnicodeDecodeError):
            mlist = None
        return cls(quote=quote, measurement_list=mlist, csr=csr)


def encode_enrollment_request(quote_bytes: bytes, list_bytes: bytes, csr: bytes) -> bytes:
    return b"".join([
        bytes([OP_ENROLL]),
        struct.pack("!H", len(quote_bytes)), quote_bytes,
        struct.pack("!I", len(list_bytes)), list_bytes,
        struct.pack("!I", len(csr)), csr,
    ])


def decode_enrollment_request(data: bytes) -> Tuple[bytes, bytes, bytes]:
    """Inverse of encode_enrollment_request (raises ValueError on bad framing)."""
    if not data or data[0] != OP_ENROLL:
        raise ValueError("not an enrollment request")
    try:
        offset = 1
        (quote_len,) = struct.unpack_from("!H", data, offset)
        offset += 2
        quote_bytes = data[offset:offset + quote_len]
        offset += quote_len
        (list_len,) = struct.unpack_from("!I", data, offset)
        offset += 4
        list_bytes = data[offset:offset + list_len]
        offset += list_len
        (csr_len,) = struct.unpack_from("!I", data, offset)
        offset += 4
        csr = data[offset:offset + csr_len]
        offset += csr_len
    except struct.error as e:
        raise ValueError(str(e)) from e
    if offset != len(data) or len(csr) != csr_len:
        raise ValueError("enrollment request length mismatch")
    return quote_bytes, list_bytes, csr


# ---------------------------------------------------------------------------
# X.509 helpers
# ---------------------------------------------------------------------------

def build_csr(private_key, common_name: str) -> bytes:
    """Self-signed CSR (proof of possession) in DER."""
    csr = (
        x509.CertificateSigningRequestBuilder()
        .subject_name(x509.Name([
            x509.NameAttribute(NameOID.ORGANIZATION_NAME, "trustplane"),
            x509.NameAttribute(NameOID.COMMON_NAME, common_name),
        ]))
        .sign(private_key, hashes.SHA256())
    )
    return csr.public_bytes(serialization.Encoding.DER)


def load_csr(data: bytes) -> x509.CertificateSigningRequest:
    """
    Accept DER or PEM; verify proof of possession and key strength.

    Raises:
        CaRejection: BAD_CSR
    """
    try:
        if data.lstrip().startswith(b"-----BEGIN"):
            csr = x509.load_pem_x509_csr(data)
        else:
            csr = x509.load_der_x509_csr(data)
        public_key = csr.public_key()
        valid = csr.is_signature_valid
    except Exception as e:  # the parser raises a mix of ValueError/TypeError/UnsupportedAlgorithm
        raise CaRejection(RejectionReason.BAD_CSR, f"undecodable CSR: {e}") from e

    if not valid:
        raise CaRejection(RejectionReason.BAD_CSR, "CSR signature does not verify")
    if isinstance(public_key, rsa.RSAPublicKey):
        if public_key.key_size < MIN_RSA_BITS:
            raise CaRejection(RejectionReason.BAD_CSR, f"RSA key below {MIN_RSA_BITS} bits")
    elif not isinstance(public_key, ec.EllipticCurvePublicKey):
        raise CaRejection(RejectionReason.BAD_CSR, "unsupported CSR key type")
    return csr


def derive_root_key(seed: Optional[bytes]) -> ec.EllipticCurvePrivateKey:
    if seed is None:
        return ec.generate_private_key(ec.SECP256R1())
    scalar = int.from_bytes(seed, "big") % (_P256_ORDER - 1) + 1
    return ec.derive_private_key(scalar, ec.SECP256R1())


def _serial() -> int:
    return randomness.randbits(63) + 1


def _utcnow() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc)


def chains_to(certificate: x509.Certificate, root: x509.Certificate) -> bool:
    """True if `certificate` was issued and signed by `root`."""
    if certificate.issuer != root.subject:
        return False
    try:
        certificate.verify_directly_issued_by(root)
    except Exception:
        return False
    return True


# ---------------------------------------------------------------------------
# The CA
# ---------------------------------------------------------------------------

class ExtendedCA:
    """
    Attestation-gated certificate authority.

    Usage:
        ca = ExtendedCA(known_good)
        nonce = ca.issue_nonce()
        cert = ca.enroll(request)          # raises CaRejection
    """

    def __init__(
        self,
        known_good: KnownGoodConfig,
        root_key: Optional[ec.EllipticCurvePrivateKey] = None,
        nonce_ttl: float = DEFAULT_NONCE_TTL,
        cert_validity: datetime.timedelta = DEFAULT_CERT_VALIDITY,
        measurement_pcr: int = DEFAULT_MEASUREMENT_PCR,
        clock: Callable[[], float] = time.monotonic,
        name: str = "trustplane root CA",
    ):
        self.known_good = known_good
        self.cert_validity = cert_validity
        self.measurement_pcr = measurement_pcr
        self.nonces = NonceStore(ttl=nonce_ttl, clock=clock)
        self.__root_key = root_key or derive_root_key(randomness.derive_seed_bytes("ca-root"))
        self._root_cert = self._build_root(name)
        self._stats_lock = threading.Lock()
        self.issued = 0
        self.rejections: Counter = Counter()

    def _build_root(self, name: str) -> x509.Certificate:
        subject = x509.Name([
            x509.NameAttribute(NameOID.ORGANIZATION_NAME, "trustplane"),
            x509.NameAttribute(NameOID.COMMON_NAME, name),
        ])
        now = _utcnow()
        public_key = self.__root_key.public_key()
        return (
            x509.CertificateBuilder()
            .subject_name(subject)
            .issuer_name(subject)
            .public_key(public_key)
            .serial_number(_serial())
            .not_valid_before(now - datetime.timedelta(minutes=5))
            .not_valid_after(now + ROOT_VALIDITY)
            .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
            .add_extension(x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=False, key_cert_sign=True,
                crl_sign=True, encipher_only=False, decipher_only=False,
            ), critical=True)
            .add_extension(x509.SubjectKeyIdentifier.from_public_key(public_key), critical=False)
            .sign(self.__root_key, hashes.SHA256())
        )

    def root_certificate(self) -> x509.Certificate:
        return self._root_cert

    def issue_nonce(self) -> bytes:
        nonce = self.nonces.issue()
        logger.debug("issued nonce %s", short_hex(nonce))
        return nonce

    def _sign(self, csr: x509.CertificateSigningRequest, server: bool) -> x509.Certificate:
        now = _utcnow()
        usages = [ExtendedKeyUsageOID.CLIENT_AUTH]
        if server:
            usages.insert(0, ExtendedKeyUsageOID.SERVER_AUTH)
        return (
            x509.CertificateBuilder()
            .subject_name(csr.subject)
            .issuer_name(self._root_cert.subject)
            .public_key(csr.public_key())
            .serial_number(_serial())
            .not_valid_before(now - datetime.timedelta(minutes=1))
            .not_valid_after(now + self.cert_validity)
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
            .add_extension(x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=True,
                data_encipherment=False, key_agreement=False, key_cert_sign=False,
                crl_sign=False, encipher_only=False, decipher_only=False,
            ), critical=True)
            .add_extension(x509.ExtendedKeyUsage(usages), critical=False)
            .add_extension(x509.AuthorityKeyIdentifier.from_issuer_public_key(
                self.__root_key.public_key()), critical=False)
            .sign(self.__root_key, hashes.SHA256())
        )

    def _reject(self, reason: RejectionReason, detail: str) -> CaRejection:
        with self._stats_lock:
            self.rejections[reason] += 1
        logger.warning("enrollment rejected: %s (%s)", reason.name, detail)
        return CaRejection(reason, detail)

    def enroll(self, req: EnrollmentRequest) -> x509.Certificate:
        """
        Run checks (a)-(f) in order and sign the CSR if all pass.

        Raises:
            CaRejection: the first failing check
        """
        quote = req.quote

        # (a) quote signature under a pre-registered attestation key
        if quote is None:
            raise self._reject(RejectionReason.QUOTE_SIG, "undecodable quote")
        public_key = self.known_good.trusted_attestation_keys.get(quote.key_id)
        if public_key is None:
            raise self._reject(RejectionReason.QUOTE_SIG, f"unknown attestation key {quote.key_id.hex()}")
        if not verify_quote(quote, quote.nonce, public_key):
            raise self._reject(RejectionReason.QUOTE_SIG, "quote signature does not verify")

        # (b) live, unconsumed, CA-issued nonce; consumed here
        if not self.nonces.consume(quote.nonce):
            raise self._reject(RejectionReason.NONCE, f"nonce {short_hex(quote.nonce)} not live")

        # (c) the list reproduces the quoted composite
        mlist = req.measurement_list
        if mlist is None:
            raise self._reject(RejectionReason.PCR_MISMATCH, "undecodable measurement list")
        if mlist.pcr_index != self.measurement_pcr or self.measurement_pcr not in quote.pcr_selection:
            raise self._reject(RejectionReason.PCR_MISMATCH,
                               f"measurement PCR {self.measurement_pcr} not covered by the quote")
        replayed = replay(mlist)
        values = [
            replayed if index == self.measurement_pcr
            else self.known_good.expected_pcrs.get(index, ZERO_DIGEST)
            for index in quote.pcr_selection
        ]
        if composite_of_values(values) != quote.pcr_composite:
            raise self._reject(RejectionReason.PCR_MISMATCH, "replayed list does not match quote")

        # (d) every entry allowlisted
        for entry in mlist:
            if entry.template_digest not in self.known_good.allowed_template_digests:
                raise self._reject(RejectionReason.UNKNOWN_MEASUREMENT,
                                   f"{entry.path} ({short_hex(entry.template_digest)})")

        # (e) every required path present
        missing = self.known_good.required_paths - set(mlist.paths())
        if missing:
            raise self._reject(RejectionReason.MISSING_REQUIRED, ", ".join(sorted(missing)))

        # (f) proof of possession
        try:
            csr = load_csr(req.csr)
        except CaRejection as e:
            raise self._reject(e.reason, e.detail) from e

        certificate = self._sign(csr, server=False)
        with self._stats_lock:
            self.issued += 1
        logger.info("enrolled %s (serial %x)", csr.subject.rfc4514_string(), certificate.serial_number)
        return certificate

    def issue_controller_certificate(self, csr_data: bytes) -> x509.Certificate:
        """
        Operator-only path: sign a controller CSR without attestation.

        Raises:
            CaRejection: BAD_CSR
        """
        try:
            csr = load_csr(csr_data)
        except CaRejection as e:
            raise self._reject(e.reason, e.detail) from e
        certificate = self._sign(csr, server=True)
        with self._stats_lock:
            self.issued += 1
        logger.info("issued controller certificate for %s", csr.subject.rfc4514_string())
        return certificate

    def stats(self) -> dict:
        with self._stats_lock:
            return {
                "issued": self.issued,
                "rejections": {reason.name: count for reason, count in self.rejections.items()},
                "live_nonces": self.nonces.live_count(),
            }

    # -- wire -----------------------------------------------------------------

    def handle_wire_request(self, data: bytes) -> bytes:
        """One raw request in, one raw response out."""
        if data == bytes([OP_NONCE_REQUEST]):
            return bytes([OP_NONCE]) + self.issue_nonce()
        if data == bytes([OP_ROOT_REQUEST]):
            return bytes([OP_ROOT]) + self._root_cert.public_bytes(serialization.Encoding.DER)
        try:
            quote_bytes, list_bytes, csr = decode_enrollment_request(data)
        except ValueError:
            return bytes([OP_REJECT, RejectionReason.MALFORMED])
        try:
            certificate = self.enroll(EnrollmentRequest.from_parts(quote_bytes, list_bytes, csr))
        except CaRejection as e:
            return bytes([OP_REJECT, e.reason])
        return bytes([OP_CERTIFICATE]) + certificate.public_bytes(serialization.Encoding.DER)


class CaService:
    """asyncio front-end for an ExtendedCA (one request per connection)."""

    def __init__(self, ca: ExtendedCA):
        self.ca = ca

    async def _read_request(self, reader: asyncio.StreamReader) -> bytes:
        opcode = await read_exactly(reader, 1)
        if opcode[0] in (OP_NONCE_REQUEST, OP_ROOT_REQUEST):
            return opcode
        if opcode[0] != OP_ENROLL:
            raise ValueError(f"unknown opcode 0x{opcode[0]:02x}")
        quote_len_raw = await read_exactly(reader, 2)
        quote = await read_exactly(reader, struct.unpack("!H", quote_len_raw)[0])
        list_len_raw = await read_exactly(reader, 4)
        list_len = struct.unpack("!I", list_len_raw)[0]
        if list_len > MAX_LIST_BYTES:
            raise ValueError("measurement list too large")
        mlist = await read_exactly(reader, list_len)
        csr_len_raw = await read_exactly(reader, 4)
        csr_len = struct.unpack("!I", csr_len_raw)[0]
        if csr_len > MAX_CSR_BYTES:
            raise ValueError("CSR too large")
        csr = await read_exactly(reader, csr_len)
        return opcode + quote_len_raw + quote + list_len_raw + mlist + csr_len_raw + csr

    async def handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            try:
                data = await self._read_request(reader)
            except ValueError as e:
                logger.warning("malformed CA request from %s: %s",
                               writer.get_extra_info("peername"), e)
                writer.write(bytes([OP_REJECT, RejectionReason.MALFORMED]))
            else:
                # signing and verification are CPU work; keep the loop responsive
                response = await asyncio.to_thread(self.ca.handle_wire_request, data)
                writer.write(response)
            await writer.drain()
        except ConnectionError as e:
            logger.debug("CA connection dropped: %s", e)
        finally:
            writer.close()


class CaClient:
    """Blocking client used by the enrollment state machine."""

    def __init__(self, endpoint: Endpoint, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def _exchange(self, payload: bytes) -> bytes:
        try:
            return request(self.endpoint, payload, self.timeout)
        except TransportError as e:
            raise CaUnreachable(str(e)) from e

    def request_nonce(self) -> bytes:
        response = self._exchange(bytes([OP_NONCE_REQUEST]))
        if response[0] != OP_NONCE or len(response) != 1 + NONCE_SIZE:
            raise CaError("malformed nonce response")
        return response[1:]

    def request_root(self) -> bytes:
        """Root certificate DER."""
        response = self._exchange(bytes([OP_ROOT_REQUEST]))
        if response[0] != OP_ROOT or len(response) < 2:
            raise CaError("malformed root certificate response")
        return response[1:]

    def submit(self, request_bytes: bytes) -> bytes:
        """
        Submit an encoded enrollment request.

        Returns:
            Certificate DER

        Raises:
            CaRejection: the CA refused
        """
        response = self._exchange(request_bytes)
        if response[0] == OP_CERTIFICATE:
            return response[1:]
        if response[0] == OP_REJECT and len(response) == 2:
            try:
                reason = RejectionReason(response[1])
            except ValueError:
                reason = RejectionReason.MALFORMED
            raise CaRejection(reason)
        raise CaError("malformed CA response")


def ca_from_allowlist(path: Union[str, Path], **kwargs) -> ExtendedCA:
    return ExtendedCA(KnownGoodConfig.load(path), **kwargs)
