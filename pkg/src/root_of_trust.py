"""
Root of Trust - a software TPM stand-in

Holds an attestation identity (Ed25519) and produces quotes: signatures over

    nonce || selection encoding || H(selected PCR values, in selection order)

The selection is signed too, so a verifier can't be fooled into recomputing
the composite over a different set of registers.

Wire layout of a quote (bit-exact):

    nonce(32) || count(2, BE) || indices(1 each) || composite(32)
              || key_id(8) || sig_len(2, BE) || signature

The first byte of `signature` names the scheme (0x01 = Ed25519), so
verification never has to guess.
"""

import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from src.measurement_log import DIGEST_SIZE, PCR_COUNT, PcrBank, digest

NONCE_SIZE = 32
KEY_ID_SIZE = 8
SCHEME_ED25519 = 0x01


class RootOfTrustError(Exception):
    """Raised for invalid quote requests and undecodable quote bytes."""


def public_key_bytes(public_key: Ed25519PublicKey) -> bytes:
    return public_key.public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )


def key_id_for(public_key: Ed25519PublicKey) -> bytes:
    """Short reference to an identity: first 8 bytes of H(raw public key)."""
    return digest(public_key_bytes(public_key))[:KEY_ID_SIZE]


def load_public_key(raw: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(raw)


class AttestationIdentity:
    """
    The signing identity of one simulated platform.

    The private key lives in a name-mangled attribute and no method hands it
    out: callers get the public key, the key id, and quotes.
    """

    def __init__(self, private_key: Ed25519PrivateKey):
        self.__private_key = private_key
        self.public_key = private_key.public_key()
        self.key_id = key_id_for(self.public_key)

    @classmethod
    def generate(cls, seed: Optional[bytes] = None) -> "AttestationIdentity":
        """
        Args:
            seed: 32 bytes for a deterministic identity, None for a random one
        """
        if seed is None:
            return cls(Ed25519PrivateKey.generate())
        if len(seed) != 32:
            raise RootOfTrustError("identity seed must be 32 bytes")
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    def public_bytes(self) -> bytes:
        return public_key_bytes(self.public_key)

    def _sign(self, message: bytes) -> bytes:
        return self.__private_key.sign(message)


@dataclass(frozen=True)
class Quote:
    """Signed binding of (nonce, PCR composite)."""
    nonce: bytes
    pcr_selection: Tuple[int, ...]
    pcr_composite: bytes
    signature: bytes
    key_id: bytes

    def signed_message(self) -> bytes:
        return signed_message(self.nonce, self.pcr_selection, self.pcr_composite)


def _encode_selection(selection: Sequence[int]) -> bytes:
    return struct.pack("!H", len(selection)) + bytes(selection)


def signed_message(nonce: bytes, selection: Sequence[int], composite: bytes) -> bytes:
    return nonce + _encode_selection(selection) + composite


def _check_selection(selection: Sequence[int]) -> None:
    if not selection:
        raise RootOfTrustError("PCR selection must not be empty")
    for index in selection:
        if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < PCR_COUNT:
            raise RootOfTrustError(f"PCR index {index!r} out of range")


def composite(bank: PcrBank, selection: Sequence[int]) -> bytes:
    """H(concatenation of selected registers in selection order)."""
    _check_selection(selection)
    return composite_of_values([bank.registers[i] for i in selection])


def composite_of_values(values: Sequence[bytes]) -> bytes:
    return digest(b"".join(values))


def generate_quote(
    identity: AttestationIdentity,
    bank: PcrBank,
    nonce: bytes,
    selection: Sequence[int],
) -> Quote:
    """
    Quote the selected registers under `nonce`.

    Raises:
        RootOfTrustError: empty selection, out-of-range index, or bad nonce size
    """
    _check_selection(selection)
    if len(nonce) != NONCE_SIZE:
        raise RootOfTrustError(f"nonce must be {NONCE_SIZE} bytes")

    selection = tuple(selection)
    pcr_composite = composite(bank, selection)
    raw_signature = identity._sign(signed_message(nonce, selection, pcr_composite))

    return Quote(
        nonce=nonce,
        pcr_selection=selection,
        pcr_composite=pcr_composite,
        signature=bytes([SCHEME_ED25519]) + raw_signature,
        key_id=identity.key_id,
    )


def verify_quote(quote: Quote, expected_nonce: bytes, public_key: Ed25519PublicKey) -> bool:
    """True iff the signature verifies under `public_key` and the nonce matches."""
    if quote.nonce != expected_nonce:
        return False
    if not quote.signature or quote.signature[0] != SCHEME_ED25519:
        return False
    try:
        public_key.verify(quote.signature[1:], quote.signed_message())
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


def encode_quote(quote: Quote) -> bytes:
    return b"".join([
        quote.nonce,
        _encode_selection(quote.pcr_selection),
        quote.pcr_composite,
        quote.key_id,
        struct.pack("!H", len(quote.signature)),
        quote.signature,
    ])


def decode_quote(data: bytes) -> Quote:
    """
    Parse the binary layout above.

    Raises:
        RootOfTrustError: on truncation or trailing bytes
    """
    try:
        offset = 0
        nonce = data[offset:offset + NONCE_SIZE]
        offset += NONCE_SIZE
        (count,) = struct.unpack_from("!H", data, offset)
        offset += 2
        selection = tuple(data[offset:offset + count])
        offset += count
        pcr_composite = data[offset:offset + DIGEST_SIZE]
        offset += DIGEST_SIZE
        key_id = data[offset:offset + KEY_ID_SIZE]
        offset += KEY_ID_SIZE
        (sig_len,) = struct.unpack_from("!H", data, offset)
        offset += 2
        signature = data[offset:offset + sig_len]
        offset += sig_len
    except struct.error as e:
        raise RootOfTrustError(f"truncated quote: {e}") from e

    if (len(nonce) != NONCE_SIZE or len(selection) != count
            or len(pcr_composite) != DIGEST_SIZE or len(key_id) != KEY_ID_SIZE
            or len(signature) != sig_len):
        raise RootOfTrustError("truncated quote")
    if offset != len(data):
        raise RootOfTrustError(f"{len(data) - offset} trailing bytes after quote")

    return Quote(
        nonce=bytes(nonce),
        pcr_selection=selection,
        pcr_composite=bytes(pcr_composite),
        signature=bytes(signature),
        key_id=bytes(key_id),
    )
