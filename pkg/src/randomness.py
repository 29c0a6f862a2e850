"""
Single source of randomness for nonces, handles, serials and simulated hosts.

Setting TRUSTPLANE_SEED makes every value drawn here reproducible, which is what
the fault-injection suite and CI runs want. Without it we fall back to the OS
CSPRNG via `secrets`.

RSA key generation inside the enclave compartment and ECDSA signing nonces are
NOT covered: the cryptography package gives us no way to seed them.
"""

import hashlib
import os
import random
import secrets
import threading
from typing import Optional

SEED_ENV_VAR = "TRUSTPLANE_SEED"

_lock = threading.Lock()
_seeded: Optional[random.Random] = None
_seed_value: Optional[str] = None


def configure(seed: Optional[str] = None) -> None:
    """
    (Re)configure the process-wide source.

    Args:
        seed: Explicit seed; if None, TRUSTPLANE_SEED is consulted
    """
    global _seeded, _seed_value
    if seed is None:
        seed = os.getenv(SEED_ENV_VAR) or None
    with _lock:
        _seed_value = seed
        _seeded = random.Random(seed) if seed is not None else None


def current_seed() -> Optional[str]:
    return _seed_value


def token_bytes(n: int) -> bytes:
    """n random bytes (seeded when a seed is configured)."""
    with _lock:
        if _seeded is not None:
            return _seeded.randbytes(n)
    return secrets.token_bytes(n)


def randbits(k: int) -> int:
    with _lock:
        if _seeded is not None:
            return _seeded.getrandbits(k)
    return secrets.randbits(k)


def derive_seed_bytes(label: str, length: int = 32) -> Optional[bytes]:
    """
    Deterministic key seed for `label`, or None when running unseeded.

    Used for the CA root key and the attestation identity so that a CA restarted
    with the same seed keeps the same root certificate key.
    """
    if _seed_value is None:
        return None
    digest = hashlib.sha256(f"{_seed_value}:{label}".encode("utf-8")).digest()
    while len(digest) < length:
        digest += hashlib.sha256(digest).digest()
    return digest[:length]


configure()
