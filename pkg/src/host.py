"""
Simulated Host - one platform with its root of trust and measurement log

Bundles a PCR bank, a measurement list and an attestation identity, and
measures a default "image" at boot: the boot aggregate, the kernel, the
container runtime, the virtual switch and the VNF binary. That pristine image
is what the CA allowlists.

Fault injection lives here too: tamper() measures a modified copy of a binary
after boot, exactly what IMA would record if someone swapped the file.
"""

import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.logger import get_logger
from src.measurement_log import (
    DEFAULT_MEASUREMENT_PCR,
    MeasurementList,
    PcrBank,
    measure,
)
from src.root_of_trust import AttestationIdentity, public_key_bytes
from src import randomness

logger = get_logger(__name__)

# path -> content. Content is synthetic but stable, so digests are reproducible.
DEFAULT_IMAGE: Tuple[Tuple[str, bytes], ...] = (
    ("boot_aggregate", b"trustplane boot aggregate v1"),
    ("/boot/vmlinuz", b"linux kernel image 4.15.0 (simulated)"),
    ("/usr/bin/containerd", b"container runtime 1.2.0 (simulated)"),
    ("/usr/sbin/ovs-vswitchd", b"open vswitch daemon 2.9.0 with enclave TLS (simulated)"),
    ("/opt/vnf/bin/firewall", b"virtual network function: stateless firewall 0.3 (simulated)"),
)


@dataclass
class Snapshot:
    """Immutable (bank, list) pair handed to quote requests."""
    bank: PcrBank
    measurement_list: MeasurementList


@dataclass
class SimulatedHost:
    """
    One platform: root of trust + IMA-style log.

    Writes go through a lock; readers get immutable snapshots.
    """
    host_id: str = "host-1"
    identity: AttestationIdentity = field(default=None)
    measurement_pcr: int = DEFAULT_MEASUREMENT_PCR
    image: Sequence[Tuple[str, bytes]] = DEFAULT_IMAGE

    def __post_init__(self):
        if self.identity is None:
            seed = randomness.derive_seed_bytes(f"attestation-identity:{self.host_id}")
            self.identity = AttestationIdentity.generate(seed)
        self._lock = threading.Lock()
        self._bank = PcrBank()
        self._list = MeasurementList(pcr_index=self.measurement_pcr)
        for path, content in self.image:
            self.launch(path, content)

    def launch(self, path: str, content: bytes) -> None:
        """Measure an object (boot or post-boot)."""
        with self._lock:
            self._list, self._bank = measure(
                self._list, self._bank, self.measurement_pcr, path, content
            )
        logger.debug("%s measured %s", self.host_id, path)

    def tamper(self, path: Optional[str] = None) -> str:
        """
        Re-measure a modified copy of a binary from the image.

        Args:
            path: Binary to tamper with (defaults to the virtual switch)

        Returns:
            The tampered path
        """
        contents: Dict[str, bytes] = dict(self.image)
        if path is None:
            path = "/usr/sbin/ovs-vswitchd"
        original = contents.get(path, b"")
        # flip one bit
        modified = bytes([original[0] ^ 0x01]) + original[1:] if original else b"\x01"
        logger.warning("%s: injecting tampered measurement for %s", self.host_id, path)
        self.launch(path, modified)
        return path

    def snapshot(self) -> Snapshot:
        with self._lock:
            return Snapshot(bank=self._bank, measurement_list=self._list)

    def allowlist_entries(self) -> List[Tuple[str, bytes]]:
        """(path, template digest) for every entry currently in the log."""
        snap = self.snapshot()
        return [(e.path, e.template_digest) for e in snap.measurement_list]

    def attestation_key(self) -> Tuple[bytes, bytes]:
        """(key id, raw public key) for out-of-band registration at the CA."""
        return self.identity.key_id, public_key_bytes(self.identity.public_key)


def image_without(path: str, image: Sequence[Tuple[str, bytes]] = DEFAULT_IMAGE):
    """A copy of `image` with one object removed (missing-required fault)."""
    return tuple((p, c) for p, c in image if p != path)
