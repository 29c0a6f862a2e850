"""
Measurement Log - an IMA-style, append-only list of file digests

Every measured object becomes one entry: we hash its content, hash the
(path, content digest) pair into a template digest, and fold that template
digest into a PCR with extend semantics:

    register' = H(register || template_digest)

Because the register is a running hash, anyone holding the list can replay
it from the all-zero start value and compare against the (quoted) register.
Change one byte, drop an entry, or swap two entries and the replay diverges.

H is SHA-256 for everything, registers and templates alike.
"""

import hashlib
import struct
from dataclasses import dataclass, field
from typing import List, Tuple

PCR_COUNT = 24
DIGEST_SIZE = 32
DEFAULT_MEASUREMENT_PCR = 10  # conventional IMA register
ZERO_DIGEST = bytes(DIGEST_SIZE)


class MeasurementLogError(Exception):
    """Raised for out-of-range registers and malformed measurement lists."""


def digest(data: bytes) -> bytes:
    """The single digest function used across the project."""
    return hashlib.sha256(data).digest()


def encode_template(path: str, file_digest: bytes) -> bytes:
    """Length-prefixed path followed by the content digest."""
    path_bytes = path.encode("utf-8")
    return struct.pack("!I", len(path_bytes)) + path_bytes + file_digest


def template_digest_for(path: str, file_digest: bytes) -> bytes:
    return digest(encode_template(path, file_digest))


def fold(register: bytes, value: bytes) -> bytes:
    """One extend step."""
    return digest(register + value)


@dataclass(frozen=True)
class MeasurementEntry:
    """
    One measured object.

    template_digest is derived, never passed in: an entry can only change if
    the measured path or content changes.
    """
    index: int
    path: str
    file_digest: bytes
    template_digest: bytes = field(init=False)

    def __post_init__(self):
        if self.index < 0:
            raise MeasurementLogError(f"negative entry index {self.index}")
        if len(self.file_digest) != DIGEST_SIZE:
            raise MeasurementLogError(
                f"file digest must be {DIGEST_SIZE} bytes, got {len(self.file_digest)}"
            )
        object.__setattr__(
            self, "template_digest", template_digest_for(self.path, self.file_digest)
        )


@dataclass(frozen=True)
class MeasurementList:
    """Ordered, append-only list of entries anchored in one PCR."""
    entries: Tuple[MeasurementEntry, ...] = ()
    pcr_index: int = DEFAULT_MEASUREMENT_PCR

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def appended(self, path: str, file_digest: bytes) -> "MeasurementList":
        entry = MeasurementEntry(index=len(self.entries), path=path, file_digest=file_digest)
        return MeasurementList(entries=self.entries + (entry,), pcr_index=self.pcr_index)

    def paths(self) -> List[str]:
        return [entry.path for entry in self.entries]


@dataclass(frozen=True)
class PcrBank:
    """24 digest registers, all zero at power-on. Only extend() changes them."""
    registers: Tuple[bytes, ...] = (ZERO_DIGEST,) * PCR_COUNT

    def __post_init__(self):
        if len(self.registers) != PCR_COUNT:
            raise MeasurementLogError(f"a PCR bank holds exactly {PCR_COUNT} registers")

    def read(self, pcr_index: int) -> bytes:
        _check_index(pcr_index)
        return self.registers[pcr_index]


def _check_index(pcr_index: int) -> None:
    if isinstance(pcr_index, bool) or not isinstance(pcr_index, int) or not 0 <= pcr_index < PCR_COUNT:
        raise MeasurementLogError(f"PCR index {pcr_index!r} out of range 0..{PCR_COUNT - 1}")


def read_register(bank: PcrBank, pcr_index: int) -> bytes:
    return bank.read(pcr_index)


def extend(bank: PcrBank, pcr_index: int, value: bytes) -> PcrBank:
    """
    Fold `value` into register `pcr_index`.

    Args:
        bank: Current bank (left untouched)
        pcr_index: Register to extend, 0 <= index < 24
        value: 32-byte digest

    Returns:
        New bank with only that register changed
    """
    _check_index(pcr_index)
    if len(value) != DIGEST_SIZE:
        raise MeasurementLogError(f"extend expects a {DIGEST_SIZE}-byte digest")
    registers = list(bank.registers)
    registers[pcr_index] = fold(registers[pcr_index], value)
    return PcrBank(registers=tuple(registers))


def measure(
    mlist: MeasurementList,
    bank: PcrBank,
    pcr_index: int,
    path: str,
    content: bytes,
) -> Tuple[MeasurementList, PcrBank]:
    """
    Measure one object: append its entry and extend the PCR with the template digest.

    Returns:
        (new list, new bank)
    """
    _check_index(pcr_index)
    if "\n" in path or "\r" in path:
        raise MeasurementLogError("measured paths cannot contain line breaks")
    if mlist.entries and mlist.pcr_index != pcr_index:
        raise MeasurementLogError(
            f"list is anchored in PCR {mlist.pcr_index}, not {pcr_index}"
        )
    if not mlist.entries and mlist.pcr_index != pcr_index:
        mlist = MeasurementList(entries=(), pcr_index=pcr_index)

    new_list = mlist.appended(path, digest(content))
    new_bank = extend(bank, pcr_index, new_list.entries[-1].template_digest)
    return new_list, new_bank


def replay(mlist: MeasurementList) -> bytes:
    """Register value obtained by folding every template digest over zeros, in order."""
    register = ZERO_DIGEST
    for entry in mlist.entries:
        register = fold(register, entry.template_digest)
    return register


def serialize(mlist: MeasurementList) -> str:
    """
    One line per entry:

        <index> <pcr_index> <template_digest_hex> <file_digest_hex> <path>
    """
    lines = [
        f"{entry.index} {mlist.pcr_index} {entry.template_digest.hex()} "
        f"{entry.file_digest.hex()} {entry.path}\n"
        for entry in mlist.entries
    ]
    return "".join(lines)


def parse(text: str, default_pcr: int = DEFAULT_MEASUREMENT_PCR) -> MeasurementList:
    """
    Inverse of serialize().

    Raises:
        MeasurementLogError: on gaps in the index sequence, mixed PCRs, bad hex,
            or a template digest that does not match its (path, file digest)
    """
    entries: List[MeasurementEntry] = []
    pcr_index = None

    for line_no, line in enumerate(text.split("\n"), 1):
        if line == "":
            continue
        tokens = line.split(" ", 4)
        if len(tokens) != 5:
            raise MeasurementLogError(f"line {line_no}: expected 5 fields")

        index_text, pcr_text, template_hex, file_hex, path = tokens
        try:
            index = int(index_text)
            line_pcr = int(pcr_text)
            template = bytes.fromhex(template_hex)
            file_digest = bytes.fromhex(file_hex)
        except ValueError as e:
            raise MeasurementLogError(f"line {line_no}: {e}") from e

        if index != len(entries):
            raise MeasurementLogError(f"line {line_no}: index {index} breaks the sequence")
        if pcr_index is None:
            _check_index(line_pcr)
            pcr_index = line_pcr
        elif line_pcr != pcr_index:
            raise MeasurementLogError(f"line {line_no}: mixed PCR indices")

        entry = MeasurementEntry(index=index, path=path, file_digest=file_digest)
        if entry.template_digest != template:
            raise MeasurementLogError(f"line {line_no}: template digest mismatch")
        entries.append(entry)

    return MeasurementList(
        entries=tuple(entries),
        pcr_index=default_pcr if pcr_index is None else pcr_index,
    )
