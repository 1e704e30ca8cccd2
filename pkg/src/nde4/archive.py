"""Bulk-data archive: tagged-binary object codec and revision-safe store.

Objects are flat lists of (group, element, value) elements, encoded as:
preamble ASCII "NDEO" + version byte 0x01, then per element group (u16 LE),
element (u16 LE), length (u32 LE), value bytes. Canonical form orders
elements strictly ascending by (group, element); decode rejects anything
else, so there is exactly one byte form per object.

Persistence is one file per object ("<uid>.ndeo") plus an append-only
"chain.log". Each chain record links to its predecessor by digest, so any
post-hoc edit of an object file or a chain line is detectable, and the
first tampered index is identifiable. There is no delete operation on the
public surface, by design.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import Nde4Error, ValidationFailed
from .semantics import (
    DICT_V1,
    TAG_COMPONENT_SERIAL,
    TAG_METHOD_CODE,
    TAG_OBJECT_UID,
    TAG_ORDER_ID,
    Dictionary,
    TagCode,
    interpret,
    is_id_token,
    validate_object,
)
from .timebase import LogicalClock

PREAMBLE = b"NDEO"
OBJECT_VERSION = 0x01
CHAIN_FILE = "chain.log"
OBJECT_SUFFIX = ".ndeo"
DATA_DIR_ENV = "NDE4_DATA_DIR"
DATA_DIR_DEFAULT = "./nde4-data"
ZERO_DIGEST = bytes(32)

# archive-channel opcodes (1-byte prefix on channel-2 frame payloads)
OP_STORE = 0x01
OP_FETCH = 0x02
OP_QUERY = 0x03
OP_RESULT = 0x04
OP_ERROR = 0x7F


class NonCanonicalOrder(Nde4Error):
    """Elements are not strictly ascending by (group, element)."""


class TruncatedElement(Nde4Error):
    """Byte stream ends inside an element header or value."""


class BadPreamble(Nde4Error):
    """Object bytes do not start with the preamble and version."""


class DuplicateUID(Nde4Error):
    """An object with this UID is already stored."""


class UnknownUID(Nde4Error):
    """No stored object has this UID."""


@dataclass(frozen=True, slots=True)
class Element:
    code: TagCode
    value: bytes


@dataclass(frozen=True, slots=True)
class DataObject:
    elements: tuple[Element, ...]

    @classmethod
    def from_values(cls, values: dict[TagCode, bytes]) -> "DataObject":
        """Build a canonical object from a code->raw-bytes mapping."""
        return cls(
            tuple(Element(code, values[code]) for code in sorted(values))
        )

    def raw(self, code: TagCode) -> bytes | None:
        for element in self.elements:
            if element.code == code:
                return element.value
        return None

    def _idstr(self, code: TagCode) -> str | None:
        raw = self.raw(code)
        if raw is None:
            return None
        return raw.decode("utf-8")

    @property
    def uid(self) -> str | None:
        return self._idstr(TAG_OBJECT_UID)

    @property
    def order_id(self) -> str | None:
        return self._idstr(TAG_ORDER_ID)

    @property
    def component_serial(self) -> str | None:
        return self._idstr(TAG_COMPONENT_SERIAL)

    @property
    def method_code(self) -> str | None:
        return self._idstr(TAG_METHOD_CODE)


def encode_object(obj: DataObject) -> bytes:
    previous: TagCode | None = None
    chunks = [PREAMBLE, bytes([OBJECT_VERSION])]
    for element in obj.elements:
        if previous is not None and element.code <= previous:
            raise NonCanonicalOrder(
                f"{element.code} after {previous}; strictly ascending required"
            )
        previous = element.code
        if len(element.value) > 0xFFFF_FFFF:
            raise TruncatedElement(
                f"{element.code} value too large for u32 length"
            )
        chunks.append(
            struct.pack(
                "<HHI", element.code.group, element.code.element, len(element.value)
            )
        )
        chunks.append(element.value)
    return b"".join(chunks)


def decode_object(data: bytes) -> DataObject:
    if len(data) < 5 or data[:4] != PREAMBLE:
        raise BadPreamble(f"expected {PREAMBLE!r} preamble")
    if data[4] != OBJECT_VERSION:
        raise BadPreamble(f"unsupported object version {data[4]}")
    elements: list[Element] = []
    previous: TagCode | None = None
    offset = 5
    while offset < len(data):
        if offset + 8 > len(data):
            raise TruncatedElement(f"element header cut short at byte {offset}")
        group, element_number, length = struct.unpack_from("<HHI", data, offset)
        offset += 8
        if offset + length > len(data):
            raise TruncatedElement(
                f"value of ({group:04X},{element_number:04X}) cut short at byte "
                f"{offset}: need {length} bytes, have {len(data) - offset}"
            )
        code = TagCode(group, element_number)
        if previous is not None and code <= previous:
            raise NonCanonicalOrder(
                f"{code} after {previous}; strictly ascending required"
            )
        previous = code
        elements.append(Element(code, data[offset : offset + length]))
        offset += length
    return DataObject(tuple(elements))


# --- digest chain ------------------------------------------------------------

def digest(data: bytes) -> bytes:
    """The one digest function used everywhere: SHA-256."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True, slots=True)
class ChainRecord:
    index: int
    object_uid: str
    object_digest: bytes
    prev_digest: bytes
    stored_at: str

    def canonical_bytes(self) -> bytes:
        return (
            struct.pack("<Q", self.index)
            + self.object_uid.encode("utf-8")
            + self.object_digest
            + self.prev_digest
            + self.stored_at.encode("ascii")
        )

    def line(self) -> str:
        """One chain.log line; the trailing field digests the record itself."""
        self_digest = digest(self.canonical_bytes()).hex()
        return "\t".join(
            (
                str(self.index),
                self.object_uid,
                self.object_digest.hex(),
                self.prev_digest.hex(),
                self.stored_at,
                self_digest,
            )
        )


def parse_chain_line(line: str) -> ChainRecord:
    """Strict parse; raises ValueError on any malformation or self-digest
    mismatch, including non-canonical renderings of valid field values."""
    parts = line.split("\t")
    if len(parts) != 6:
        raise ValueError(f"expected 6 fields, got {len(parts)}")
    index_text, uid, object_hex, prev_hex, stored_at, self_hex = parts
    if not index_text.isdigit():
        raise ValueError(f"bad index: {index_text!r}")
    record = ChainRecord(
        int(index_text), uid, bytes.fromhex(object_hex), bytes.fromhex(prev_hex),
        stored_at,
    )
    if record.line() != line:
        raise ValueError("line is not the canonical rendering of its fields")
    return record


@dataclass(frozen=True, slots=True)
class VerifyResult:
    ok: bool
    bad_index: int | None
    records: int

    def __str__(self) -> str:
        if self.ok:
            return f"OK ({self.records} records)"
        return f"BAD at index {self.bad_index} ({self.records} records)"


# --- store -------------------------------------------------------------------

def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, DATA_DIR_DEFAULT))


class Archive:
    """Single-writer store; reads see only fully committed objects."""

    def __init__(
        self,
        directory: str | Path | None = None,
        clock: LogicalClock | None = None,
        dictionary: Dictionary = DICT_V1,
    ):
        self._dir = Path(directory) if directory is not None else data_dir()
        self._dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock if clock is not None else LogicalClock()
        self._dictionary = dictionary
        self._lock = threading.Lock()
        self._uids: list[str] = []
        self._last_digest = ZERO_DIGEST
        self._reload()

    @property
    def directory(self) -> Path:
        return self._dir

    def _chain_path(self) -> Path:
        return self._dir / CHAIN_FILE

    def _object_path(self, uid: str) -> Path:
        return self._dir / f"{uid}{OBJECT_SUFFIX}"

    def _reload(self) -> None:
        """Rebuild the in-memory index from chain.log (store order)."""
        self._uids = []
        self._last_digest = ZERO_DIGEST
        chain_path = self._chain_path()
        if not chain_path.exists():
            return
        for line in chain_path.read_text("utf-8").splitlines():
            try:
                record = parse_chain_line(line)
            except ValueError:
                break  # verify_chain reports the damage; index stops here
            self._uids.append(record.object_uid)
            self._last_digest = digest(record.canonical_bytes())

    def store(self, obj: DataObject) -> str:
        report = validate_object(self._dictionary, obj)
        if report.blocking:
            raise ValidationFailed(str(report), report)
        uid = obj.uid
        assert uid is not None  # mandatory-tag check passed
        if not is_id_token(uid):
            raise ValidationFailed(f"object UID not a valid id token: {uid!r}")
        encoded = encode_object(obj)
        with self._lock:
            path = self._object_path(uid)
            if uid in self._uids or path.exists():
                raise DuplicateUID(uid)
            record = ChainRecord(
                index=len(self._uids),
                object_uid=uid,
                object_digest=digest(encoded),
                prev_digest=self._last_digest,
                stored_at=self._clock.now_text(),
            )
            temp = path.with_suffix(".tmp")
            temp.write_bytes(encoded)
            try:
                with open(self._chain_path(), "a", encoding="utf-8") as chain:
                    chain.write(record.line() + "\n")
            except OSError:
                temp.unlink(missing_ok=True)
                raise
            temp.rename(path)
            self._uids.append(uid)
            self._last_digest = digest(record.canonical_bytes())
        return uid

    def fetch(self, uid: str) -> DataObject:
        with self._lock:
            known = uid in self._uids
        if not known:
            raise UnknownUID(uid)
        return decode_object(self._object_path(uid).read_bytes())

    def fetch_bytes(self, uid: str) -> bytes:
        with self._lock:
            known = uid in self._uids
        if not known:
            raise UnknownUID(uid)
        return self._object_path(uid).read_bytes()

    def has(self, uid: str) -> bool:
        with self._lock:
            return uid in self._uids

    def uids(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._uids)

    def query(
        self,
        order_id: str | None = None,
        component_serial: str | None = None,
        method: str | None = None,
    ) -> tuple[str, ...]:
        """UIDs in store order matching every supplied criterion."""
        with self._lock:
            uids = tuple(self._uids)
        matched = []
        for uid in uids:
            obj = decode_object(self._object_path(uid).read_bytes())
            if order_id is not None and obj.order_id != order_id:
                continue
            if component_serial is not None and obj.component_serial != component_serial:
                continue
            if method is not None and obj.method_code != method:
                continue
            matched.append(uid)
        return tuple(matched)

    def chain_records(self) -> tuple[ChainRecord, ...]:
        chain_path = self._chain_path()
        if not chain_path.exists():
            return ()
        records = []
        for line in chain_path.read_text("utf-8").splitlines():
            records.append(parse_chain_line(line))
        return tuple(records)

    def verify_chain(self) -> VerifyResult:
        """Recompute all digests; OK, or the smallest index that fails.

        A chain shorter than the set of stored object files fails at
        index = chain length (missing tail).
        """
        chain_path = self._chain_path()
        # decode per line: a corrupt byte must become a bad index, not a crash
        raw = chain_path.read_bytes() if chain_path.exists() else b""
        if raw.endswith(b"\n"):
            raw = raw[:-1]
        lines = raw.split(b"\n") if raw else []
        prev = ZERO_DIGEST
        covered: set[str] = set()
        for k, raw_line in enumerate(lines):
            try:
                record = parse_chain_line(raw_line.decode("utf-8"))
            except (UnicodeDecodeError, ValueError):
                return VerifyResult(False, k, len(lines))
            if record.index != k or record.prev_digest != prev:
                return VerifyResult(False, k, len(lines))
            object_path = self._object_path(record.object_uid)
            if not object_path.exists():
                return VerifyResult(False, k, len(lines))
            if digest(object_path.read_bytes()) != record.object_digest:
                return VerifyResult(False, k, len(lines))
            prev = digest(record.canonical_bytes())
            covered.add(record.object_uid)
        on_disk = {
            path.name[: -len(OBJECT_SUFFIX)]
            for path in self._dir.glob(f"*{OBJECT_SUFFIX}")
        }
        if on_disk - covered:
            return VerifyResult(False, len(lines), len(lines))
        return VerifyResult(True, None, len(lines))


# --- archive-channel wire service --------------------------------------------

class ArchiveWire:
    """Request/response handler for channel-2 frame payloads.

    Payload = 1-byte opcode + body. STORE carries encode_object bytes and
    answers RESULT + {"uid": ...}; FETCH carries {"uid": ...} and answers
    RESULT + object bytes; QUERY carries criteria and answers RESULT +
    {"uids": [...]}. Failures answer ERROR + {"code", "detail"}.
    """

    def __init__(self, archive: Archive):
        self._archive = archive

    def request(self, payload: bytes) -> bytes:
        if not payload:
            return _wire_error("MalformedRequest", "empty payload")
        opcode, body = payload[0], payload[1:]
        try:
            if opcode == OP_STORE:
                uid = self._archive.store(decode_object(body))
                return bytes([OP_RESULT]) + _wire_json({"uid": uid})
            if opcode == OP_FETCH:
                uid = json.loads(body.decode("utf-8"))["uid"]
                return bytes([OP_RESULT]) + self._archive.fetch_bytes(uid)
            if opcode == OP_QUERY:
                criteria = json.loads(body.decode("utf-8"))
                uids = self._archive.query(
                    order_id=criteria.get("orderId"),
                    component_serial=criteria.get("componentSerial"),
                    method=criteria.get("method"),
                )
                return bytes([OP_RESULT]) + _wire_json({"uids": list(uids)})
        except Nde4Error as exc:
            return _wire_error(type(exc).__name__, str(exc))
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            return _wire_error("MalformedRequest", str(exc))
        return _wire_error("MalformedRequest", f"unknown opcode {opcode:#x}")


def _wire_json(document: dict) -> bytes:
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _wire_error(code: str, detail: str) -> bytes:
    return bytes([OP_ERROR]) + _wire_json({"code": code, "detail": detail})
