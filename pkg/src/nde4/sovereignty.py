"""Data-sovereignty connectors: contracts, usage policies, enforcement, audit.

A provider connector offers an archived object to a consumer connector
under a usage policy (bounded read count, expiry on the logical clock,
forwarding permission, purpose). The provider enforces the policy at every
consume; the consumer connector erases its cached copy the moment a
bounded contract exhausts, so "view once" means exactly one delivery and
no retained bytes.

All cross-connector traffic runs over SOVEREIGN-channel frames, opcode
byte first, so the exchange is observable on the wire. Every connector
keeps an append-only audit log; replaying a contract's audit events
reconstructs its state exactly (event-sourcing equivalence).
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

from .archive import Archive, DataObject, UnknownUID, decode_object
from .errors import Nde4Error
from .framing import Channel, decode_frame, encode_frame
from .identity import InstanceId
from .semantics import is_id_token
from .timebase import LogicalClock, is_valid_datetime

# SOVEREIGN-channel opcodes (1-byte prefix on channel-3 frame payloads)
OP_OFFER = 0x11
OP_ACCEPT = 0x12
OP_CONSUME = 0x13
OP_DATA = 0x14
OP_FORWARD = 0x15
OP_DENY = 0x7E
OP_ERROR = 0x7F

AUDIT_FILE_PREFIX = "audit-"
AUDIT_FILE_SUFFIX = ".log"

# audit actions
OFFER = "OFFER"
ACCEPT = "ACCEPT"
READ = "READ"
DELETE = "DELETE"
DENY = "DENY"
REVOKE = "REVOKE"
EXPIRE = "EXPIRE"

# contract states
OFFERED = "OFFERED"
ACCEPTED = "ACCEPTED"
ACTIVE = "ACTIVE"
EXHAUSTED = "EXHAUSTED"
EXPIRED = "EXPIRED"
REVOKED = "REVOKED"

TERMINAL = frozenset({EXHAUSTED, EXPIRED, REVOKED})

# max_reads value meaning "no read bound"
UNLIMITED = None


class InvalidPolicy(Nde4Error):
    """Usage policy violates a bound or expiry rule."""


class UnknownContract(Nde4Error):
    """No contract with this id on this connector."""


class WrongConsumer(Nde4Error):
    """Operation attempted by a party the contract does not name."""


class WrongState(Nde4Error):
    """Contract is not in the state the operation requires."""


class PolicyExhausted(Nde4Error):
    """The bounded read count is used up."""


class PolicyExpired(Nde4Error):
    """The contract expired on the logical clock."""


class ForwardProhibited(Nde4Error):
    """The policy forbids forwarding to third parties."""


@dataclass(frozen=True, slots=True)
class UsagePolicy:
    max_reads: int | None = UNLIMITED
    expires: str | None = None
    allow_forward: bool = False
    purpose: str = "inspection"


def policy_problems(policy: UsagePolicy, now_text: str) -> tuple[str, ...]:
    problems = []
    if policy.max_reads is not UNLIMITED:
        if not isinstance(policy.max_reads, int) or policy.max_reads < 1:
            problems.append(f"max_reads must be >= 1 or UNLIMITED: {policy.max_reads!r}")
    if policy.expires is not None:
        if not is_valid_datetime(policy.expires):
            problems.append(f"expires not a valid datetime: {policy.expires!r}")
        elif policy.expires <= now_text:
            problems.append(f"expires not in the future: {policy.expires}")
    if not is_id_token(policy.purpose):
        problems.append(f"purpose not a valid token: {policy.purpose!r}")
    return tuple(problems)


@dataclass(frozen=True, slots=True)
class AuditEvent:
    at: str
    contract_id: str
    action: str
    detail: str = ""


@dataclass
class UsageContract:
    contract_id: str
    provider: InstanceId
    consumer: InstanceId
    object_uid: str
    policy: UsagePolicy
    state: str = OFFERED
    reads_done: int = 0
    origin: str = ""  # owner id of the connector whose archive holds the bytes

    @property
    def remaining_reads(self) -> int | None:
        if self.policy.max_reads is UNLIMITED:
            return None
        return self.policy.max_reads - self.reads_done


def replay(policy: UsagePolicy, events: Iterable[AuditEvent]) -> tuple[str, int]:
    """Reconstruct (state, reads_done) from one contract's audit events."""
    state = OFFERED
    reads = 0
    for event in events:
        if event.action == OFFER:
            state = OFFERED
        elif event.action == ACCEPT:
            state = ACTIVE
        elif event.action == READ:
            reads += 1
            if policy.max_reads is not UNLIMITED and reads >= policy.max_reads:
                state = EXHAUSTED
        elif event.action == EXPIRE:
            state = EXPIRED
        elif event.action == REVOKE:
            state = REVOKED
        # DELETE and DENY change no contract state
    return state, reads


def _policy_to_wire(policy: UsagePolicy) -> dict:
    return {
        "maxReads": policy.max_reads,
        "expires": policy.expires,
        "allowForward": policy.allow_forward,
        "purpose": policy.purpose,
    }


def _policy_from_wire(document: dict) -> UsagePolicy:
    return UsagePolicy(
        max_reads=document.get("maxReads"),
        expires=document.get("expires"),
        allow_forward=bool(document.get("allowForward", False)),
        purpose=document.get("purpose", "inspection"),
    )


def clamp_policy(parent: UsagePolicy, remaining: int | None,
                 requested: UsagePolicy | None) -> UsagePolicy:
    """Derived policy is never weaker than the parent's remainder:
    max_reads <= remaining, expires <= parent's, forwarding only if both
    sides allow it. A missing request inherits the clamped parent policy."""
    if requested is None:
        requested = replace(parent, max_reads=remaining)
    if remaining is None:
        max_reads = requested.max_reads
    elif requested.max_reads is UNLIMITED:
        max_reads = remaining
    else:
        max_reads = min(requested.max_reads, remaining)
    if parent.expires is None:
        expires = requested.expires
    elif requested.expires is None:
        expires = parent.expires
    else:
        expires = min(requested.expires, parent.expires)
    return UsagePolicy(
        max_reads=max_reads,
        expires=expires,
        allow_forward=requested.allow_forward and parent.allow_forward,
        purpose=requested.purpose or parent.purpose,
    )


def _json_bytes(document: dict) -> bytes:
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")


_WIRE_ERRORS: dict[str, type] = {
    "InvalidPolicy": InvalidPolicy,
    "UnknownContract": UnknownContract,
    "WrongConsumer": WrongConsumer,
    "WrongState": WrongState,
    "PolicyExhausted": PolicyExhausted,
    "PolicyExpired": PolicyExpired,
    "ForwardProhibited": ForwardProhibited,
    "UnknownUID": UnknownUID,
}


class Connector:
    """One company's connector; provider and consumer roles in one object."""

    def __init__(
        self,
        name: str,
        owner: InstanceId,
        clock: LogicalClock,
        archive: Archive | None = None,
        audit_dir: str | Path | None = None,
        certified: Iterable[InstanceId] | None = None,
        taps: list[Callable[[bytes], None]] | None = None,
    ):
        if not is_id_token(name):
            raise ValueError(f"connector name not a valid token: {name!r}")
        self.name = name
        self.owner = owner
        self._clock = clock
        self._archive = archive
        self._contracts: dict[str, UsageContract] = {}  # provider side
        self._mirrors: dict[str, str] = {}  # contract_id -> provider owner key
        self._cache: dict[str, bytes] = {}
        self._audit: list[AuditEvent] = []
        self._peers: dict[str, "Connector"] = {}
        self._certified = set(certified) if certified is not None else None
        self._taps = taps if taps is not None else []
        self._counter = 0
        self._lock = threading.RLock()
        # one lock per consumed contract, held across the full consume round
        # trip so the audit trail reflects causal order, not thread scheduling
        self._consume_serial: dict[str, threading.Lock] = {}
        self._audit_path: Path | None = None
        if audit_dir is not None:
            directory = Path(audit_dir)
            directory.mkdir(parents=True, exist_ok=True)
            self._audit_path = directory / f"{AUDIT_FILE_PREFIX}{name}{AUDIT_FILE_SUFFIX}"

    # --- wiring -----------------------------------------------------------

    def link(self, other: "Connector") -> None:
        self._peers[str(other.owner)] = other
        other._peers[str(self.owner)] = self

    def _peer_for_owner(self, owner_key: str) -> "Connector":
        peer = self._peers.get(owner_key)
        if peer is None:
            raise WrongConsumer(f"no linked connector for {owner_key}")
        return peer

    def _send(self, peer: "Connector", opcode: int, body: bytes) -> tuple[int, bytes]:
        request = encode_frame(Channel.SOVEREIGN, bytes([opcode]) + body)
        for tap_fn in list(self._taps):
            tap_fn(request)
        response = peer.handle(request)
        for tap_fn in list(self._taps):
            tap_fn(response)
        payload = decode_frame(response).payload
        return payload[0], payload[1:]

    def _audit_event(self, action: str, contract_id: str, detail: str = "") -> None:
        with self._lock:
            event = AuditEvent(self._clock.now_text(), contract_id, action, detail)
            self._audit.append(event)
            self._write_audit_line(event)

    def _write_audit_line(self, event: AuditEvent) -> None:
        if self._audit_path is not None:
            line = _json_bytes(
                {
                    "at": event.at,
                    "contractId": event.contract_id,
                    "action": event.action,
                    "detail": event.detail,
                }
            ).decode("utf-8")
            with open(self._audit_path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def audit_events(self, contract_id: str | None = None) -> tuple[AuditEvent, ...]:
        with self._lock:
            events = tuple(self._audit)
        if contract_id is None:
            return events
        return tuple(e for e in events if e.contract_id == contract_id)

    # --- provider side ------------------------------------------------------

    def offer(
        self, consumer: InstanceId, object_uid: str, policy: UsagePolicy
    ) -> str:
        with self._lock:
            if self._archive is None or not self._archive.has(object_uid):
                raise UnknownUID(object_uid)
            return self._offer_locked(consumer, object_uid, policy, str(self.owner))

    def _offer_locked(
        self, consumer: InstanceId, object_uid: str, policy: UsagePolicy,
        origin: str,
    ) -> str:
        problems = policy_problems(policy, self._clock.now_text())
        if problems:
            raise InvalidPolicy("; ".join(problems))
        if self._certified is not None and consumer not in self._certified:
            raise WrongConsumer(f"consumer not certified: {consumer}")
        peer = self._peer_for_owner(str(consumer))
        self._counter += 1
        contract_id = f"ctr-{self.name}-{self._counter}"
        self._contracts[contract_id] = UsageContract(
            contract_id=contract_id,
            provider=self.owner,
            consumer=consumer,
            object_uid=object_uid,
            policy=policy,
            origin=origin,
        )
        self._audit_event(OFFER, contract_id, f"to {consumer} uid {object_uid}")
        body = _json_bytes(
            {
                "contractId": contract_id,
                "provider": str(self.owner),
                "consumer": str(consumer),
                "objectUid": object_uid,
                "policy": _policy_to_wire(policy),
            }
        )
        opcode, response = self._send(peer, OP_OFFER, body)
        if opcode == OP_ERROR:
            raise Nde4Error(json.loads(response)["detail"])
        return contract_id

    def revoke(self, contract_id: str) -> None:
        with self._lock:
            contract = self._contracts.get(contract_id)
            if contract is None:
                raise UnknownContract(contract_id)
            if contract.state in TERMINAL:
                raise WrongState(f"{contract_id} is {contract.state}")
            contract.state = REVOKED
            self._audit_event(REVOKE, contract_id)

    def contract(self, contract_id: str) -> UsageContract:
        with self._lock:
            contract = self._contracts.get(contract_id)
            if contract is None:
                raise UnknownContract(contract_id)
            return replace(contract)  # snapshot copy

    def contract_ids(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._contracts)

    # --- consumer side -------------------------------------------------------

    def offered_contracts(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._mirrors)

    def accept(self, contract_id: str) -> None:
        peer = self._provider_peer(contract_id)
        body = _json_bytes({"contractId": contract_id, "from": str(self.owner)})
        opcode, response = self._send(peer, OP_ACCEPT, body)
        if opcode == OP_ERROR:
            self._raise_wire_error(response)
        self._audit_event(ACCEPT, contract_id)

    def consume(self, contract_id: str) -> DataObject:
        peer = self._provider_peer(contract_id)
        with self._serial_for(contract_id):
            body = _json_bytes({"contractId": contract_id, "from": str(self.owner)})
            opcode, response = self._send(peer, OP_CONSUME, body)
            if opcode != OP_DATA:
                with self._lock:
                    self._audit_event(DENY, contract_id, _error_detail(response))
                self._raise_wire_error(response)
            (header_length,) = struct.unpack_from("<I", response, 0)
            header = json.loads(response[4 : 4 + header_length].decode("utf-8"))
            object_bytes = response[4 + header_length :]
            with self._lock:
                self._cache[contract_id] = object_bytes
                self._audit_event(READ, contract_id, f"{len(object_bytes)} bytes")
                obj = decode_object(object_bytes)
                if header.get("exhausted"):
                    del self._cache[contract_id]
                    self._audit_event(DELETE, contract_id, "cache erased on exhaustion")
        return obj

    def _serial_for(self, contract_id: str) -> threading.Lock:
        with self._lock:
            return self._consume_serial.setdefault(contract_id, threading.Lock())

    def forward(
        self,
        contract_id: str,
        third_party: InstanceId,
        requested: UsagePolicy | None = None,
    ) -> str:
        peer = self._provider_peer(contract_id)
        body = _json_bytes(
            {
                "contractId": contract_id,
                "from": str(self.owner),
                "requestedPolicy": (
                    _policy_to_wire(requested) if requested is not None else None
                ),
            }
        )
        opcode, response = self._send(peer, OP_FORWARD, body)
        if opcode in (OP_DENY, OP_ERROR):
            with self._lock:
                self._audit_event(DENY, contract_id, _error_detail(response))
            self._raise_wire_error(response)
        grant = json.loads(response.decode("utf-8"))
        granted_policy = _policy_from_wire(grant["policy"])
        with self._lock:
            return self._offer_locked(
                third_party, grant["objectUid"], granted_policy, grant["origin"]
            )

    def cached(self, contract_id: str) -> bool:
        with self._lock:
            return contract_id in self._cache

    def cache_size(self) -> int:
        with self._lock:
            return len(self._cache)

    def _provider_peer(self, contract_id: str) -> "Connector":
        with self._lock:
            owner_key = self._mirrors.get(contract_id)
        if owner_key is None:
            raise UnknownContract(contract_id)
        return self._peer_for_owner(owner_key)

    def _raise_wire_error(self, body: bytes) -> None:
        document = json.loads(body.decode("utf-8"))
        error_class = _WIRE_ERRORS.get(document.get("code", ""), Nde4Error)
        raise error_class(document.get("detail", ""))

    # --- wire dispatch --------------------------------------------------------

    def handle(self, frame_bytes: bytes) -> bytes:
        """Serve one SOVEREIGN request frame; returns the response frame."""
        frame = decode_frame(frame_bytes)
        if frame.channel != Channel.SOVEREIGN or not frame.payload:
            return self._error_frame("MalformedRequest", "not a sovereign request")
        opcode, body = frame.payload[0], frame.payload[1:]
        try:
            document = json.loads(body.decode("utf-8")) if body else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return self._error_frame("MalformedRequest", str(exc))
        try:
            if opcode == OP_OFFER:
                return self._handle_offer(document)
            if opcode == OP_ACCEPT:
                return self._handle_accept(document)
            if opcode == OP_CONSUME:
                return self._handle_consume(document)
            if opcode == OP_FORWARD:
                return self._handle_forward(document)
        except Nde4Error as exc:
            return self._error_frame(type(exc).__name__, str(exc))
        return self._error_frame("MalformedRequest", f"unknown opcode {opcode:#x}")

    def _response_frame(self, opcode: int, body: bytes) -> bytes:
        return encode_frame(Channel.SOVEREIGN, bytes([opcode]) + body)

    def _error_frame(self, code: str, detail: str, deny: bool = False) -> bytes:
        opcode = OP_DENY if deny else OP_ERROR
        return self._response_frame(opcode, _json_bytes({"code": code, "detail": detail}))

    def _handle_offer(self, document: dict) -> bytes:
        contract_id = document["contractId"]
        with self._lock:
            self._mirrors[contract_id] = document["provider"]
        return self._response_frame(OP_OFFER, _json_bytes({"contractId": contract_id}))

    def _handle_accept(self, document: dict) -> bytes:
        contract_id = document["contractId"]
        with self._lock:
            contract = self._contracts.get(contract_id)
            if contract is None:
                raise UnknownContract(contract_id)
            if document.get("from") != str(contract.consumer):
                raise WrongConsumer(
                    f"{document.get('from')} is not {contract.consumer}"
                )
            if contract.state != OFFERED:
                raise WrongState(f"{contract_id} is {contract.state}, not {OFFERED}")
            contract.state = ACCEPTED
            contract.state = ACTIVE  # handshake completes immediately at desk scale
            self._audit_event(ACCEPT, contract_id, f"by {contract.consumer}")
        return self._response_frame(
            OP_ACCEPT, _json_bytes({"contractId": contract_id, "state": ACTIVE})
        )

    def _handle_consume(self, document: dict) -> bytes:
        contract_id = document["contractId"]
        with self._lock:
            contract = self._contracts.get(contract_id)
            if contract is None:
                raise UnknownContract(contract_id)
            if document.get("from") != str(contract.consumer):
                raise WrongConsumer(
                    f"{document.get('from')} is not {contract.consumer}"
                )
            now = self._clock.now_text()
            if contract.state == EXHAUSTED:
                self._audit_event(DENY, contract_id, "exhausted")
                raise PolicyExhausted(contract_id)
            if contract.state == EXPIRED:
                self._audit_event(DENY, contract_id, "expired")
                raise PolicyExpired(contract_id)
            if contract.state == REVOKED:
                self._audit_event(DENY, contract_id, "revoked")
                raise WrongState(f"{contract_id} is {REVOKED}")
            if contract.state != ACTIVE:
                self._audit_event(DENY, contract_id, f"state {contract.state}")
                raise WrongState(f"{contract_id} is {contract.state}, not {ACTIVE}")
            if contract.policy.expires is not None and now > contract.policy.expires:
                contract.state = EXPIRED
                self._audit_event(EXPIRE, contract_id, f"at {now}")
                raise PolicyExpired(contract_id)
            object_bytes = self._origin_bytes(contract)
            contract.reads_done += 1
            exhausted = (
                contract.policy.max_reads is not UNLIMITED
                and contract.reads_done >= contract.policy.max_reads
            )
            if exhausted:
                contract.state = EXHAUSTED
            self._audit_event(
                READ, contract_id,
                f"read {contract.reads_done}"
                + (f" of {contract.policy.max_reads}" if contract.policy.max_reads else ""),
            )
        header = _json_bytes({"contractId": contract_id, "exhausted": exhausted})
        return self._response_frame(
            OP_DATA, struct.pack("<I", len(header)) + header + object_bytes
        )

    def _handle_forward(self, document: dict) -> bytes:
        contract_id = document["contractId"]
        with self._lock:
            contract = self._contracts.get(contract_id)
            if contract is None:
                raise UnknownContract(contract_id)
            if document.get("from") != str(contract.consumer):
                raise WrongConsumer(
                    f"{document.get('from')} is not {contract.consumer}"
                )
            if contract.state != ACTIVE:
                raise WrongState(f"{contract_id} is {contract.state}, not {ACTIVE}")
            if not contract.policy.allow_forward:
                self._audit_event(DENY, contract_id, "forwarding prohibited")
                return self._error_frame(
                    "ForwardProhibited", contract_id, deny=True
                )
            requested_document = document.get("requestedPolicy")
            requested = (
                _policy_from_wire(requested_document)
                if requested_document is not None
                else None
            )
            granted = clamp_policy(contract.policy, contract.remaining_reads, requested)
        return self._response_frame(
            OP_FORWARD,
            _json_bytes(
                {
                    "contractId": contract_id,
                    "objectUid": contract.object_uid,
                    "origin": contract.origin,
                    "policy": _policy_to_wire(granted),
                }
            ),
        )

    # --- data plane -------------------------------------------------------------

    def _origin_bytes(self, contract: UsageContract) -> bytes:
        """Bytes for a contract's object: own archive, or the origin connector
        for contracts derived through forwarding."""
        if contract.origin == str(self.owner):
            if self._archive is None:
                raise UnknownUID(contract.object_uid)
            return self._archive.fetch_bytes(contract.object_uid)
        origin_peer = self._peer_for_owner(contract.origin)
        return origin_peer._serve_origin(contract.object_uid)

    def _serve_origin(self, object_uid: str) -> bytes:
        with self._lock:
            if self._archive is None or not self._archive.has(object_uid):
                raise UnknownUID(object_uid)
            return self._archive.fetch_bytes(object_uid)


def _error_detail(body: bytes) -> str:
    try:
        document = json.loads(body.decode("utf-8"))
        return f"{document.get('code', '')}: {document.get('detail', '')}"
    except (UnicodeDecodeError, json.JSONDecodeError):
        return "unreadable error body"
