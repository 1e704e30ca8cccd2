"""ORDERS-channel message types and their textual payload codec.

Payloads are compact JSON documents with sorted keys (deterministic bytes)
and a "kind" discriminator: order, status, report, ack, error. Every
document field name here is normative; see docs/FORMATS.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from .errors import Nde4Error
from .identity import InstanceId, TypeId, parse_id
from .semantics import is_id_token
from .timebase import is_valid_datetime


class MalformedMessage(Nde4Error):
    """Payload bytes do not form a well-shaped message document."""


class OrderState(Enum):
    QUEUED = "QUEUED"
    ASSIGNED = "ASSIGNED"
    IN_PROGRESS = "IN_PROGRESS"
    DATA_ARCHIVED = "DATA_ARCHIVED"
    REPORTED = "REPORTED"
    REJECTED = "REJECTED"


_STATE_RANK = {
    OrderState.QUEUED: 0,
    OrderState.ASSIGNED: 1,
    OrderState.IN_PROGRESS: 2,
    OrderState.DATA_ARCHIVED: 3,
    OrderState.REPORTED: 4,
}

TERMINAL_STATES = frozenset({OrderState.REPORTED, OrderState.REJECTED})


def is_legal_transition(current: OrderState, new: OrderState) -> bool:
    """States advance monotonically; REJECTED from any non-terminal state."""
    if current in TERMINAL_STATES:
        return False
    if new == OrderState.REJECTED:
        return True
    return _STATE_RANK[new] > _STATE_RANK[current]


class Verdict(Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"
    REWORK = "REWORK"


@dataclass(frozen=True, slots=True)
class InspectionOrder:
    order_id: str
    component_serial: str
    component_type: TypeId
    procedure_id: str
    due: str
    priority: int = 0
    station: InstanceId | None = None


@dataclass(frozen=True, slots=True)
class StatusEvent:
    order_id: str
    state: OrderState
    at: str


@dataclass(frozen=True, slots=True)
class ReportedValues:
    order_id: str
    verdict: Verdict
    indication_count: int
    max_amplitude: float | None = None
    archived_refs: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True, slots=True)
class Ack:
    of: str
    order_id: str


@dataclass(frozen=True, slots=True)
class ErrorMessage:
    code: str
    detail: str


Message = Union[InspectionOrder, StatusEvent, ReportedValues, Ack, ErrorMessage]


def validate_order(order: InspectionOrder) -> tuple[str, ...]:
    problems = []
    if not is_id_token(order.order_id):
        problems.append(f"order_id not a valid id token: {order.order_id!r}")
    if not is_id_token(order.component_serial):
        problems.append(
            f"component_serial not a valid token: {order.component_serial!r}"
        )
    if not isinstance(order.component_type, TypeId):
        problems.append("component_type must be a TypeId")
    if not is_id_token(order.procedure_id):
        problems.append(f"procedure_id not a valid token: {order.procedure_id!r}")
    if not is_valid_datetime(order.due):
        problems.append(f"due not a valid datetime: {order.due!r}")
    if not isinstance(order.priority, int) or order.priority < 0:
        problems.append(f"priority must be a non-negative integer: {order.priority!r}")
    if order.station is not None and not isinstance(order.station, InstanceId):
        problems.append("station must be an InstanceId or None")
    return tuple(problems)


def validate_report(rv: ReportedValues) -> tuple[str, ...]:
    problems = []
    if not is_id_token(rv.order_id):
        problems.append(f"order_id not a valid id token: {rv.order_id!r}")
    if not isinstance(rv.verdict, Verdict):
        problems.append(f"verdict must be a Verdict: {rv.verdict!r}")
    if not isinstance(rv.indication_count, int) or rv.indication_count < 0:
        problems.append(f"indication_count must be >= 0: {rv.indication_count!r}")
    elif rv.verdict == Verdict.REJECT and rv.indication_count < 1:
        problems.append("REJECT verdict requires at least one indication")
    for ref in rv.archived_refs:
        if not is_id_token(ref):
            problems.append(f"archived ref not a valid object UID: {ref!r}")
    if rv.max_amplitude is not None and not isinstance(rv.max_amplitude, (int, float)):
        problems.append(f"max_amplitude must be numeric: {rv.max_amplitude!r}")
    return tuple(problems)


def _dump(document: dict) -> bytes:
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_message(message: Message) -> bytes:
    if isinstance(message, InspectionOrder):
        document = {
            "kind": "order",
            "orderId": message.order_id,
            "componentSerial": message.component_serial,
            "componentType": str(message.component_type),
            "procedureId": message.procedure_id,
            "due": message.due,
            "priority": message.priority,
            "station": str(message.station) if message.station else None,
        }
    elif isinstance(message, StatusEvent):
        document = {
            "kind": "status",
            "orderId": message.order_id,
            "state": message.state.value,
            "at": message.at,
        }
    elif isinstance(message, ReportedValues):
        document = {
            "kind": "report",
            "orderId": message.order_id,
            "verdict": message.verdict.value,
            "indicationCount": message.indication_count,
            "maxAmplitude": message.max_amplitude,
            "archivedRefs": list(message.archived_refs),
        }
        for key, value in message.extras.items():
            document.setdefault(key, value)
    elif isinstance(message, Ack):
        document = {"kind": "ack", "of": message.of, "orderId": message.order_id}
    elif isinstance(message, ErrorMessage):
        document = {"kind": "error", "code": message.code, "detail": message.detail}
    else:
        raise TypeError(f"not a message: {type(message).__name__}")
    return _dump(document)


_CORE_REPORT_KEYS = {
    "kind", "orderId", "verdict", "indicationCount", "maxAmplitude", "archivedRefs",
}


def decode_message(payload: bytes) -> Message:
    try:
        document = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedMessage(f"not a JSON document: {exc}") from exc
    if not isinstance(document, dict):
        raise MalformedMessage("message document must be an object")
    kind = document.get("kind")
    try:
        if kind == "order":
            station_text = document.get("station")
            component_type = parse_id(document["componentType"])
            if not isinstance(component_type, TypeId):
                raise MalformedMessage("componentType must be a type ID")
            station = None
            if station_text:
                station = parse_id(station_text)
                if not isinstance(station, InstanceId):
                    raise MalformedMessage("station must be an instance ID")
            return InspectionOrder(
                order_id=document["orderId"],
                component_serial=document["componentSerial"],
                component_type=component_type,
                procedure_id=document["procedureId"],
                due=document["due"],
                priority=document.get("priority", 0),
                station=station,
            )
        if kind == "status":
            return StatusEvent(
                order_id=document["orderId"],
                state=OrderState(document["state"]),
                at=document["at"],
            )
        if kind == "report":
            extras = {
                key: value
                for key, value in document.items()
                if key not in _CORE_REPORT_KEYS
            }
            return ReportedValues(
                order_id=document["orderId"],
                verdict=Verdict(document["verdict"]),
                indication_count=document["indicationCount"],
                max_amplitude=document["maxAmplitude"],
                archived_refs=tuple(document["archivedRefs"]),
                extras=extras,
            )
        if kind == "ack":
            return Ack(of=document["of"], order_id=document["orderId"])
        if kind == "error":
            return ErrorMessage(code=document["code"], detail=document["detail"])
    except MalformedMessage:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedMessage(f"bad {kind!r} message: {exc}") from exc
    raise MalformedMessage(f"unknown message kind: {kind!r}")
