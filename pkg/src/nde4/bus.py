"""Orders bus: order submission, worklists, status pub-sub, KPI reporting.

One logical broker. Every message that enters the broker is encoded onto a
real ORDERS-channel frame first, so the 16 MiB payload cap and any
registered wire taps apply to in-process traffic exactly as they would on
a socket. Publications are totally ordered by a broker-wide sequence
number; per order the status history is monotone.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .archive import Archive
from .errors import Nde4Error, ValidationFailed
from .framing import Channel, encode_frame
from .identity import InstanceId
from .messages import (
    InspectionOrder,
    OrderState,
    ReportedValues,
    StatusEvent,
    encode_message,
    is_legal_transition,
    validate_order,
    validate_report,
)
from .registry import Registry, UnknownShell
from .semantics import METHOD_CODES
from .timebase import LogicalClock

WILDCARD_TOPIC = "*"
SERVICE_PREFIX = "inspect-"


class DuplicateOrder(Nde4Error):
    """order_id was already submitted."""


class UnknownOrder(Nde4Error):
    """No order with this order_id."""


class UnknownStation(Nde4Error):
    """Station instance is not registered."""


class IllegalTransition(Nde4Error):
    """Status update violates the monotonic state rule."""


class WrongState(Nde4Error):
    """Operation requires a different order state."""


class DanglingArchiveRef(Nde4Error):
    """A reported object UID is not fetchable from the archive."""


@dataclass(frozen=True, slots=True)
class Procedure:
    """Inspection procedure: method, grid shape, and what a report owes it."""

    procedure_id: str
    method: str
    rows: int = 8
    cols: int = 8
    reject_threshold: float = 50.0
    min_refs: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHOD_CODES:
            raise ValueError(f"unknown method code: {self.method!r}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must hold at least one cell")
        if not 0 < self.reject_threshold <= 100:
            raise ValueError(
                f"reject threshold must be in (0, 100]: {self.reject_threshold}"
            )
        if self.min_refs < 0:
            raise ValueError("min_refs must be >= 0")


def station_methods(registry: Registry, station: InstanceId) -> frozenset[str]:
    """Method codes a station advertises via its shell's service names
    ("inspect-ut" advertises UT)."""
    manifest = registry.resolve(station)
    methods = set()
    for desc in manifest.body.service_descs:
        if desc.service_name.startswith(SERVICE_PREFIX):
            candidate = desc.service_name[len(SERVICE_PREFIX) :].upper()
            if candidate in METHOD_CODES:
                methods.add(candidate)
    return frozenset(methods)


@dataclass
class _OrderRecord:
    order: InspectionOrder
    state: OrderState
    assigned: InstanceId | None = None
    history: list[StatusEvent] = field(default_factory=list)
    kpis: ReportedValues | None = None


class Subscription:
    """Event sink with exactly-once delivery; thread-safe take/drain."""

    def __init__(self, topic: str):
        self.topic = topic
        self._events: deque[tuple[int, StatusEvent]] = deque()
        self._lock = threading.Lock()
        self.active = True

    def _offer(self, seq: int, event: StatusEvent) -> None:
        with self._lock:
            if self.active:
                self._events.append((seq, event))

    def take(self) -> tuple[int, StatusEvent] | None:
        with self._lock:
            return self._events.popleft() if self._events else None

    def drain(self) -> list[tuple[int, StatusEvent]]:
        with self._lock:
            out = list(self._events)
            self._events.clear()
            return out


class OrdersBus:
    def __init__(
        self,
        registry: Registry,
        archive: Archive,
        procedures: Iterable[Procedure] = (),
        clock: LogicalClock | None = None,
    ):
        self._registry = registry
        self._archive = archive
        self._procedures = {p.procedure_id: p for p in procedures}
        self._clock = clock if clock is not None else LogicalClock()
        self._orders: dict[str, _OrderRecord] = {}
        self._subscriptions: list[Subscription] = []
        self._taps: list[Callable[[bytes], None]] = []
        self._seq = 0
        self._lock = threading.Lock()

    # --- plumbing -------------------------------------------------------

    def add_procedure(self, procedure: Procedure) -> None:
        with self._lock:
            self._procedures[procedure.procedure_id] = procedure

    def procedure(self, procedure_id: str) -> Procedure | None:
        with self._lock:
            return self._procedures.get(procedure_id)

    def tap(self, callback: Callable[[bytes], None]) -> None:
        """Observe every frame the broker carries, as raw bytes."""
        with self._lock:
            self._taps.append(callback)

    def _carry(self, message) -> None:
        """Push a message through real framing so cap and taps apply."""
        frame_bytes = encode_frame(Channel.ORDERS, encode_message(message))
        for tap_fn in list(self._taps):
            tap_fn(frame_bytes)

    # --- operations -----------------------------------------------------

    def submit_order(self, order: InspectionOrder) -> str:
        problems = list(validate_order(order))
        procedure = self._procedures.get(order.procedure_id)
        if procedure is None:
            problems.append(f"unknown procedure: {order.procedure_id!r}")
        if problems:
            raise ValidationFailed("; ".join(problems))
        if order.station is not None:
            try:
                self._registry.resolve(order.station)
            except UnknownShell:
                raise UnknownStation(str(order.station)) from None
        self._carry(order)
        with self._lock:
            if order.order_id in self._orders:
                raise DuplicateOrder(order.order_id)
            self._orders[order.order_id] = _OrderRecord(
                order, OrderState.QUEUED, assigned=order.station
            )
        self.publish_status(
            StatusEvent(order.order_id, OrderState.QUEUED, self._clock.now_text()),
            initial=True,
        )
        return order.order_id

    def order(self, order_id: str) -> InspectionOrder:
        with self._lock:
            record = self._orders.get(order_id)
        if record is None:
            raise UnknownOrder(order_id)
        return record.order

    def order_state(self, order_id: str) -> OrderState:
        with self._lock:
            record = self._orders.get(order_id)
        if record is None:
            raise UnknownOrder(order_id)
        return record.state

    def order_ids(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(self._orders)

    def history(self, order_id: str) -> tuple[StatusEvent, ...]:
        with self._lock:
            record = self._orders.get(order_id)
            if record is None:
                raise UnknownOrder(order_id)
            return tuple(record.history)

    def kpis(self, order_id: str) -> ReportedValues | None:
        with self._lock:
            record = self._orders.get(order_id)
            if record is None:
                raise UnknownOrder(order_id)
            return record.kpis

    def poll_worklist(self, station: InstanceId) -> tuple[InspectionOrder, ...]:
        try:
            self._registry.resolve(station)
        except UnknownShell:
            raise UnknownStation(str(station)) from None
        capabilities = station_methods(self._registry, station)
        with self._lock:
            candidates = []
            for record in self._orders.values():
                if record.state in (OrderState.REPORTED, OrderState.REJECTED):
                    continue
                if record.assigned is not None:
                    if record.assigned == station:
                        candidates.append(record.order)
                    continue
                procedure = self._procedures[record.order.procedure_id]
                if procedure.method in capabilities:
                    candidates.append(record.order)
        candidates.sort(key=lambda o: (-o.priority, o.due, o.order_id))
        return tuple(candidates)

    def assign(self, order_id: str, station: InstanceId) -> None:
        """Claim an order for one station and publish the ASSIGNED event."""
        try:
            self._registry.resolve(station)
        except UnknownShell:
            raise UnknownStation(str(station)) from None
        with self._lock:
            record = self._orders.get(order_id)
            if record is None:
                raise UnknownOrder(order_id)
            if record.state != OrderState.QUEUED:
                raise WrongState(
                    f"{order_id} is {record.state.value}, not QUEUED"
                )
            if record.assigned is not None and record.assigned != station:
                raise WrongState(f"{order_id} already assigned to {record.assigned}")
            record.assigned = station
        self.publish_status(
            StatusEvent(order_id, OrderState.ASSIGNED, self._clock.now_text())
        )

    def publish_status(self, event: StatusEvent, initial: bool = False) -> None:
        self._carry(event)
        with self._lock:
            record = self._orders.get(event.order_id)
            if record is None:
                raise UnknownOrder(event.order_id)
            if initial:
                if record.history:
                    raise IllegalTransition("initial event already published")
            elif not is_legal_transition(record.state, event.state):
                raise IllegalTransition(
                    f"{record.state.value} -> {event.state.value}"
                )
            record.state = event.state
            record.history.append(event)
            self._seq += 1
            seq = self._seq
            receivers = [
                sub
                for sub in self._subscriptions
                if sub.active
                and sub.topic in (WILDCARD_TOPIC, event.order_id)
            ]
        for sub in receivers:
            sub._offer(seq, event)

    def subscribe(self, topic: str = WILDCARD_TOPIC) -> Subscription:
        sub = Subscription(topic)
        with self._lock:
            self._subscriptions.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            sub.active = False
            if sub in self._subscriptions:
                self._subscriptions.remove(sub)

    def report_values(self, rv: ReportedValues) -> str:
        problems = list(validate_report(rv))
        with self._lock:
            record = self._orders.get(rv.order_id)
        if record is None:
            raise UnknownOrder(rv.order_id)
        procedure = self._procedures[record.order.procedure_id]
        if len(rv.archived_refs) < procedure.min_refs:
            problems.append(
                f"procedure {procedure.procedure_id} requires at least "
                f"{procedure.min_refs} archived refs, got {len(rv.archived_refs)}"
            )
        if problems:
            raise ValidationFailed("; ".join(problems))
        if record.state != OrderState.DATA_ARCHIVED:
            raise WrongState(
                f"{rv.order_id} is {record.state.value}, not DATA_ARCHIVED"
            )
        for ref in rv.archived_refs:
            if not self._archive.has(ref):
                raise DanglingArchiveRef(ref)
        self._carry(rv)
        self.publish_status(
            StatusEvent(rv.order_id, OrderState.REPORTED, self._clock.now_text())
        )
        with self._lock:
            record.kpis = rv
        return rv.order_id
