"""Gateway between the orders bus and the archive.

Three jobs: translate an inspection order into the archive-side metadata
seed every device merges into its stored objects, translate evaluation
results back into bus-side KPI reports, and decide which channel a payload
belongs on. Translation is table-driven and lossless on mapped fields;
whatever the table does not map travels in one private-group blob tag so
nothing is silently dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .archive import Archive, Element
from .bus import DanglingArchiveRef, Procedure
from .errors import Nde4Error
from .framing import ORDERS_PAYLOAD_LIMIT
from .messages import InspectionOrder, ReportedValues, Verdict
from .semantics import (
    TAG_COMPONENT_SERIAL,
    TAG_COMPONENT_TYPE,
    TAG_ORDER_ID,
    TAG_PROCEDURE_ID,
    TagCode,
)

# textual blob carrying whatever the mapping table does not cover
UNMAPPED_BLOB_TAG = TagCode(0x0009, 0x0001)

MUST_MAP_FIELDS = ("order_id", "component_serial", "procedure_id", "component_type")

MAPPING_FILE_PREFIX = "mapping-v"


class UnmappedField(Nde4Error):
    """A must-map order field has no mapping table entry."""


class WorkKind(Enum):
    WORKFLOW = "workflow"
    BULK = "bulk"


class Route(Enum):
    ORDERS = "ORDERS"
    ARCHIVE = "ARCHIVE"
    ARCHIVE_WITH_REFERENCE = "ARCHIVE_WITH_REFERENCE"


def route(payload_size: int, kind: WorkKind) -> Route:
    """Bulk always goes to the archive regardless of size; a workflow
    message too large for the orders channel is archived, with a small
    reference message taking its place on ORDERS."""
    if kind == WorkKind.BULK:
        return Route.ARCHIVE
    if payload_size <= ORDERS_PAYLOAD_LIMIT:
        return Route.ORDERS
    return Route.ARCHIVE_WITH_REFERENCE


@dataclass(frozen=True)
class MappingTable:
    """Bijective field-name <-> tag-code pairs."""

    version: int
    pairs: tuple[tuple[str, TagCode], ...]

    def __post_init__(self) -> None:
        fields = [f for f, _ in self.pairs]
        codes = [c for _, c in self.pairs]
        if len(set(fields)) != len(fields) or len(set(codes)) != len(codes):
            raise ValueError("mapping table must be bijective")

    def code_for(self, field_name: str) -> TagCode | None:
        for name, code in self.pairs:
            if name == field_name:
                return code
        return None

    def field_for(self, code: TagCode) -> str | None:
        for name, mapped in self.pairs:
            if mapped == code:
                return name
        return None


MAPPING_V1 = MappingTable(
    version=1,
    pairs=(
        ("order_id", TAG_ORDER_ID),
        ("component_serial", TAG_COMPONENT_SERIAL),
        ("procedure_id", TAG_PROCEDURE_ID),
        ("component_type", TAG_COMPONENT_TYPE),
    ),
)


def _order_fields(order: InspectionOrder) -> dict[str, str]:
    """Order fields by mapping name, all as text."""
    return {
        "order_id": order.order_id,
        "component_serial": order.component_serial,
        "procedure_id": order.procedure_id,
        "component_type": str(order.component_type),
        "due": order.due,
        "priority": str(order.priority),
        "station": str(order.station) if order.station else "",
    }


def order_to_archive_work(
    order: InspectionOrder, mapping: MappingTable = MAPPING_V1
) -> tuple[Element, ...]:
    """Metadata seed: mapped tags verbatim, leftovers in the blob tag,
    canonical element ordering."""
    fields = _order_fields(order)
    elements: dict[TagCode, bytes] = {}
    for field_name in MUST_MAP_FIELDS:
        if mapping.code_for(field_name) is None:
            raise UnmappedField(field_name)
    leftovers: dict[str, str] = {}
    for field_name, text in fields.items():
        code = mapping.code_for(field_name)
        if code is None:
            leftovers[field_name] = text
        else:
            elements[code] = text.encode("utf-8")
    if leftovers:
        elements[UNMAPPED_BLOB_TAG] = json.dumps(
            leftovers, sort_keys=True, separators=(",", ":")
        ).encode("utf-8")
    return tuple(Element(code, elements[code]) for code in sorted(elements))


def extract_order_fields(
    elements: tuple[Element, ...] | list[Element],
    mapping: MappingTable = MAPPING_V1,
) -> dict[str, str]:
    """Inverse of order_to_archive_work over mapped fields and the blob."""
    fields: dict[str, str] = {}
    for element in elements:
        field_name = mapping.field_for(element.code)
        if field_name is not None:
            fields[field_name] = element.value.decode("utf-8")
        elif element.code == UNMAPPED_BLOB_TAG:
            fields.update(json.loads(element.value.decode("utf-8")))
    return fields


@dataclass(frozen=True, slots=True)
class Indication:
    """One evaluated defect indication on an amplitude grid."""

    row: int
    col: int
    amplitude: float  # percent-FSH


def verdict_for(
    indications: tuple[Indication, ...] | list[Indication], reject_threshold: float
) -> Verdict:
    if not indications:
        return Verdict.ACCEPT
    if max(i.amplitude for i in indications) >= reject_threshold:
        return Verdict.REJECT
    return Verdict.REWORK


def archive_result_to_kpis(
    archive: Archive,
    order_id: str,
    indications: tuple[Indication, ...] | list[Indication],
    uids: tuple[str, ...] | list[str],
    procedure: Procedure,
) -> ReportedValues:
    """Translate evaluation output to the bus-side KPI report.

    Every referenced object must be fetchable AND carry this order_id, so a
    report can never point at another order's data.
    """
    for uid in uids:
        if not archive.has(uid):
            raise DanglingArchiveRef(uid)
        stored = archive.fetch(uid)
        if stored.order_id != order_id:
            raise DanglingArchiveRef(
                f"{uid} belongs to order {stored.order_id!r}, not {order_id!r}"
            )
    indications = tuple(indications)
    max_amplitude = (
        max(i.amplitude for i in indications) if indications else None
    )
    return ReportedValues(
        order_id=order_id,
        verdict=verdict_for(indications, procedure.reject_threshold),
        indication_count=len(indications),
        max_amplitude=max_amplitude,
        archived_refs=tuple(uids),
    )


# --- mapping table file ------------------------------------------------------

def dump_mapping_tsv(mapping: MappingTable) -> str:
    lines = []
    for field_name, code in mapping.pairs:
        lines.append(f"{field_name}\t{code.group:04X}\t{code.element:04X}")
    return "\n".join(lines) + "\n"


def load_mapping_tsv(text: str, version: int) -> MappingTable:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"mapping line {lineno}: expected 3 columns")
        field_name, group_text, element_text = parts
        pairs.append(
            (field_name, TagCode(int(group_text, 16), int(element_text, 16)))
        )
    return MappingTable(version, tuple(pairs))
