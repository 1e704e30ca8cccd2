"""Desk-scale interoperability testbed for inspection workflows.

Digital-twin registry, small-message orders bus, tagged-binary archive with
a digest chain, translating gateway, usage-controlled data exchange, a
reference-cube coverage checker, and a deterministic plant simulator.
"""

from __future__ import annotations

from .errors import Nde4Error, ValidationFailed
from .timebase import LogicalClock, format_tick, parse_datetime
from .identity import InstanceId, TypeId, mint_instance_id, mint_type_id, parse_id
from .semantics import DICT_V1, Dictionary, TagCode, TagDefinition, ValueRep
from .registry import (
    Manifest,
    ManifestBody,
    ManifestHeader,
    Registry,
    dump_manifest,
    load_manifest,
    validate_manifest,
)
from .framing import Channel, Frame, ORDERS_PAYLOAD_LIMIT, decode_frame, encode_frame
from .messages import (
    InspectionOrder,
    OrderState,
    ReportedValues,
    StatusEvent,
    Verdict,
    decode_message,
    encode_message,
)
from .archive import Archive, DataObject, Element, decode_object, encode_object
from .bus import OrdersBus, Procedure
from .gateway import MAPPING_V1, Indication, Route, WorkKind, route, verdict_for
from .sovereignty import Connector, UsagePolicy
from .rami import (
    Hierarchy,
    Layer,
    Lifecycle,
    RamiCoordinate,
    coverage_check,
    locate,
)
from .plantsim import ScenarioConfig, SimResult, load_scenario, run_scenario
from .transport import FrameClient, FrameServer

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "Channel",
    "Connector",
    "DataObject",
    "DICT_V1",
    "Dictionary",
    "Element",
    "Frame",
    "FrameClient",
    "FrameServer",
    "Hierarchy",
    "Indication",
    "InspectionOrder",
    "InstanceId",
    "Layer",
    "Lifecycle",
    "LogicalClock",
    "Manifest",
    "ManifestBody",
    "ManifestHeader",
    "MAPPING_V1",
    "Nde4Error",
    "OrdersBus",
    "OrderState",
    "ORDERS_PAYLOAD_LIMIT",
    "Procedure",
    "RamiCoordinate",
    "Registry",
    "ReportedValues",
    "Route",
    "ScenarioConfig",
    "SimResult",
    "StatusEvent",
    "TagCode",
    "TagDefinition",
    "TypeId",
    "UsagePolicy",
    "ValidationFailed",
    "ValueRep",
    "Verdict",
    "WorkKind",
    "coverage_check",
    "decode_frame",
    "decode_message",
    "decode_object",
    "dump_manifest",
    "encode_frame",
    "encode_message",
    "encode_object",
    "format_tick",
    "load_manifest",
    "load_scenario",
    "locate",
    "mint_instance_id",
    "mint_type_id",
    "parse_datetime",
    "parse_id",
    "route",
    "run_scenario",
    "validate_manifest",
    "verdict_for",
]
