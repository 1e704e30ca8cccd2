"""Deterministic plant simulator: supply chain, inspection flow, faults.

One run wires the full stack: twin registry, orders bus, gateway, archive,
and (when enabled) sovereignty connectors. A single-threaded event loop
processes events in (tick, actor, insertion) order on a logical clock, and
every random draw comes from a stream derived from the scenario seed, so a
given (config, seed) yields byte-identical traces.

The synthetic acquisition model is deliberately simple: uniform background
noise, rectangular defect spots with a peak amplitude, a fixed detection
floor. The constants are config-overridable and documented as synthetic.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

from .archive import Archive, DataObject, Element
from .bus import OrdersBus, Procedure, UnknownStation, WrongState as BusWrongState
from .errors import Nde4Error
from .framing import Channel, OversizedPayload, decode_frame
from .gateway import (
    Indication,
    archive_result_to_kpis,
    order_to_archive_work,
    route,
    WorkKind,
)
from .identity import InstanceId, TypeId, is_name_token, is_serial_token, parse_id
from .messages import (
    InspectionOrder,
    OrderState,
    ReportedValues,
    StatusEvent,
    encode_message,
)
from .registry import (
    DataRef,
    DuplicateInstance,
    Manifest,
    ManifestBody,
    ManifestHeader,
    Registry,
    ServiceDesc,
)
from .rami import (
    ComponentLocus,
    LociRegistry,
    RamiCoordinate,
    cells as rami_cells,
    coverage_check,
    gaps_text,
    Hierarchy,
    Layer,
    Lifecycle,
)
from .semantics import (
    TAG_AMPLITUDE_GRID,
    TAG_BULK_PAYLOAD,
    TAG_CALIBRATION_DUE,
    TAG_COMPONENT_SERIAL,
    TAG_COMPONENT_TYPE,
    TAG_CREATED_AT,
    TAG_DEVICE_ID,
    TAG_GRID_COLS,
    TAG_GRID_ROWS,
    TAG_METHOD_CODE,
    TAG_OBJECT_UID,
    TAG_ORDER_ID,
    TAG_PROCEDURE_ID,
    TagCode,
    encode_value,
    DICT_V1,
    interpret,
)
from .sovereignty import (
    DENY,
    Connector,
    ForwardProhibited,
    PolicyExhausted,
    PolicyExpired,
    UsagePolicy,
)
from .timebase import LogicalClock, format_tick

ROLES = ("MATERIAL_SUPPLIER", "COMPONENT_SUPPLIER", "OEM", "OPERATOR")

FAULT_TAMPER = "TAMPER_ARCHIVE_BYTE"
FAULT_OVERSIZE = "OVERSIZE_WORKFLOW_MSG"
FAULT_OVERREAD = "POLICY_OVERREAD"
FAULT_DROP_GATEWAY = "DROP_GATEWAY"
FAULT_KINDS = (FAULT_TAMPER, FAULT_OVERSIZE, FAULT_OVERREAD, FAULT_DROP_GATEWAY)

SCENARIO_SUFFIX = ".scen"
TRACE_SUFFIX = ".trace"

REPORT_KEYS = (
    "orders_total",
    "reported",
    "rejected",
    "chain_status",
    "rami_gaps",
    "audit_denies",
)

DEFAULT_OVERSIZE_BYTES = 17 * 2**20


class ConfigInvalid(Nde4Error):
    """Scenario config fails validation; message lists every problem."""


class ScenarioDeadlock(Nde4Error):
    """No event can progress; carries the partial trace and report."""

    def __init__(self, blocking: dict[str, str], report: dict, trace_lines: tuple[str, ...]):
        names = ", ".join(f"{k}={v}" for k, v in sorted(blocking.items()))
        super().__init__(f"scenario deadlocked: {names}")
        self.blocking = blocking
        self.report = report
        self.trace_lines = trace_lines


class FaultNotApplicable(Nde4Error):
    """The fault cannot apply to this config."""


class GridShapeMismatch(Nde4Error):
    """Amplitude grid byte length disagrees with rows x cols."""


@dataclass(frozen=True, slots=True)
class NoiseModel:
    """Synthetic acquisition constants; not calibrated to any physics."""

    noise_max: float = 10.0  # background amplitudes uniform in [0, noise_max)
    detection_floor: float = 20.0
    peak_lo: float = 30.0  # defect peak uniform in [peak_lo, peak_hi)
    peak_hi: float = 95.0
    max_defects: int = 2
    max_defect_extent: int = 3


DEFAULT_NOISE = NoiseModel()


@dataclass(frozen=True, slots=True)
class StationConfig:
    station_id: str
    type_name: str
    methods: tuple[str, ...]
    person: bool = False
    display_name: str = ""
    children: tuple[tuple[str, str], ...] = ()  # (child id, child type name)


@dataclass(frozen=True, slots=True)
class CompanyConfig:
    name: str
    role: str
    stations: tuple[StationConfig, ...] = ()
    procedures: tuple[Procedure, ...] = ()


@dataclass(frozen=True, slots=True)
class OrderPlan:
    order_id: str
    company: str
    component_type: str  # type URN
    component_serial: str
    procedure_id: str
    priority: int = 0
    due_ticks: int = 86_400
    station_id: str | None = None


@dataclass(frozen=True, slots=True)
class ForwardPlan:
    to: str  # company name
    attempts: int = 1
    policy: UsagePolicy | None = None


@dataclass(frozen=True, slots=True)
class ExchangePlan:
    provider: str
    consumer: str
    order_id: str
    policy: UsagePolicy
    attempts: int = 1
    forwards: tuple[ForwardPlan, ...] = ()


@dataclass(frozen=True, slots=True)
class FaultSpec:
    kind: str
    order_id: str | None = None
    size: int = DEFAULT_OVERSIZE_BYTES


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    companies: tuple[CompanyConfig, ...]
    orders: tuple[OrderPlan, ...]
    exchanges: tuple[ExchangePlan, ...] = ()
    sovereignty: bool = False
    faults: tuple[FaultSpec, ...] = ()
    required_cells: frozenset[RamiCoordinate] = frozenset()
    allowlist: tuple[str, ...] = ()
    active_components: tuple[str, ...] = ()
    noise: NoiseModel = DEFAULT_NOISE

    def company(self, name: str) -> CompanyConfig | None:
        for company in self.companies:
            if company.name == name:
                return company
        return None


# --- config loading -----------------------------------------------------------

def _policy_from_config(document: dict) -> UsagePolicy:
    return UsagePolicy(
        max_reads=document.get("maxReads"),
        expires=document.get("expires"),
        allow_forward=bool(document.get("allowForward", False)),
        purpose=document.get("purpose", "inspection"),
    )


def _required_cells_from_config(entries) -> frozenset[RamiCoordinate]:
    collected: set[RamiCoordinate] = set()
    for entry in entries:
        if isinstance(entry, str):
            collected.add(RamiCoordinate.from_text(entry))
        elif isinstance(entry, dict):
            collected |= rami_cells(
                [Layer(v) for v in entry["layers"]],
                [Lifecycle(v) for v in entry["lifecycles"]],
                [Hierarchy(v) for v in entry["hierarchies"]],
            )
        else:
            raise ValueError(f"bad required-cell entry: {entry!r}")
    return frozenset(collected)


def load_scenario(text: str, seed_override: int | None = None) -> ScenarioConfig:
    """Parse and validate a scenario document; raises ConfigInvalid."""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"scenario not parseable: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigInvalid("scenario document must be an object")
    try:
        noise_document = document.get("noise", {})
        noise = NoiseModel(
            noise_max=float(noise_document.get("noiseMax", DEFAULT_NOISE.noise_max)),
            detection_floor=float(
                noise_document.get("detectionFloor", DEFAULT_NOISE.detection_floor)
            ),
            peak_lo=float(noise_document.get("peakLo", DEFAULT_NOISE.peak_lo)),
            peak_hi=float(noise_document.get("peakHi", DEFAULT_NOISE.peak_hi)),
            max_defects=int(noise_document.get("maxDefects", DEFAULT_NOISE.max_defects)),
            max_defect_extent=int(
                noise_document.get("maxDefectExtent", DEFAULT_NOISE.max_defect_extent)
            ),
        )
        companies = []
        for company_document in document.get("companies", []):
            stations = []
            for station_document in company_document.get("stations", []):
                stations.append(
                    StationConfig(
                        station_id=station_document["id"],
                        type_name=station_document["type"],
                        methods=tuple(station_document.get("methods", ())),
                        person=bool(station_document.get("person", False)),
                        display_name=station_document.get("displayName", ""),
                        children=tuple(
                            (child["id"], child["type"])
                            for child in station_document.get("children", [])
                        ),
                    )
                )
            procedures = []
            for procedure_document in company_document.get("procedures", []):
                procedures.append(
                    Procedure(
                        procedure_id=procedure_document["id"],
                        method=procedure_document["method"],
                        rows=int(procedure_document.get("rows", 8)),
                        cols=int(procedure_document.get("cols", 8)),
                        reject_threshold=float(
                            procedure_document.get("rejectThreshold", 50.0)
                        ),
                        min_refs=int(procedure_document.get("minRefs", 1)),
                    )
                )
            companies.append(
                CompanyConfig(
                    name=company_document["name"],
                    role=company_document["role"],
                    stations=tuple(stations),
                    procedures=tuple(procedures),
                )
            )
        orders = tuple(
            OrderPlan(
                order_id=order_document["orderId"],
                company=order_document["company"],
                component_type=order_document["componentType"],
                component_serial=order_document["componentSerial"],
                procedure_id=order_document["procedureId"],
                priority=int(order_document.get("priority", 0)),
                due_ticks=int(order_document.get("dueTicks", 86_400)),
                station_id=order_document.get("station"),
            )
            for order_document in document.get("orders", [])
        )
        exchanges = tuple(
            ExchangePlan(
                provider=exchange_document["provider"],
                consumer=exchange_document["consumer"],
                order_id=exchange_document["orderId"],
                policy=_policy_from_config(exchange_document.get("policy", {})),
                attempts=int(exchange_document.get("attempts", 1)),
                forwards=tuple(
                    ForwardPlan(
                        to=forward_document["to"],
                        attempts=int(forward_document.get("attempts", 1)),
                        policy=(
                            _policy_from_config(forward_document["policy"])
                            if "policy" in forward_document
                            else None
                        ),
                    )
                    for forward_document in exchange_document.get("forwards", [])
                ),
            )
            for exchange_document in document.get("exchanges", [])
        )
        faults = []
        for fault_document in document.get("faults", []):
            if isinstance(fault_document, str):
                faults.append(FaultSpec(kind=fault_document))
            else:
                faults.append(
                    FaultSpec(
                        kind=fault_document["kind"],
                        order_id=fault_document.get("orderId"),
                        size=int(fault_document.get("size", DEFAULT_OVERSIZE_BYTES)),
                    )
                )
        config = ScenarioConfig(
            seed=int(document.get("seed", 0)),
            companies=tuple(companies),
            orders=orders,
            exchanges=exchanges,
            sovereignty=bool(document.get("sovereignty", False)),
            faults=tuple(faults),
            required_cells=_required_cells_from_config(
                document.get("requiredCells", [])
            ),
            allowlist=tuple(document.get("allowlist", ())),
            active_components=tuple(document.get("activeComponents", ())),
            noise=noise,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"scenario malformed: {exc}") from exc
    if seed_override is not None:
        config = replace(config, seed=seed_override)
    validate_config(config)
    return config


def validate_config(config: ScenarioConfig) -> None:
    problems: list[str] = []
    if not 0 <= config.seed < 2**64:
        problems.append(f"seed out of 64-bit range: {config.seed}")
    if not config.companies:
        problems.append("no companies configured")
    names = [c.name for c in config.companies]
    if len(set(names)) != len(names):
        problems.append("company names must be unique")
    procedure_ids: set[str] = set()
    for company in config.companies:
        if not is_name_token(company.name):
            problems.append(f"company name not a lowercase token: {company.name!r}")
        if company.role not in ROLES:
            problems.append(f"unknown role {company.role!r} for {company.name}")
        station_ids = [s.station_id for s in company.stations]
        if len(set(station_ids)) != len(station_ids):
            problems.append(f"duplicate station ids in {company.name}")
        for station in company.stations:
            if not is_name_token(station.type_name):
                problems.append(
                    f"station {station.station_id}: bad type name {station.type_name!r}"
                )
            if not is_serial_token(station.station_id):
                problems.append(f"bad station id {station.station_id!r}")
            for child_id, child_type in station.children:
                if not is_serial_token(child_id) or not is_name_token(child_type):
                    problems.append(
                        f"station {station.station_id}: bad child {child_id!r}"
                    )
            for method in station.methods:
                if method not in {"UT", "RT", "CT", "ET", "MT", "PT", "VT"}:
                    problems.append(
                        f"station {station.station_id}: unknown method {method!r}"
                    )
        for procedure in company.procedures:
            if procedure.procedure_id in procedure_ids:
                problems.append(f"duplicate procedure id {procedure.procedure_id!r}")
            procedure_ids.add(procedure.procedure_id)
            if procedure.rows > 0xFFFF or procedure.cols > 0xFFFF:
                problems.append(
                    f"procedure {procedure.procedure_id}: grid side exceeds u16"
                )
    order_ids: set[str] = set()
    for plan in config.orders:
        if plan.order_id in order_ids:
            problems.append(f"duplicate order id {plan.order_id!r}")
        order_ids.add(plan.order_id)
        company = config.company(plan.company)
        if company is None:
            problems.append(f"order {plan.order_id}: unknown company {plan.company!r}")
        elif plan.station_id is not None and plan.station_id not in {
            s.station_id for s in company.stations
        }:
            problems.append(
                f"order {plan.order_id}: unknown station {plan.station_id!r}"
            )
        if plan.procedure_id not in procedure_ids:
            problems.append(
                f"order {plan.order_id}: unknown procedure {plan.procedure_id!r}"
            )
        if plan.due_ticks < 0:
            problems.append(f"order {plan.order_id}: negative dueTicks")
        if not is_serial_token(plan.component_serial):
            problems.append(
                f"order {plan.order_id}: bad component serial "
                f"{plan.component_serial!r}"
            )
        try:
            component_type = parse_id(plan.component_type)
            if not isinstance(component_type, TypeId):
                problems.append(
                    f"order {plan.order_id}: componentType must be a type URN"
                )
        except Nde4Error as exc:
            problems.append(f"order {plan.order_id}: {exc}")
    for exchange in config.exchanges:
        for company_name in (exchange.provider, exchange.consumer):
            if config.company(company_name) is None:
                problems.append(f"exchange names unknown company {company_name!r}")
        if exchange.order_id not in order_ids:
            problems.append(f"exchange names unknown order {exchange.order_id!r}")
        for forward in exchange.forwards:
            if config.company(forward.to) is None:
                problems.append(f"forward names unknown company {forward.to!r}")
    for company_name in config.allowlist:
        if config.company(company_name) is None:
            problems.append(f"allowlist names unknown company {company_name!r}")
    noise = config.noise
    if not 0 < noise.detection_floor <= 100:
        problems.append("detection floor must be in (0, 100]")
    if noise.peak_lo >= noise.peak_hi:
        problems.append("defect peak range is empty")
    if noise.max_defects < 0 or noise.max_defect_extent < 1:
        problems.append("defect injection bounds invalid")
    for fault in config.faults:
        try:
            check_fault_applicable(config, fault)
        except FaultNotApplicable as exc:
            problems.append(str(exc))
        except ConfigInvalid as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigInvalid("; ".join(problems))


def check_fault_applicable(config: ScenarioConfig, fault: FaultSpec) -> None:
    if fault.kind not in FAULT_KINDS:
        raise ConfigInvalid(f"unknown fault kind {fault.kind!r}")
    if fault.kind in (FAULT_TAMPER, FAULT_OVERSIZE) and not config.orders:
        raise FaultNotApplicable(f"{fault.kind} needs at least one order")
    if fault.kind == FAULT_OVERSIZE and fault.order_id is not None:
        if fault.order_id not in {p.order_id for p in config.orders}:
            raise FaultNotApplicable(
                f"{fault.kind} targets unknown order {fault.order_id!r}"
            )
    if fault.kind == FAULT_OVERREAD:
        if not (config.sovereignty and config.exchanges):
            raise FaultNotApplicable(
                f"{fault.kind} needs sovereignty and at least one exchange"
            )


def inject_fault(config: ScenarioConfig, fault: FaultSpec) -> ScenarioConfig:
    """New config with the fault armed; refuses inapplicable faults."""
    check_fault_applicable(config, fault)
    return replace(config, faults=config.faults + (fault,))


# --- synthetic acquisition ------------------------------------------------------

def _derive_rng(seed: int, stream: str) -> random.Random:
    material = hashlib.sha256(f"{seed}:{stream}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(material[:8], "big"))


def synthesize_grid(
    procedure: Procedure, rng: random.Random, noise: NoiseModel = DEFAULT_NOISE
) -> list[float]:
    """Row-major amplitude grid: uniform noise plus 0..k rectangular spots."""
    rows, cols = procedure.rows, procedure.cols
    grid = [rng.uniform(0.0, noise.noise_max) for _ in range(rows * cols)]
    for _ in range(rng.randint(0, noise.max_defects)):
        height = rng.randint(1, min(noise.max_defect_extent, rows))
        width = rng.randint(1, min(noise.max_defect_extent, cols))
        row0 = rng.randint(0, rows - height)
        col0 = rng.randint(0, cols - width)
        peak = rng.uniform(noise.peak_lo, noise.peak_hi)
        for row in range(row0, row0 + height):
            for col in range(col0, col0 + width):
                index = row * cols + col
                grid[index] = max(grid[index], peak)
    return grid


def acquire(
    procedure: Procedure,
    component_serial: str,
    rng: random.Random,
    *,
    uid: str,
    order_id: str,
    component_type: TypeId,
    device_id: InstanceId,
    created_at: str,
    calibration_due: str | None = None,
    noise: NoiseModel = DEFAULT_NOISE,
    metadata_seed: Iterable[Element] = (),
) -> DataObject:
    """Synthetic acquisition: mandatory tags, device tags, amplitude grid,
    with the gateway metadata seed merged in."""
    grid = synthesize_grid(procedure, rng, noise)
    dictionary = DICT_V1
    values: dict[TagCode, bytes] = {}
    for element in metadata_seed:
        values[element.code] = element.value
    values[TAG_OBJECT_UID] = uid.encode("utf-8")
    values[TAG_CREATED_AT] = created_at.encode("ascii")
    values[TAG_METHOD_CODE] = procedure.method.encode("utf-8")
    values[TAG_COMPONENT_SERIAL] = component_serial.encode("utf-8")
    values[TAG_COMPONENT_TYPE] = str(component_type).encode("utf-8")
    values[TAG_ORDER_ID] = order_id.encode("utf-8")
    values[TAG_PROCEDURE_ID] = procedure.procedure_id.encode("utf-8")
    values[TAG_DEVICE_ID] = str(device_id).encode("utf-8")
    if calibration_due is not None:
        values[TAG_CALIBRATION_DUE] = calibration_due.encode("ascii")
    values[TAG_GRID_ROWS] = encode_value(
        dictionary.get(TAG_GRID_ROWS), procedure.rows
    )
    values[TAG_GRID_COLS] = encode_value(
        dictionary.get(TAG_GRID_COLS), procedure.cols
    )
    values[TAG_AMPLITUDE_GRID] = struct.pack(f"<{len(grid)}f", *grid)
    return DataObject.from_values(values)


def evaluate(
    obj: DataObject,
    procedure: Procedure,
    detection_floor: float = DEFAULT_NOISE.detection_floor,
) -> tuple[Indication, ...]:
    """Indications: 4-connected components of grid cells at or above the
    detection floor, each reported at its peak cell."""
    rows_raw = obj.raw(TAG_GRID_ROWS)
    cols_raw = obj.raw(TAG_GRID_COLS)
    grid_raw = obj.raw(TAG_AMPLITUDE_GRID)
    if rows_raw is None or cols_raw is None or grid_raw is None:
        raise GridShapeMismatch("object lacks grid tags")
    rows = interpret(DICT_V1.get(TAG_GRID_ROWS), rows_raw)
    cols = interpret(DICT_V1.get(TAG_GRID_COLS), cols_raw)
    if len(grid_raw) != rows * cols * 4:
        raise GridShapeMismatch(
            f"grid is {len(grid_raw)} bytes, expected {rows}x{cols}x4"
        )
    grid = struct.unpack(f"<{rows * cols}f", grid_raw)
    hot = [amplitude >= detection_floor for amplitude in grid]
    seen = [False] * (rows * cols)
    indications: list[Indication] = []
    for start in range(rows * cols):
        if not hot[start] or seen[start]:
            continue
        peak_index = start
        stack = [start]
        seen[start] = True
        while stack:
            index = stack.pop()
            if grid[index] > grid[peak_index] or (
                grid[index] == grid[peak_index] and index < peak_index
            ):
                peak_index = index
            row, col = divmod(index, cols)
            for neighbor_row, neighbor_col in (
                (row - 1, col),
                (row + 1, col),
                (row, col - 1),
                (row, col + 1),
            ):
                if 0 <= neighbor_row < rows and 0 <= neighbor_col < cols:
                    neighbor = neighbor_row * cols + neighbor_col
                    if hot[neighbor] and not seen[neighbor]:
                        seen[neighbor] = True
                        stack.append(neighbor)
        peak_row, peak_col = divmod(peak_index, cols)
        indications.append(Indication(peak_row, peak_col, grid[peak_index]))
    indications.sort(key=lambda i: (i.row, i.col))
    return tuple(indications)


# --- engine ----------------------------------------------------------------------

@dataclass
class SimResult:
    report: dict
    trace_lines: tuple[str, ...]
    registry: Registry
    bus: OrdersBus
    archive: Archive
    connectors: dict[str, Connector]
    orders_frame_sizes: tuple[int, ...]
    sovereign_frames: tuple[bytes, ...]


class _Engine:
    def __init__(self, config: ScenarioConfig, data_dir: str | Path):
        self.config = config
        self.clock = LogicalClock()
        self.data_dir = Path(data_dir)
        self.registry = Registry()
        self.archive = Archive(self.data_dir, self.clock)
        procedures = [
            procedure
            for company in config.companies
            for procedure in company.procedures
        ]
        self.bus = OrdersBus(self.registry, self.archive, procedures, self.clock)
        self.orders_frame_sizes: list[int] = []
        self.bus.tap(self._orders_tap)
        self.subscription = self.bus.subscribe()
        self.sovereign_frames: list[bytes] = []
        self.connectors: dict[str, Connector] = {}
        self.gateway_active = not any(
            fault.kind == FAULT_DROP_GATEWAY for fault in config.faults
        )
        self.oversize_faults = {
            (fault.order_id or config.orders[0].order_id): fault
            for fault in config.faults
            if fault.kind == FAULT_OVERSIZE
        }
        self.overread = any(fault.kind == FAULT_OVERREAD for fault in config.faults)

        self._queue: list[tuple[int, str, int, Callable[[], None]]] = []
        self._insertions = 0
        self._trace: list[dict] = []
        self._seq = 0
        self._uid_counter = 0
        self._uid_prefix = hashlib.sha256(
            f"{config.seed}:uid".encode("utf-8")
        ).hexdigest()[:8]
        self._station_ids: dict[tuple[str, str], InstanceId] = {}
        self._company_owner: dict[str, InstanceId] = {}
        self._registered_components: set[str] = set()
        self._order_company: dict[str, str] = {
            plan.order_id: plan.company for plan in config.orders
        }
        self._order_plan: dict[str, OrderPlan] = {
            plan.order_id: plan for plan in config.orders
        }
        self._exchanges_by_order: dict[str, list[ExchangePlan]] = {}
        for exchange in config.exchanges:
            self._exchanges_by_order.setdefault(exchange.order_id, []).append(exchange)
        self._pending_exchanges = len(config.exchanges)
        self._indications: dict[str, tuple[Indication, ...]] = {}
        self._stored_uids: dict[str, list[str]] = {}

    # --- plumbing ------------------------------------------------------------

    def _orders_tap(self, frame_bytes: bytes) -> None:
        frame = decode_frame(frame_bytes)
        if frame.channel == Channel.ORDERS:
            self.orders_frame_sizes.append(len(frame.payload))

    def schedule(
        self,
        tick: int,
        actor: str,
        fn: Callable[[], None],
        order_id: str | None = None,
    ) -> None:
        self._insertions += 1
        heapq.heappush(self._queue, (tick, actor, self._insertions, fn, order_id))

    def emit(self, actor: str, kind: str, data: dict) -> None:
        self._trace.append(
            {
                "seq": self._seq,
                "at": self.clock.now_text(),
                "actor": actor,
                "kind": kind,
                "data": data,
            }
        )
        self._seq += 1

    def drain_status(self) -> None:
        for _, event in self.subscription.drain():
            self.emit(
                "bus",
                "status",
                {"orderId": event.order_id, "state": event.state.value, "at": event.at},
            )
            self._on_status(event.order_id, event.state)

    def trace_lines(self) -> tuple[str, ...]:
        return tuple(
            json.dumps(entry, sort_keys=True, separators=(",", ":"))
            for entry in self._trace
        )

    def mint_uid(self) -> str:
        self._uid_counter += 1
        return f"obj-{self._uid_prefix}-{self._uid_counter}"

    def station_instance(self, company: str, station_id: str) -> InstanceId:
        return self._station_ids[(company, station_id)]

    def _procedure(self, procedure_id: str) -> Procedure:
        procedure = self.bus.procedure(procedure_id)
        assert procedure is not None  # config validation guarantees it
        return procedure

    # --- setup ------------------------------------------------------------------

    def register_shells(self) -> None:
        for company in self.config.companies:
            mes_type = TypeId(company.name, "mes")
            mes_id = InstanceId(mes_type, "main")
            self._company_owner[company.name] = mes_id
            self._register(
                f"{company.name}/mes",
                Manifest(
                    ManifestHeader(mes_type, mes_id, f"{company.name} MES"),
                    ManifestBody(),
                ),
            )
            for station in company.stations:
                station_type = TypeId(company.name, station.type_name)
                station_id = InstanceId(station_type, station.station_id)
                self._station_ids[(company.name, station.station_id)] = station_id
                child_ids = tuple(
                    InstanceId(TypeId(company.name, child_type), child_id)
                    for child_id, child_type in station.children
                )
                services = tuple(
                    ServiceDesc(
                        f"inspect-{method.lower()}",
                        input_tags=(TAG_ORDER_ID, TAG_PROCEDURE_ID),
                        output_tags=(TAG_AMPLITUDE_GRID,),
                    )
                    for method in station.methods
                )
                # parent first, children after: the dangling-child path
                self._register(
                    f"{company.name}/{station.station_id}",
                    Manifest(
                        ManifestHeader(
                            station_type,
                            station_id,
                            station.display_name or station.station_id,
                        ),
                        ManifestBody(service_descs=services, child_shells=child_ids),
                    ),
                )
                for child_instance in child_ids:
                    self._register(
                        f"{company.name}/{station.station_id}",
                        Manifest(
                            ManifestHeader(
                                child_instance.type_id,
                                child_instance,
                                child_instance.serial,
                            ),
                            ManifestBody(),
                        ),
                    )
        # the gateway asset exists even when its actor is dropped by a fault
        gateway_type = TypeId("plant", "gateway")
        self._register(
            "gateway",
            Manifest(
                ManifestHeader(gateway_type, InstanceId(gateway_type, "main"), "gateway"),
                ManifestBody(),
            ),
        )
        if self.config.sovereignty:
            certified = None
            if self.config.allowlist:
                certified = {
                    InstanceId(TypeId(name, "connector"), "main")
                    for name in self.config.allowlist
                }
            for company in self.config.companies:
                connector_type = TypeId(company.name, "connector")
                owner = InstanceId(connector_type, "main")
                self._register(
                    f"connector/{company.name}",
                    Manifest(
                        ManifestHeader(connector_type, owner, f"{company.name} connector"),
                        ManifestBody(),
                    ),
                )
                self.connectors[company.name] = Connector(
                    name=company.name,
                    owner=owner,
                    clock=self.clock,
                    archive=self.archive,
                    audit_dir=self.data_dir,
                    certified=certified,
                    taps=[self.sovereign_frames.append],
                )
            linked = list(self.connectors.values())
            for i, connector in enumerate(linked):
                for other in linked[i + 1 :]:
                    connector.link(other)

    def _register(self, actor: str, manifest: Manifest) -> None:
        instance = self.registry.register_shell(manifest)
        report = self.registry.validate(manifest)
        self.emit(
            actor,
            "register",
            {
                "shell": str(instance),
                "findings": [f.kind for f in report.findings],
            },
        )

    # --- order flow ----------------------------------------------------------------

    def schedule_orders(self) -> None:
        for index, plan in enumerate(self.config.orders):
            self.schedule((index + 1) * 60, f"{plan.company}/mes", self._submitter(plan))

    def _submitter(self, plan: OrderPlan) -> Callable[[], None]:
        def handler() -> None:
            component_type = parse_id(plan.component_type)
            assert isinstance(component_type, TypeId)
            station = None
            if plan.station_id is not None:
                station = self.station_instance(plan.company, plan.station_id)
            order = InspectionOrder(
                order_id=plan.order_id,
                component_serial=plan.component_serial,
                component_type=component_type,
                procedure_id=plan.procedure_id,
                due=format_tick(plan.due_ticks),
                priority=plan.priority,
                station=station,
            )
            self.bus.submit_order(order)
            self.emit(
                f"{plan.company}/mes",
                "submit",
                {"orderId": plan.order_id, "procedureId": plan.procedure_id},
            )
            self.drain_status()
            company = self.config.company(plan.company)
            for station_config in company.stations:
                self.schedule(
                    self.clock.tick + 1,
                    f"{plan.company}/{station_config.station_id}",
                    self._poller(plan.company, station_config.station_id),
                )

        return handler

    def _poller(self, company: str, station_id: str) -> Callable[[], None]:
        def handler() -> None:
            station = self.station_instance(company, station_id)
            actor = f"{company}/{station_id}"
            worklist = self.bus.poll_worklist(station)
            for order in worklist:
                if self._order_company[order.order_id] != company:
                    continue
                if self.bus.order_state(order.order_id) != OrderState.QUEUED:
                    continue
                try:
                    self.bus.assign(order.order_id, station)
                except (BusWrongState, UnknownStation):
                    continue
                self.emit(actor, "assign", {"orderId": order.order_id})
                self.drain_status()
                self.schedule(
                    self.clock.tick + 1,
                    actor,
                    self._inspector(company, station_id, order.order_id),
                    order_id=order.order_id,
                )
                break

        return handler

    def _inspector(
        self, company: str, station_id: str, order_id: str
    ) -> Callable[[], None]:
        def handler() -> None:
            actor = f"{company}/{station_id}"
            station = self.station_instance(company, station_id)
            order = self.bus.order(order_id)
            procedure = self._procedure(order.procedure_id)
            manifest = self.registry.resolve(station)
            self.bus.publish_status(
                StatusEvent(order_id, OrderState.IN_PROGRESS, self.clock.now_text())
            )
            self.emit(
                actor,
                "setup",
                {
                    "orderId": order_id,
                    "procedureId": procedure.procedure_id,
                    "method": procedure.method,
                    "services": [d.service_name for d in manifest.body.service_descs],
                },
            )
            self.drain_status()
            uid = self.mint_uid()
            seed_elements = order_to_archive_work(order)
            rng = _derive_rng(self.config.seed, f"acquire:{order_id}")
            obj = acquire(
                procedure,
                order.component_serial,
                rng,
                uid=uid,
                order_id=order_id,
                component_type=order.component_type,
                device_id=station,
                created_at=self.clock.now_text(),
                calibration_due=format_tick(self.clock.tick + 365 * 86_400),
                noise=self.config.noise,
                metadata_seed=seed_elements,
            )
            self.emit(
                actor,
                "acquire",
                {
                    "orderId": order_id,
                    "uid": uid,
                    "rows": procedure.rows,
                    "cols": procedure.cols,
                },
            )
            stored_uid = self.archive.store(obj)
            self._stored_uids.setdefault(order_id, []).append(stored_uid)
            self.emit(actor, "store", {"orderId": order_id, "uid": stored_uid})
            self.bus.publish_status(
                StatusEvent(order_id, OrderState.DATA_ARCHIVED, self.clock.now_text())
            )
            self.drain_status()
            indications = evaluate(
                obj, procedure, self.config.noise.detection_floor
            )
            self._indications[order_id] = indications
            self.emit(
                actor,
                "evaluate",
                {
                    "orderId": order_id,
                    "indications": [
                        {"row": i.row, "col": i.col, "amplitude": round(i.amplitude, 3)}
                        for i in indications
                    ],
                },
            )
            if self.gateway_active:
                self.schedule(
                    self.clock.tick + 1,
                    "gateway",
                    self._translator(order_id),
                    order_id=order_id,
                )

        return handler

    def _translator(self, order_id: str) -> Callable[[], None]:
        def handler() -> None:
            order = self.bus.order(order_id)
            procedure = self._procedure(order.procedure_id)
            uids = tuple(self._stored_uids.get(order_id, ()))
            rv = archive_result_to_kpis(
                self.archive,
                order_id,
                self._indications.get(order_id, ()),
                uids,
                procedure,
            )
            self.emit(
                "gateway",
                "translate",
                {
                    "orderId": order_id,
                    "verdict": rv.verdict.value,
                    "indicationCount": rv.indication_count,
                    "maxAmplitude": (
                        round(rv.max_amplitude, 3)
                        if rv.max_amplitude is not None
                        else None
                    ),
                    "archivedRefs": list(rv.archived_refs),
                },
            )
            fault = self.oversize_faults.get(order_id)
            if fault is not None:
                rv = ReportedValues(
                    order_id=rv.order_id,
                    verdict=rv.verdict,
                    indication_count=rv.indication_count,
                    max_amplitude=rv.max_amplitude,
                    archived_refs=rv.archived_refs,
                    extras={"notes": "N" * fault.size},
                )
            try:
                self.bus.report_values(rv)
            except OversizedPayload:
                if fault is None:
                    raise
                # decide on the bytes that actually hit the channel, not the
                # nominal fault size: encoding overhead can tip a payload over
                decision = route(len(encode_message(rv)), WorkKind.WORKFLOW)
                blob_uid = self.mint_uid()
                blob = DataObject.from_values(
                    {
                        TAG_OBJECT_UID: blob_uid.encode("utf-8"),
                        TAG_CREATED_AT: self.clock.now_text().encode("ascii"),
                        TAG_METHOD_CODE: procedure.method.encode("utf-8"),
                        TAG_COMPONENT_SERIAL: order.component_serial.encode("utf-8"),
                        TAG_ORDER_ID: order_id.encode("utf-8"),
                        TAG_BULK_PAYLOAD: rv.extras["notes"].encode("utf-8"),
                    }
                )
                self.archive.store(blob)
                self.emit(
                    "gateway",
                    "route",
                    {
                        "orderId": order_id,
                        "decision": decision.value,
                        "payloadRef": blob_uid,
                        "payloadBytes": fault.size,
                    },
                )
                rv = ReportedValues(
                    order_id=rv.order_id,
                    verdict=rv.verdict,
                    indication_count=rv.indication_count,
                    max_amplitude=rv.max_amplitude,
                    archived_refs=rv.archived_refs,
                    extras={"payloadRef": blob_uid},
                )
                self.bus.report_values(rv)
            self.emit(
                "gateway",
                "report",
                {"orderId": order_id, "verdict": rv.verdict.value},
            )
            self.drain_status()

        return handler

    # --- reactions -----------------------------------------------------------------

    def _on_status(self, order_id: str, state: OrderState) -> None:
        if state != OrderState.REPORTED:
            return
        company = self._order_company.get(order_id)
        if company is not None:
            self.schedule(
                self.clock.tick + 1,
                f"{company}/mes",
                self._component_registrar(order_id),
            )
        for exchange in self._exchanges_by_order.get(order_id, ()):
            if self.config.sovereignty:
                self.schedule(
                    self.clock.tick + 2,
                    f"connector/{exchange.provider}",
                    self._exchanger(exchange),
                )
            # with sovereignty disabled the exchange stays pending and the
            # drain check reports the deadlock

    def _component_registrar(self, order_id: str) -> Callable[[], None]:
        def handler() -> None:
            plan = self._order_plan[order_id]
            if plan.component_serial in self._registered_components:
                return
            self._registered_components.add(plan.component_serial)
            component_type = parse_id(plan.component_type)
            assert isinstance(component_type, TypeId)
            instance = InstanceId(component_type, plan.component_serial)
            refs = tuple(
                DataRef(TAG_OBJECT_UID, uid)
                for uid in self._stored_uids.get(order_id, ())
            )
            try:
                self._register(
                    f"{plan.company}/mes",
                    Manifest(
                        ManifestHeader(component_type, instance, plan.component_serial),
                        ManifestBody(data_refs=refs),
                    ),
                )
            except DuplicateInstance:
                pass

        return handler

    def _exchanger(self, exchange: ExchangePlan) -> Callable[[], None]:
        def handler() -> None:
            provider = self.connectors[exchange.provider]
            consumer = self.connectors[exchange.consumer]
            actor = f"connector/{exchange.provider}"
            uids = self._stored_uids.get(exchange.order_id, ())
            uid = uids[0]
            contract_id = provider.offer(consumer.owner, uid, exchange.policy)
            self.emit(
                actor,
                "offer",
                {
                    "contractId": contract_id,
                    "uid": uid,
                    "consumer": exchange.consumer,
                    "maxReads": exchange.policy.max_reads,
                },
            )
            consumer.accept(contract_id)
            self.emit(
                f"connector/{exchange.consumer}", "accept", {"contractId": contract_id}
            )
            attempts = exchange.attempts
            if self.overread and exchange.policy.max_reads is not None:
                attempts = max(attempts, exchange.policy.max_reads + 1)
            self._consume_n(exchange.consumer, contract_id, attempts)
            for forward in exchange.forwards:
                third = self.connectors[forward.to]
                try:
                    derived_id = consumer.forward(
                        contract_id, third.owner, forward.policy
                    )
                except (ForwardProhibited, Nde4Error) as exc:
                    self.emit(
                        f"connector/{exchange.consumer}",
                        "deny",
                        {"contractId": contract_id, "reason": type(exc).__name__},
                    )
                    continue
                self.emit(
                    f"connector/{exchange.consumer}",
                    "forward",
                    {"contractId": contract_id, "derived": derived_id, "to": forward.to},
                )
                third.accept(derived_id)
                self.emit(
                    f"connector/{forward.to}", "accept", {"contractId": derived_id}
                )
                self._consume_n(forward.to, derived_id, forward.attempts)
            self._pending_exchanges -= 1

        return handler

    def _consume_n(self, company: str, contract_id: str, attempts: int) -> None:
        connector = self.connectors[company]
        actor = f"connector/{company}"
        for _ in range(attempts):
            self.clock.advance()
            try:
                obj = connector.consume(contract_id)
            except (PolicyExhausted, PolicyExpired, Nde4Error) as exc:
                self.emit(
                    actor,
                    "deny",
                    {"contractId": contract_id, "reason": type(exc).__name__},
                )
                continue
            self.emit(
                actor,
                "consume",
                {
                    "contractId": contract_id,
                    "uid": obj.uid,
                    "cached": connector.cached(contract_id),
                },
            )

    # --- faults and wrap-up -----------------------------------------------------------

    def apply_tamper(self) -> None:
        for fault in self.config.faults:
            if fault.kind != FAULT_TAMPER:
                continue
            uids = self.archive.uids()
            rng = _derive_rng(self.config.seed, "tamper")
            uid = uids[rng.randrange(len(uids))]
            path = self.archive.directory / f"{uid}.ndeo"
            blob = bytearray(path.read_bytes())
            position = rng.randrange(len(blob))
            blob[position] ^= 0x01
            path.write_bytes(bytes(blob))
            self.clock.advance()
            self.emit(
                "fault",
                "fault",
                {"kind": fault.kind, "uid": uid, "byte": position},
            )

    def active_loci(self) -> list[ComponentLocus]:
        registry = LociRegistry()
        active = ["orders-bus"]
        if self.gateway_active:
            active.append("gateway")
        if self.config.sovereignty:
            active.append("sovereignty")
        active.extend(self.config.active_components)
        return [registry.locate(name) for name in active]

    def build_report(self) -> dict:
        states = {
            order_id: self.bus.order_state(order_id)
            for order_id in self.bus.order_ids()
        }
        verify = self.archive.verify_chain()
        gaps = coverage_check(self.config.required_cells, self.active_loci())
        denies = sum(
            sum(1 for event in connector.audit_events() if event.action == DENY)
            for connector in self.connectors.values()
        )
        return {
            "orders_total": len(self.config.orders),
            "reported": sum(1 for s in states.values() if s == OrderState.REPORTED),
            "rejected": sum(1 for s in states.values() if s == OrderState.REJECTED),
            "chain_status": "OK" if verify.ok else f"BAD index {verify.bad_index}",
            "rami_gaps": list(gaps_text(gaps)),
            "audit_denies": denies,
        }

    def run(self) -> SimResult:
        self.register_shells()
        self.schedule_orders()
        while self._queue:
            tick, actor, _, fn, order_id = heapq.heappop(self._queue)
            if tick > self.clock.tick:
                self.clock.advance_to(tick)
            try:
                fn()
            except Nde4Error as exc:
                # a failed step rejects its order; the rest of the run goes on
                if order_id is None:
                    raise
                self.emit(
                    actor,
                    "error",
                    {"orderId": order_id, "error": type(exc).__name__, "detail": str(exc)},
                )
                if self.bus.order_state(order_id) not in (
                    OrderState.REPORTED,
                    OrderState.REJECTED,
                ):
                    self.bus.publish_status(
                        StatusEvent(
                            order_id, OrderState.REJECTED, self.clock.now_text()
                        )
                    )
            self.drain_status()
        blocking: dict[str, str] = {}
        for order_id in self.bus.order_ids():
            state = self.bus.order_state(order_id)
            if state not in (OrderState.REPORTED, OrderState.REJECTED):
                blocking[order_id] = state.value
        if self._pending_exchanges > 0:
            blocking["exchanges-pending"] = str(self._pending_exchanges)
        if blocking:
            report = self.build_report()
            raise ScenarioDeadlock(blocking, report, self.trace_lines())
        self.apply_tamper()
        report = self.build_report()
        return SimResult(
            report=report,
            trace_lines=self.trace_lines(),
            registry=self.registry,
            bus=self.bus,
            archive=self.archive,
            connectors=dict(self.connectors),
            orders_frame_sizes=tuple(self.orders_frame_sizes),
            sovereign_frames=tuple(self.sovereign_frames),
        )


def run_scenario(config: ScenarioConfig, data_dir: str | Path) -> SimResult:
    validate_config(config)
    return _Engine(config, data_dir).run()
