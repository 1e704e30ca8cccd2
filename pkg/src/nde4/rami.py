"""Three-axis architecture cube: locate components, check interface coverage.

A coordinate is one cell of layer x lifecycle x hierarchy. Components claim
cell sets (loci); a system's coverage is the union of the loci of the
interfaces it actually runs. coverage_check is pure set algebra: the gap
report is the required set minus that union.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Iterable

from .errors import Nde4Error
from .semantics import is_id_token


class Layer(Enum):
    ASSET = "ASSET"
    INTEGRATION = "INTEGRATION"
    COMMUNICATION = "COMMUNICATION"
    INFORMATION = "INFORMATION"
    FUNCTIONAL = "FUNCTIONAL"
    BUSINESS = "BUSINESS"


class Lifecycle(Enum):
    TYPE_DEV = "TYPE_DEV"
    TYPE_USE = "TYPE_USE"
    INST_PROD = "INST_PROD"
    INST_USE = "INST_USE"


class Hierarchy(Enum):
    PROCESS = "PROCESS"
    FIELD = "FIELD"
    CONTROL = "CONTROL"
    SHOP_FLOOR = "SHOP_FLOOR"
    PLANT = "PLANT"
    ENTERPRISE = "ENTERPRISE"
    CONNECTED_WORLD = "CONNECTED_WORLD"


class UnknownComponent(Nde4Error):
    """No locus registered under this component name."""


@dataclass(frozen=True, slots=True)
class RamiCoordinate:
    layer: Layer
    lifecycle: Lifecycle
    hierarchy: Hierarchy

    def text(self) -> str:
        return f"{self.layer.value}/{self.lifecycle.value}/{self.hierarchy.value}"

    @classmethod
    def from_text(cls, text: str) -> "RamiCoordinate":
        parts = text.split("/")
        if len(parts) != 3:
            raise ValueError(f"expected LAYER/LIFECYCLE/HIERARCHY: {text!r}")
        return cls(Layer(parts[0]), Lifecycle(parts[1]), Hierarchy(parts[2]))


def cells(
    layers: Iterable[Layer],
    lifecycles: Iterable[Lifecycle],
    hierarchies: Iterable[Hierarchy],
) -> frozenset[RamiCoordinate]:
    return frozenset(
        RamiCoordinate(layer, lifecycle, hierarchy)
        for layer, lifecycle, hierarchy in product(layers, lifecycles, hierarchies)
    )


@dataclass(frozen=True, slots=True)
class ComponentLocus:
    component: str
    cells: frozenset[RamiCoordinate]

    def __post_init__(self) -> None:
        if not is_id_token(self.component):
            raise ValueError(f"component not a valid token: {self.component!r}")
        if not self.cells:
            raise ValueError(f"locus for {self.component!r} has no cells")


_MIDDLE_LAYERS = (Layer.INFORMATION, Layer.COMMUNICATION)
_INSTANCE_SIDE = (Lifecycle.INST_PROD, Lifecycle.INST_USE)
_TYPE_SIDE = (Lifecycle.TYPE_DEV, Lifecycle.TYPE_USE)
_PYRAMID = (
    Hierarchy.PROCESS,
    Hierarchy.FIELD,
    Hierarchy.CONTROL,
    Hierarchy.SHOP_FLOOR,
    Hierarchy.PLANT,
)

# the middle two layers on the instance side of the lifecycle axis, up the
# automation pyramid but stopping below the enterprise level
ORDERS_BUS_LOCUS = ComponentLocus(
    "orders-bus", cells(_MIDDLE_LAYERS, _INSTANCE_SIDE, _PYRAMID)
)

# the gateway extends the same layers to the enterprise level; the
# connected world stays out of reach without sovereignty connectors
GATEWAY_LOCUS = ComponentLocus(
    "gateway",
    cells(_MIDDLE_LAYERS, _INSTANCE_SIDE, _PYRAMID + (Hierarchy.ENTERPRISE,)),
)

# plant-design documents live on the type side, across every hierarchy level
PLANTDESIGN_DOC_LOCUS = ComponentLocus(
    "plantdesign-doc",
    cells(_MIDDLE_LAYERS, _TYPE_SIDE, tuple(Hierarchy)),
)

# sovereignty connectors close the connected-world cells the bus and
# gateway leave open
SOVEREIGNTY_LOCUS = ComponentLocus(
    "sovereignty",
    cells(_MIDDLE_LAYERS, _INSTANCE_SIDE, (Hierarchy.CONNECTED_WORLD,)),
)

DEFAULT_LOCI = (
    ORDERS_BUS_LOCUS,
    GATEWAY_LOCUS,
    PLANTDESIGN_DOC_LOCUS,
    SOVEREIGNTY_LOCUS,
)


class LociRegistry:
    def __init__(self, loci: Iterable[ComponentLocus] = DEFAULT_LOCI):
        self._loci: dict[str, ComponentLocus] = {}
        for locus in loci:
            self.register(locus)

    def register(self, locus: ComponentLocus) -> None:
        self._loci[locus.component] = locus

    def locate(self, component: str) -> ComponentLocus:
        locus = self._loci.get(component)
        if locus is None:
            raise UnknownComponent(component)
        return locus

    def components(self) -> tuple[str, ...]:
        return tuple(self._loci)


def locate(component: str, registry: LociRegistry | None = None) -> ComponentLocus:
    return (registry or _DEFAULT_REGISTRY).locate(component)


_DEFAULT_REGISTRY = LociRegistry()


def coverage_check(
    required: Iterable[RamiCoordinate], loci: Iterable[ComponentLocus]
) -> frozenset[RamiCoordinate]:
    """Gap report: required minus the union of the loci's cells."""
    covered: set[RamiCoordinate] = set()
    for locus in loci:
        covered |= locus.cells
    return frozenset(required) - covered


def gaps_text(gaps: Iterable[RamiCoordinate]) -> tuple[str, ...]:
    """Deterministic textual gap listing."""
    return tuple(sorted(coordinate.text() for coordinate in gaps))


# --- loci fixture file -------------------------------------------------------

def dump_loci_tsv(loci: Iterable[ComponentLocus]) -> str:
    lines = []
    for locus in loci:
        for coordinate in sorted(locus.cells, key=RamiCoordinate.text):
            lines.append(
                "\t".join(
                    (
                        locus.component,
                        coordinate.layer.value,
                        coordinate.lifecycle.value,
                        coordinate.hierarchy.value,
                    )
                )
            )
    return "\n".join(lines) + "\n"


def load_loci_tsv(text: str) -> tuple[ComponentLocus, ...]:
    collected: dict[str, set[RamiCoordinate]] = {}
    order: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"loci line {lineno}: expected 4 columns")
        component, layer_text, lifecycle_text, hierarchy_text = parts
        coordinate = RamiCoordinate(
            Layer(layer_text), Lifecycle(lifecycle_text), Hierarchy(hierarchy_text)
        )
        if component not in collected:
            collected[component] = set()
            order.append(component)
        collected[component].add(coordinate)
    return tuple(
        ComponentLocus(component, frozenset(collected[component]))
        for component in order
    )
