"""Digital-twin registry: store, validate, nest, and resolve shell manifests.

A manifest is the table of contents for one asset: a header holding the
shell's type and the asset's instance identity, and a body listing data
references, service descriptions, and child shells. Nesting edges form a
DAG; a cycle is rejected whether it arrives via nest() or via declared
child lists completing a loop at registration time.

Human roles (an inspector, an operator) are registered exactly like
machines; nothing in here distinguishes the two.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace

from .errors import Nde4Error
from .identity import InstanceId, TypeId, parse_id
from .semantics import (
    DICT_V1,
    SEVERITY_ERROR,
    SEVERITY_INFO,
    Dictionary,
    Finding,
    TagCode,
    ValidationReport,
)

MISSING_HEADER_ID = "MissingHeaderId"
DUPLICATE_BODY_ENTRY = "DuplicateBodyEntry"
UNKNOWN_SEMANTIC_TAG = "UnknownSemanticTag"
DANGLING_CHILD = "DanglingChild"

MANIFEST_FILE_SUFFIX = ".aas"


class DuplicateInstance(Nde4Error):
    """An asset instance ID is already registered."""


class InvalidManifest(Nde4Error):
    """Manifest failed validation; carries the report."""

    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


class CycleDetected(Nde4Error):
    """A nesting edge would close a cycle."""


class UnknownShell(Nde4Error):
    """Instance ID is not registered."""


@dataclass(frozen=True, slots=True)
class DataRef:
    semantic_tag: TagCode
    locator: str


@dataclass(frozen=True, slots=True)
class ServiceDesc:
    service_name: str
    input_tags: tuple[TagCode, ...] = ()
    output_tags: tuple[TagCode, ...] = ()


@dataclass(frozen=True, slots=True)
class ManifestHeader:
    shell_type_id: TypeId | None
    asset_instance_id: InstanceId | None
    display_name: str = ""


@dataclass(frozen=True, slots=True)
class ManifestBody:
    data_refs: tuple[DataRef, ...] = ()
    service_descs: tuple[ServiceDesc, ...] = ()
    child_shells: tuple[InstanceId, ...] = ()


@dataclass(frozen=True, slots=True)
class Manifest:
    header: ManifestHeader
    body: ManifestBody = field(default_factory=ManifestBody)

    def with_child(self, child: InstanceId) -> "Manifest":
        children = self.body.child_shells + (child,)
        return replace(self, body=replace(self.body, child_shells=children))


def validate_manifest(
    manifest: Manifest,
    dictionary: Dictionary = DICT_V1,
    registered: set[InstanceId] | None = None,
) -> ValidationReport:
    """Structural findings for one manifest.

    With `registered` given, child IDs outside that set are flagged
    DanglingChild (informational: supply chains register shells in any
    order, so a dangling child is deferred, not wrong). Without it the
    check is skipped entirely.
    """
    findings: list[Finding] = []
    header = manifest.header
    if header.shell_type_id is None:
        findings.append(
            Finding(MISSING_HEADER_ID, "header lacks a shell type ID")
        )
    if header.asset_instance_id is None:
        findings.append(
            Finding(MISSING_HEADER_ID, "header lacks an asset instance ID")
        )

    seen_refs: set[tuple[TagCode, str]] = set()
    for ref in manifest.body.data_refs:
        key = (ref.semantic_tag, ref.locator)
        if key in seen_refs:
            findings.append(
                Finding(
                    DUPLICATE_BODY_ENTRY,
                    f"data ref repeated: {ref.locator!r}",
                    ref.semantic_tag,
                )
            )
        seen_refs.add(key)
        if dictionary.get(ref.semantic_tag) is None and not ref.semantic_tag.is_private:
            findings.append(
                Finding(
                    UNKNOWN_SEMANTIC_TAG,
                    "data ref tag not in dictionary and not private",
                    ref.semantic_tag,
                )
            )

    seen_services: set[str] = set()
    for desc in manifest.body.service_descs:
        if desc.service_name in seen_services:
            findings.append(
                Finding(
                    DUPLICATE_BODY_ENTRY,
                    f"service name repeated: {desc.service_name!r}",
                )
            )
        seen_services.add(desc.service_name)
        for tag in desc.input_tags + desc.output_tags:
            if dictionary.get(tag) is None and not tag.is_private:
                findings.append(
                    Finding(
                        UNKNOWN_SEMANTIC_TAG,
                        f"service {desc.service_name!r} tag not in dictionary "
                        f"and not private",
                        tag,
                    )
                )

    seen_children: set[InstanceId] = set()
    for child in manifest.body.child_shells:
        if child in seen_children:
            findings.append(
                Finding(DUPLICATE_BODY_ENTRY, f"child repeated: {child}")
            )
        seen_children.add(child)
        if registered is not None and child not in registered:
            findings.append(
                Finding(
                    DANGLING_CHILD,
                    f"child not registered yet: {child}",
                    severity=SEVERITY_INFO,
                )
            )

    return ValidationReport(tuple(findings))


class Registry:
    """Mutations are serialized under one lock; reads see consistent snapshots."""

    def __init__(self, dictionary: Dictionary = DICT_V1):
        self._dictionary = dictionary
        self._shells: dict[InstanceId, Manifest] = {}
        self._order: list[InstanceId] = []
        self._lock = threading.Lock()

    def validate(self, manifest: Manifest) -> ValidationReport:
        with self._lock:
            registered = set(self._shells)
        return validate_manifest(manifest, self._dictionary, registered)

    def register_shell(self, manifest: Manifest) -> InstanceId:
        with self._lock:
            report = validate_manifest(
                manifest, self._dictionary, set(self._shells)
            )
            if any(f.severity == SEVERITY_ERROR for f in report.findings):
                raise InvalidManifest(report)
            instance = manifest.header.asset_instance_id
            assert instance is not None  # MissingHeaderId is blocking
            if instance in self._shells:
                raise DuplicateInstance(f"already registered: {instance}")
            self._shells[instance] = manifest
            self._order.append(instance)
            # declared children may have completed a loop through shells
            # that named this instance before it existed
            cycle = self._find_cycle()
            if cycle is not None:
                del self._shells[instance]
                self._order.pop()
                raise CycleDetected(
                    "declared children close a cycle: "
                    + " -> ".join(str(i) for i in cycle)
                )
            return instance

    def resolve(self, instance: InstanceId) -> Manifest:
        with self._lock:
            manifest = self._shells.get(instance)
        if manifest is None:
            raise UnknownShell(f"not registered: {instance}")
        return manifest

    def nest(self, parent: InstanceId, child: InstanceId) -> None:
        with self._lock:
            for instance in (parent, child):
                if instance not in self._shells:
                    raise UnknownShell(f"not registered: {instance}")
            manifest = self._shells[parent]
            if child in manifest.body.child_shells:
                return  # edge already present
            if self._reaches(child, parent):
                raise CycleDetected(f"{parent} is reachable from {child}")
            if parent == child:
                raise CycleDetected(f"self-nesting: {parent}")
            self._shells[parent] = manifest.with_child(child)

    def list_shells(self) -> tuple[InstanceId, ...]:
        """Registration order, which is deterministic for a given scenario."""
        with self._lock:
            return tuple(self._order)

    def find_by_type(self, type_id: TypeId) -> tuple[InstanceId, ...]:
        with self._lock:
            return tuple(
                instance
                for instance in self._order
                if self._shells[instance].header.shell_type_id == type_id
            )

    def descendants(self, instance: InstanceId) -> tuple[InstanceId, ...]:
        """All shells reachable through registered child edges, preorder."""
        with self._lock:
            if instance not in self._shells:
                raise UnknownShell(f"not registered: {instance}")
            out: list[InstanceId] = []
            seen: set[InstanceId] = {instance}
            stack = [
                child
                for child in reversed(self._shells[instance].body.child_shells)
                if child in self._shells
            ]
            while stack:
                node = stack.pop()
                if node in seen:
                    continue
                seen.add(node)
                out.append(node)
                stack.extend(
                    child
                    for child in reversed(self._shells[node].body.child_shells)
                    if child in self._shells
                )
            return tuple(out)

    # caller holds the lock
    def _reaches(self, start: InstanceId, goal: InstanceId) -> bool:
        stack = [start]
        seen: set[InstanceId] = set()
        while stack:
            node = stack.pop()
            if node == goal:
                return True
            if node in seen or node not in self._shells:
                continue
            seen.add(node)
            stack.extend(self._shells[node].body.child_shells)
        return False

    # caller holds the lock; returns one cycle path or None
    def _find_cycle(self) -> list[InstanceId] | None:
        WHITE, GREY, BLACK = 0, 1, 2
        color: dict[InstanceId, int] = {i: WHITE for i in self._shells}
        path: list[InstanceId] = []

        def visit(node: InstanceId) -> list[InstanceId] | None:
            color[node] = GREY
            path.append(node)
            for child in self._shells[node].body.child_shells:
                if child not in self._shells:
                    continue  # dangling, no edge yet
                if color[child] == GREY:
                    return path[path.index(child) :] + [child]
                if color[child] == WHITE:
                    found = visit(child)
                    if found is not None:
                        return found
            color[node] = BLACK
            path.pop()
            return None

        for node in self._shells:
            if color[node] == WHITE:
                found = visit(node)
                if found is not None:
                    return found
        return None


# --- textual encoding (.aas) -------------------------------------------------

def manifest_to_dict(manifest: Manifest) -> dict:
    header = manifest.header
    return {
        "header": {
            "shellTypeId": str(header.shell_type_id) if header.shell_type_id else "",
            "assetInstanceId": (
                str(header.asset_instance_id) if header.asset_instance_id else ""
            ),
            "displayName": header.display_name,
        },
        "body": {
            "dataRefs": [
                {"tag": ref.semantic_tag.text(), "locator": ref.locator}
                for ref in manifest.body.data_refs
            ],
            "services": [
                {
                    "name": desc.service_name,
                    "inputTags": [tag.text() for tag in desc.input_tags],
                    "outputTags": [tag.text() for tag in desc.output_tags],
                }
                for desc in manifest.body.service_descs
            ],
            "children": [str(child) for child in manifest.body.child_shells],
        },
    }


def manifest_from_dict(data: dict) -> Manifest:
    try:
        header_data = data["header"]
        body_data = data.get("body", {})
        shell_type_text = header_data.get("shellTypeId", "")
        instance_text = header_data.get("assetInstanceId", "")
        shell_type = parse_id(shell_type_text) if shell_type_text else None
        instance = parse_id(instance_text) if instance_text else None
        if shell_type is not None and not isinstance(shell_type, TypeId):
            raise ValueError("header.shellTypeId must be a type ID")
        if instance is not None and not isinstance(instance, InstanceId):
            raise ValueError("header.assetInstanceId must be an instance ID")
        header = ManifestHeader(
            shell_type, instance, header_data.get("displayName", "")
        )
        data_refs = tuple(
            DataRef(TagCode.from_text(entry["tag"]), entry["locator"])
            for entry in body_data.get("dataRefs", [])
        )
        services = tuple(
            ServiceDesc(
                entry["name"],
                tuple(TagCode.from_text(t) for t in entry.get("inputTags", [])),
                tuple(TagCode.from_text(t) for t in entry.get("outputTags", [])),
            )
            for entry in body_data.get("services", [])
        )
        children = []
        for text in body_data.get("children", []):
            child = parse_id(text)
            if not isinstance(child, InstanceId):
                raise ValueError(f"child must be an instance ID: {text!r}")
            children.append(child)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed manifest document: {exc}") from exc
    return Manifest(header, ManifestBody(data_refs, services, tuple(children)))


def dump_manifest(manifest: Manifest) -> str:
    return json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n"


def load_manifest(text: str) -> Manifest:
    return manifest_from_dict(json.loads(text))
