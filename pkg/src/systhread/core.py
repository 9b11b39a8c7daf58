"""Central hub: UID registry, modality index, typed model graph, and
traceability queries.

Every artifact (component, requirement, document, geometry file, state
machine, constraint) is keyed by a namespaced UID rendered ``<ns>-<serial>``.
Serials are never reused: deleting a node tombstones its UID so stale
references stay detectable.  All mutations go through a single writer lock;
reads see a consistent snapshot.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .units import Quantity, UnitError, attribute_dimension


class ProjectError(Exception):
    """Base class for hub errors."""


class UnknownNamespaceError(ProjectError):
    pass


class UnregisteredUidError(ProjectError):
    pass


class DuplicateBindingError(ProjectError):
    pass


class DuplicateEdgeError(ProjectError):
    pass


class DanglingEdgeError(ProjectError):
    pass


DEFAULT_NAMESPACES = ("req", "cmp", "doc", "geo", "sm", "con")


class Modality(str, Enum):
    DOCUMENT = "Document"
    GEOMETRY = "Geometry"
    GRAPH = "Graph"


class TraceKind(str, Enum):
    REFINES = "Refines"
    IMPLEMENTS = "Implements"
    TESTS = "Tests"
    SATISFIES = "Satisfies"
    ALLOCATES = "Allocates"
    DERIVED_FROM = "DerivedFrom"


class Direction(str, Enum):
    FORWARD = "Forward"
    BACKWARD = "Backward"
    BOTH = "Both"


class ReqType(str, Enum):
    FUNCTIONAL = "Functional"
    PERFORMANCE = "Performance"
    INTERFACE = "Interface"
    CONSTRAINT = "Constraint"
    OTHER = "Other"


class Priority(str, Enum):
    LOW = "Low"
    MED = "Med"
    HIGH = "High"


class ReqStatus(str, Enum):
    PROPOSED = "Proposed"
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    MODIFIED = "Modified"


@dataclass(frozen=True, order=True)
class Uid:
    namespace: str
    serial: int

    def render(self) -> str:
        return f"{self.namespace}-{self.serial}"

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str) -> Uid:
        ns, sep, serial = text.rpartition("-")
        if not sep or not ns or not serial.isdigit():
            raise ProjectError(f"malformed uid {text!r}")
        return cls(ns, int(serial))


def _key(uid: Uid | str) -> str:
    return uid.render() if isinstance(uid, Uid) else str(uid)


@dataclass(frozen=True)
class ModalityBinding:
    uid: str
    modality: Modality
    locator: str


@dataclass(frozen=True)
class SourceRef:
    """Provenance of a requirement: document uid plus character span."""

    doc: str
    start: int
    end: int

    def locator(self) -> str:
        return f"{self.doc}:{self.start}-{self.end}"


@dataclass
class Component:
    uid: str
    name: str
    function_tags: tuple[str, ...] = ()
    attributes: dict[str, Quantity] = field(default_factory=dict)
    parent: str | None = None
    geometry_ref: str | None = None

    def __post_init__(self) -> None:
        self.function_tags = tuple(sorted(set(t.lower() for t in self.function_tags)))
        for name, quantity in self.attributes.items():
            _check_attribute(name, quantity)


def _check_attribute(name: str, quantity: Quantity) -> None:
    dim = attribute_dimension(name)
    if quantity.dimension != dim:
        raise UnitError(
            f"attribute {name!r} expects dimension {dim}, got {quantity.unit!r}"
        )


@dataclass
class Requirement:
    uid: str
    text: str
    req_type: ReqType
    source: SourceRef
    priority: Priority = Priority.MED
    status: ReqStatus = ReqStatus.PROPOSED
    custom: dict[str, str] = field(default_factory=dict)


@dataclass
class GeometryArtifact:
    """Registered geometry file, referenced by relative path + content digest."""

    uid: str
    path: str
    digest: str
    unit: str = "mm"


@dataclass(frozen=True)
class TraceEdge:
    src: str
    kind: TraceKind
    dst: str

    def triple(self) -> tuple[str, str, str]:
        return (self.src, self.kind.value, self.dst)


@dataclass
class Resolved:
    """Everything the index knows about one UID."""

    uid: str
    bindings: list[ModalityBinding]
    payload: object | None


@dataclass
class IntegrityReport:
    dangling_bindings: list[ModalityBinding] = field(default_factory=list)
    dangling_edges: list[TraceEdge] = field(default_factory=list)
    orphan_uids: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.dangling_bindings or self.dangling_edges or self.orphan_uids)


class Project:
    """The hub holding every store plus the UID registry and trace graph.

    Single-writer, multiple-reader: mutating methods take the writer lock.
    """

    def __init__(self, namespaces: tuple[str, ...] = DEFAULT_NAMESPACES):
        self._lock = threading.RLock()
        self.namespaces = tuple(namespaces)
        self._counters: dict[str, int] = {ns: 0 for ns in self.namespaces}
        self._active: dict[str, set[int]] = {ns: set() for ns in self.namespaces}
        self._tombstoned: dict[str, set[int]] = {ns: set() for ns in self.namespaces}
        self.bindings: dict[str, dict[Modality, str]] = {}
        self.components: dict[str, Component] = {}
        self.requirements: dict[str, Requirement] = {}
        self.documents: dict[str, object] = {}
        self.geometry: dict[str, GeometryArtifact] = {}
        self.state_machines: dict[str, object] = {}
        self.constraints: dict[str, object] = {}
        self.edges: list[TraceEdge] = []
        self.flagged_edges: set[tuple[str, str, str]] = set()
        self.interactions: list = []
        self.journal: list = []

    # -- UID registry ------------------------------------------------------

    def register_uid(self, namespace: str) -> Uid:
        if namespace not in self._counters:
            raise UnknownNamespaceError(f"unknown namespace {namespace!r}")
        with self._lock:
            serial = self._counters[namespace]
            self._counters[namespace] = serial + 1
            self._active[namespace].add(serial)
            return Uid(namespace, serial)

    def is_registered(self, uid: Uid | str) -> bool:
        try:
            parsed = uid if isinstance(uid, Uid) else Uid.parse(uid)
        except ProjectError:
            return False
        active = self._active.get(parsed.namespace)
        return active is not None and parsed.serial in active

    def is_tombstoned(self, uid: Uid | str) -> bool:
        try:
            parsed = uid if isinstance(uid, Uid) else Uid.parse(uid)
        except ProjectError:
            return False
        stones = self._tombstoned.get(parsed.namespace)
        return stones is not None and parsed.serial in stones

    def tombstone(self, uid: Uid | str) -> None:
        """Retire a UID; its serial is never reissued."""
        parsed = uid if isinstance(uid, Uid) else Uid.parse(_key(uid))
        with self._lock:
            self._active[parsed.namespace].discard(parsed.serial)
            self._tombstoned[parsed.namespace].add(parsed.serial)

    def active_uids(self) -> list[str]:
        out = []
        for ns in self.namespaces:
            out.extend(Uid(ns, n).render() for n in sorted(self._active[ns]))
        return out

    # -- modality index ----------------------------------------------------

    def bind(self, uid: Uid | str, modality: Modality, locator: str) -> ModalityBinding:
        key = _key(uid)
        if not self.is_registered(key):
            raise UnregisteredUidError(f"uid {key} is not registered")
        with self._lock:
            per_uid = self.bindings.setdefault(key, {})
            if modality in per_uid:
                raise DuplicateBindingError(f"{key} already bound for {modality.value}")
            per_uid[modality] = locator
            return ModalityBinding(key, modality, locator)

    def unbind(self, uid: Uid | str, modality: Modality) -> None:
        key = _key(uid)
        with self._lock:
            per_uid = self.bindings.get(key, {})
            per_uid.pop(modality, None)
            if not per_uid:
                self.bindings.pop(key, None)

    def resolve(self, uid: Uid | str) -> Resolved:
        key = _key(uid)
        if not self.is_registered(key):
            raise UnregisteredUidError(f"uid {key} is not registered")
        bindings = [
            ModalityBinding(key, modality, locator)
            for modality, locator in sorted(
                self.bindings.get(key, {}).items(), key=lambda kv: kv[0].value
            )
        ]
        return Resolved(key, bindings, self.node_payload(key))

    def node_payload(self, uid: Uid | str) -> object | None:
        key = _key(uid)
        for store in (
            self.components,
            self.requirements,
            self.documents,
            self.geometry,
            self.state_machines,
            self.constraints,
        ):
            if key in store:
                return store[key]
        return None

    # -- node creation helpers ----------------------------------------------

    def add_component(
        self,
        name: str,
        function_tags: tuple[str, ...] = (),
        attributes: dict[str, Quantity] | None = None,
        parent: str | None = None,
        geometry_ref: str | None = None,
    ) -> Component:
        with self._lock:
            if parent is not None and parent not in self.components:
                raise UnregisteredUidError(f"parent {parent} is not a component")
            self._check_sibling_name(name, parent)
            uid = self.register_uid("cmp").render()
            component = Component(
                uid, name, function_tags, dict(attributes or {}), parent, geometry_ref
            )
            self.components[uid] = component
            self.bind(uid, Modality.GRAPH, uid)
            if geometry_ref:
                self.bind(uid, Modality.GEOMETRY, geometry_ref)
            return component

    def _check_sibling_name(self, name: str, parent: str | None, skip: str | None = None) -> None:
        for other in self.components.values():
            if other.uid == skip:
                continue
            if other.parent == parent and other.name.lower() == name.lower():
                raise ProjectError(f"sibling component named {name!r} already exists")

    def set_attribute(self, uid: Uid | str, name: str, quantity: Quantity) -> None:
        key = _key(uid)
        if key not in self.components:
            raise UnregisteredUidError(f"{key} is not a component")
        _check_attribute(name, quantity)
        with self._lock:
            self.components[key].attributes[name] = quantity

    def add_requirement(
        self,
        text: str,
        req_type: ReqType,
        source: SourceRef,
        priority: Priority = Priority.MED,
        status: ReqStatus = ReqStatus.PROPOSED,
    ) -> Requirement:
        with self._lock:
            uid = self.register_uid("req").render()
            requirement = Requirement(uid, text, req_type, source, priority, status)
            self.requirements[uid] = requirement
            self.bind(uid, Modality.GRAPH, uid)
            self.bind(uid, Modality.DOCUMENT, source.locator())
            return requirement

    def add_geometry(self, path: str, digest: str, unit: str = "mm") -> GeometryArtifact:
        with self._lock:
            uid = self.register_uid("geo").render()
            artifact = GeometryArtifact(uid, path, digest, unit)
            self.geometry[uid] = artifact
            self.bind(uid, Modality.GRAPH, uid)
            return artifact

    def delete_node(self, uid: Uid | str) -> None:
        """Remove a node payload and its bindings; the UID is tombstoned.

        Edges touching the node are left in place so integrity checks can
        surface them as dangling.
        """
        key = _key(uid)
        with self._lock:
            for store in (
                self.components,
                self.requirements,
                self.documents,
                self.geometry,
                self.state_machines,
                self.constraints,
            ):
                store.pop(key, None)
            self.bindings.pop(key, None)
            self.tombstone(key)

    # -- trace graph ---------------------------------------------------------

    def add_trace(self, src: Uid | str, kind: TraceKind, dst: Uid | str) -> TraceEdge:
        src_key, dst_key = _key(src), _key(dst)
        if not self.is_registered(src_key):
            raise DanglingEdgeError(f"edge source {src_key} is not registered")
        if not self.is_registered(dst_key):
            raise DanglingEdgeError(f"edge target {dst_key} is not registered")
        edge = TraceEdge(src_key, kind, dst_key)
        with self._lock:
            if any(e.triple() == edge.triple() for e in self.edges):
                raise DuplicateEdgeError(f"duplicate trace {edge.triple()}")
            self.edges.append(edge)
            return edge

    def flag_edge(self, edge: TraceEdge) -> None:
        self.flagged_edges.add(edge.triple())

    def is_flagged(self, edge: TraceEdge) -> bool:
        return edge.triple() in self.flagged_edges

    def outgoing(self, uid: Uid | str) -> list[TraceEdge]:
        key = _key(uid)
        return [e for e in self.edges if e.src == key]

    def incoming(self, uid: Uid | str) -> list[TraceEdge]:
        key = _key(uid)
        return [e for e in self.edges if e.dst == key]

    def impact_set(
        self,
        start: Uid | str,
        kinds: set[TraceKind] | None = None,
        direction: Direction = Direction.BOTH,
    ) -> set[str]:
        """UIDs reachable from ``start`` via trace edges of the given kinds.

        ``start`` itself is excluded.  Flagged (stale) edges are skipped.
        """
        start_key = _key(start)
        if not self.is_registered(start_key):
            raise UnregisteredUidError(f"uid {start_key} is not registered")
        wanted = kinds if kinds is not None else set(TraceKind)
        forward: dict[str, list[str]] = {}
        backward: dict[str, list[str]] = {}
        for edge in self.edges:
            if edge.kind not in wanted or self.is_flagged(edge):
                continue
            forward.setdefault(edge.src, []).append(edge.dst)
            backward.setdefault(edge.dst, []).append(edge.src)

        seen = {start_key}
        queue = deque([start_key])
        while queue:
            node = queue.popleft()
            neighbors: list[str] = []
            if direction in (Direction.FORWARD, Direction.BOTH):
                neighbors.extend(forward.get(node, ()))
            if direction in (Direction.BACKWARD, Direction.BOTH):
                neighbors.extend(backward.get(node, ()))
            for nxt in neighbors:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        seen.discard(start_key)
        return seen

    # -- integrity ----------------------------------------------------------

    def validate_integrity(self) -> IntegrityReport:
        """Enumerate dangling bindings/edges and orphan UIDs (report-only)."""
        report = IntegrityReport()
        for uid in sorted(self.bindings):
            for modality in sorted(self.bindings[uid], key=lambda m: m.value):
                locator = self.bindings[uid][modality]
                if not self._locator_resolves(modality, locator):
                    report.dangling_bindings.append(ModalityBinding(uid, modality, locator))
        for edge in self.edges:
            if self.is_flagged(edge):
                continue
            if not (self.is_registered(edge.src) and self.is_registered(edge.dst)):
                report.dangling_edges.append(edge)
        for uid in self.active_uids():
            if not self.bindings.get(uid):
                report.orphan_uids.append(uid)
        return report

    def _locator_resolves(self, modality: Modality, locator: str) -> bool:
        if modality is Modality.GRAPH:
            return self.node_payload(locator) is not None
        if modality is Modality.DOCUMENT:
            doc_uid, sep, span = locator.partition(":")
            doc = self.documents.get(doc_uid)
            if doc is None:
                return False
            if not sep:
                return True
            start_s, sep2, end_s = span.partition("-")
            if not sep2 or not start_s.isdigit() or not end_s.isdigit():
                return False
            start, end = int(start_s), int(end_s)
            return 0 <= start < end <= len(doc.text)
        if modality is Modality.GEOMETRY:
            filename = locator.split("#", 1)[0]
            return any(
                art.path == filename or art.path.rsplit("/", 1)[-1] == filename
                for art in self.geometry.values()
            )
        return False
