"""Architecture synthesis: components and interactions from requirements,
the design structure matrix view, and the human-in-the-loop edit journal.

DSM convention is row-receiver: a directed interaction provider -> receiver
marks the cell at (receiver row, provider column).  Undirected interactions
appear symmetrically.  Component identification is lexical (noun runs around
modal verbs), which is deliberate: synthesis must be a pure, reproducible
function of the requirement texts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from .core import (
    Component,
    Modality,
    Project,
    ProjectError,
    ReqStatus,
    Requirement,
    TraceEdge,
    TraceKind,
    UnregisteredUidError,
)
from .docpipe import ACTION_VERBS, STOPWORDS, _UNIT_TOKENS, _WORD_RE, _is_verb_form
from .units import Quantity


class EditError(ProjectError):
    pass


class InteractionKind(str, Enum):
    SPATIAL = "Spatial"
    ENERGY = "Energy"
    INFORMATION = "Information"
    MATERIAL = "Material"


KIND_LETTERS = {
    InteractionKind.SPATIAL: "S",
    InteractionKind.ENERGY: "E",
    InteractionKind.INFORMATION: "I",
    InteractionKind.MATERIAL: "M",
}
KIND_ORDER = (
    InteractionKind.SPATIAL,
    InteractionKind.ENERGY,
    InteractionKind.INFORMATION,
    InteractionKind.MATERIAL,
)
LETTER_KINDS = {v: k for k, v in KIND_LETTERS.items()}

# flow objects (what moves between components), never component candidates
FLOW_NOUNS = frozenset(
    "data information telemetry signal command message image picture heat".split()
)

_PREPOSITIONS = frozenset("to from with between into onto".split())
_MODALS = frozenset("shall must will should".split())
_DETERMINERS = frozenset(
    "the a an its their each every any all this that these those".split()
)


def load_verb_table(path: str | None = None) -> dict[str, dict]:
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    text = resources.files("systhread").joinpath("data/verb_table.json").read_text("utf-8")
    return json.loads(text)


_DEFAULT_VERB_TABLE = load_verb_table()


@dataclass
class Interaction:
    a: str
    b: str
    kind: InteractionKind
    directed: bool
    rationale: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ProjectError(f"self-interaction on {self.a}")
        if not self.directed and self.a > self.b:
            self.a, self.b = self.b, self.a

    def merge_key(self) -> tuple[str, str, str]:
        return (self.a, self.b, self.kind.value)


@dataclass
class Dsm:
    order: list[str]
    cells: dict[tuple[str, str], frozenset[InteractionKind]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.order)) != len(self.order):
            raise ProjectError("DSM order contains duplicates")
        known = set(self.order)
        for (row, col), kinds in list(self.cells.items()):
            if row == col:
                raise ProjectError(f"DSM diagonal cell ({row},{col}) must stay empty")
            if row not in known or col not in known:
                raise ProjectError(f"DSM cell ({row},{col}) references unknown component")
            if not kinds:
                del self.cells[(row, col)]

    def kinds_at(self, row: str, col: str) -> frozenset[InteractionKind]:
        return self.cells.get((row, col), frozenset())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dsm):
            return NotImplemented
        return self.order == other.order and self.cells == other.cells


@dataclass
class DsmGraph:
    """Graph view of a DSM: nodes plus typed interaction edges."""

    nodes: list[str]
    interactions: list[Interaction]


@dataclass
class ComponentCandidate:
    name: str
    key: str
    first_pos: tuple[int, int]
    rationale: list[str] = field(default_factory=list)


def singularize(word: str) -> str:
    lowered = word.lower()
    if len(lowered) > 3 and lowered.endswith("ies"):
        return lowered[:-3] + "y"
    if lowered.endswith(("sses", "shes", "ches", "xes", "zes", "ses")):
        return lowered[:-2]
    if lowered.endswith("s") and not lowered.endswith(("ss", "us", "is")):
        return lowered[:-1]
    return lowered


def _phrase_key(phrase: str) -> str:
    words = phrase.lower().split()
    if not words:
        return ""
    words[-1] = singularize(words[-1])
    return " ".join(words)


def _display_name(surface: str) -> str:
    words = []
    for word in surface.split():
        words.append(word if word.isupper() else word.capitalize())
    return " ".join(words)


@dataclass
class _Token:
    text: str
    start: int
    end: int

    @property
    def lowered(self) -> str:
        return self.text.lower()


def _tokenize(text: str) -> list[_Token]:
    return [_Token(m.group(0), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


def _is_noun_token(token: _Token) -> bool:
    lowered = token.lowered
    return (
        token.text[0].isalpha()
        and lowered not in STOPWORDS
        and lowered not in _UNIT_TOKENS
        and lowered not in ACTION_VERBS
        and not _is_verb_form(lowered)
    )


def _verb_stem(lowered: str, table: dict[str, dict]) -> str | None:
    if lowered in table:
        return lowered
    for stem in table:
        for suffix in ("s", "es", "ed", "ing"):
            if lowered == stem + suffix:
                return stem
        if stem.endswith("e") and lowered in (stem[:-1] + "ing", stem[:-1] + "ed"):
            return stem
    return None


def _candidate_phrases(text: str, verb_table: dict[str, dict]) -> list[tuple[str, int, int]]:
    """Noun runs in subject or object position of a modal sentence."""
    tokens = _tokenize(text)
    runs: list[tuple[int, int]] = []  # (first token idx, last token idx)
    i = 0
    while i < len(tokens):
        if _is_noun_token(tokens[i]):
            j = i
            while j + 1 < len(tokens) and _is_noun_token(tokens[j + 1]):
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1

    modal_idx = next((k for k, t in enumerate(tokens) if t.lowered in _MODALS), None)
    if modal_idx is None:
        return []

    picked: list[tuple[int, int]] = []
    # subject: the run ending immediately before the modal
    for run in runs:
        if run[1] == modal_idx - 1:
            picked.append(run)
            break
    # objects: walk back over determiners to the governing verb/preposition
    verb_idx = next(
        (
            k
            for k, t in enumerate(tokens)
            if k > modal_idx and _verb_stem(t.lowered, verb_table)
        ),
        None,
    )
    for run in runs:
        if run[0] <= modal_idx:
            continue
        governor = run[0] - 1
        while governor >= 0 and tokens[governor].lowered in _DETERMINERS:
            governor -= 1
        if governor < 0:
            continue
        if tokens[governor].lowered in _PREPOSITIONS or governor == verb_idx:
            picked.append(run)

    phrases = []
    for first, last in sorted(set(picked)):
        surface = " ".join(t.text for t in tokens[first : last + 1])
        if _phrase_key(surface) in FLOW_NOUNS:
            continue
        phrases.append((surface, tokens[first].start, tokens[last].end))
    return phrases


def identify_components(
    reqs: list[Requirement], verb_table: dict[str, dict] | None = None
) -> list[ComponentCandidate]:
    """Candidate components from requirement sentences, deduplicated by
    case-insensitive singularized name, ordered by first occurrence."""
    table = verb_table or _DEFAULT_VERB_TABLE
    found: dict[str, ComponentCandidate] = {}
    for position, req in enumerate(reqs):
        for surface, start, _end in _candidate_phrases(req.text, table):
            key = _phrase_key(surface)
            if not key:
                continue
            candidate = found.get(key)
            if candidate is None:
                candidate = ComponentCandidate(
                    _display_name(surface), key, (position, start), []
                )
                found[key] = candidate
            if req.uid not in candidate.rationale:
                candidate.rationale.append(req.uid)
    return sorted(found.values(), key=lambda c: c.first_pos)


def _mentions(text: str, components: list[Component]) -> list[tuple[int, Component]]:
    """Components mentioned in the text, by token-sequence match, in order."""
    tokens = [singularize(t.lowered) for t in _tokenize(text)]
    hits: list[tuple[int, Component]] = []
    for component in components:
        name_tokens = [singularize(w) for w in component.name.lower().split()]
        if not name_tokens:
            continue
        for i in range(len(tokens) - len(name_tokens) + 1):
            if tokens[i : i + len(name_tokens)] == name_tokens:
                hits.append((i, component))
                break
    hits.sort(key=lambda pair: pair[0])
    return hits


def infer_interactions(
    reqs: list[Requirement],
    components: list[Component],
    verb_table: dict[str, dict] | None = None,
) -> list[Interaction]:
    """Pairwise interactions for every requirement sentence that mentions two
    or more known components, typed by the verb table, merged on duplicates."""
    table = verb_table or _DEFAULT_VERB_TABLE
    merged: dict[tuple[str, str, str], Interaction] = {}
    for req in reqs:
        mentions = _mentions(req.text, components)
        if len(mentions) < 2:
            continue
        verb_entry = None
        for token in _tokenize(req.text):
            stem = _verb_stem(token.lowered, table)
            if stem is not None:
                verb_entry = table[stem]
                break
        if verb_entry is None:
            continue
        kind = InteractionKind(verb_entry["kind"])
        directed = bool(verb_entry["directed"])
        source = mentions[0][1]
        for _pos, target in mentions[1:]:
            if target.uid == source.uid:
                continue
            interaction = Interaction(source.uid, target.uid, kind, directed, [req.uid])
            existing = merged.get(interaction.merge_key())
            if existing is None:
                merged[interaction.merge_key()] = interaction
            else:
                for uid in interaction.rationale:
                    if uid not in existing.rationale:
                        existing.rationale.append(uid)
    return list(merged.values())


def build_dsm(components: list[Component] | list[str], interactions: list[Interaction]) -> Dsm:
    order = [c if isinstance(c, str) else c.uid for c in components]
    known = set(order)
    cells: dict[tuple[str, str], set[InteractionKind]] = {}
    for interaction in interactions:
        if interaction.a not in known or interaction.b not in known:
            raise ProjectError(
                f"interaction endpoint {interaction.a}/{interaction.b} not in component list"
            )
        # row-receiver: provider a marks column a on receiver b's row
        cells.setdefault((interaction.b, interaction.a), set()).add(interaction.kind)
        if not interaction.directed:
            cells.setdefault((interaction.a, interaction.b), set()).add(interaction.kind)
    return Dsm(order, {key: frozenset(kinds) for key, kinds in cells.items()})


def dsm_to_graph(dsm: Dsm) -> DsmGraph:
    """Interaction-edge view: symmetric cell pairs collapse to one undirected
    edge; asymmetric cells are directed provider -> receiver."""
    interactions: list[Interaction] = []
    seen_undirected: set[tuple[str, str, InteractionKind]] = set()
    for (row, col), kinds in sorted(dsm.cells.items()):
        for kind in sorted(kinds, key=lambda k: k.value):
            if kind in dsm.kinds_at(col, row):
                key = (min(row, col), max(row, col), kind)
                if key in seen_undirected:
                    continue
                seen_undirected.add(key)
                interactions.append(Interaction(key[0], key[1], kind, False))
            else:
                interactions.append(Interaction(col, row, kind, True))
    return DsmGraph(list(dsm.order), interactions)


def graph_to_dsm(graph: DsmGraph, order: list[str] | None = None) -> Dsm:
    return build_dsm(order if order is not None else graph.nodes, graph.interactions)


def project_dsm(project: Project, component_filter: list[str] | None = None) -> Dsm:
    order = component_filter if component_filter is not None else list(project.components)
    interactions = [
        i for i in project.interactions if i.a in set(order) and i.b in set(order)
    ]
    return build_dsm(order, interactions)


def dsm_to_csv(dsm: Dsm, names: dict[str, str] | None = None) -> str:
    """Delimited DSM: header row/col of component names, cells are ;-joined
    kind letters, UTF-8 with LF line endings."""
    label = lambda uid: (names or {}).get(uid, uid)
    lines = ["," + ",".join(_csv_escape(label(c)) for c in dsm.order)]
    for row in dsm.order:
        cells = []
        for col in dsm.order:
            kinds = dsm.kinds_at(row, col)
            cells.append(";".join(KIND_LETTERS[k] for k in KIND_ORDER if k in kinds))
        lines.append(_csv_escape(label(row)) + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def _csv_escape(value: str) -> str:
    if any(ch in value for ch in ",\"\n"):
        return '"' + value.replace('"', '""') + '"'
    return value


# -- refinement edits and the journal -----------------------------------------


class EditOp(str, Enum):
    ADD_COMPONENT = "AddComponent"
    REMOVE_COMPONENT = "RemoveComponent"
    RENAME_COMPONENT = "RenameComponent"
    MERGE_COMPONENTS = "MergeComponents"
    SET_CELL = "SetCell"
    CLEAR_CELL = "ClearCell"
    SET_ATTRIBUTE = "SetAttribute"
    ACCEPT_REQUIREMENT = "AcceptRequirement"
    REJECT_REQUIREMENT = "RejectRequirement"
    EDIT_REQUIREMENT_TEXT = "EditRequirementText"


@dataclass
class JournalEntry:
    op: str
    payload: dict
    author: str = "system"
    timestamp: int = 0


# a RefinementEdit is a journal entry whose op is one of EditOp
RefinementEdit = JournalEntry

_SYSTEM_OPS = ("IngestDocument", "ExtractRequirements", "Snapshot")


def apply_edit(project: Project, edit: RefinementEdit) -> None:
    """Validate and apply one refinement edit, then append it to the journal."""
    try:
        op = EditOp(edit.op)
    except ValueError:
        raise EditError(f"unknown edit op {edit.op!r}") from None
    handler = _EDIT_HANDLERS[op]
    handler(project, edit.payload)
    project.journal.append(edit)


def _require(payload: dict, *keys: str) -> None:
    for key in keys:
        if key not in payload:
            raise EditError(f"edit payload missing {key!r}")


def _component(project: Project, uid: str) -> Component:
    component = project.components.get(uid)
    if component is None:
        raise EditError(f"{uid} is not a component")
    return component


def _edit_add_component(project: Project, payload: dict) -> None:
    _require(payload, "name")
    attributes = {
        name: Quantity.parse(f"{spec['value']} {spec['unit']}")
        for name, spec in payload.get("attributes", {}).items()
    }
    project.add_component(
        payload["name"],
        tuple(payload.get("function_tags", ())),
        attributes,
        payload.get("parent"),
        payload.get("geometry_ref"),
    )


def _edit_remove_component(project: Project, payload: dict) -> None:
    _require(payload, "uid")
    uid = payload["uid"]
    _component(project, uid)
    project.interactions = [
        i for i in project.interactions if uid not in (i.a, i.b)
    ]
    for edge in project.edges:
        if uid in (edge.src, edge.dst):
            project.flag_edge(edge)
    project.delete_node(uid)


def _edit_rename_component(project: Project, payload: dict) -> None:
    _require(payload, "uid", "name")
    component = _component(project, payload["uid"])
    project._check_sibling_name(payload["name"], component.parent, skip=component.uid)
    component.name = payload["name"]


def _edit_merge_components(project: Project, payload: dict) -> None:
    _require(payload, "survivor", "absorbed")
    survivor = _component(project, payload["survivor"])
    absorbed = _component(project, payload["absorbed"])
    if survivor.uid == absorbed.uid:
        raise EditError("cannot merge a component with itself")

    merged: dict[tuple[str, str, str], Interaction] = {}
    for interaction in project.interactions:
        a = survivor.uid if interaction.a == absorbed.uid else interaction.a
        b = survivor.uid if interaction.b == absorbed.uid else interaction.b
        if a == b:
            continue  # no self-loops from the merge
        moved = Interaction(a, b, interaction.kind, interaction.directed, list(interaction.rationale))
        existing = merged.get(moved.merge_key())
        if existing is None:
            merged[moved.merge_key()] = moved
        else:
            for uid in moved.rationale:
                if uid not in existing.rationale:
                    existing.rationale.append(uid)
    project.interactions = list(merged.values())

    surviving_edges: list[TraceEdge] = []
    triples = set()
    for edge in project.edges:
        src = survivor.uid if edge.src == absorbed.uid else edge.src
        dst = survivor.uid if edge.dst == absorbed.uid else edge.dst
        if src == dst:
            continue
        moved_edge = TraceEdge(src, edge.kind, dst)
        if moved_edge.triple() in triples:
            continue
        triples.add(moved_edge.triple())
        surviving_edges.append(moved_edge)
        if project.is_flagged(edge):
            project.flag_edge(moved_edge)
    project.edges = surviving_edges

    for name, quantity in absorbed.attributes.items():
        survivor.attributes.setdefault(name, quantity)
    survivor.function_tags = tuple(sorted(set(survivor.function_tags) | set(absorbed.function_tags)))
    absorbed_bindings = dict(project.bindings.get(absorbed.uid, {}))
    for child in project.components.values():
        if child.parent == absorbed.uid:
            child.parent = survivor.uid
    project.delete_node(absorbed.uid)
    geometry_locator = absorbed_bindings.get(Modality.GEOMETRY)
    if geometry_locator and Modality.GEOMETRY not in project.bindings.get(survivor.uid, {}):
        project.bind(survivor.uid, Modality.GEOMETRY, geometry_locator)
        survivor.geometry_ref = survivor.geometry_ref or absorbed.geometry_ref


def _cell_kind(payload: dict) -> InteractionKind:
    try:
        return InteractionKind(payload["kind"])
    except ValueError:
        raise EditError(f"unknown interaction kind {payload['kind']!r}") from None


def _edit_set_cell(project: Project, payload: dict) -> None:
    _require(payload, "row", "col", "kind")
    row, col = payload["row"], payload["col"]
    _component(project, row)
    _component(project, col)
    if row == col:
        raise EditError("diagonal DSM cells must stay empty")
    kind = _cell_kind(payload)
    directed = kind is not InteractionKind.SPATIAL
    candidate = Interaction(col, row, kind, directed, list(payload.get("rationale", [])))
    for interaction in project.interactions:
        if interaction.merge_key() == candidate.merge_key():
            raise EditError(f"cell ({row},{col}) already carries {kind.value}")
    project.interactions.append(candidate)


def _edit_clear_cell(project: Project, payload: dict) -> None:
    _require(payload, "row", "col")
    row, col = payload["row"], payload["col"]
    kind = _cell_kind(payload) if "kind" in payload else None
    remaining = []
    removed = 0
    for interaction in project.interactions:
        hit_directed = interaction.directed and (interaction.a, interaction.b) == (col, row)
        hit_undirected = not interaction.directed and {interaction.a, interaction.b} == {row, col}
        if (hit_directed or hit_undirected) and (kind is None or interaction.kind is kind):
            removed += 1
            continue
        remaining.append(interaction)
    if removed == 0:
        raise EditError(f"cell ({row},{col}) has nothing to clear")
    project.interactions = remaining


def _edit_set_attribute(project: Project, payload: dict) -> None:
    _require(payload, "uid", "name", "value", "unit")
    _component(project, payload["uid"])
    project.set_attribute(
        payload["uid"], payload["name"], Quantity.parse(f"{payload['value']} {payload['unit']}")
    )


def _requirement(project: Project, uid: str) -> Requirement:
    requirement = project.requirements.get(uid)
    if requirement is None:
        raise EditError(f"{uid} is not a requirement")
    return requirement


def _edit_accept_requirement(project: Project, payload: dict) -> None:
    _require(payload, "uid")
    _requirement(project, payload["uid"]).status = ReqStatus.ACCEPTED


def _edit_reject_requirement(project: Project, payload: dict) -> None:
    _require(payload, "uid")
    _requirement(project, payload["uid"]).status = ReqStatus.REJECTED


def _edit_requirement_text(project: Project, payload: dict) -> None:
    _require(payload, "uid", "text")
    if not payload["text"].strip():
        raise EditError("requirement text must be non-empty")
    requirement = _requirement(project, payload["uid"])
    requirement.text = payload["text"]
    requirement.status = ReqStatus.MODIFIED


_EDIT_HANDLERS = {
    EditOp.ADD_COMPONENT: _edit_add_component,
    EditOp.REMOVE_COMPONENT: _edit_remove_component,
    EditOp.RENAME_COMPONENT: _edit_rename_component,
    EditOp.MERGE_COMPONENTS: _edit_merge_components,
    EditOp.SET_CELL: _edit_set_cell,
    EditOp.CLEAR_CELL: _edit_clear_cell,
    EditOp.SET_ATTRIBUTE: _edit_set_attribute,
    EditOp.ACCEPT_REQUIREMENT: _edit_accept_requirement,
    EditOp.REJECT_REQUIREMENT: _edit_reject_requirement,
    EditOp.EDIT_REQUIREMENT_TEXT: _edit_requirement_text,
}


# -- synthesis orchestration ---------------------------------------------------


def synthesize(
    project: Project,
    author: str = "system",
    timestamp: int = 0,
    verb_table: dict[str, dict] | None = None,
) -> list[Component]:
    """Run component identification and interaction inference over the
    project's non-rejected requirements, then journal a snapshot.

    Components already present with the same normalized name are reused;
    interactions are rebuilt from scratch.
    """
    from . import store  # local import: store serializes every model type

    reqs = [
        r for r in project.requirements.values() if r.status is not ReqStatus.REJECTED
    ]
    candidates = identify_components(reqs, verb_table)
    by_key = {_phrase_key(c.name): c for c in project.components.values()}
    components: list[Component] = []
    for candidate in candidates:
        component = by_key.get(candidate.key)
        if component is None:
            component = project.add_component(candidate.name)
            by_key[candidate.key] = component
        components.append(component)
        for req_uid in candidate.rationale:
            triple = (component.uid, TraceKind.DERIVED_FROM.value, req_uid)
            if not any(e.triple() == triple for e in project.edges):
                project.add_trace(component.uid, TraceKind.DERIVED_FROM, req_uid)
    project.interactions = infer_interactions(reqs, components, verb_table)
    snapshot = JournalEntry(
        "Snapshot", {"state": store.serialize_state(project)}, author, timestamp
    )
    project.journal.append(snapshot)
    return components


def replay_journal(journal: list[JournalEntry]) -> Project:
    """Rebuild a project by replaying journal entries from scratch.

    Snapshot entries restore recorded state; refinement edits re-apply; the
    ingestion/extraction entries re-run their deterministic operations.
    """
    from . import docpipe, store

    project = Project()
    for entry in journal:
        if entry.op == "Snapshot":
            project = store.restore_state(entry.payload["state"])
            project.journal.append(entry)
        elif entry.op == "IngestDocument":
            payload = entry.payload
            artifact = docpipe.ingest_document(
                project,
                payload["title"],
                payload["text"].encode("utf-8"),
                docpipe.DocFormat(payload["format"]),
            )
            if artifact.uid != payload["uid"]:
                raise ProjectError(
                    f"journal replay diverged: expected {payload['uid']}, got {artifact.uid}"
                )
            project.journal.append(entry)
        elif entry.op == "ExtractRequirements":
            docs = [project.documents[uid] for uid in entry.payload["doc_uids"]]
            created = []
            for doc in docs:
                candidates = docpipe.annotate_candidates(doc)
                created.extend(docpipe.convert_to_requirements(project, candidates))
            expected = entry.payload.get("requirement_uids")
            if expected is not None and [r.uid for r in created] != list(expected):
                raise ProjectError("journal replay diverged on extraction")
            project.journal.append(entry)
        else:
            apply_edit(project, entry)
    return project
