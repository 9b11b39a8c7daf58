"""ISO 10303-21 exchange file parser and product-structure lift.

The lexical/syntactic layer parses any Part 21 clear-text file: strings with
quote escapes, ``.ENUM.`` values, ``#n`` references, typed and untyped
aggregates, ``$``/``*`` placeholders, and complex (external-mapped) instances.
Unrecognized entity types are preserved raw.

The semantic lift touches six entity types: PRODUCT,
NEXT_ASSEMBLY_USAGE_OCCURRENCE, ITEM_DEFINED_TRANSFORMATION,
AXIS2_PLACEMENT_3D, CARTESIAN_POINT and DIRECTION.  Geometry is approximated
by each product's point cloud; all lengths are normalized to millimeters at
parse time using the file's SI_UNIT context (defaulting to millimeters).

Point ownership convention: a product owns the CARTESIAN_POINTs reachable
from its shape representation's items without traversing placements,
transforms, or other representations.  In a single-product file, points not
referenced by any entity ("free points") also belong to that product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class StepError(Exception):
    """Parse failure with position context."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)


# -- value model ----------------------------------------------------------------


@dataclass(frozen=True)
class Ref:
    id: int

    def __str__(self) -> str:
        return f"#{self.id}"


@dataclass(frozen=True)
class EnumValue:
    name: str

    def __str__(self) -> str:
        return f".{self.name}."


class Unset:
    """The ``$`` placeholder."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "$"


class Derived:
    """The ``*`` placeholder."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "*"


UNSET = Unset()
DERIVED = Derived()


@dataclass(frozen=True)
class Typed:
    """A typed parameter, e.g. ``LENGTH_MEASURE(25.4)``."""

    name: str
    params: tuple

    def __str__(self) -> str:
        return f"{self.name}({', '.join(map(str, self.params))})"


@dataclass
class StepEntity:
    id: int
    type_name: str
    params: tuple
    segments: tuple[tuple[str, tuple], ...] | None = None  # complex instances

    @property
    def is_complex(self) -> bool:
        return self.segments is not None

    def segment(self, name: str) -> tuple | None:
        if self.segments is None:
            return self.params if self.type_name == name else None
        for seg_name, seg_params in self.segments:
            if seg_name == name:
                return seg_params
        return None

    def has_type(self, name: str) -> bool:
        if self.segments is None:
            return self.type_name == name
        return any(seg_name == name for seg_name, _ in self.segments)

    def type_contains(self, fragment: str) -> bool:
        if self.segments is None:
            return fragment in self.type_name
        return any(fragment in seg_name for seg_name, _ in self.segments)


# -- tokenizer -------------------------------------------------------------------

_PUNCT = "();,=/*"


@dataclass(frozen=True)
class Token:
    kind: str  # keyword | ref | string | enum | number | punct
    text: str
    line: int
    col: int


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        return data.decode("latin-1")


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    line = 1
    line_start = 0
    n = len(text)

    def pos() -> tuple[int, int]:
        return line, i - line_start + 1

    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            i += 1
            line_start = i
            continue
        if ch.isspace():
            i += 1
            continue
        if ch == "/" and i + 1 < n and text[i + 1] == "*":
            end = text.find("*/", i + 2)
            if end == -1:
                raise StepError("unterminated comment", *pos())
            for k in range(i, end):
                if text[k] == "\n":
                    line += 1
                    line_start = k + 1
            i = end + 2
            continue
        start_line, start_col = pos()
        if ch == "'":
            j = i + 1
            while True:
                if j >= n:
                    raise StepError("unterminated string", start_line, start_col)
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        j += 2
                        continue
                    break
                if text[j] == "\n":
                    raise StepError("newline inside string", start_line, start_col)
                j += 1
            tokens.append(Token("string", text[i : j + 1], start_line, start_col))
            i = j + 1
            continue
        if ch == "#":
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            if j == i + 1:
                raise StepError("malformed instance reference", start_line, start_col)
            tokens.append(Token("ref", text[i:j], start_line, start_col))
            i = j
            continue
        if ch == ".":
            j = text.find(".", i + 1)
            if j == -1:
                raise StepError("unterminated enumeration", start_line, start_col)
            tokens.append(Token("enum", text[i : j + 1], start_line, start_col))
            i = j + 1
            continue
        if ch.isdigit() or (ch in "+-" and i + 1 < n and (text[i + 1].isdigit() or text[i + 1] == ".")):
            j = i + 1
            while j < n and (text[j].isdigit() or text[j] in ".eE+-"):
                # stop a trailing +/- that is not an exponent sign
                if text[j] in "+-" and text[j - 1] not in "eE":
                    break
                j += 1
            tokens.append(Token("number", text[i:j], start_line, start_col))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] in "_-"):
                j += 1
            tokens.append(Token("keyword", text[i:j], start_line, start_col))
            i = j
            continue
        if ch in "$*" :
            tokens.append(Token("punct", ch, start_line, start_col))
            i += 1
            continue
        if ch in "();,=":
            tokens.append(Token("punct", ch, start_line, start_col))
            i += 1
            continue
        raise StepError(f"unexpected character {ch!r}", start_line, start_col)
    return tokens


def serialize_tokens(tokens: list[Token]) -> str:
    """Re-render a token stream; whitespace-insignificant round trip."""
    parts = []
    prev: Token | None = None
    for token in tokens:
        if prev is not None and _needs_space(prev, token):
            parts.append(" ")
        parts.append(token.text)
        prev = token
    return "".join(parts)


def _needs_space(prev: Token, token: Token) -> bool:
    gluey = {"keyword", "number", "ref", "enum"}
    return prev.kind in gluey and token.kind in gluey


# -- exchange-structure parser ----------------------------------------------------


class _TokenCursor:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        token = self.peek()
        if token is None:
            last = self.tokens[-1] if self.tokens else None
            raise StepError(
                "unexpected end of file",
                last.line if last else 1,
                last.col if last else 1,
            )
        self.pos += 1
        return token

    def expect(self, text: str) -> Token:
        token = self.next()
        if token.text.upper() != text.upper():
            raise StepError(f"expected {text!r}, found {token.text!r}", token.line, token.col)
        return token


def _unescape_string(raw: str) -> str:
    return raw[1:-1].replace("''", "'")


def _parse_value(cur: _TokenCursor):
    token = cur.next()
    if token.kind == "string":
        return _unescape_string(token.text)
    if token.kind == "ref":
        return Ref(int(token.text[1:]))
    if token.kind == "enum":
        return EnumValue(token.text[1:-1])
    if token.kind == "number":
        text = token.text
        if any(c in text for c in ".eE"):
            return float(text)
        return int(text)
    if token.kind == "punct" and token.text == "$":
        return UNSET
    if token.kind == "punct" and token.text == "*":
        return DERIVED
    if token.kind == "punct" and token.text == "(":
        return _parse_param_list_body(cur)
    if token.kind == "keyword":
        nxt = cur.peek()
        if nxt is not None and nxt.text == "(":
            cur.next()
            return Typed(token.text.upper(), tuple(_parse_param_list_body(cur)))
        return token.text
    raise StepError(f"unexpected token {token.text!r}", token.line, token.col)


def _parse_param_list_body(cur: _TokenCursor) -> list:
    """Parse values until the matching ')'; the '(' is already consumed."""
    values = []
    token = cur.peek()
    if token is not None and token.text == ")":
        cur.next()
        return values
    while True:
        values.append(_parse_value(cur))
        token = cur.next()
        if token.text == ")":
            return values
        if token.text != ",":
            raise StepError(f"expected ',' or ')', found {token.text!r}", token.line, token.col)


@dataclass
class StepHeader:
    file_name: str = ""
    schema: str = ""
    timestamp: str = ""


@dataclass
class ProductNode:
    id: int
    name: str
    children: list[tuple[int, "Transform"]] = field(default_factory=list)
    points: list[np.ndarray] = field(default_factory=list)
    primary_axis: np.ndarray | None = None


@dataclass
class StepModel:
    header: StepHeader
    entities: dict[int, StepEntity]
    products: list[ProductNode]
    unit_scale_mm: float = 1.0
    data_tokens: list[Token] = field(default_factory=list)

    def product_by_name(self, name: str) -> ProductNode:
        for product in self.products:
            if product.name == name:
                return product
        raise KeyError(f"no product named {name!r}")

    def product_by_id(self, product_id: int) -> ProductNode:
        for product in self.products:
            if product.id == product_id:
                return product
        raise KeyError(f"no product #{product_id}")

    def roots(self) -> list[ProductNode]:
        child_ids = {cid for p in self.products for cid, _ in p.children}
        return [p for p in self.products if p.id not in child_ids]


def _iter_refs(value) -> list[Ref]:
    out = []
    stack = [value]
    while stack:
        item = stack.pop()
        if isinstance(item, Ref):
            out.append(item)
        elif isinstance(item, (list, tuple)):
            stack.extend(item)
        elif isinstance(item, Typed):
            stack.extend(item.params)
    return out


def entity_refs(entity: StepEntity) -> list[Ref]:
    if entity.segments is None:
        return _iter_refs(list(entity.params))
    out = []
    for _name, params in entity.segments:
        out.extend(_iter_refs(list(params)))
    return out


def parse_step(data: bytes) -> StepModel:
    """Full Part 21 parse plus product-structure lift."""
    text = _decode(data)
    tokens = tokenize(text)
    cur = _TokenCursor(tokens)

    first = cur.next()
    if first.text.upper() != "ISO-10303-21":
        raise StepError("missing ISO-10303-21 header", first.line, first.col)
    cur.expect(";")

    header = StepHeader()
    entities: dict[int, StepEntity] = {}
    data_start = data_end = cur.pos
    saw_end = False
    while True:
        token = cur.next()
        upper = token.text.upper()
        if upper == "HEADER":
            cur.expect(";")
            _parse_header_section(cur, header)
        elif upper == "DATA":
            cur.expect(";")
            data_start = cur.pos
            _parse_data_section(cur, entities)
            data_end = cur.pos - 2  # before ENDSEC ;
        elif upper == "END-ISO-10303-21":
            cur.expect(";")
            saw_end = True
            break
        else:
            raise StepError(f"unexpected section {token.text!r}", token.line, token.col)
    if not saw_end:
        raise StepError("missing END-ISO-10303-21 terminator")

    _check_references(entities)
    model = StepModel(header, entities, [], _detect_unit_scale(entities), tokens[data_start:data_end])
    _lift_products(model)
    _check_acyclic(model)
    return model


def _parse_header_section(cur: _TokenCursor, header: StepHeader) -> None:
    while True:
        token = cur.next()
        if token.text.upper() == "ENDSEC":
            cur.expect(";")
            return
        if token.kind != "keyword":
            raise StepError(f"expected header entity, found {token.text!r}", token.line, token.col)
        cur.expect("(")
        params = _parse_param_list_body(cur)
        cur.expect(";")
        name = token.text.upper()
        if name == "FILE_NAME" and params:
            header.file_name = params[0] if isinstance(params[0], str) else ""
            if len(params) > 1 and isinstance(params[1], str):
                header.timestamp = params[1]
        elif name == "FILE_SCHEMA" and params:
            schemas = params[0] if isinstance(params[0], list) else params
            header.schema = schemas[0] if schemas and isinstance(schemas[0], str) else ""


def _parse_data_section(cur: _TokenCursor, entities: dict[int, StepEntity]) -> None:
    while True:
        token = cur.next()
        if token.text.upper() == "ENDSEC":
            cur.expect(";")
            return
        if token.kind != "ref":
            raise StepError(f"expected instance id, found {token.text!r}", token.line, token.col)
        instance_id = int(token.text[1:])
        if instance_id in entities:
            raise StepError(f"duplicate instance id #{instance_id}", token.line, token.col)
        cur.expect("=")
        head = cur.next()
        if head.kind == "keyword":
            cur.expect("(")
            params = _parse_param_list_body(cur)
            entities[instance_id] = StepEntity(instance_id, head.text.upper(), tuple(params))
        elif head.text == "(":
            segments = []
            while True:
                seg = cur.next()
                if seg.text == ")":
                    break
                if seg.kind != "keyword":
                    raise StepError(
                        f"expected entity name in complex instance, found {seg.text!r}",
                        seg.line,
                        seg.col,
                    )
                cur.expect("(")
                seg_params = _parse_param_list_body(cur)
                segments.append((seg.text.upper(), tuple(seg_params)))
            type_name = "+".join(name for name, _ in segments)
            entities[instance_id] = StepEntity(
                instance_id, type_name, (), tuple(segments)
            )
        else:
            raise StepError(f"expected entity, found {head.text!r}", head.line, head.col)
        cur.expect(";")


def _check_references(entities: dict[int, StepEntity]) -> None:
    for entity in entities.values():
        for ref in entity_refs(entity):
            if ref.id not in entities:
                raise StepError(f"unresolved reference #{ref.id} in #{entity.id}")


_SI_PREFIX_MM = {
    "MILLI": 1.0,
    "CENTI": 10.0,
    "DECI": 100.0,
    None: 1000.0,
    "KILO": 1_000_000.0,
    "MICRO": 0.001,
}


def _detect_unit_scale(entities: dict[int, StepEntity]) -> float:
    for entity_id in sorted(entities):
        entity = entities[entity_id]
        params = entity.segment("SI_UNIT")
        if params is None or len(params) < 2:
            continue
        unit_name = params[1]
        if not (isinstance(unit_name, EnumValue) and unit_name.name.upper() == "METRE"):
            continue
        prefix = params[0]
        key = prefix.name.upper() if isinstance(prefix, EnumValue) else None
        scale = _SI_PREFIX_MM.get(key)
        if scale is not None:
            return scale
    log.debug("no SI length unit found; assuming millimeters")
    return 1.0


# -- transforms --------------------------------------------------------------------


RIGID_TOL = 1e-6


@dataclass(frozen=True)
class Transform:
    """Rigid placement: rotation matrix plus translation, in millimeters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        check_rigid(self.rotation)

    @classmethod
    def identity(cls) -> Transform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def translation_only(cls, offset) -> Transform:
        return cls(np.eye(3), np.asarray(offset, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.rotation.T + self.translation

    def then(self, other: Transform) -> Transform:
        """This transform first, then ``other``."""
        return Transform(
            other.rotation @ self.rotation,
            other.rotation @ self.translation + other.translation,
        )

    def inverse(self) -> Transform:
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)


def check_rigid(rotation: np.ndarray) -> None:
    if rotation.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=RIGID_TOL):
        raise ValueError("rotation is not orthonormal")
    if not np.isclose(np.linalg.det(rotation), 1.0, atol=RIGID_TOL):
        raise ValueError("rotation determinant must be +1")


def compose_transforms(chain: list[Transform]) -> Transform:
    """Ordered composition: the first transform applies first."""
    composed = Transform.identity()
    for transform in chain:
        composed = composed.then(transform)
    return composed


def _placement_frame(model: StepModel, placement: StepEntity) -> Transform:
    params = placement.segment("AXIS2_PLACEMENT_3D") or placement.params
    location = np.zeros(3)
    z = np.array([0.0, 0.0, 1.0])
    x_hint = None
    if len(params) > 1 and isinstance(params[1], Ref):
        location = _point_coords(model, model.entities[params[1].id])
    if len(params) > 2 and isinstance(params[2], Ref):
        z = _direction(model.entities[params[2].id])
    if len(params) > 3 and isinstance(params[3], Ref):
        x_hint = _direction(model.entities[params[3].id])
    z = z / np.linalg.norm(z)
    if x_hint is None:
        x_hint = np.array([1.0, 0.0, 0.0])
    x = x_hint - np.dot(x_hint, z) * z
    if np.linalg.norm(x) < 1e-9:
        seed = np.array([0.0, 1.0, 0.0]) if abs(z[0]) > 0.9 else np.array([1.0, 0.0, 0.0])
        x = seed - np.dot(seed, z) * z
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rotation = np.column_stack([x, y, z])
    return Transform(rotation, location)


def _point_coords(model: StepModel, entity: StepEntity) -> np.ndarray:
    params = entity.segment("CARTESIAN_POINT") or entity.params
    coords = next((p for p in params if isinstance(p, list)), None)
    if coords is None or len(coords) != 3:
        raise StepError(f"CARTESIAN_POINT #{entity.id} lacks 3 coordinates")
    return np.array([float(c) for c in coords]) * model.unit_scale_mm


def _direction(entity: StepEntity) -> np.ndarray:
    params = entity.segment("DIRECTION") or entity.params
    coords = next((p for p in params if isinstance(p, list)), None)
    if coords is None or len(coords) != 3:
        raise StepError(f"DIRECTION #{entity.id} lacks 3 components")
    return np.array([float(c) for c in coords])


# -- product-structure lift ----------------------------------------------------------


def _build_reverse_index(entities: dict[int, StepEntity]) -> dict[int, list[int]]:
    reverse: dict[int, list[int]] = {}
    for entity in entities.values():
        for ref in entity_refs(entity):
            reverse.setdefault(ref.id, []).append(entity.id)
    return reverse


def _referencing(
    model: StepModel, reverse: dict[int, list[int]], target: int, fragment: str
) -> list[StepEntity]:
    out = []
    for entity_id in sorted(reverse.get(target, ())):
        entity = model.entities[entity_id]
        if entity.type_contains(fragment):
            out.append(entity)
    return out


_NO_TRAVERSE = (
    "AXIS2_PLACEMENT",
    "ITEM_DEFINED_TRANSFORMATION",
    "MAPPED_ITEM",
    "REPRESENTATION_MAP",
    "REPRESENTATION",  # other representations and contexts stay out
)


def _collect_shape_points(model: StepModel, item_ids: list[int]) -> tuple[list[np.ndarray], list[StepEntity]]:
    points: list[np.ndarray] = []
    placements: list[StepEntity] = []
    seen: set[int] = set()
    stack = list(item_ids)
    while stack:
        entity_id = stack.pop()
        if entity_id in seen:
            continue
        seen.add(entity_id)
        entity = model.entities[entity_id]
        if entity.has_type("AXIS2_PLACEMENT_3D"):
            placements.append(entity)
            continue
        if any(entity.type_contains(tn) for tn in _NO_TRAVERSE):
            continue
        if entity.has_type("CARTESIAN_POINT"):
            points.append(_point_coords(model, entity))
            continue
        stack.extend(ref.id for ref in entity_refs(entity))
    placements.sort(key=lambda e: e.id)
    return points, placements


def _chase_to_product(model: StepModel, start: int) -> int | None:
    """Follow forward references until a PRODUCT entity is reached."""
    seen = set()
    stack = [start]
    while stack:
        entity_id = stack.pop()
        if entity_id in seen:
            continue
        seen.add(entity_id)
        entity = model.entities[entity_id]
        if entity.has_type("PRODUCT"):
            return entity_id
        if entity.type_contains("NEXT_ASSEMBLY_USAGE"):
            continue
        stack.extend(ref.id for ref in entity_refs(entity))
    return None


def _lift_products(model: StepModel) -> None:
    entities = model.entities
    reverse = _build_reverse_index(entities)

    product_nodes: dict[int, ProductNode] = {}
    for entity_id in sorted(entities):
        entity = entities[entity_id]
        if not entity.has_type("PRODUCT"):
            continue
        params = entity.segment("PRODUCT") or entity.params
        strings = [p for p in params if isinstance(p, str)]
        name = strings[0] if strings else f"#{entity_id}"
        product_nodes[entity_id] = ProductNode(entity_id, name)
    model.products = [product_nodes[k] for k in sorted(product_nodes)]

    # shape representation chase: PRODUCT <- FORMATION <- DEFINITION <- SHAPE <- SDR
    for product in model.products:
        shape_rep_ids: list[int] = []
        formations = _referencing(model, reverse, product.id, "PRODUCT_DEFINITION_FORMATION")
        definitions = [
            d
            for f in formations
            for d in _referencing(model, reverse, f.id, "PRODUCT_DEFINITION")
            if not d.type_contains("FORMATION")
        ]
        shapes = [
            s
            for d in definitions
            for s in _referencing(model, reverse, d.id, "PRODUCT_DEFINITION_SHAPE")
        ]
        sdrs = [
            r
            for s in shapes
            for r in _referencing(model, reverse, s.id, "SHAPE_DEFINITION_REPRESENTATION")
        ]
        for sdr in sdrs:
            for ref in entity_refs(sdr):
                target = entities[ref.id]
                if target.type_contains("REPRESENTATION") and not target.type_contains(
                    "PRODUCT"
                ):
                    shape_rep_ids.append(ref.id)
        item_ids: list[int] = []
        for rep_id in shape_rep_ids:
            rep = entities[rep_id]
            segments = [("", rep.params)] if rep.segments is None else rep.segments
            for _name, seg_params in segments:
                for param in seg_params:
                    if isinstance(param, list):
                        item_ids.extend(r.id for r in param if isinstance(r, Ref))
        points, placements = _collect_shape_points(model, item_ids)
        product.points = points
        if placements:
            frame = _placement_frame(model, placements[0])
            product.primary_axis = frame.rotation[:, 2]

    # free points fall to a sole product
    if len(model.products) == 1:
        product = model.products[0]
        for entity_id in sorted(entities):
            entity = entities[entity_id]
            if entity.has_type("CARTESIAN_POINT") and entity_id not in reverse:
                point = _point_coords(model, entity)
                if not any(np.array_equal(point, q) for q in product.points):
                    product.points.append(point)

    # assembly usage: NAUO(…, relating, related, …) plus the transform chase
    for entity_id in sorted(entities):
        entity = entities[entity_id]
        if not entity.type_contains("NEXT_ASSEMBLY_USAGE"):
            continue
        params = entity.segment("NEXT_ASSEMBLY_USAGE_OCCURRENCE") or entity.params
        refs = [p for p in params if isinstance(p, Ref)]
        if len(refs) < 2:
            raise StepError(f"assembly usage #{entity_id} lacks two product references")
        parent_id = _chase_to_product(model, refs[0].id)
        child_id = _chase_to_product(model, refs[1].id)
        if parent_id is None or child_id is None:
            raise StepError(f"assembly usage #{entity_id} does not resolve to products")
        transform = _nauo_transform(model, reverse, entity_id)
        product_nodes[parent_id].children.append((child_id, transform))


def _nauo_transform(
    model: StepModel, reverse: dict[int, list[int]], nauo_id: int
) -> Transform:
    """Transform for an assembly usage via its context-dependent shape.

    Convention: the ITEM_DEFINED_TRANSFORMATION's two placements give the
    child-to-parent mapping ``frame2 ∘ frame1⁻¹``; missing chain means identity.
    """
    for shape in _referencing(model, reverse, nauo_id, "PRODUCT_DEFINITION_SHAPE"):
        for cdsr in _referencing(model, reverse, shape.id, "CONTEXT_DEPENDENT_SHAPE_REPRESENTATION"):
            for ref in entity_refs(cdsr):
                holder = model.entities[ref.id]
                if not holder.type_contains("REPRESENTATION_RELATIONSHIP"):
                    continue
                for inner in entity_refs(holder):
                    candidate = model.entities[inner.id]
                    if candidate.has_type("ITEM_DEFINED_TRANSFORMATION"):
                        return _item_defined_transform(model, candidate)
    return Transform.identity()


def _item_defined_transform(model: StepModel, idt: StepEntity) -> Transform:
    params = idt.segment("ITEM_DEFINED_TRANSFORMATION") or idt.params
    refs = [p for p in params if isinstance(p, Ref)]
    if len(refs) != 2:
        raise StepError(f"ITEM_DEFINED_TRANSFORMATION #{idt.id} needs two placements")
    frame1 = _placement_frame(model, model.entities[refs[0].id])
    frame2 = _placement_frame(model, model.entities[refs[1].id])
    return frame1.inverse().then(frame2)


def _check_acyclic(model: StepModel) -> None:
    state: dict[int, int] = {}  # 0 visiting, 1 done

    def visit(product_id: int, trail: tuple[int, ...]) -> None:
        mark = state.get(product_id)
        if mark == 1:
            return
        if mark == 0:
            cycle = " -> ".join(f"#{p}" for p in trail + (product_id,))
            raise StepError(f"cyclic assembly: {cycle}")
        state[product_id] = 0
        for child_id, _ in model.product_by_id(product_id).children:
            visit(child_id, trail + (product_id,))
        state[product_id] = 1

    for product in model.products:
        if product.id not in state:
            visit(product.id, ())
