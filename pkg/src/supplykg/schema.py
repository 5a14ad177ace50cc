"""Entity and relation type definitions that drive prompting, parsing and graph labels."""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from dataclasses import dataclass
from typing import Any, Iterable, Literal

from .errors import (
    DuplicateTypeName,
    EmptyLabel,
    InsufficientExamples,
    MalformedConfig,
    UnknownEndpointType,
)

LabelKind = Literal["node", "relation"]

PASCAL_RE = re.compile(r"^[A-Z][A-Za-z0-9]*$")
CAMEL_RE = re.compile(r"^[a-z][A-Za-z0-9]*$")

# acronym runs ("LGChem" -> LG, Chem), capitalised words, lowercase runs, digit runs
_WORD_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


def _words(raw: str) -> list[str]:
    ascii_text = unicodedata.normalize("NFKD", raw).encode("ascii", "ignore").decode("ascii")
    words = _WORD_RE.findall(ascii_text)
    # a label cannot start with a digit
    while words and words[0].isdigit():
        words.pop(0)
    # consecutive one-letter words ("A B") would re-split as an acronym, so fuse them
    fused: list[str] = []
    in_run = False
    for w in words:
        letter = len(w) == 1 and w.isalpha()
        if letter and in_run:
            fused[-1] += w
        else:
            fused.append(w)
        in_run = letter
    return fused


def normalize_label(raw: str, kind: LabelKind) -> str:
    """Render a node label as PascalCase or a relation label as lowerCamelCase.

    Words are split on any non-alphanumeric character and on case changes,
    so ``"supplies to"``, ``"supplies_to"`` and ``"SuppliesTo"`` all become
    ``"suppliesTo"`` for ``kind="relation"``.
    """
    if kind not in ("node", "relation"):
        raise ValueError(f"unknown label kind {kind!r}")
    if raw is None or not str(raw).strip():
        raise EmptyLabel("label is empty")
    words = _words(str(raw))
    if not words:
        raise EmptyLabel(f"label {raw!r} has no usable characters")
    capped = [w[0].upper() + w[1:].lower() for w in words]
    if kind == "relation":
        capped[0] = capped[0].lower()
    return "".join(capped)


def is_node_label(text: str) -> bool:
    return bool(PASCAL_RE.match(text))


def is_relation_label(text: str) -> bool:
    return bool(CAMEL_RE.match(text))


@dataclass(frozen=True)
class EntityTypeDef:
    name: str
    description: str
    examples: tuple[str, ...]
    property_hints: tuple[str, ...] | None = None


@dataclass(frozen=True)
class RelationTypeDef:
    name: str
    description: str
    semantic_equivalents: tuple[str, ...] = ()
    endpoint_constraints: tuple[tuple[str, str], ...] | None = None


@dataclass(frozen=True)
class SchemaConfig:
    entity_types: tuple[EntityTypeDef, ...]
    relation_types: tuple[RelationTypeDef, ...]

    def __post_init__(self) -> None:
        validate_schema(self)

    @property
    def entity_names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entity_types)

    @property
    def relation_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.relation_types)

    def entity(self, name: str) -> EntityTypeDef:
        for e in self.entity_types:
            if e.name == name:
                return e
        raise KeyError(name)

    def relation(self, name: str) -> RelationTypeDef:
        for r in self.relation_types:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity_types": [
                {
                    "name": e.name,
                    "description": e.description,
                    "examples": list(e.examples),
                    **({"property_hints": list(e.property_hints)} if e.property_hints is not None else {}),
                }
                for e in self.entity_types
            ],
            "relation_types": [
                {
                    "name": r.name,
                    "description": r.description,
                    "semantic_equivalents": list(r.semantic_equivalents),
                    **(
                        {"endpoint_constraints": [list(p) for p in r.endpoint_constraints]}
                        if r.endpoint_constraints is not None
                        else {}
                    ),
                }
                for r in self.relation_types
            ],
        }

    def digest(self) -> str:
        """Short content hash used as the graph's schema reference."""
        return hashlib.sha256(dump_schema(self).encode("utf-8")).hexdigest()[:16]


def validate_schema(schema: SchemaConfig) -> None:
    if not schema.entity_types:
        raise MalformedConfig("schema declares no entity types")
    if not schema.relation_types:
        raise MalformedConfig("schema declares no relation types")

    seen: set[str] = set()
    for e in schema.entity_types:
        _check_name(e.name, "node")
        if e.name in seen:
            raise DuplicateTypeName(f"entity type {e.name!r} declared more than once")
        seen.add(e.name)
        examples = [x.strip() for x in e.examples]
        if len(examples) < 3:
            raise InsufficientExamples(
                f"entity type {e.name!r} has {len(examples)} examples, at least 3 are required"
            )
        if any(not x for x in examples):
            raise InsufficientExamples(f"entity type {e.name!r} has an empty example")
        if len(set(examples)) != len(examples):
            raise InsufficientExamples(f"entity type {e.name!r} repeats an example")

    rel_seen: set[str] = set()
    for r in schema.relation_types:
        _check_name(r.name, "relation")
        if r.name in rel_seen:
            raise DuplicateTypeName(f"relation type {r.name!r} declared more than once")
        rel_seen.add(r.name)
        for src, tgt in r.endpoint_constraints or ():
            for end in (src, tgt):
                if end not in seen:
                    raise UnknownEndpointType(
                        f"relation {r.name!r} constrains endpoint to undeclared type {end!r}"
                    )


def _check_name(name: str, kind: LabelKind) -> None:
    if not isinstance(name, str) or not name.strip():
        raise MalformedConfig(f"{kind} type name is empty")
    pattern = PASCAL_RE if kind == "node" else CAMEL_RE
    if not pattern.match(name):
        style = "PascalCase" if kind == "node" else "lowerCamelCase"
        raise MalformedConfig(f"{kind} type name {name!r} is not {style}")
    canonical = normalize_label(name, kind)
    if canonical != name:
        raise MalformedConfig(f"{kind} type name {name!r} is not canonical, expected {canonical!r}")


def _str_list(value: Any, where: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedConfig(f"{where} must be a list of strings")
    return tuple(value)


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise MalformedConfig(f"{where} is missing {key!r}")
    return obj[key]


def schema_from_dict(data: Any) -> SchemaConfig:
    if not isinstance(data, dict):
        raise MalformedConfig("schema config must be an object")
    ents = _require(data, "entity_types", "schema config")
    rels = _require(data, "relation_types", "schema config")
    if not isinstance(ents, list) or not isinstance(rels, list):
        raise MalformedConfig("entity_types and relation_types must be lists")

    entity_types = []
    for i, item in enumerate(ents):
        where = f"entity_types[{i}]"
        if not isinstance(item, dict):
            raise MalformedConfig(f"{where} must be an object")
        hints = item.get("property_hints")
        entity_types.append(
            EntityTypeDef(
                name=_require(item, "name", where),
                description=str(item.get("description", "")),
                examples=_str_list(_require(item, "examples", where), f"{where}.examples"),
                property_hints=None if hints is None else _str_list(hints, f"{where}.property_hints"),
            )
        )

    relation_types = []
    for i, item in enumerate(rels):
        where = f"relation_types[{i}]"
        if not isinstance(item, dict):
            raise MalformedConfig(f"{where} must be an object")
        constraints = item.get("endpoint_constraints")
        pairs = None
        if constraints is not None:
            if not isinstance(constraints, list) or not all(
                isinstance(p, (list, tuple)) and len(p) == 2 and all(isinstance(s, str) for s in p)
                for p in constraints
            ):
                raise MalformedConfig(f"{where}.endpoint_constraints must be a list of [source, target] pairs")
            pairs = tuple((p[0], p[1]) for p in constraints)
        relation_types.append(
            RelationTypeDef(
                name=_require(item, "name", where),
                description=str(item.get("description", "")),
                semantic_equivalents=_str_list(item.get("semantic_equivalents", []), f"{where}.semantic_equivalents"),
                endpoint_constraints=pairs,
            )
        )
    return SchemaConfig(tuple(entity_types), tuple(relation_types))


def load_schema(config_text: str) -> SchemaConfig:
    try:
        data = json.loads(config_text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedConfig(f"schema config is not valid JSON: {exc}") from None
    return schema_from_dict(data)


def dump_schema(schema: SchemaConfig) -> str:
    return json.dumps(schema.to_dict(), indent=2, ensure_ascii=False) + "\n"


def _entity(name: str, description: str, examples: Iterable[str], hints: Iterable[str] | None = None) -> EntityTypeDef:
    return EntityTypeDef(name, description, tuple(examples), None if hints is None else tuple(hints))


def default_schema() -> SchemaConfig:
    """The electric-vehicle battery case-study schema.

    Example strings are our own; they are drawn from the companies, mines and
    materials that appear in the EV battery supply chain case study.
    """
    entity_types = (
        _entity(
            "Company",
            "A business organisation such as a manufacturer, supplier, miner, refiner or holding company.",
            ["Tesla Inc.", "CATL", "Zijin Mining", "Samsung SDI", "Panasonic"],
            ["industry", "founded", "headquarters", "revenue"],
        ),
        _entity(
            "Person",
            "A named individual such as a founder, executive, owner or major shareholder.",
            ["Elon Musk", "Robin Zeng", "Li Liangbin"],
            ["role", "nationality"],
        ),
        _entity(
            "Location",
            "A geographic place: country, region, state, province or city.",
            ["China", "Western Australia", "Chile", "Norilsk"],
            ["kind"],
        ),
        _entity(
            "Material",
            "A raw or processed material, mineral or chemical used in production.",
            ["lithium", "nickel", "cobalt", "lithium hydroxide"],
            ["grade", "form"],
        ),
        _entity(
            "Mine",
            "A specific mine, deposit, brine operation or extraction site.",
            ["Greenbushes mine", "Mount Marion", "Salar de Atacama"],
            ["status", "capacity"],
        ),
        _entity(
            "Product",
            "A manufactured good or component, including vehicles and battery products.",
            ["Model 3", "lithium-ion battery cell", "e-tron GT", "cathode material"],
            ["category"],
        ),
    )
    relation_types = (
        RelationTypeDef(
            "suppliesTo",
            "The source entity sells or delivers goods, materials or components to the target company.",
            ("supplies", "provides to", "sells to", "delivers to", "is a supplier of", "sources for", "ships to"),
        ),
        RelationTypeDef(
            "contains",
            "The source product or material physically contains the target material or component.",
            ("is made with", "includes", "uses", "incorporates"),
        ),
        RelationTypeDef(
            "produces",
            "The source company or mine manufactures, extracts or refines the target material or product.",
            ("manufactures", "makes", "mines", "extracts", "refines", "builds"),
        ),
        RelationTypeDef(
            "locatedIn",
            "The source entity is headquartered, based or physically situated in the target location.",
            ("headquartered in", "based in", "situated in", "operates in"),
        ),
        RelationTypeDef(
            "owns",
            "The source company or person owns, controls or holds a stake in the target company or mine. "
            "'X is a subsidiary of Y' means Y owns X.",
            ("acquired", "holds a stake in", "is the parent of", "controls"),
        ),
    )
    return SchemaConfig(entity_types, relation_types)
