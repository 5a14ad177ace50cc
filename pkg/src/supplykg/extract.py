"""Parsing model output into typed nodes and relations, and corpus-level extraction."""

from __future__ import annotations

import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Sequence

from .errors import EmptyLabel, EmptyResponse, PipelineError, Unparseable
from .ingest import DEFAULT_CHUNK_BUDGET, Chunk, Document, chunk_document
from .llm import Backend, LlmSettings
from .prompts import build_extraction_prompt
from .schema import SchemaConfig, normalize_label


class Provenance(NamedTuple):
    document_id: str
    chunk_index: int
    run_id: str

    def tag(self) -> str:
        return f"{self.document_id}#{self.chunk_index}@{self.run_id}"


NO_PROVENANCE = Provenance("", -1, "")

NodeKey = tuple[str, str]


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "info" | "warning" | "error"
    code: str
    message: str
    fragment: str = ""

    def to_dict(self) -> dict:
        return {"severity": self.severity, "code": self.code, "message": self.message, "fragment": self.fragment}


@dataclass
class ExtractedNode:
    label: str
    name: str
    properties: dict[str, str] = field(default_factory=dict)
    provenance: Provenance = NO_PROVENANCE

    @property
    def temp_key(self) -> NodeKey:
        return (self.label, self.name)

    def to_dict(self) -> dict:
        return {"label": self.label, "name": self.name, "properties": self.properties, "provenance": list(self.provenance)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractedNode":
        return cls(d["label"], d["name"], dict(d.get("properties", {})), Provenance(*d["provenance"]))


@dataclass
class ExtractedRelation:
    source_key: NodeKey
    target_key: NodeKey
    rel_type: str
    properties: dict[str, str] = field(default_factory=dict)
    provenance: Provenance = NO_PROVENANCE

    def to_dict(self) -> dict:
        return {
            "source": list(self.source_key),
            "target": list(self.target_key),
            "type": self.rel_type,
            "properties": self.properties,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractedRelation":
        return cls(tuple(d["source"]), tuple(d["target"]), d["type"], dict(d.get("properties", {})), Provenance(*d["provenance"]))


@dataclass
class ExtractionResult:
    nodes: list[ExtractedNode] = field(default_factory=list)
    relations: list[ExtractedRelation] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    provenance: Provenance = NO_PROVENANCE

    @property
    def failed(self) -> bool:
        return any(d.severity == "error" for d in self.diagnostics)

    def codes(self) -> list[str]:
        return [d.code for d in self.diagnostics]

    def triples(self) -> tuple[list, list]:
        """Nodes and relations without provenance, for comparing two parses."""
        nodes = [(n.label, n.name, n.properties) for n in self.nodes]
        rels = [(r.source_key, r.rel_type, r.target_key, r.properties) for r in self.relations]
        return nodes, rels

    def to_dict(self) -> dict:
        return {
            "provenance": list(self.provenance),
            "nodes": [n.to_dict() for n in self.nodes],
            "relations": [r.to_dict() for r in self.relations],
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionResult":
        return cls(
            [ExtractedNode.from_dict(n) for n in d.get("nodes", [])],
            [ExtractedRelation.from_dict(r) for r in d.get("relations", [])],
            [Diagnostic(**x) for x in d.get("diagnostics", [])],
            Provenance(*d.get("provenance", NO_PROVENANCE)),
        )


# --- JSON repair -----------------------------------------------------------

_FENCE_OPEN_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?")


def _fenced_bodies(raw: str) -> list[str]:
    """Candidate bodies between an opening fence and each later fence (or the end of text).

    Trying every closing fence keeps a ``` inside a JSON string from cutting the body short.
    """
    out = []
    for opener in _FENCE_OPEN_RE.finditer(raw):
        start = opener.end()
        for close in re.finditer("```", raw[start:]):
            out.append(raw[start:start + close.start()].strip())
        out.append(raw[start:].strip())
    return out


def _balanced_spans(text: str, open_ch: str, close_ch: str) -> Iterable[str]:
    """Yield balanced ``open_ch ... close_ch`` substrings, outermost first, string-literal aware."""
    start = text.find(open_ch)
    while start != -1:
        depth = 0
        in_str = False
        esc = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == open_ch:
                depth += 1
            elif ch == close_ch:
                depth -= 1
                if depth == 0:
                    yield text[start:i + 1]
                    break
        start = text.find(open_ch, start + 1)


def _accepts(value: Any, expected: type, accept: Callable[[Any], bool] | None) -> bool:
    return isinstance(value, expected) and (accept is None or accept(value))


def repair_json(
    raw: str, open_ch: str, expected: type, accept: Callable[[Any], bool] | None = None
) -> tuple[Any, str]:
    """Best-effort recovery of a JSON value embedded in prose or code fences.

    ``accept`` screens candidates so that a nested fragment of a truncated
    payload is not mistaken for the whole. Returns ``(value, code)`` where
    ``code`` names the repair applied, or raises :class:`Unparseable`.
    """
    sources = [(body, "RepairedFencing") for body in _fenced_bodies(raw)] + [(raw, "RepairedProse")]
    close_ch = "}" if open_ch == "{" else "]"
    for text, code in sources:
        try:
            value = json.loads(text)
            if _accepts(value, expected, accept):
                return value, code
        except ValueError:
            pass
        for span in _balanced_spans(text, open_ch, close_ch):
            try:
                value = json.loads(span)
            except ValueError:
                continue
            if _accepts(value, expected, accept):
                return value, code
    raise Unparseable("no parseable JSON found in response", raw=raw)


def load_json_lenient(
    raw: str, open_ch: str, expected: type, accept: Callable[[Any], bool] | None = None
) -> tuple[Any, str | None]:
    """Strict parse first; the repair pass runs only when that fails."""
    if raw is None or not raw.strip():
        raise EmptyResponse("response is empty")
    try:
        value = json.loads(raw)
    except ValueError:
        value = None
    if isinstance(value, expected):
        return value, None
    return repair_json(raw, open_ch, expected, accept)


def _is_payload(value: dict) -> bool:
    return any(k in value for k in ("nodes", "relationships", "relations"))


# --- parsing ---------------------------------------------------------------

def _text(value: Any) -> str | None:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    return None


def _props(value: Any, diags: list[Diagnostic], where: str) -> dict[str, str]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        diags.append(Diagnostic("warning", "MalformedProperties", f"{where}: properties is not an object", _frag(value)))
        return {}
    out: dict[str, str] = {}
    for k, v in value.items():
        key = str(k).strip()
        if not key or v is None:
            continue
        out[key] = v if isinstance(v, str) else json.dumps(v, ensure_ascii=False, sort_keys=True)
    return out


def _frag(value: Any) -> str:
    try:
        text = json.dumps(value, ensure_ascii=False)
    except (TypeError, ValueError):
        text = repr(value)
    return text[:200]


def _label(raw: Any, kind: str, allowed: Sequence[str]) -> str | None:
    text = _text(raw)
    if text is None:
        return None
    try:
        label = normalize_label(text, kind)  # type: ignore[arg-type]
    except EmptyLabel:
        return None
    return label if label in allowed else None


def parse_extraction(
    raw: str,
    schema: SchemaConfig,
    provenance: Provenance = NO_PROVENANCE,
    allow_self_relations: bool = False,
) -> ExtractionResult:
    """Parse one extraction response into a validated :class:`ExtractionResult`."""
    obj, repaired = load_json_lenient(raw, "{", dict, _is_payload)
    diags: list[Diagnostic] = []
    if repaired:
        diags.append(Diagnostic("info", repaired, "response needed repair before parsing"))

    raw_nodes = obj.get("nodes", [])
    raw_rels = obj.get("relationships", obj.get("relations", []))
    for key, val in (("nodes", raw_nodes), ("relationships", raw_rels)):
        if not isinstance(val, list):
            diags.append(Diagnostic("warning", "MalformedItem", f"{key!r} is not a list", _frag(val)))
    if not isinstance(raw_nodes, list):
        raw_nodes = []
    if not isinstance(raw_rels, list):
        raw_rels = []

    entity_names = schema.entity_names
    relation_names = schema.relation_names
    nodes: dict[NodeKey, ExtractedNode] = {}

    for i, item in enumerate(raw_nodes):
        if not isinstance(item, dict):
            diags.append(Diagnostic("warning", "MalformedItem", f"nodes[{i}] is not an object", _frag(item)))
            continue
        name = (_text(item.get("name")) or "").strip()
        if not name:
            diags.append(Diagnostic("warning", "EmptyName", f"nodes[{i}] has no name", _frag(item)))
            continue
        label = _label(item.get("label"), "node", entity_names)
        if label is None:
            diags.append(Diagnostic("warning", "UnknownLabel", f"nodes[{i}] label {item.get('label')!r} is not a schema type", _frag(item)))
            continue
        props = _props(item.get("properties"), diags, f"nodes[{i}]")
        key = (label, name)
        if key in nodes:
            existing = nodes[key].properties
            for k, v in props.items():
                existing.setdefault(k, v)
            diags.append(Diagnostic("info", "DuplicateNode", f"node {label}:{name} listed more than once", _frag(item)))
            continue
        nodes[key] = ExtractedNode(label, name, props, provenance)

    by_name: dict[str, list[NodeKey]] = {}
    for key in nodes:
        by_name.setdefault(key[1], []).append(key)

    relations: list[ExtractedRelation] = []
    seen_rel: dict[tuple, ExtractedRelation] = {}
    for i, item in enumerate(raw_rels):
        if not isinstance(item, dict):
            diags.append(Diagnostic("warning", "MalformedItem", f"relationships[{i}] is not an object", _frag(item)))
            continue
        rel_type = _label(item.get("type"), "relation", relation_names)
        if rel_type is None:
            diags.append(Diagnostic("warning", "UnknownRelType", f"relationships[{i}] type {item.get('type')!r} is not a schema relation", _frag(item)))
            continue
        ends: list[NodeKey] = []
        reported = False
        for side in ("source", "target"):
            name = (_text(item.get(side)) or "").strip()
            if not name:
                break
            raw_label = item.get(f"{side}_label")
            if raw_label is None:
                candidates = by_name.get(name, [])
                if len(candidates) != 1:
                    break
                ends.append(candidates[0])
                continue
            label = _label(raw_label, "node", entity_names)
            if label is None:
                diags.append(Diagnostic("warning", "UnknownLabel", f"relationships[{i}] {side}_label {raw_label!r} is not a schema type", _frag(item)))
                reported = True
                break
            ends.append((label, name))
        if len(ends) != 2:
            if not reported:
                diags.append(Diagnostic("warning", "UnresolvedEndpoint", f"relationships[{i}] has a missing or ambiguous endpoint", _frag(item)))
            continue
        src, tgt = ends
        if src == tgt and not allow_self_relations:
            diags.append(Diagnostic("warning", "SelfRelation", f"relationships[{i}] relates {src[0]}:{src[1]} to itself", _frag(item)))
            continue
        constraints = schema.relation(rel_type).endpoint_constraints
        if constraints and (src[0], tgt[0]) not in constraints:
            diags.append(Diagnostic("warning", "EndpointMismatch", f"{rel_type} from {src[0]} to {tgt[0]} is outside the declared endpoint types", _frag(item)))
        for end in (src, tgt):
            if end not in nodes:
                nodes[end] = ExtractedNode(end[0], end[1], {}, provenance)
                by_name.setdefault(end[1], []).append(end)
                diags.append(Diagnostic("warning", "MaterializedEndpoint", f"endpoint {end[0]}:{end[1]} was not listed in nodes", _frag(item)))
        props = _props(item.get("properties"), diags, f"relationships[{i}]")
        rkey = (src, rel_type, tgt)
        if rkey in seen_rel:
            for k, v in props.items():
                seen_rel[rkey].properties.setdefault(k, v)
            diags.append(Diagnostic("info", "DuplicateRelation", f"relationship {src[1]} {rel_type} {tgt[1]} listed more than once", _frag(item)))
            continue
        rel = ExtractedRelation(src, tgt, rel_type, props, provenance)
        seen_rel[rkey] = rel
        relations.append(rel)

    return ExtractionResult(list(nodes.values()), relations, diags, provenance)


# --- orchestration ---------------------------------------------------------

EXTRACTION_SETTINGS = LlmSettings(max_output_tokens=4096)


def extract_chunk(
    chunk: Chunk,
    schema: SchemaConfig,
    backend: Backend,
    run_id: str = "run-1",
    settings: LlmSettings = EXTRACTION_SETTINGS,
) -> ExtractionResult:
    prov = Provenance(chunk.document_id, chunk.index, run_id)
    try:
        prompt = build_extraction_prompt(schema, chunk)
        resp = backend.complete(settings.request(prompt))
        result = parse_extraction(resp.content, schema, prov)
    except PipelineError as exc:
        raise exc.annotate(chunk=chunk.chunk_id, run=run_id)
    if resp.finish_reason != "normal":
        result.diagnostics.append(
            Diagnostic("warning", "TruncatedOutput" if resp.finish_reason == "truncated" else "FilteredOutput",
                       f"completion finished with reason {resp.finish_reason}")
        )
    return result


@dataclass
class CorpusCounts:
    nodes: int = 0
    relations: int = 0
    node_types: dict[str, int] = field(default_factory=dict)
    relation_types: dict[str, int] = field(default_factory=dict)
    failed_chunks: int = 0

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "relations": self.relations,
            "node_types": self.node_types,
            "relation_types": self.relation_types,
            "failed_chunks": self.failed_chunks,
        }


def count_results(results: Iterable[ExtractionResult], schema: SchemaConfig | None = None) -> CorpusCounts:
    node_types: Counter[str] = Counter()
    rel_types: Counter[str] = Counter()
    failed = 0
    for r in results:
        node_types.update(n.label for n in r.nodes)
        rel_types.update(x.rel_type for x in r.relations)
        failed += r.failed
    if schema is not None:
        nt = {name: node_types.get(name, 0) for name in schema.entity_names}
        rt = {name: rel_types.get(name, 0) for name in schema.relation_names}
    else:
        nt, rt = dict(sorted(node_types.items())), dict(sorted(rel_types.items()))
    return CorpusCounts(sum(node_types.values()), sum(rel_types.values()), nt, rt, failed)


def extract_corpus(
    docs: Sequence[Document],
    schema: SchemaConfig,
    backend: Backend,
    parallelism: int = 4,
    run_id: str = "run-1",
    budget: int = DEFAULT_CHUNK_BUDGET,
    fail_fast: bool = False,
    settings: LlmSettings = EXTRACTION_SETTINGS,
) -> tuple[list[ExtractionResult], CorpusCounts]:
    """Extract every chunk of every document; results come back in (document, chunk) order."""
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    chunks = [c for d in docs for c in chunk_document(d, budget)]

    def work(chunk: Chunk) -> ExtractionResult:
        try:
            return extract_chunk(chunk, schema, backend, run_id, settings)
        except PipelineError as exc:
            if fail_fast:
                raise
            return ExtractionResult(
                diagnostics=[Diagnostic("error", exc.code, str(exc), getattr(exc, "raw", "")[:200])],
                provenance=Provenance(chunk.document_id, chunk.index, run_id),
            )

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        results = list(pool.map(work, chunks))
    return results, count_results(results, schema)
