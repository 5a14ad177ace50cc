"""Canonical property graph, supply-chain queries and deterministic exporters."""

from __future__ import annotations

import hashlib
import json
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Literal, Mapping, NamedTuple, Sequence

from .errors import DanglingEdge, DuplicateNodeId, InvalidGraph, SinkError, UnknownNode, WrongNodeType
from .extract import Provenance
from .schema import SchemaConfig

SUPPLIES = "suppliesTo"
OWNS = "owns"
PRODUCES = "produces"
LOCATED = "locatedIn"

ExportFormat = Literal["cypher", "graphml", "dot", "jsonl"]
EXPORT_FORMATS: tuple[str, ...] = ("cypher", "graphml", "dot", "jsonl")
EXPORT_SUFFIX = {"cypher": "cypher", "graphml": "graphml", "dot": "dot", "jsonl": "jsonl"}


def canonical_id(label: str, display_name: str) -> str:
    """Stable id derived from label and display name (unique within a label after merging)."""
    digest = hashlib.sha256(f"{label}\x1f{display_name}".encode("utf-8")).hexdigest()[:16]
    return f"{label.lower()}_{digest}"


def _prov_sort(prov: Iterable) -> list:
    return sorted(tuple(p) for p in prov)


@dataclass(frozen=True)
class CanonicalNode:
    canonical_id: str
    label: str
    display_name: str
    aliases: frozenset[str]
    properties: Mapping[str, str] = field(default_factory=dict)
    provenance: frozenset = frozenset()

    def __post_init__(self) -> None:
        if not self.aliases or self.display_name not in self.aliases:
            raise InvalidGraph(f"node {self.canonical_id}: display name must be one of its aliases")

    def to_dict(self) -> dict:
        return {
            "kind": "node",
            "id": self.canonical_id,
            "label": self.label,
            "name": self.display_name,
            "aliases": sorted(self.aliases),
            "properties": dict(sorted(self.properties.items())),
            "provenance": [list(p) for p in _prov_sort(self.provenance)],
        }


class EdgeKey(NamedTuple):
    source: str
    rel_type: str
    target: str


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    rel_type: str
    properties: Mapping[str, str] = field(default_factory=dict)
    provenance: frozenset = frozenset()

    @property
    def key(self) -> EdgeKey:
        return EdgeKey(self.source, self.rel_type, self.target)

    def to_dict(self) -> dict:
        return {
            "kind": "edge",
            "source": self.source,
            "type": self.rel_type,
            "target": self.target,
            "properties": dict(sorted(self.properties.items())),
            "provenance": [list(p) for p in _prov_sort(self.provenance)],
        }


@dataclass
class KnowledgeGraph:
    nodes: dict[str, CanonicalNode]
    edges: dict[EdgeKey, Edge]
    schema: SchemaConfig | None = None
    schema_ref: str = ""
    _out: dict = field(default_factory=dict, repr=False, compare=False)
    _in: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        out: dict[tuple[str, str], list[str]] = defaultdict(list)
        inc: dict[tuple[str, str], list[str]] = defaultdict(list)
        for k in sorted(self.edges):
            out[(k.source, k.rel_type)].append(k.target)
            inc[(k.target, k.rel_type)].append(k.source)
        self._out, self._in = dict(out), dict(inc)

    def __len__(self) -> int:
        return len(self.nodes)

    def successors(self, node_id: str, rel_type: str) -> list[str]:
        return self._out.get((node_id, rel_type), [])

    def predecessors(self, node_id: str, rel_type: str) -> list[str]:
        return self._in.get((node_id, rel_type), [])

    def sorted_nodes(self) -> list[CanonicalNode]:
        return sorted(self.nodes.values(), key=lambda n: (n.label, n.display_name, n.canonical_id))

    def sorted_edges(self) -> list[Edge]:
        return [self.edges[k] for k in sorted(self.edges)]

    def require(self, node_id: str, label: str | None = None) -> CanonicalNode:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(f"no node with id {node_id!r}")
        if label is not None and node.label != label:
            raise WrongNodeType(f"{node.display_name!r} is a {node.label}, expected {label}")
        return node

    def digest(self) -> str:
        return hashlib.sha256(export_bytes(self, "jsonl")).hexdigest()


def build_graph(
    nodes: Iterable[CanonicalNode], edges: Iterable[Edge], schema: SchemaConfig | None = None
) -> KnowledgeGraph:
    """Assemble a graph and check its invariants, naming the offending ids on failure."""
    node_map: dict[str, CanonicalNode] = {}
    for n in nodes:
        if n.canonical_id in node_map:
            raise DuplicateNodeId(f"node id {n.canonical_id!r} appears more than once", node=n.canonical_id)
        if schema is not None and n.label not in schema.entity_names:
            raise InvalidGraph(f"node {n.canonical_id!r} has label {n.label!r} outside the schema", node=n.canonical_id)
        node_map[n.canonical_id] = n

    # aliases (and so display names, the cypher merge key) must not be shared within a label
    owner: dict[tuple[str, str], str] = {}
    for n in node_map.values():
        for alias in n.aliases:
            other = owner.setdefault((n.label, alias), n.canonical_id)
            if other != n.canonical_id:
                raise InvalidGraph(f"alias {alias!r} is shared by {other!r} and {n.canonical_id!r}", node=n.canonical_id)

    rel_names = set(schema.relation_names) if schema is not None else None
    edge_map: dict[EdgeKey, Edge] = {}
    for e in edges:
        for end in (e.source, e.target):
            if end not in node_map:
                raise DanglingEdge(f"edge {e.source} -{e.rel_type}-> {e.target} references missing node {end!r}", node=end)
        if e.source == e.target:
            raise InvalidGraph(f"edge {e.rel_type} on {e.source!r} is a self-loop", node=e.source)
        if rel_names is not None and e.rel_type not in rel_names:
            raise InvalidGraph(f"edge type {e.rel_type!r} is outside the schema")
        if e.key in edge_map:
            raise InvalidGraph(f"duplicate edge {e.source} -{e.rel_type}-> {e.target}")
        edge_map[e.key] = e
    return KnowledgeGraph(node_map, edge_map, schema, schema.digest() if schema is not None else "")


# --- queries ---------------------------------------------------------------

@dataclass(frozen=True)
class Subgraph:
    nodes: frozenset[str]
    edges: frozenset[EdgeKey]


@dataclass(frozen=True)
class TieredSubgraph:
    """Upstream view: ``tiers[k]`` holds suppliers at reverse-suppliesTo distance ``k``.

    ``enrichment`` maps mines, materials and products reached by one owns/produces
    hop from a supplier to the tier of the nearest supplier that reached them.
    """

    tiers: Mapping[int, frozenset[str]]
    enrichment: Mapping[str, int]
    edges: frozenset[EdgeKey]

    @property
    def nodes(self) -> frozenset[str]:
        out = set(self.enrichment)
        for members in self.tiers.values():
            out |= members
        return frozenset(out)

    def tier_of(self, node_id: str) -> int | None:
        for k, members in self.tiers.items():
            if node_id in members:
                return k
        return None


def upstream_suppliers(g: KnowledgeGraph, company_id: str, max_depth: int) -> TieredSubgraph:
    g.require(company_id, "Company")
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    depth = {company_id: 0}
    edges: set[EdgeKey] = set()
    queue = deque([company_id])
    while queue:
        buyer = queue.popleft()
        d = depth[buyer]
        if d == max_depth:
            continue
        for supplier in g.predecessors(buyer, SUPPLIES):
            edges.add(EdgeKey(supplier, SUPPLIES, buyer))
            if supplier not in depth:
                depth[supplier] = d + 1
                queue.append(supplier)

    enrichment: dict[str, int] = {}
    for supplier, d in sorted(depth.items(), key=lambda kv: (kv[1], kv[0])):
        if d == 0:
            continue
        for rel, labels in ((OWNS, ("Mine",)), (PRODUCES, ("Material", "Product"))):
            for target in g.successors(supplier, rel):
                if g.nodes[target].label not in labels:
                    continue
                edges.add(EdgeKey(supplier, rel, target))
                if target not in depth and target not in enrichment:
                    enrichment[target] = d

    tiers: dict[int, set[str]] = {k: set() for k in range(max_depth + 1)}
    for node, d in depth.items():
        tiers[d].add(node)
    return TieredSubgraph({k: frozenset(v) for k, v in tiers.items()}, enrichment, frozenset(edges))


def direct_suppliers(g: KnowledgeGraph, company_id: str) -> set[str]:
    return set(g.predecessors(company_id, SUPPLIES))


def shared_suppliers(g: KnowledgeGraph, company_a: str, company_b: str) -> Subgraph:
    """Tier-1 suppliers common to both buyers, with the witnessing suppliesTo edges."""
    g.require(company_a, "Company")
    g.require(company_b, "Company")
    common = direct_suppliers(g, company_a) & direct_suppliers(g, company_b)
    edges = {EdgeKey(s, SUPPLIES, buyer) for s in common for buyer in (company_a, company_b)}
    return Subgraph(frozenset(common), frozenset(edges))


def material_network(g: KnowledgeGraph, material_id: str) -> Subgraph:
    """Producers of a material, where they are, what they own or are owned by, and where their mines are."""
    g.require(material_id, "Material")
    nodes = {material_id}
    edges: set[EdgeKey] = set()
    producers = [p for p in g.predecessors(material_id, PRODUCES) if g.nodes[p].label == "Company"]
    for company in producers:
        nodes.add(company)
        edges.add(EdgeKey(company, PRODUCES, material_id))
        for loc in g.successors(company, LOCATED):
            nodes.add(loc)
            edges.add(EdgeKey(company, LOCATED, loc))
        for owner in g.predecessors(company, OWNS):
            nodes.add(owner)
            edges.add(EdgeKey(owner, OWNS, company))
        for owned in g.successors(company, OWNS):
            nodes.add(owned)
            edges.add(EdgeKey(company, OWNS, owned))
            if g.nodes[owned].label == "Mine":
                for loc in g.successors(owned, LOCATED):
                    nodes.add(loc)
                    edges.add(EdgeKey(owned, LOCATED, loc))
    return Subgraph(frozenset(nodes), frozenset(edges))


def induced(g: KnowledgeGraph, sub: Subgraph | TieredSubgraph) -> KnowledgeGraph:
    """Materialise a query result as a standalone graph (for exporting)."""
    nodes = [g.nodes[n] for n in sub.nodes]
    return build_graph(nodes, [g.edges[k] for k in sub.edges], g.schema)


# --- exporters -------------------------------------------------------------

def _cy_str(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r") + '"'


def _cy_key(key: str) -> str:
    return "`" + key.replace("`", "``") + "`"


def _cy_map(items: Iterable[tuple[str, str | list[str]]]) -> str:
    parts = []
    for k, v in items:
        val = "[" + ", ".join(_cy_str(x) for x in v) + "]" if isinstance(v, list) else _cy_str(v)
        parts.append(f"{_cy_key(k)}: {val}")
    return "{" + ", ".join(parts) + "}"


def _node_props(n: CanonicalNode) -> list[tuple[str, str | list[str]]]:
    items: list[tuple[str, str | list[str]]] = [("canonical_id", n.canonical_id), ("aliases", sorted(n.aliases))]
    items += [(k, v) for k, v in sorted(n.properties.items()) if k not in ("name", "canonical_id", "aliases")]
    return items


def _cypher(g: KnowledgeGraph) -> Iterator[str]:
    for n in g.sorted_nodes():
        yield f"MERGE (n:{n.label} {{name: {_cy_str(n.display_name)}}}) SET n += {_cy_map(_node_props(n))};\n"
    for e in g.sorted_edges():
        s, t = g.nodes[e.source], g.nodes[e.target]
        props = _cy_map(sorted(e.properties.items()))
        yield (
            f"MATCH (a:{s.label} {{name: {_cy_str(s.display_name)}}}), (b:{t.label} {{name: {_cy_str(t.display_name)}}}) "
            f"MERGE (a)-[r:{e.rel_type}]->(b) SET r += {props};\n"
        )


# XML 1.0 forbids most control characters
_XML_FORBIDDEN = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f]")


def _xml(text: str) -> str:
    out = text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    return _XML_FORBIDDEN.sub("", out)


def _graphml(g: KnowledgeGraph) -> Iterator[str]:
    yield '<?xml version="1.0" encoding="UTF-8"?>\n'
    yield '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">\n'
    yield '  <key id="label" for="node" attr.name="label" attr.type="string"/>\n'
    yield '  <key id="name" for="node" attr.name="name" attr.type="string"/>\n'
    yield '  <key id="aliases" for="node" attr.name="aliases" attr.type="string"/>\n'
    yield '  <key id="nprops" for="node" attr.name="properties" attr.type="string"/>\n'
    yield '  <key id="type" for="edge" attr.name="type" attr.type="string"/>\n'
    yield '  <key id="eprops" for="edge" attr.name="properties" attr.type="string"/>\n'
    yield '  <graph id="kg" edgedefault="directed">\n'
    for n in g.sorted_nodes():
        yield (
            f'    <node id="{_xml(n.canonical_id)}">'
            f'<data key="label">{_xml(n.label)}</data>'
            f'<data key="name">{_xml(n.display_name)}</data>'
            f'<data key="aliases">{_xml(json.dumps(sorted(n.aliases), ensure_ascii=False))}</data>'
            f'<data key="nprops">{_xml(json.dumps(dict(sorted(n.properties.items())), ensure_ascii=False))}</data>'
            "</node>\n"
        )
    for i, e in enumerate(g.sorted_edges()):
        yield (
            f'    <edge id="e{i}" source="{_xml(e.source)}" target="{_xml(e.target)}">'
            f'<data key="type">{_xml(e.rel_type)}</data>'
            f'<data key="eprops">{_xml(json.dumps(dict(sorted(e.properties.items())), ensure_ascii=False))}</data>'
            "</edge>\n"
        )
    yield "  </graph>\n</graphml>\n"


def _dot_str(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "") + '"'


def _dot(g: KnowledgeGraph) -> Iterator[str]:
    yield "digraph kg {\n"
    for n in g.sorted_nodes():
        yield f"  {_dot_str(n.canonical_id)} [label={_dot_str(n.display_name)}, type={_dot_str(n.label)}];\n"
    for e in g.sorted_edges():
        yield f"  {_dot_str(e.source)} -> {_dot_str(e.target)} [label={_dot_str(e.rel_type)}];\n"
    yield "}\n"


def _jsonl(g: KnowledgeGraph) -> Iterator[str]:
    for n in g.sorted_nodes():
        yield json.dumps(n.to_dict(), ensure_ascii=False) + "\n"
    for e in g.sorted_edges():
        yield json.dumps(e.to_dict(), ensure_ascii=False) + "\n"


_WRITERS = {"cypher": _cypher, "graphml": _graphml, "dot": _dot, "jsonl": _jsonl}


def export(g: KnowledgeGraph, format: str, sink: IO[bytes] | str | Path) -> int:
    """Write the graph to ``sink`` (binary stream or path); returns bytes written."""
    if format not in _WRITERS:
        raise ValueError(f"unknown export format {format!r}")
    data = export_bytes(g, format)
    try:
        if isinstance(sink, (str, Path)):
            Path(sink).write_bytes(data)
        else:
            sink.write(data)
    except (OSError, ValueError) as exc:
        raise SinkError(f"cannot write {format} export: {exc}") from None
    return len(data)


def export_bytes(g: KnowledgeGraph, format: str) -> bytes:
    return "".join(_WRITERS[format](g)).encode("utf-8")


def load_graph_jsonl(text: str, schema: SchemaConfig | None = None) -> KnowledgeGraph:
    """Inverse of the jsonl exporter."""
    nodes, edges = [], []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        prov = frozenset(tuple(p) for p in obj.get("provenance", []))
        if obj.get("kind") == "node":
            nodes.append(
                CanonicalNode(obj["id"], obj["label"], obj["name"], frozenset(obj["aliases"]), dict(obj.get("properties", {})), _as_prov(prov))
            )
        elif obj.get("kind") == "edge":
            edges.append(Edge(obj["source"], obj["target"], obj["type"], dict(obj.get("properties", {})), _as_prov(prov)))
        else:
            raise InvalidGraph(f"line {n}: unknown record kind {obj.get('kind')!r}")
    return build_graph(nodes, edges, schema)


def _as_prov(prov: frozenset) -> frozenset:
    return frozenset(Provenance(*p) if len(p) == 3 else p for p in prov)


def census(g: KnowledgeGraph) -> dict:
    labels: dict[str, int] = defaultdict(int)
    rels: dict[str, int] = defaultdict(int)
    for n in g.nodes.values():
        labels[n.label] += 1
    for k in g.edges:
        rels[k.rel_type] += 1
    return {"nodes": len(g.nodes), "edges": len(g.edges), "node_types": dict(sorted(labels.items())), "edge_types": dict(sorted(rels.items()))}


def names(g: KnowledgeGraph, ids: Iterable[str]) -> list[str]:
    return sorted(g.nodes[i].display_name for i in ids)


def describe_edges(g: KnowledgeGraph, keys: Iterable[EdgeKey]) -> list[str]:
    return sorted(f"{g.nodes[k.source].display_name} -{k.rel_type}-> {g.nodes[k.target].display_name}" for k in keys)


def from_triples(
    triples: Sequence[tuple[str, str, str, str, str]], schema: SchemaConfig | None = None
) -> KnowledgeGraph:
    """Build a graph from ``(source label, source name, rel, target label, target name)`` rows.

    Handy for hand-built fixtures; ids are derived from label and name.
    """
    nodes: dict[str, CanonicalNode] = {}
    edges = []
    for sl, sn, rel, tl, tn in triples:
        for label, name in ((sl, sn), (tl, tn)):
            cid = canonical_id(label, name)
            nodes.setdefault(cid, CanonicalNode(cid, label, name, frozenset([name])))
        edges.append(Edge(canonical_id(sl, sn), canonical_id(tl, tn), rel))
    return build_graph(nodes.values(), edges, schema)
