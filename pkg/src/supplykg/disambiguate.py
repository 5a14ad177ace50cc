"""Entity disambiguation: bucket by type, ask for group numbers, merge, rewrite edges."""

from __future__ import annotations

import csv
import io
import re
import unicodedata
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import LengthMismatch, NonInteger, PipelineError, UncoveredNode, UnmappedEndpoint
from .extract import Diagnostic, ExtractedNode, ExtractedRelation, ExtractionResult, NodeKey, Provenance, load_json_lenient
from .graph import CanonicalNode, Edge, KnowledgeGraph, build_graph, canonical_id
from .llm import Backend, LlmSettings
from .prompts import DISAMBIGUATION_BATCH, batches, build_disambiguation_prompt
from .schema import SchemaConfig

DISAMBIGUATION_SETTINGS = LlmSettings(max_output_tokens=1024)


@dataclass(frozen=True)
class GroupAssignment:
    label: str
    names: tuple[str, ...]
    group_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.group_ids):
            raise LengthMismatch(f"{len(self.names)} names but {len(self.group_ids)} group ids", label=self.label)

    def mapping(self) -> dict[str, int]:
        return dict(zip(self.names, self.group_ids))

    @classmethod
    def identity(cls, label: str, names: Sequence[str]) -> "GroupAssignment":
        return cls(label, tuple(names), tuple(range(1, len(names) + 1)))


def bucket_by_label(nodes: Iterable[ExtractedNode]) -> dict[str, list[str]]:
    buckets: dict[str, list[str]] = {}
    seen: set[NodeKey] = set()
    for n in nodes:
        if n.temp_key in seen:
            continue
        seen.add(n.temp_key)
        buckets.setdefault(n.label, []).append(n.name)
    return buckets


def parse_assignment(raw: str, expected_len: int, label: str = "", names: Sequence[str] | None = None) -> GroupAssignment:
    """Parse a JSON integer array of group numbers, repairing fences and surrounding prose."""
    if expected_len < 1:
        raise ValueError("expected_len must be at least 1")
    values, _ = load_json_lenient(raw, "[", list)
    ids: list[int] = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise NonInteger(f"group id {v!r} is not a positive integer", label=label)
        ids.append(v)
    if len(ids) != expected_len:
        raise LengthMismatch(f"expected {expected_len} group ids, got {len(ids)}", label=label)
    if names is None:
        names = [f"#{i}" for i in range(1, expected_len + 1)]
    return GroupAssignment(label, tuple(names), tuple(ids))


def match_key(name: str) -> str:
    """Case-insensitive, punctuation-stripped form used by the exact-match pre-pass."""
    text = unicodedata.normalize("NFKC", name).casefold()
    text = re.sub(r"[^\w\s]", " ", text)
    return " ".join(text.split())


def _pick_display_name(names: Sequence[str], counts: Counter) -> str:
    return sorted(names, key=lambda n: (-counts[n], -len(n), n))[0]


def _merge_properties(items: Iterable[tuple[dict[str, str], Provenance]]) -> dict[str, str]:
    """Key-wise merge; a key with conflicting values becomes ``key@provenance`` entries."""
    values: dict[str, dict[str, Provenance]] = defaultdict(dict)
    for props, prov in items:
        for k, v in props.items():
            values[k].setdefault(v, prov)
    merged: dict[str, str] = {}
    for k in sorted(values):
        distinct = values[k]
        if len(distinct) == 1:
            merged[k] = next(iter(distinct))
        else:
            for v, prov in sorted(distinct.items(), key=lambda kv: (kv[1].tag(), kv[0])):
                merged[f"{k}@{prov.tag()}"] = v
    return merged


def merge_nodes(
    nodes: Sequence[ExtractedNode], assignments: Mapping[str, GroupAssignment]
) -> tuple[list[CanonicalNode], dict[NodeKey, str]]:
    """One canonical node per (label, group id).

    The display name is the most frequent merged name, ties broken by the
    longest name and then lexicographically.
    """
    lookup: dict[NodeKey, int] = {}
    for label, ga in assignments.items():
        for name, gid in ga.mapping().items():
            lookup[(label, name)] = gid

    occurrences: Counter[NodeKey] = Counter()
    groups: dict[tuple[str, int], list[ExtractedNode]] = {}
    for n in nodes:
        gid = lookup.get(n.temp_key)
        if gid is None:
            raise UncoveredNode(f"node {n.label}:{n.name} has no group assignment", label=n.label)
        occurrences[n.temp_key] += 1
        groups.setdefault((n.label, gid), []).append(n)

    canonical: list[CanonicalNode] = []
    alias_map: dict[NodeKey, str] = {}
    for (label, _gid), members in groups.items():
        names = list(dict.fromkeys(m.name for m in members))
        counts = Counter({name: occurrences[(label, name)] for name in names})
        display = _pick_display_name(names, counts)
        cid = canonical_id(label, display)
        provenance = frozenset(m.provenance for m in members)
        props = _merge_properties(
            (m.properties, m.provenance) for m in sorted(members, key=lambda m: m.provenance)
        )
        canonical.append(CanonicalNode(cid, label, display, frozenset(names), props, provenance))
        for name in names:
            alias_map[(label, name)] = cid
    return canonical, alias_map


def rewrite_edges(
    relations: Iterable[ExtractedRelation],
    alias_map: Mapping[NodeKey, str],
    diagnostics: list[Diagnostic] | None = None,
) -> list[Edge]:
    """Replace endpoints with canonical ids, collapse duplicates, drop merge-induced self-loops."""
    grouped: dict[tuple[str, str, str], list[ExtractedRelation]] = {}
    for r in relations:
        try:
            src = alias_map[r.source_key]
            tgt = alias_map[r.target_key]
        except KeyError as exc:
            raise UnmappedEndpoint(f"relation endpoint {exc.args[0]} has no canonical node") from None
        if src == tgt:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(
                        "warning",
                        "MergedSelfLoop",
                        f"{r.source_key[1]} {r.rel_type} {r.target_key[1]} collapsed to a self-loop and was dropped",
                    )
                )
            continue
        grouped.setdefault((src, r.rel_type, tgt), []).append(r)

    edges = []
    for (src, rel_type, tgt), rels in grouped.items():
        props = _merge_properties((r.properties, r.provenance) for r in sorted(rels, key=lambda r: r.provenance))
        edges.append(Edge(src, tgt, rel_type, props, frozenset(r.provenance for r in rels)))
    return edges


def prepass_groups(names: Sequence[str]) -> tuple[list[str], dict[str, str]]:
    """Exact-match pre-pass: returns representatives (first-seen) and name -> representative."""
    reps: dict[str, str] = {}
    rep_of: dict[str, str] = {}
    for name in names:
        key = match_key(name) or name
        rep = reps.setdefault(key, name)
        rep_of[name] = rep
    return list(reps.values()), rep_of


def assign_label(
    label: str,
    names: Sequence[str],
    backend: Backend,
    batch_size: int = DISAMBIGUATION_BATCH,
    settings: LlmSettings = DISAMBIGUATION_SETTINGS,
) -> GroupAssignment:
    """Group assignment for one label: pre-pass, then batched prompts with a running id offset."""
    reps, rep_of = prepass_groups(names)
    rep_gid: dict[str, int] = {}
    offset = 0
    for b, batch in enumerate(batches(reps, batch_size)):
        if len(batch) == 1:
            # nothing to decide for a single name
            ids: Sequence[int] = (1,)
        else:
            prompt = build_disambiguation_prompt(label, batch)
            try:
                resp = backend.complete(settings.request(prompt))
                ids = parse_assignment(resp.content, len(batch), label, batch).group_ids
            except PipelineError as exc:
                raise exc.annotate(label=label, batch=b)
        remap: dict[int, int] = {}
        for name, gid in zip(batch, ids):
            if gid not in remap:
                remap[gid] = offset + len(remap) + 1
            rep_gid[name] = remap[gid]
        offset += len(remap)
    return GroupAssignment(label, tuple(names), tuple(rep_gid[rep_of[n]] for n in names))


def disambiguate_graph(
    results: Sequence[ExtractionResult],
    schema: SchemaConfig,
    backend: Backend,
    batch_size: int = DISAMBIGUATION_BATCH,
    parallelism: int = 4,
    diagnostics: list[Diagnostic] | None = None,
    settings: LlmSettings = DISAMBIGUATION_SETTINGS,
) -> KnowledgeGraph:
    nodes = [n for r in results for n in r.nodes]
    relations = [x for r in results for x in r.relations]
    buckets = bucket_by_label(nodes)
    labels = [name for name in schema.entity_names if name in buckets]
    labels += sorted(set(buckets) - set(labels))

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        assigned = list(pool.map(lambda lb: assign_label(lb, buckets[lb], backend, batch_size, settings), labels))
    assignments = dict(zip(labels, assigned))

    canonical, alias_map = merge_nodes(nodes, assignments)
    edges = rewrite_edges(relations, alias_map, diagnostics)
    return build_graph(canonical, edges, schema)


def identity_disambiguate(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Feed a canonical graph back through merging with identity assignments.

    Each canonical node becomes one mention per provenance entry, named by
    its display name; edges are replayed the same way. A canonical graph is
    a fixed point of this function.
    """
    nodes: list[ExtractedNode] = []
    old_aliases: dict[NodeKey, frozenset[str]] = {}
    for node in graph.sorted_nodes():
        key = (node.label, node.display_name)
        old_aliases[key] = node.aliases
        for prov in sorted(node.provenance) or [Provenance("", -1, "")]:
            nodes.append(ExtractedNode(node.label, node.display_name, dict(node.properties), prov))
    relations: list[ExtractedRelation] = []
    for edge in graph.sorted_edges():
        src, tgt = graph.nodes[edge.source], graph.nodes[edge.target]
        for prov in sorted(edge.provenance) or [Provenance("", -1, "")]:
            relations.append(
                ExtractedRelation((src.label, src.display_name), (tgt.label, tgt.display_name), edge.rel_type, dict(edge.properties), prov)
            )

    assignments = {lb: GroupAssignment.identity(lb, names) for lb, names in bucket_by_label(nodes).items()}
    canonical, alias_map = merge_nodes(nodes, assignments)
    members: dict[str, set[str]] = defaultdict(set)
    for key, cid in alias_map.items():
        members[cid] |= old_aliases[key]
    rebuilt = [
        CanonicalNode(c.canonical_id, c.label, c.display_name, frozenset(members[c.canonical_id]), c.properties, c.provenance)
        for c in canonical
    ]
    return build_graph(rebuilt, rewrite_edges(relations, alias_map), graph.schema)


def alias_rows(graph: KnowledgeGraph) -> list[tuple[str, str, str, str]]:
    rows = []
    for node in graph.sorted_nodes():
        for alias in sorted(node.aliases):
            rows.append((node.label, alias, node.canonical_id, node.display_name))
    return rows


def alias_csv(graph: KnowledgeGraph) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "alias", "canonical_id", "display_name"])
    writer.writerows(alias_rows(graph))
    return buf.getvalue()
