import csv
import io

import pytest
from hypothesis import assume, given, settings, strategies as st

from supplykg.disambiguate import (
    GroupAssignment,
    alias_csv,
    assign_label,
    bucket_by_label,
    disambiguate_graph,
    identity_disambiguate,
    match_key,
    merge_nodes,
    parse_assignment,
    rewrite_edges,
)
from supplykg.errors import LengthMismatch, UncoveredNode, UnmappedEndpoint
from supplykg.extract import Diagnostic, ExtractedNode, ExtractedRelation, ExtractionResult, Provenance
from supplykg.graph import canonical_id, export_bytes
from supplykg.llm import CallableBackend
from supplykg.schema import default_schema

from helpers import alias_backend, partition

SCHEMA = default_schema()


def prov(doc="d", i=0, run="run-1"):
    return Provenance(doc, i, run)


def node(label, name, p=None, **props):
    return ExtractedNode(label, name, props, p or prov())


def rel(src, tgt, rel_type, p=None, **props):
    return ExtractedRelation(src, tgt, rel_type, props, p or prov())


def test_bucket_by_label():
    nodes = [node("Company", "Tesla"), node("Company", "Tesla", prov("e")), node("Location", "China")]
    assert bucket_by_label(nodes) == {"Company": ["Tesla"], "Location": ["China"]}
    assert bucket_by_label([]) == {}


def test_bucket_mixed_fixture():
    names = {"Company": ["Tesla", "CATL", "BMW", "LG Chem", "Tesla", "Ford"],
             "Location": ["China", "Ningde", "China", "Austin"],
             "Mine": ["Mariana", "Talnakh"]}
    nodes = [node(label, x, prov(str(i))) for label, xs in names.items() for i, x in enumerate(xs)]
    assert len(nodes) == 12
    assert bucket_by_label(nodes) == {
        "Company": ["Tesla", "CATL", "BMW", "LG Chem", "Ford"],
        "Location": ["China", "Ningde", "Austin"],
        "Mine": ["Mariana", "Talnakh"],
    }


def test_parse_assignment():
    assert parse_assignment("[1,1,2]", 3).group_ids == (1, 1, 2)
    assert parse_assignment("The answer is: [1, 1, 2]", 3) == parse_assignment("[1,1,2]", 3)
    with pytest.raises(LengthMismatch):
        parse_assignment("[1,2]", 3)


def test_display_name_policy():
    nodes = [node("Company", "Tesla", prov(str(i))) for i in range(3)] + [node("Company", "Tesla, Inc.", prov("x"))]
    canonical, alias_map = merge_nodes(nodes, {"Company": GroupAssignment("Company", ("Tesla", "Tesla, Inc."), (1, 1))})
    [c] = canonical
    assert c.display_name == "Tesla"
    assert c.aliases == {"Tesla", "Tesla, Inc."}
    assert c.canonical_id == canonical_id("Company", "Tesla")
    assert alias_map == {("Company", "Tesla"): c.canonical_id, ("Company", "Tesla, Inc."): c.canonical_id}
    assert len(c.provenance) == 4


def test_display_name_ties_prefer_longest_then_lexicographic():
    nodes = [node("Company", "BMW"), node("Company", "BMW AG", prov("e")), node("Company", "BMW Ag", prov("f"))]
    ga = GroupAssignment("Company", ("BMW", "BMW AG", "BMW Ag"), (1, 1, 1))
    [c], _ = merge_nodes(nodes, {"Company": ga})
    assert c.display_name == "BMW AG"


def test_identity_assignment_keeps_singletons():
    nodes = [node("Company", x) for x in ("Tesla", "CATL", "BMW")]
    canonical, _ = merge_nodes(nodes, {"Company": GroupAssignment.identity("Company", ["Tesla", "CATL", "BMW"])})
    assert len(canonical) == 3 and all(len(c.aliases) == 1 for c in canonical)


def test_uncovered_node():
    with pytest.raises(UncoveredNode):
        merge_nodes([node("Company", "Tesla")], {})


def test_conflicting_properties_are_tagged():
    nodes = [node("Company", "Ganfeng", prov("a"), hq="China", ceo="Li"),
             node("Company", "Ganfeng Lithium", prov("b"), hq="Xinyu", ceo="Li")]
    ga = GroupAssignment("Company", ("Ganfeng", "Ganfeng Lithium"), (1, 1))
    [c], _ = merge_nodes(nodes, {"Company": ga})
    assert c.properties == {"ceo": "Li", "hq@a#0@run-1": "China", "hq@b#0@run-1": "Xinyu"}


def test_rewrite_edges():
    t, ti, catl = ("Company", "Tesla"), ("Company", "Tesla, Inc."), ("Company", "CATL")
    alias_map = {t: "tesla", ti: "tesla", catl: "catl"}
    diags: list[Diagnostic] = []
    edges = rewrite_edges(
        [rel(catl, ti, "suppliesTo", prov("a")), rel(catl, t, "suppliesTo", prov("b")), rel(t, ti, "owns")],
        alias_map,
        diags,
    )
    assert [(e.source, e.target, e.rel_type, len(e.provenance)) for e in edges] == [("catl", "tesla", "suppliesTo", 2)]
    assert [d.code for d in diags] == ["MergedSelfLoop"]
    with pytest.raises(UnmappedEndpoint):
        rewrite_edges([rel(catl, ("Company", "Ghost"), "suppliesTo")], alias_map)


def test_prepass_merges_exact_variants_without_a_call():
    calls = []
    ga = assign_label("Company", ["Tesla", "tesla", "TESLA!"], alias_backend({}, calls))
    assert ga.group_ids == (1, 1, 1)
    assert calls == []
    assert match_key("Tesla,  Inc.") == match_key("tesla inc")


# -- planned-merge fixture ----------------------------------------------------

COMPANIES = [
    "Tesla", "Tesla, Inc.", "CATL", "Contemporary Amperex Technology", "LG Chem", "LG Chemical",
    "BMW", "Bayerische Motoren Werke", "Ganfeng Lithium", "Ganfeng Lithium Co., Ltd.", "Norilsk Nickel",
    "Nornickel", "Audi", "Ford", "Chrysler", "SAIC Motor", "Panasonic", "Samsung SDI", "Albemarle",
    "Tianqi Lithium", "Jinchuan Group", "Zijin Mining",
]
LOCATIONS = ["Ningde", "Ningde City", "USA", "United States", "China", "Russia", "Argentina", "Germany"]
MINES = ["Mariana", "Talnakh", "Mount Marion", "Greenbushes"]
MATERIALS = ["Lithium", "Nickel", "Cobalt"]
PRODUCTS = ["Model 3", "e-tron", "iX"]
PLANNED = {
    "Company": {"Tesla, Inc.": "Tesla", "Contemporary Amperex Technology": "CATL", "LG Chemical": "LG Chem",
                "Bayerische Motoren Werke": "BMW", "Ganfeng Lithium Co., Ltd.": "Ganfeng Lithium",
                "Nornickel": "Norilsk Nickel"},
    "Location": {"Ningde City": "Ningde", "United States": "USA"},
}


def forty_node_results():
    labelled = ([("Company", x) for x in COMPANIES] + [("Location", x) for x in LOCATIONS]
                + [("Mine", x) for x in MINES] + [("Material", x) for x in MATERIALS]
                + [("Product", x) for x in PRODUCTS])
    assert len(labelled) == 40
    nodes = [ExtractedNode(lb, x, {}, prov(f"doc{i % 4}", i % 3)) for i, (lb, x) in enumerate(labelled)]
    C = lambda x: ("Company", x)  # noqa: E731
    rels = [
        rel(C("CATL"), C("Tesla"), "suppliesTo"),
        rel(C("Contemporary Amperex Technology"), C("Tesla, Inc."), "suppliesTo", prov("doc2")),
        rel(C("LG Chemical"), C("Audi"), "suppliesTo"),
        rel(C("LG Chem"), C("Ford"), "suppliesTo"),
        rel(C("Ganfeng Lithium"), C("LG Chem"), "suppliesTo"),
        rel(C("Ganfeng Lithium Co., Ltd."), C("Bayerische Motoren Werke"), "suppliesTo"),
        rel(C("Ganfeng Lithium"), ("Mine", "Mariana"), "owns"),
        rel(C("Nornickel"), ("Mine", "Talnakh"), "owns"),
        rel(C("Norilsk Nickel"), ("Material", "Nickel"), "produces"),
        rel(C("CATL"), ("Location", "Ningde City"), "locatedIn"),
        rel(C("Tesla"), ("Location", "United States"), "locatedIn"),
        rel(C("Tesla, Inc."), ("Location", "USA"), "locatedIn", prov("doc3")),
        rel(C("Tesla"), C("Tesla, Inc."), "owns"),
        rel(("Mine", "Mariana"), ("Material", "Lithium"), "contains"),
        rel(C("Audi"), ("Product", "e-tron"), "produces"),
    ]
    return [ExtractionResult(nodes, rels, [], prov())]


def assert_canonical_graph(g):
    for label in {node_.label for node_ in g.nodes.values()}:
        seen: set[str] = set()
        for node_ in g.nodes.values():
            if node_.label == label:
                assert not (seen & node_.aliases)
                seen |= node_.aliases
    for e in g.edges.values():
        assert e.source in g.nodes and e.target in g.nodes


def test_forty_nodes_eight_merges():
    diags: list[Diagnostic] = []
    g = disambiguate_graph(forty_node_results(), SCHEMA, alias_backend(PLANNED), diagnostics=diags)
    assert len(g.nodes) == 32
    assert_canonical_graph(g)
    merged = {n_.display_name: n_.aliases for n_ in g.nodes.values() if len(n_.aliases) > 1}
    assert merged == {
        "Tesla, Inc.": {"Tesla", "Tesla, Inc."},
        "Contemporary Amperex Technology": {"CATL", "Contemporary Amperex Technology"},
        "LG Chemical": {"LG Chem", "LG Chemical"},
        "Bayerische Motoren Werke": {"BMW", "Bayerische Motoren Werke"},
        "Ganfeng Lithium Co., Ltd.": {"Ganfeng Lithium", "Ganfeng Lithium Co., Ltd."},
        "Norilsk Nickel": {"Norilsk Nickel", "Nornickel"},
        "Ningde City": {"Ningde", "Ningde City"},
        "United States": {"USA", "United States"},
    }
    # CATL->Tesla twice and Tesla->USA twice collapse, Tesla owns Tesla, Inc. becomes a self-loop
    assert len(g.edges) == 12
    assert [d.code for d in diags] == ["MergedSelfLoop"]
    tesla = canonical_id("Company", "Tesla, Inc.")
    catl = canonical_id("Company", "Contemporary Amperex Technology")
    assert len(g.edges[(catl, "suppliesTo", tesla)].provenance) == 2


def test_identity_rerun_is_noop():
    g = disambiguate_graph(forty_node_results(), SCHEMA, alias_backend(PLANNED))
    again = identity_disambiguate(g)
    assert export_bytes(again, "jsonl") == export_bytes(g, "jsonl")
    assert again.digest() == g.digest()


def conservation_fixture():
    """867 distinct mentions over six labels; 135 of them are planned aliases of another name."""
    labels = list(SCHEMA.entity_names)
    sizes = [145, 145, 145, 144, 144, 144]
    assert sum(sizes) == 867
    nodes, same_as = [], {}
    merges_left = 135
    for label, size in zip(labels, sizes):
        names = [f"{label} entity {i:03d}" for i in range(size)]
        k = min(merges_left, 23)
        merges_left -= k
        # alias j -> canonical j mod 10 so several groups absorb more than one alias
        same_as[label] = {names[size - 1 - j]: names[j % 10] for j in range(k)}
        nodes += [ExtractedNode(label, x, {}, prov(label, i)) for i, x in enumerate(names)]
    assert merges_left == 0
    return [ExtractionResult(nodes, [], [], prov())], same_as


def test_count_conservation_867_to_732():
    results, same_as = conservation_fixture()
    g = disambiguate_graph(results, SCHEMA, alias_backend(same_as))
    assert len(g.nodes) == 867 - 135 == 732
    assert_canonical_graph(g)
    assert sum(len(n_.aliases) for n_ in g.nodes.values()) == 867


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=14), st.integers(min_value=1, max_value=6))
def test_batch_split_soundness(group_of, batch_size):
    names = [f"Firm {chr(65 + i)}" for i in range(len(group_of))]
    table = {"Company": {x: f"group {g}" for x, g in zip(names, group_of)}}
    whole = partition(assign_label("Company", names, alias_backend(table), batch_size=150))
    split = partition(assign_label("Company", names, alias_backend(table), batch_size=batch_size))
    # names are merged across batches never, within a batch exactly when the single-batch run merges them
    batch_of = {x: i // batch_size for i, x in enumerate(names)}
    expected = set()
    for group in whole:
        by_batch: dict[int, set[str]] = {}
        for x in group:
            by_batch.setdefault(batch_of[x], set()).add(x)
        expected |= {frozenset(v) for v in by_batch.values()}
    assert split == expected
    if all(len({batch_of[x] for x in group}) == 1 for group in whole):
        assert split == whole


def test_group_ids_use_running_offset():
    names = ["A1", "A2", "B1", "B2"]
    table = {"Company": {"A2": "A1", "B2": "B1"}}
    ga = assign_label("Company", names, alias_backend(table), batch_size=2)
    assert ga.group_ids == (1, 1, 2, 2)


def test_locations_with_two_spellings_merge():
    results = [ExtractionResult([node("Location", "Wroclaw"), node("Location", "Wrocław", prov("b")),
                                 node("Product", "e-tron")], [], [], prov())]
    g = disambiguate_graph(results, SCHEMA, alias_backend({"Location": {"Wrocław": "Wroclaw"}}))
    assert sorted((n_.label, len(n_.aliases)) for n_ in g.nodes.values()) == [("Location", 2), ("Product", 1)]


def test_no_duplicates_identity():
    results = [ExtractionResult([node("Company", x) for x in ("Tesla", "CATL", "BMW")], [], [], prov())]
    g = disambiguate_graph(results, SCHEMA, alias_backend({}))
    assert len(g.nodes) == 3


def test_model_error_is_annotated():
    results = [ExtractionResult([node("Company", "Tesla"), node("Company", "CATL")], [], [], prov())]
    backend = CallableBackend(lambda req: "[1]")
    with pytest.raises(LengthMismatch) as info:
        disambiguate_graph(results, SCHEMA, backend)
    assert info.value.context["label"] == "Company" and info.value.context["batch"] == 0


def test_alias_csv():
    g = disambiguate_graph(forty_node_results(), SCHEMA, alias_backend(PLANNED))
    rows = list(csv.DictReader(io.StringIO(alias_csv(g))))
    assert len(rows) == 40
    assert {r["canonical_id"] for r in rows} == set(g.nodes)
