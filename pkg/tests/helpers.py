"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

from supplykg.graph import canonical_id, from_triples
from supplykg.schema import EntityTypeDef, RelationTypeDef, SchemaConfig, default_schema

DATA = Path(__file__).resolve().parent.parent / "src" / "supplykg" / "data"
CORPUS = DATA / "corpus"
PIPELINE_FIXTURES = DATA / "fixtures" / "pipeline.jsonl"
CONSISTENCY_FIXTURES = DATA / "fixtures" / "consistency"
RUN_CONFIG = DATA / "run_config.json"

C, L, MAT, MINE, P = "Company", "Location", "Material", "Mine", "Product"

# Hand-built graph mirroring the EV case study: battery makers, the lithium
# chain behind them and a nickel producer with its holdings.
CASE_STUDY = [
    (C, "LG Chem", "suppliesTo", C, "Audi"),
    (C, "LG Chem", "suppliesTo", C, "Chrysler"),
    (C, "LG Chem", "suppliesTo", C, "SAIC Motor"),
    (C, "LG Chem", "suppliesTo", C, "Ford"),
    (C, "CATL", "suppliesTo", C, "Tesla"),
    (C, "CATL", "suppliesTo", C, "Ford"),
    (C, "CATL", "suppliesTo", C, "BMW"),
    (C, "Ganfeng Lithium", "suppliesTo", C, "LG Chem"),
    (C, "Ganfeng Lithium", "suppliesTo", C, "CATL"),
    (C, "Ganfeng Lithium", "suppliesTo", C, "BMW"),
    (C, "Ganfeng Lithium", "suppliesTo", C, "Tesla"),
    (C, "Pilbara Minerals", "suppliesTo", C, "Ganfeng Lithium"),
    (C, "Pilbara Minerals", "owns", MINE, "Pilgangoora Mine"),
    (C, "Ganfeng Lithium", "owns", MINE, "Mount Marion Mine"),
    (C, "Ganfeng Lithium", "owns", MINE, "Cauchari-Olaroz Mine"),
    (C, "Ganfeng Lithium", "owns", MINE, "Mariana Mine"),
    (C, "Ganfeng Lithium", "locatedIn", L, "China"),
    (C, "Ganfeng Lithium", "produces", MAT, "Lithium"),
    (MINE, "Mariana Mine", "contains", MAT, "Lithium"),
    (MINE, "Mount Marion Mine", "locatedIn", L, "Western Australia"),
    (C, "LG Chem", "produces", P, "Battery Cells"),
    (C, "LG Chem", "locatedIn", L, "South Korea"),
    (C, "Tesla", "produces", P, "Model 3"),
    (C, "Interros", "owns", C, "Norilsk Nickel"),
    (C, "Norilsk Nickel", "produces", MAT, "Nickel"),
    (C, "Norilsk Nickel", "locatedIn", L, "Russia"),
    (C, "Norilsk Nickel", "owns", C, "Kola MMC"),
    (C, "Norilsk Nickel", "owns", MINE, "Talnakh Mine"),
    (MINE, "Talnakh Mine", "locatedIn", L, "Norilsk"),
    (MINE, "Talnakh Mine", "contains", MAT, "Nickel"),
    (C, "Kola MMC", "owns", MINE, "Severny Mine"),
    (C, "Kola MMC", "produces", MAT, "Copper"),
    (C, "LG Chem", "suppliesTo", C, "Kola MMC"),
]


def case_study_graph():
    return from_triples(CASE_STUDY, default_schema())


def cid(label: str, name: str) -> str:
    return canonical_id(label, name)


def company(name: str) -> str:
    return canonical_id(C, name)


def tiny_schema() -> SchemaConfig:
    return SchemaConfig(
        (EntityTypeDef("Company", "A business.", ("Tesla", "CATL", "BMW")),),
        (RelationTypeDef("suppliesTo", "Sells goods to."),),
    )


def extraction_json(nodes, relationships=()) -> str:
    return json.dumps({"nodes": list(nodes), "relationships": list(relationships)})


def n(label, name, **props):
    return {"label": label, "name": name, "properties": props}


def r(src, src_label, rel_type, tgt, tgt_label, **props):
    return {"source": src, "source_label": src_label, "target": tgt, "target_label": tgt_label,
            "type": rel_type, "properties": props}


def alias_backend(same_as: dict[str, dict[str, str]], calls: list | None = None):
    """Stand-in model for grouping prompts: names mapping to the same canonical name share a group."""
    import re

    from supplykg.llm import CallableBackend

    def answer(req):
        label = re.search(r"entities of type (\w+)", req.system).group(1)
        names = [re.sub(r"^\d+\. ", "", line) for line in req.user.splitlines()]
        if calls is not None:
            calls.append((label, names))
        table = same_as.get(label, {})
        groups: dict[str, int] = {}
        return json.dumps([groups.setdefault(table.get(x, x), len(groups) + 1) for x in names])

    return CallableBackend(answer)


def partition(assignment) -> set[frozenset[str]]:
    groups: dict[int, set[str]] = {}
    for name, gid in assignment.mapping().items():
        groups.setdefault(gid, set()).add(name)
    return {frozenset(g) for g in groups.values()}
