"""Regenerate the bundled LLM fixtures from hand-authored responses.

No network access is needed: a scripted backend stands in for the model and
answers extraction prompts with the JSON below and disambiguation prompts
from an alias table. Every exchange goes through RecordingBackend, so the
stored request hashes are exactly the ones the pipeline will ask for.

    python3 scripts/record_fixtures.py
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from supplykg.disambiguate import disambiguate_graph
from supplykg.extract import extract_corpus
from supplykg.ingest import load_corpus
from supplykg.llm import CallableBackend, LlmRequest, LlmResponse, RecordingBackend, namespaced_store_path
from supplykg.schema import default_schema

DATA = Path(__file__).resolve().parent.parent / "src" / "supplykg" / "data"


def node(label, name, **props):
    return {"label": label, "name": name, "properties": props}


def rel(src, src_label, rel_type, tgt, tgt_label, **props):
    return {"source": src, "source_label": src_label, "target": tgt, "target_label": tgt_label,
            "type": rel_type, "properties": props}


BATTERY = {
    "nodes": [
        node("Company", "LG Chem", country="South Korea"),
        node("Company", "Audi"),
        node("Product", "e-tron SUV"),
        node("Product", "lithium-ion battery cells"),
        node("Location", "Wroclaw, Poland"),
        node("Company", "Ford"),
        node("Company", "Chrysler"),
        node("Company", "SAIC Motor"),
        node("Company", "CATL"),
        node("Location", "Ningde, China"),
        node("Company", "Tesla"),
        node("Company", "BMW"),
        node("Company", "Contemporary Amperex Technology Co. Ltd."),
        node("Product", "lithium iron phosphate cells"),
        node("Company", "Ganfeng Lithium", headquarters="China"),
        node("Material", "lithium hydroxide"),
    ],
    "relationships": [
        rel("LG Chem", "Company", "suppliesTo", "Audi", "Company", product="lithium-ion battery cells"),
        rel("LG Chem", "Company", "suppliesTo", "Ford", "Company"),
        rel("LG Chem", "Company", "suppliesTo", "Chrysler", "Company"),
        rel("LG Chem", "Company", "suppliesTo", "SAIC Motor", "Company"),
        rel("LG Chem", "Company", "produces", "lithium-ion battery cells", "Product"),
        rel("CATL", "Company", "suppliesTo", "Tesla", "Company"),
        rel("CATL", "Company", "suppliesTo", "Ford", "Company"),
        rel("CATL", "Company", "suppliesTo", "BMW", "Company"),
        rel("CATL", "Company", "locatedIn", "Ningde, China", "Location"),
        rel("Contemporary Amperex Technology Co. Ltd.", "Company", "produces", "lithium iron phosphate cells", "Product"),
        rel("Ganfeng Lithium", "Company", "suppliesTo", "LG Chem", "Company", material="lithium hydroxide"),
        rel("Ganfeng Lithium", "Company", "suppliesTo", "CATL", "Company", material="lithium hydroxide"),
        rel("Audi", "Company", "produces", "e-tron SUV", "Product"),
    ],
}

GANFENG = {
    "nodes": [
        node("Company", "Ganfeng Lithium Co., Ltd.", headquarters="Xinyu, China"),
        node("Person", "Li Liangbin", role="chairman"),
        node("Location", "Xinyu, China"),
        node("Mine", "Mount Marion mine"),
        node("Mine", "Cauchari-Olaroz mine"),
        node("Mine", "Mariana mine"),
        node("Location", "Western Australia"),
        node("Location", "Argentina"),
        node("Material", "Lithium Hydroxide"),
        node("Material", "lithium carbonate"),
        node("Material", "lithium"),
        node("Company", "BMW"),
        node("Company", "Tesla, Inc."),
        node("Company", "Tesla"),
        node("Product", "Model 3"),
    ],
    "relationships": [
        rel("Ganfeng Lithium Co., Ltd.", "Company", "locatedIn", "Xinyu, China", "Location"),
        rel("Ganfeng Lithium Co., Ltd.", "Company", "owns", "Mount Marion mine", "Mine"),
        rel("Ganfeng Lithium Co., Ltd.", "Company", "owns", "Cauchari-Olaroz mine", "Mine"),
        rel("Ganfeng Lithium Co., Ltd.", "Company", "owns", "Mariana mine", "Mine"),
        rel("Mount Marion mine", "Mine", "locatedIn", "Western Australia", "Location"),
        rel("Cauchari-Olaroz mine", "Mine", "locatedIn", "Argentina", "Location"),
        rel("Mariana mine", "Mine", "locatedIn", "Argentina", "Location"),
        rel("Ganfeng Lithium Co., Ltd.", "Company", "produces", "Lithium Hydroxide", "Material"),
        rel("Ganfeng Lithium Co., Ltd.", "Company", "produces", "lithium carbonate", "Material"),
        rel("Ganfeng Lithium Co., Ltd.", "Company", "suppliesTo", "BMW", "Company", material="lithium"),
        rel("Ganfeng Lithium Co., Ltd.", "Company", "suppliesTo", "Tesla, Inc.", "Company", material="lithium"),
        rel("Tesla", "Company", "produces", "Model 3", "Product"),
    ],
}

NICKEL = {
    "nodes": [
        node("Company", "Norilsk Nickel"),
        node("Location", "Russia"),
        node("Company", "Nornickel"),
        node("Company", "Kola MMC"),
        node("Mine", "Talnakh mine"),
        node("Location", "Norilsk"),
        node("Company", "Jinchuan Group"),
        node("Location", "Gansu, China"),
        node("Mine", "Jinchuan mine"),
        node("Location", "Jinchang"),
        node("Material", "nickel"),
        node("Company", "LG Chem"),
    ],
    "relationships": [
        rel("Norilsk Nickel", "Company", "produces", "nickel", "Material", grade="refined"),
        rel("Norilsk Nickel", "Company", "locatedIn", "Russia", "Location"),
        rel("Nornickel", "Company", "owns", "Kola MMC", "Company"),
        rel("Nornickel", "Company", "owns", "Talnakh mine", "Mine"),
        rel("Talnakh mine", "Mine", "locatedIn", "Norilsk", "Location"),
        rel("Jinchuan Group", "Company", "locatedIn", "Gansu, China", "Location"),
        rel("Jinchuan Group", "Company", "produces", "nickel", "Material"),
        rel("Jinchuan Group", "Company", "owns", "Jinchuan mine", "Mine"),
        rel("Jinchuan mine", "Mine", "locatedIn", "Jinchang", "Location"),
        # outside the schema; the parser drops it with a warning
        rel("LG Chem", "Company", "usedBy", "nickel", "Material"),
    ],
}

# marker phrase in the chunk text -> (response object, rendering)
RESPONSES = {
    "LG Chem supplies lithium-ion": (BATTERY, "fenced"),
    "Ganfeng Lithium Co., Ltd. is": (GANFENG, "prose"),
    "Norilsk Nickel is the": (NICKEL, "plain"),
}

# alias -> canonical name, per entity type
SAME_AS = {
    "Company": {
        "Contemporary Amperex Technology Co. Ltd.": "CATL",
        "Tesla, Inc.": "Tesla",
        "Ganfeng Lithium Co., Ltd.": "Ganfeng Lithium",
        "Nornickel": "Norilsk Nickel",
    },
}


def render(obj: dict, style: str) -> str:
    text = json.dumps(obj, indent=1, ensure_ascii=False)
    if style == "fenced":
        return f"```json\n{text}\n```"
    if style == "prose":
        return f"Here is the extracted knowledge graph:\n{text}\nLet me know if you need anything else."
    return text


def vary(obj: dict, run: int) -> dict:
    """Deterministic run-to-run variation for the consistency fixtures."""
    nodes = list(obj["nodes"])
    rels = list(obj["relationships"])
    drop_rels = run % 3
    if drop_rels:
        rels = rels[:-drop_rels]
    if run % 2 == 0:
        nodes = [n for n in nodes if n["label"] != "Person"]
    if run in (3, 6):
        # an extra mention some runs pick up
        nodes.append(node("Location", "China"))
    return {"nodes": nodes, "relationships": rels}


def scripted(run: int | None):
    def answer(req: LlmRequest) -> LlmResponse:
        if req.system.startswith("You are an expert in semantics"):
            label = re.search(r"entities of type (\w+)", req.system).group(1)
            names = [re.sub(r"^\d+\. ", "", line) for line in req.user.splitlines()]
            aliases = SAME_AS.get(label, {})
            groups: dict[str, int] = {}
            ids = [groups.setdefault(aliases.get(n, n), len(groups) + 1) for n in names]
            return LlmResponse(json.dumps(ids), usage={"prompt_tokens": 0, "completion_tokens": len(ids)})
        for marker, (obj, style) in RESPONSES.items():
            if marker in req.user:
                body = obj if run is None else vary(obj, run)
                return LlmResponse(render(body, style))
        raise KeyError(f"no scripted response for chunk starting {req.user[:60]!r}")

    return CallableBackend(answer)


def main() -> None:
    schema = default_schema()
    docs = load_corpus(DATA / "corpus")
    fixtures = DATA / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)

    store = fixtures / "pipeline.jsonl"
    store.unlink(missing_ok=True)
    backend = RecordingBackend(scripted(None), store)
    results, counts = extract_corpus(docs, schema, backend, parallelism=1)
    graph = disambiguate_graph(results, schema, backend, parallelism=1)
    print(f"pipeline: {counts.nodes} mentions -> {len(graph.nodes)} nodes, {len(graph.edges)} edges")

    for run in range(1, 8):
        path = namespaced_store_path(fixtures / "consistency", run)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.unlink(missing_ok=True)
        _, counts = extract_corpus(docs, schema, RecordingBackend(scripted(run), path), parallelism=1,
                                   run_id=f"run-{run}")
        print(f"run {run}: {counts.nodes} nodes, {counts.relations} relations")


if __name__ == "__main__":
    main()
