"""Prompt templates: combined entity/relation extraction, and entity disambiguation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

from .errors import EmptyNameList
from .ingest import Chunk, approx_tokens
from .schema import SchemaConfig

TEMPLATE_VERSION = "1.0.0"
DEFAULT_PROMPT_BUDGET = 4000
DISAMBIGUATION_BATCH = 150


@dataclass(frozen=True)
class PromptText:
    system: str
    user: str
    template_id: Literal["extraction", "disambiguation"]
    template_version: str = TEMPLATE_VERSION

    def __post_init__(self) -> None:
        if not self.system.strip() or not self.user.strip():
            raise ValueError("prompt system and user text must be non-empty")


def _one_line(text: str) -> str:
    return " ".join(text.split())


def _entity_block(schema: SchemaConfig) -> str:
    lines = []
    for e in schema.entity_types:
        examples = ", ".join(f'"{x}"' for x in e.examples)
        line = f"- {e.name}: {_one_line(e.description)} Examples: {examples}."
        if e.property_hints:
            line += f" Useful properties: {', '.join(e.property_hints)}."
        lines.append(line)
    return "\n".join(lines)


def _relation_block(schema: SchemaConfig) -> str:
    lines = []
    for r in schema.relation_types:
        line = f"- {r.name}: {_one_line(r.description)}"
        if r.semantic_equivalents:
            line += " Also expressed as: " + ", ".join(f'"{s}"' for s in r.semantic_equivalents) + "."
        if r.endpoint_constraints:
            pairs = ", ".join(f"({a} -> {b})" for a, b in r.endpoint_constraints)
            line += f" Allowed endpoints: {pairs}."
        lines.append(line)
    return "\n".join(lines)


_EXTRACTION_TEMPLATE = """\
You are an information extraction system that builds a supply chain knowledge graph from text.

## Entities
Recognise only entities of the following types. Each type is defined with examples of the kind of name it covers.
{entities}

## Output format
Return a single JSON object and nothing else: no commentary, no Markdown code fences.
The object has exactly two keys, "nodes" and "relationships":
{{"nodes": [{{"label": "<entity type>", "name": "<entity name>", "properties": {{"<key>": "<value>"}}}}],
 "relationships": [{{"source": "<source name>", "source_label": "<source type>", "target": "<target name>", "target_label": "<target type>", "type": "<relationship type>", "properties": {{"<key>": "<value>"}}}}]}}
Properties are key-value pairs whose keys and values are both strings. Use double quotes, escape quotes inside strings, and do not leave trailing commas.

## Handling the text
- Extract an entity only when the text names it explicitly. Do not invent entities.
- Attach any additional relevant information about an entity (dates, quantities, roles, capacities) as properties of that entity rather than creating new entity types.
- Use the most complete name the text gives for an entity, and reuse exactly that name everywhere it is referenced.
- If no entities are present, return {{"nodes": [], "relationships": []}}.

## Relationships
A relationship is a directed link between two nodes listed in "nodes". Capture only the following relationship types:
{relations}
Keep the direction stated by the text: the source is the entity performing the relationship.

## Label formatting
- Entity labels are written in PascalCase exactly as listed above.
- Relationship types are written in lowerCamelCase exactly as listed above.
- Do not use spaces, underscores or hyphens inside labels or relationship types.
- Every relationship's source and target must appear in "nodes" with the same name and label.
- Never relate an entity to itself.
- Report each relationship once.
"""


def build_extraction_prompt(schema: SchemaConfig, chunk: Chunk) -> PromptText:
    if not chunk.text.strip():
        raise ValueError("chunk text is empty")
    system = _EXTRACTION_TEMPLATE.format(entities=_entity_block(schema), relations=_relation_block(schema))
    return PromptText(system=system, user=chunk.text, template_id="extraction")


def extraction_overhead(schema: SchemaConfig) -> int:
    """Estimated tokens the extraction template adds on top of the chunk text."""
    return approx_tokens(build_extraction_prompt(schema, Chunk("_", 0, "x", 1)).system)


_DISAMBIGUATION_TEMPLATE = """\
You are an expert in semantics and entity identification.
You will receive a numbered list of names that were all extracted as entities of type {label}.
Decide which names refer to the same real-world {label}.
Assign a positive integer group number to every name. Names that denote the same real-world entity get the same number; names that denote different entities get different numbers.
Consider abbreviations, legal suffixes (Inc., Ltd., Co.), translations, alternative spellings and former names. Do not merge entities that are merely related, such as a parent company and its subsidiary.
Return only a JSON array of integers with exactly one number per input name, in input order. For example, for three names where the first two are the same entity: [1, 1, 2]
"""


def build_disambiguation_prompt(label: str, names: Sequence[str]) -> PromptText:
    if not names:
        raise EmptyNameList(f"no names to disambiguate for type {label!r}", label=label)
    system = _DISAMBIGUATION_TEMPLATE.format(label=label)
    user = "\n".join(f"{i}. {_one_line(name)}" for i, name in enumerate(names, 1))
    return PromptText(system=system, user=user, template_id="disambiguation")


def batches(names: Sequence[str], size: int = DISAMBIGUATION_BATCH) -> list[list[str]]:
    if size < 1:
        raise ValueError("batch size must be positive")
    return [list(names[i:i + size]) for i in range(0, len(names), size)]
