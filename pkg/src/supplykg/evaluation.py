"""Accuracy over human judgments and run-to-run consistency statistics."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Mapping, Sequence

from .errors import DegenerateSeries, EmptyJudgmentSet, MalformedConfig, PipelineError, ZeroMeanCV
from .extract import CorpusCounts, extract_corpus
from .ingest import DEFAULT_CHUNK_BUDGET, Document
from .llm import Backend
from .schema import SchemaConfig

Task = Literal["ner", "re", "ed"]
TASKS: tuple[str, ...] = ("ner", "re", "ed")
TASK_TITLES = {"ner": "NER", "re": "RE", "ed": "Entity Disambiguation"}
STAT_COLUMNS = ("Mean", "Standard Deviation", "Coefficient of Variation", "Range")


@dataclass(frozen=True)
class Judgment:
    task: str
    item_id: str
    item_type: str
    verdict: str

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.verdict not in ("correct", "incorrect"):
            raise ValueError(f"verdict must be correct or incorrect, got {self.verdict!r}")

    @property
    def correct(self) -> bool:
        return self.verdict == "correct"


def load_judgments(text: str, schema: SchemaConfig | None = None) -> list[Judgment]:
    """Read a ``task,item_id,item_type,verdict`` CSV."""
    reader = csv.DictReader(io.StringIO(text))
    expected = ["task", "item_id", "item_type", "verdict"]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
        raise MalformedConfig(f"judgment file header must be {','.join(expected)}")
    out = []
    for n, row in enumerate(reader, 2):
        try:
            j = Judgment(row["task"].strip().lower(), row["item_id"].strip(), row["item_type"].strip(), row["verdict"].strip().lower())
        except (ValueError, AttributeError) as exc:
            raise MalformedConfig(f"judgment line {n}: {exc}") from None
        if schema is not None:
            allowed = schema.entity_names if j.task == "ner" else schema.relation_names if j.task == "re" else None
            if allowed is not None and j.item_type not in allowed:
                raise MalformedConfig(f"judgment line {n}: {j.item_type!r} is not a schema type for {j.task}")
        out.append(j)
    return out


@dataclass(frozen=True)
class Ratio:
    correct: int
    total: int

    @property
    def incorrect(self) -> int:
        return self.total - self.correct

    @property
    def value(self) -> float:
        return self.correct / self.total


def _ratio(judgments: Iterable[Judgment]) -> Ratio:
    correct = total = 0
    for j in judgments:
        total += 1
        correct += j.correct
    return Ratio(correct, total)


def accuracy(judgments: Sequence[Judgment], task: str) -> Ratio:
    """Correct / (correct + incorrect) over the judgments for one task."""
    r = _ratio(j for j in judgments if j.task == task)
    if r.total == 0:
        raise EmptyJudgmentSet(f"no judgments for task {task!r}")
    return r


def accuracy_by_type(judgments: Sequence[Judgment], task: str) -> dict[str, Ratio]:
    selected = [j for j in judgments if j.task == task]
    if not selected:
        raise EmptyJudgmentSet(f"no judgments for task {task!r}")
    by_type: dict[str, list[Judgment]] = {}
    for j in selected:
        by_type.setdefault(j.item_type, []).append(j)
    return {t: _ratio(js) for t, js in sorted(by_type.items())}


@dataclass
class AccuracyReport:
    per_task: dict[str, Ratio]
    per_type: dict[tuple[str, str], Ratio]

    def to_dict(self) -> dict:
        return {
            "per_task": {t: {"accuracy": r.value, "correct": r.correct, "incorrect": r.incorrect} for t, r in self.per_task.items()},
            "per_type": [
                {"task": t, "type": k, "accuracy": r.value, "correct": r.correct, "incorrect": r.incorrect}
                for (t, k), r in self.per_type.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self) -> str:
        lines = ["| Task | Accuracy | Correct | Incorrect |", "|---|---|---|---|"]
        for t, r in self.per_task.items():
            lines.append(f"| {TASK_TITLES[t]} | {r.value:.2f} | {r.correct} | {r.incorrect} |")
        if self.per_type:
            lines += ["", "| Task | Type | Accuracy | Correct | Incorrect |", "|---|---|---|---|---|"]
            for (t, k), r in self.per_type.items():
                lines.append(f"| {TASK_TITLES[t]} | {k} | {r.value:.2f} | {r.correct} | {r.incorrect} |")
        return "\n".join(lines) + "\n"


def accuracy_report(judgments: Sequence[Judgment]) -> AccuracyReport:
    per_task: dict[str, Ratio] = {}
    per_type: dict[tuple[str, str], Ratio] = {}
    for task in TASKS:
        if not any(j.task == task for j in judgments):
            continue
        per_task[task] = accuracy(judgments, task)
        if task in ("ner", "re"):
            for k, r in accuracy_by_type(judgments, task).items():
                per_type[(task, k)] = r
    if not per_task:
        raise EmptyJudgmentSet("judgment file is empty")
    return AccuracyReport(per_task, per_type)


# --- consistency -----------------------------------------------------------

@dataclass(frozen=True)
class SeriesStats:
    mean: float
    std: float
    cv: float | None
    range: float

    def row(self) -> tuple[float, float, float | None, float]:
        return (self.mean, self.std, self.cv, self.range)


def consistency_stats(counts: Sequence[float], allow_zero_mean: bool = False) -> SeriesStats:
    """Mean, sample standard deviation (n-1), coefficient of variation and range."""
    values = [float(x) for x in counts]
    if len(values) < 2:
        raise DegenerateSeries(f"need at least 2 values, got {len(values)}")
    mean = statistics.fmean(values)
    std = statistics.stdev(values)
    if mean == 0:
        if not allow_zero_mean:
            raise ZeroMeanCV("coefficient of variation is undefined for a zero mean")
        cv = None
    else:
        cv = std / mean
    return SeriesStats(mean, std, cv, max(values) - min(values))


@dataclass
class ConsistencyReport:
    runs: int
    per_run_counts: dict[int, CorpusCounts]
    stats: dict[str, SeriesStats] = field(default_factory=dict)

    def series(self) -> dict[str, list[int]]:
        """Raw count series keyed ``nodes``, ``relations``, ``node:<type>``, ``relation:<type>``."""
        runs = [self.per_run_counts[r] for r in sorted(self.per_run_counts)]
        out: dict[str, list[int]] = {"nodes": [c.nodes for c in runs], "relations": [c.relations for c in runs]}
        node_types = list(dict.fromkeys(t for c in runs for t in c.node_types))
        rel_types = list(dict.fromkeys(t for c in runs for t in c.relation_types))
        for t in node_types:
            out[f"node:{t}"] = [c.node_types.get(t, 0) for c in runs]
        for t in rel_types:
            out[f"relation:{t}"] = [c.relation_types.get(t, 0) for c in runs]
        return out

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "per_run_counts": {str(r): c.to_dict() for r, c in sorted(self.per_run_counts.items())},
            "stats": {
                k: {"mean": s.mean, "std": s.std, "cv": s.cv, "range": s.range} for k, s in self.stats.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self) -> str:
        sections = [
            ("Overall", [("Node Count", "nodes"), ("Relationship Count", "relations")]),
            ("Node Type", [(k.split(":", 1)[1], k) for k in self.stats if k.startswith("node:")]),
            ("Relationship Type", [(k.split(":", 1)[1], k) for k in self.stats if k.startswith("relation:")]),
        ]
        out = []
        for heading, rows in sections:
            if not rows:
                continue
            out.append(f"| {heading} | " + " | ".join(STAT_COLUMNS) + " |")
            out.append("|---" * (len(STAT_COLUMNS) + 1) + "|")
            for title, key in rows:
                s = self.stats[key]
                cv = "n/a" if s.cv is None else f"{s.cv:.3f}"
                out.append(f"| {title} | {s.mean:.2f} | {s.std:.2f} | {cv} | {s.range:g} |")
            out.append("")
        return "\n".join(out)


def report_from_counts(per_run_counts: Mapping[int, CorpusCounts]) -> ConsistencyReport:
    report = ConsistencyReport(len(per_run_counts), dict(per_run_counts))
    report.stats = {k: consistency_stats(v, allow_zero_mean=True) for k, v in report.series().items()}
    return report


def consistency_run(
    corpus: Sequence[Document],
    schema: SchemaConfig,
    backend_for_run: Callable[[int], Backend],
    n_runs: int = 7,
    parallelism: int = 4,
    budget: int = DEFAULT_CHUNK_BUDGET,
) -> ConsistencyReport:
    """Run extraction ``n_runs`` times (runs numbered from 1) and summarise the counts."""
    if n_runs < 2:
        raise DegenerateSeries("consistency needs at least 2 runs")
    per_run: dict[int, CorpusCounts] = {}
    for run in range(1, n_runs + 1):
        try:
            _, counts = extract_corpus(
                corpus, schema, backend_for_run(run), parallelism, f"run-{run}", budget, fail_fast=True
            )
        except PipelineError as exc:
            raise exc.annotate(run=run)
        per_run[run] = counts
    return report_from_counts(per_run)
