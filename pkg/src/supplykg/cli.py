"""``supplykg`` command line: ingest, extract, disambiguate, build, query, export, eval, consistency, pipeline."""

from __future__ import annotations

import argparse
import difflib
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import evaluation
from .disambiguate import alias_csv, disambiguate_graph
from .errors import Ambiguous, ConfigError, MalformedConfig, NotFound, PipelineError, SupplyKGError
from .extract import Diagnostic, ExtractionResult, extract_corpus
from .graph import (
    EXPORT_FORMATS,
    KnowledgeGraph,
    census,
    describe_edges,
    export_bytes,
    load_graph_jsonl,
    material_network,
    names,
    shared_suppliers,
    upstream_suppliers,
)
from .ingest import DEFAULT_CHUNK_BUDGET, Document, chunk_corpus, load_corpus
from .llm import (
    API_KEY_ENV,
    DEFAULT_BASE_URL,
    DEFAULT_MODEL,
    Backend,
    LiveBackend,
    LlmSettings,
    RecordingBackend,
    ReplayBackend,
    namespaced_store_path,
)
from .schema import SchemaConfig, default_schema, load_schema

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_PIPELINE = 0, 1, 2, 3
COMMANDS = ("ingest", "extract", "disambiguate", "build", "query", "export", "eval", "consistency", "pipeline")


def emit(event: str, level: str = "info", **detail) -> None:
    """One structured diagnostic line on standard error."""
    sys.stderr.write(json.dumps({"level": level, "event": event, **detail}, ensure_ascii=False, default=str) + "\n")


@dataclass(frozen=True)
class RunConfig:
    schema_path: str | None = None
    corpus_path: str | None = None
    backend: str = "replay"
    fixture_path: str | None = None
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    chunk_budget: int = DEFAULT_CHUNK_BUDGET
    parallelism: int = 4
    output_dir: str = "out"
    run_id: str | None = None
    base_url: str = DEFAULT_BASE_URL

    def validate(self) -> None:
        if self.backend not in ("live", "replay"):
            raise MalformedConfig(f"backend must be live or replay, got {self.backend!r}")
        if self.backend == "replay" and not self.fixture_path:
            raise MalformedConfig("replay backend needs a fixture path (--fixtures)")
        if self.backend == "live" and not os.environ.get(API_KEY_ENV):
            raise MalformedConfig(f"live backend needs the {API_KEY_ENV} environment variable")
        if self.parallelism < 1:
            raise MalformedConfig("parallelism must be at least 1")
        if self.chunk_budget < 1:
            raise MalformedConfig("chunk budget must be positive")

    def effective_run_id(self) -> str:
        if self.run_id:
            return self.run_id
        body = {k: v for k, v in asdict(self).items() if k not in ("run_id", "output_dir")}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()[:12]

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.effective_run_id()

    def artifact(self, stage: str, ext: str) -> Path:
        return self.run_dir / f"{stage}.{ext}"


def load_run_config(path: str) -> RunConfig:
    """Read a JSON RunConfig; relative paths resolve against the config file's directory."""
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise MalformedConfig(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise MalformedConfig(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedConfig("run config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise MalformedConfig(f"unknown run config keys: {', '.join(sorted(unknown))}")
    for key in ("schema_path", "corpus_path", "fixture_path", "output_dir"):
        if data.get(key) and not Path(data[key]).is_absolute() and "://" not in data[key]:
            data[key] = str((p.parent / data[key]).resolve())
    return RunConfig(**data)


def resolve_name(g: KnowledgeGraph, label: str | None, name_text: str) -> str:
    """Exact alias match, else a unique case-insensitive match."""
    pool = [n for n in g.nodes.values() if label is None or n.label == label]
    exact = sorted({n.canonical_id for n in pool if name_text in n.aliases})
    if len(exact) == 1:
        return exact[0]
    if len(exact) > 1:
        raise Ambiguous(f"{name_text!r} matches {len(exact)} nodes", [_describe(g, i) for i in exact])
    folded = name_text.casefold()
    loose = sorted({n.canonical_id for n in pool if any(a.casefold() == folded for a in n.aliases)})
    if len(loose) == 1:
        return loose[0]
    if len(loose) > 1:
        raise Ambiguous(f"{name_text!r} matches {len(loose)} nodes", [_describe(g, i) for i in loose])
    all_aliases = sorted({a for n in pool for a in n.aliases})
    near = difflib.get_close_matches(name_text, all_aliases, n=5, cutoff=0.6)
    hint = f"; did you mean: {', '.join(near)}" if near else ""
    raise NotFound(f"no {label or 'node'} named {name_text!r}{hint}", near)


def _describe(g: KnowledgeGraph, node_id: str) -> str:
    n = g.nodes[node_id]
    return f"{n.label}:{n.display_name} ({node_id})"


# --- stage helpers ---------------------------------------------------------

def _schema(cfg: RunConfig) -> SchemaConfig:
    if not cfg.schema_path:
        return default_schema()
    try:
        text = Path(cfg.schema_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedConfig(f"cannot read schema {cfg.schema_path}: {exc.strerror}") from None
    return load_schema(text)


def _backend(cfg: RunConfig) -> Backend:
    cfg.validate()
    if cfg.backend == "replay":
        if not Path(cfg.fixture_path).exists():
            raise MalformedConfig(f"fixture store {cfg.fixture_path} does not exist")
        return ReplayBackend(cfg.fixture_path)
    live = LiveBackend(cfg.base_url, max_in_flight=cfg.parallelism)
    return RecordingBackend(live, cfg.fixture_path) if cfg.fixture_path else live


def _write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)


def _jsonl(items) -> str:
    return "".join(json.dumps(x, ensure_ascii=False) + "\n" for x in items)


def _manifest(cfg: RunConfig, stage: str, **extra) -> None:
    """Timestamps live in a sidecar so artifact bodies stay reproducible."""
    path = cfg.run_dir / "manifest.json"
    data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"stages": {}}
    data["stages"][stage] = {"finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"), **extra}
    _write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _settings(cfg: RunConfig, max_tokens: int) -> LlmSettings:
    return LlmSettings(cfg.model, cfg.temperature, max_tokens)


def stage_ingest(cfg: RunConfig) -> list[Document]:
    if not cfg.corpus_path:
        raise MalformedConfig("no corpus given (--corpus or corpus_path in --config)")
    docs = load_corpus(cfg.corpus_path, parallelism=cfg.parallelism)
    chunks = chunk_corpus(docs, cfg.chunk_budget)
    _write(cfg.artifact("documents", "jsonl"), _jsonl(d.to_dict() for d in docs))
    _write(cfg.artifact("chunks", "jsonl"), _jsonl(c.to_dict() for c in chunks))
    _manifest(cfg, "ingest", fetched_at={d.id: d.fetched_at for d in docs})
    emit("ingest.done", documents=len(docs), chunks=len(chunks))
    return docs


def stage_extract(cfg: RunConfig, docs: list[Document] | None = None) -> list[ExtractionResult]:
    schema = _schema(cfg)
    backend = _backend(cfg)
    if docs is None:
        docs = stage_ingest(cfg)
    results, counts = extract_corpus(
        docs, schema, backend, cfg.parallelism, cfg.effective_run_id(), cfg.chunk_budget,
        settings=_settings(cfg, 4096),
    )
    _write(cfg.artifact("extraction", "jsonl"), _jsonl(r.to_dict() for r in results))
    _write(cfg.artifact("counts", "json"), json.dumps(counts.to_dict(), indent=2) + "\n")
    for r in results:
        for d in r.diagnostics:
            if d.severity != "info":
                emit("extract.diagnostic", d.severity, code=d.code, chunk=r.provenance.tag(), message=d.message)
    _manifest(cfg, "extract")
    print(f"extracted {counts.nodes} nodes and {counts.relations} relations from {len(results)} chunks")
    print("node types: " + ", ".join(f"{k}={v}" for k, v in counts.node_types.items()))
    print("relation types: " + ", ".join(f"{k}={v}" for k, v in counts.relation_types.items()))
    if counts.failed_chunks:
        print(f"failed chunks: {counts.failed_chunks}")
    return results


def _read_results(path: Path) -> list[ExtractionResult]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise MalformedConfig(f"cannot read extraction results {path}: {exc.strerror}") from None
    return [ExtractionResult.from_dict(json.loads(line)) for line in lines if line.strip()]


def stage_disambiguate(cfg: RunConfig, results: list[ExtractionResult] | None = None, source: str | None = None) -> KnowledgeGraph:
    schema = _schema(cfg)
    backend = _backend(cfg)
    if results is None:
        results = _read_results(Path(source) if source else cfg.artifact("extraction", "jsonl"))
    diags: list[Diagnostic] = []
    g = disambiguate_graph(results, schema, backend, parallelism=cfg.parallelism, diagnostics=diags,
                           settings=_settings(cfg, 1024))
    for d in diags:
        emit("disambiguate.diagnostic", d.severity, code=d.code, message=d.message)
    _write(cfg.artifact("disambiguation", "jsonl"), export_bytes(g, "jsonl"))
    _write(cfg.artifact("aliases", "csv"), alias_csv(g))
    _manifest(cfg, "disambiguate")
    n_mentions = len({n.temp_key for r in results for n in r.nodes})
    print(f"disambiguated {n_mentions} distinct names into {len(g.nodes)} nodes with {len(g.edges)} edges")
    return g


def _read_graph(path: Path, schema: SchemaConfig | None) -> KnowledgeGraph:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedConfig(f"cannot read graph {path}: {exc.strerror}") from None
    return load_graph_jsonl(text, schema)


def stage_build(cfg: RunConfig, graph: KnowledgeGraph | None = None, source: str | None = None) -> KnowledgeGraph:
    schema = _schema(cfg)
    if graph is None:
        graph = _read_graph(Path(source) if source else cfg.artifact("disambiguation", "jsonl"), schema)
    _write(cfg.artifact("graph", "jsonl"), export_bytes(graph, "jsonl"))
    _write(cfg.artifact("census", "json"), json.dumps(census(graph), indent=2) + "\n")
    _manifest(cfg, "build")
    print(f"graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges")
    return graph


def stage_export(cfg: RunConfig, graph: KnowledgeGraph | None = None, formats: Sequence[str] = EXPORT_FORMATS,
                 source: str | None = None) -> list[Path]:
    if graph is None:
        graph = _read_graph(Path(source) if source else cfg.artifact("graph", "jsonl"), _schema(cfg))
    written = []
    for fmt in formats:
        path = cfg.artifact("graph", fmt)
        _write(path, export_bytes(graph, fmt))
        written.append(path)
    _manifest(cfg, "export", formats=list(formats))
    for p in written:
        print(p)
    return written


# --- argument parsing ------------------------------------------------------

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common(p: argparse.ArgumentParser, llm: bool = False, corpus: bool = False) -> None:
    p.add_argument("--config", help="run config JSON (flags override its values)")
    p.add_argument("--schema", dest="schema_path", help="schema config JSON (default: built-in EV schema)")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--parallelism", type=int)
    if corpus:
        p.add_argument("--corpus", dest="corpus_path", help="directory of .txt/.html files or a JSONL manifest")
        p.add_argument("--budget", dest="chunk_budget", type=int, help="chunk budget in estimated tokens")
    if llm:
        p.add_argument("--backend", choices=("live", "replay"))
        p.add_argument("--fixtures", dest="fixture_path", help="fixture store (.jsonl); recorded into when live")
        p.add_argument("--model")
        p.add_argument("--temperature", type=float)
        p.add_argument("--base-url", dest="base_url")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="supplykg", description="Supply chain knowledge graphs from text with an LLM.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True

    p = sub.add_parser("ingest", help="fetch, clean and chunk a corpus")
    _common(p, corpus=True)

    p = sub.add_parser("extract", help="extract entities and relations from a corpus")
    _common(p, llm=True, corpus=True)

    p = sub.add_parser("disambiguate", help="merge duplicate entities into canonical nodes")
    _common(p, llm=True)
    p.add_argument("--extraction", help="extraction results JSONL (default: the run's extraction.jsonl)")

    p = sub.add_parser("build", help="validate the canonical graph and write graph.jsonl")
    _common(p)
    p.add_argument("--canonical", help="disambiguation output JSONL (default: the run's disambiguation.jsonl)")

    p = sub.add_parser("export", help="write cypher, graphml, dot and jsonl exports")
    _common(p)
    p.add_argument("--graph", help="graph JSONL (default: the run's graph.jsonl)")
    p.add_argument("--format", action="append", choices=EXPORT_FORMATS, help="repeatable; default all")

    p = sub.add_parser("query", help="supply chain visibility queries")
    _common(p)
    p.add_argument("--graph", help="graph JSONL (default: the run's graph.jsonl)")
    p.add_argument("--kind", required=True, choices=("upstream", "shared", "material"))
    p.add_argument("--company", help="focal company for --kind upstream")
    p.add_argument("--depth", type=int, default=3, help="maximum tier for --kind upstream")
    p.add_argument("--a", help="first buyer for --kind shared")
    p.add_argument("--b", help="second buyer for --kind shared")
    p.add_argument("--material", help="material for --kind material")

    p = sub.add_parser("eval", help="accuracy from a human judgment CSV")
    _common(p)
    p.add_argument("--judgments", required=True, help="CSV with header task,item_id,item_type,verdict")

    p = sub.add_parser("consistency", help="repeat extraction and report count statistics")
    _common(p, llm=True, corpus=True)
    p.add_argument("--runs", type=int, default=7)

    p = sub.add_parser("pipeline", help="ingest, extract, disambiguate, build and export in one go")
    _common(p, llm=True, corpus=True)
    return parser


_CONFIG_FLAGS = {f.name for f in fields(RunConfig)}


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_FLAGS and v is not None}
    return replace(cfg, **overrides)


def _query(cfg: RunConfig, args: argparse.Namespace) -> None:
    g = _read_graph(Path(args.graph) if args.graph else cfg.artifact("graph", "jsonl"), None)
    if args.kind == "upstream":
        if not args.company:
            raise UsageError("--kind upstream needs --company")
        cid = resolve_name(g, "Company", args.company)
        res = upstream_suppliers(g, cid, args.depth)
        print(f"upstream suppliers of {g.nodes[cid].display_name} (max tier {args.depth})")
        for k in sorted(res.tiers):
            if k == 0 or not res.tiers[k]:
                continue
            print(f"tier {k}: " + ", ".join(names(g, res.tiers[k])))
        if res.enrichment:
            print("enrichment: " + ", ".join(f"{g.nodes[i].display_name} ({g.nodes[i].label})"
                                             for i in sorted(res.enrichment, key=lambda i: g.nodes[i].display_name)))
        edges = res.edges
    elif args.kind == "shared":
        if not (args.a and args.b):
            raise UsageError("--kind shared needs --a and --b")
        a, b = resolve_name(g, "Company", args.a), resolve_name(g, "Company", args.b)
        res = shared_suppliers(g, a, b)
        print(f"shared tier-1 suppliers of {g.nodes[a].display_name} and {g.nodes[b].display_name}")
        print("suppliers: " + (", ".join(names(g, res.nodes)) or "(none)"))
        edges = res.edges
    else:
        if not args.material:
            raise UsageError("--kind material needs --material")
        mid = resolve_name(g, "Material", args.material)
        res = material_network(g, mid)
        print(f"supply network of {g.nodes[mid].display_name}")
        print("nodes: " + ", ".join(f"{g.nodes[i].display_name} ({g.nodes[i].label})"
                                    for i in sorted(res.nodes, key=lambda i: (g.nodes[i].label, g.nodes[i].display_name))))
        edges = res.edges
    for line in describe_edges(g, edges):
        print(f"  {line}")


def _consistency(cfg: RunConfig, runs: int) -> None:
    schema = _schema(cfg)
    if not cfg.corpus_path:
        raise MalformedConfig("no corpus given (--corpus or corpus_path in --config)")
    if cfg.backend == "replay":
        if not cfg.fixture_path:
            raise MalformedConfig("replay consistency needs --fixtures (directory of run-<n>.jsonl or a {run} template)")
        stores = [namespaced_store_path(cfg.fixture_path, r) for r in range(1, runs + 1)]
        missing = [str(s) for s in stores if not s.exists()]
        if missing:
            raise MalformedConfig(f"missing fixture namespaces: {', '.join(missing)}")
        factory = lambda r: ReplayBackend(stores[r - 1])  # noqa: E731
    else:
        cfg.validate()
        live = LiveBackend(cfg.base_url, max_in_flight=cfg.parallelism)
        if cfg.fixture_path:
            factory = lambda r: RecordingBackend(live, namespaced_store_path(cfg.fixture_path, r))  # noqa: E731
        else:
            factory = lambda r: live  # noqa: E731
    docs = load_corpus(cfg.corpus_path, parallelism=cfg.parallelism)
    report = evaluation.consistency_run(docs, schema, factory, runs, cfg.parallelism, cfg.chunk_budget)
    _write(cfg.artifact("consistency", "md"), report.to_markdown())
    _write(cfg.artifact("consistency", "json"), report.to_json())
    _manifest(cfg, "consistency", runs=runs)
    print(report.to_markdown(), end="")


def _eval(cfg: RunConfig, path: str) -> None:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedConfig(f"cannot read judgments {path}: {exc.strerror}") from None
    schema = _schema(cfg) if cfg.schema_path else None
    report = evaluation.accuracy_report(evaluation.load_judgments(text, schema))
    _write(cfg.artifact("accuracy", "md"), report.to_markdown())
    _write(cfg.artifact("accuracy", "json"), report.to_json())
    print(report.to_markdown(), end="")


def dispatch(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    cmd = args.command
    if cmd == "ingest":
        docs = stage_ingest(cfg)
        print(f"ingested {len(docs)} documents into {cfg.run_dir}")
    elif cmd == "extract":
        stage_extract(cfg)
    elif cmd == "disambiguate":
        stage_disambiguate(cfg, source=args.extraction)
    elif cmd == "build":
        stage_build(cfg, source=args.canonical)
    elif cmd == "export":
        stage_export(cfg, formats=args.format or EXPORT_FORMATS, source=args.graph)
    elif cmd == "query":
        _query(cfg, args)
    elif cmd == "eval":
        _eval(cfg, args.judgments)
    elif cmd == "consistency":
        _consistency(cfg, args.runs)
    elif cmd == "pipeline":
        docs = stage_ingest(cfg)
        results = stage_extract(cfg, docs)
        g = stage_disambiguate(cfg, results)
        g = stage_build(cfg, g)
        stage_export(cfg, g)


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        dispatch(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip("\n") + "\n")
        return EXIT_USAGE
    except ConfigError as exc:
        emit("error", "error", code=exc.code, message=str(exc))
        return EXIT_CONFIG
    except (Ambiguous, NotFound) as exc:
        emit("error", "error", code=exc.code, message=str(exc),
             candidates=getattr(exc, "candidates", None) or getattr(exc, "near", None))
        return EXIT_PIPELINE
    except SupplyKGError as exc:
        emit("error", "error", code=exc.code, message=str(exc), **{k: str(v) for k, v in exc.context.items()})
        return EXIT_PIPELINE
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
