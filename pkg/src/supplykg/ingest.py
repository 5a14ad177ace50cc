"""Document acquisition, HTML cleaning, sentence segmentation and chunking."""

from __future__ import annotations

import hashlib
import json
import math
import re
import socket
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable

from .errors import EmptyAfterCleaning, NonTextContent, SentenceExceedsBudget, Timeout, TransportError

DEFAULT_CHUNK_BUDGET = 1500
TOKENS_PER_WORD = 1.35


@dataclass
class Document:
    id: str
    source_uri: str
    title: str
    body: str
    fetched_at: str = field(default="", compare=False)

    def to_dict(self) -> dict:
        # fetched_at stays out of artifact bodies
        return {"id": self.id, "source_uri": self.source_uri, "title": self.title, "body": self.body}


@dataclass(frozen=True)
class Chunk:
    document_id: str
    index: int
    text: str
    approx_tokens: int

    @property
    def chunk_id(self) -> str:
        return f"{self.document_id}#{self.index}"

    def to_dict(self) -> dict:
        return {
            "document_id": self.document_id,
            "index": self.index,
            "text": self.text,
            "approx_tokens": self.approx_tokens,
        }


def approx_tokens(text: str) -> int:
    """Whitespace word count times 1.35, rounded up."""
    return math.ceil(len(text.split()) * TOKENS_PER_WORD)


# --- HTML cleaning ---------------------------------------------------------

_SKIP_TAGS = {"script", "style", "noscript", "template", "svg", "iframe", "object", "head", "nav", "footer"}
_BLOCK_TAGS = {
    "p", "div", "section", "article", "header", "footer", "main", "aside", "nav",
    "h1", "h2", "h3", "h4", "h5", "h6", "li", "ul", "ol", "dl", "dt", "dd",
    "table", "tr", "thead", "tbody", "tfoot", "caption", "blockquote", "pre",
    "br", "hr", "figure", "figcaption", "title", "body", "html",
}
_CELL_TAGS = {"td", "th"}
_VOID_TAGS = {"br", "hr", "img", "meta", "link", "input", "area", "base", "col", "embed", "source", "track", "wbr"}


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self.title_parts: list[str] = []
        self._skip_depth = 0
        self._in_title = False

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag == "title":
            self._in_title = True
        if tag in _SKIP_TAGS and tag not in _VOID_TAGS:
            self._skip_depth += 1
            return
        if tag in _BLOCK_TAGS:
            self.parts.append("\n")
        elif tag in _CELL_TAGS:
            self.parts.append(" ")

    def handle_startendtag(self, tag: str, attrs) -> None:
        if tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_endtag(self, tag: str) -> None:
        if tag == "title":
            self._in_title = False
        if tag in _SKIP_TAGS and tag not in _VOID_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
            return
        if tag in _BLOCK_TAGS:
            self.parts.append("\n")
        elif tag in _CELL_TAGS:
            self.parts.append(" ")

    def handle_data(self, data: str) -> None:
        if self._in_title:
            self.title_parts.append(data)
        if self._skip_depth:
            return
        self.parts.append(data)


def collapse_whitespace(text: str) -> str:
    """Collapse runs of blanks to one space; keep single newlines as paragraph breaks."""
    lines = (re.sub(r"[ \t\f\v\r ]+", " ", line).strip() for line in text.split("\n"))
    return "\n".join(line for line in lines if line)


def clean_html(markup: str) -> tuple[str, str]:
    """Return ``(title, body)`` with markup, scripts and styles removed."""
    parser = _TextExtractor()
    parser.feed(markup)
    parser.close()
    title = collapse_whitespace(" ".join(parser.title_parts)).replace("\n", " ")
    return title, collapse_whitespace("".join(parser.parts))


def _looks_like_html(text: str, hint: str = "") -> bool:
    if "html" in hint or "xml" in hint:
        return True
    head = text[:2048].lower()
    return "<html" in head or "<!doctype html" in head or "<body" in head or "<p>" in head


# --- fetching --------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def document_id_for(uri: str) -> str:
    return hashlib.sha256(uri.encode("utf-8")).hexdigest()[:12]


def _decode(raw: bytes, uri: str, charset: str | None = None) -> str:
    if b"\x00" in raw[:4096]:
        raise NonTextContent(f"{uri} looks binary", uri=uri)
    try:
        return raw.decode(charset or "utf-8")
    except (UnicodeDecodeError, LookupError):
        raise NonTextContent(f"{uri} is not decodable text", uri=uri) from None


def fetch_document(uri: str, timeout: float = 30.0, doc_id: str | None = None, title: str | None = None) -> Document:
    """Fetch a ``file:``/``http(s):`` URI (or a bare local path) and clean it to plain text."""
    parsed = urllib.parse.urlparse(uri)
    scheme = parsed.scheme.lower()
    content_type = ""
    if scheme in ("http", "https"):
        req = urllib.request.Request(uri, headers={"User-Agent": "supplykg/0.1"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                content_type = resp.headers.get_content_type() or ""
                charset = resp.headers.get_content_charset()
                raw = resp.read()
        except socket.timeout:
            raise Timeout(f"timed out fetching {uri}", uri=uri) from None
        except urllib.error.HTTPError as exc:
            raise TransportError(f"HTTP {exc.code} fetching {uri}", uri=uri) from None
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, socket.timeout):
                raise Timeout(f"timed out fetching {uri}", uri=uri) from None
            raise TransportError(f"cannot fetch {uri}: {exc.reason}", uri=uri) from None
        if content_type and not (
            content_type.startswith("text/") or content_type in ("application/xhtml+xml", "application/xml")
        ):
            raise NonTextContent(f"{uri} has content type {content_type}", uri=uri)
        text = _decode(raw, uri, charset)
    elif scheme in ("file", ""):
        path = Path(urllib.request.url2pathname(parsed.path)) if scheme == "file" else Path(uri)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise TransportError(f"cannot read {path}: {exc.strerror}", uri=uri) from None
        text = _decode(raw, uri)
        if path.suffix.lower() in (".html", ".htm", ".xhtml"):
            content_type = "text/html"
    else:
        raise TransportError(f"unsupported URI scheme {scheme!r}", uri=uri)

    page_title = ""
    if _looks_like_html(text, content_type):
        page_title, body = clean_html(text)
    else:
        body = collapse_whitespace(text)
    if not body:
        raise EmptyAfterCleaning(f"{uri} has no text after cleaning", uri=uri)

    if title is None:
        title = page_title or Path(parsed.path or uri).stem
    return Document(
        id=doc_id or document_id_for(uri),
        source_uri=uri,
        title=title,
        body=body,
        fetched_at=_now(),
    )


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    uri: str
    title: str | None = None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Corpus manifest: JSON lines of ``{id, uri, title?}``; relative paths resolve against the manifest."""
    path = Path(path)
    entries = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        uri = obj["uri"]
        if "://" not in uri and not Path(uri).is_absolute():
            uri = str((path.parent / uri).resolve())
        entries.append(ManifestEntry(id=str(obj["id"]), uri=uri, title=obj.get("title")))
    return entries


def directory_manifest(directory: str | Path) -> list[ManifestEntry]:
    """Treat every ``.txt``/``.html`` file in a directory as a corpus entry, id = file stem."""
    directory = Path(directory)
    files = sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in (".txt", ".html", ".htm")
    )
    return [ManifestEntry(id=p.stem, uri=str(p.resolve())) for p in files]


def load_corpus(path: str | Path, timeout: float = 30.0, parallelism: int = 4) -> list[Document]:
    path = Path(path)
    entries = directory_manifest(path) if path.is_dir() else read_manifest(path)
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("corpus manifest repeats a document id")
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        docs = list(pool.map(lambda e: fetch_document(e.uri, timeout, doc_id=e.id, title=e.title), entries))
    return docs


# --- sentences -------------------------------------------------------------

ABBREVIATIONS = frozenset(
    """
    co corp inc ltd llc plc ag sa nv bv gmbh
    mr mrs ms dr prof sr jr st mt ft no nos vs etc approx est dept univ
    jan feb mar apr jun jul aug sep sept oct nov dec
    e.g i.e u.s u.k u.n
    """.split()
)

_TERMINATOR_RE = re.compile(r"[.!?]+[\"')\]”’]*")


def _is_abbreviation(body: str, dot_pos: int) -> bool:
    start = dot_pos
    while start > 0 and (body[start - 1].isalpha() or body[start - 1] == "."):
        start -= 1
    token = body[start:dot_pos].lower()
    if not token:
        return False
    if token in ABBREVIATIONS:
        return True
    # single initials: "J. Smith", "U.S."
    return len(token.replace(".", "")) == 1


def sentence_spans(body: str) -> list[tuple[int, int]]:
    """Character spans of sentences.

    A boundary is a run of ``.``, ``!`` or ``?`` (plus closing quotes or
    brackets) followed by whitespace and an uppercase letter, digit or
    opening quote, unless the period ends a known abbreviation. Line breaks
    are paragraph boundaries.
    """
    spans: list[tuple[int, int]] = []
    for para_match in re.finditer(r"[^\n]+", body):
        para_start = para_match.start()
        para = para_match.group()
        start = 0
        for m in _TERMINATOR_RE.finditer(para):
            end = m.end()
            rest = para[end:]
            ws = len(rest) - len(rest.lstrip())
            if ws == 0 or ws == len(rest):
                continue
            nxt = rest[ws]
            if not (nxt.isupper() or nxt.isdigit() or nxt in "\"'“‘("):
                continue
            if m.group().startswith(".") and len(m.group().rstrip("\"')]”’")) == 1 and _is_abbreviation(para, m.start()):
                continue
            _append_span(spans, para, para_start, start, end)
            start = end + ws
        _append_span(spans, para, para_start, start, len(para))
    return spans


def _append_span(spans: list[tuple[int, int]], para: str, offset: int, start: int, end: int) -> None:
    segment = para[start:end]
    stripped = segment.strip()
    if not stripped:
        return
    lead = len(segment) - len(segment.lstrip())
    spans.append((offset + start + lead, offset + start + lead + len(stripped)))


def segment_sentences(body: str) -> list[str]:
    return [body[s:e] for s, e in sentence_spans(body)]


# --- chunking --------------------------------------------------------------

def chunk_document(doc: Document, budget: int = DEFAULT_CHUNK_BUDGET) -> list[Chunk]:
    """Greedily pack consecutive sentences into chunks of at most ``budget`` estimated tokens."""
    spans = sentence_spans(doc.body)
    for s, e in spans:
        tokens = approx_tokens(doc.body[s:e])
        if tokens > budget:
            raise SentenceExceedsBudget(
                f"sentence of {tokens} tokens exceeds chunk budget {budget}",
                sentence=doc.body[s:e],
                tokens=tokens,
                document_id=doc.id,
                offset=s,
            )

    chunks: list[Chunk] = []
    i = 0
    while i < len(spans):
        j = i + 1
        while j < len(spans) and approx_tokens(doc.body[spans[i][0]:spans[j][1]]) <= budget:
            j += 1
        text = doc.body[spans[i][0]:spans[j - 1][1]]
        chunks.append(Chunk(doc.id, len(chunks), text, approx_tokens(text)))
        i = j
    return chunks


def chunk_corpus(docs: Iterable[Document], budget: int = DEFAULT_CHUNK_BUDGET) -> list[Chunk]:
    return [c for d in docs for c in chunk_document(d, budget)]
