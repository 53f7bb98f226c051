"""N-Triples ingestion, interned knowledge graphs and cross-edition alignment."""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class Literal(NamedTuple):
    value: str
    lang: str | None = None
    datatype: str | None = None


class Triple(NamedTuple):
    """One statement. IRIs are stored without angle brackets, blank nodes as ``_:label``."""

    subject: str
    predicate: str
    object: str | Literal


class ParseError(ValueError):
    def __init__(self, lineno: int, reason: str, line: str = ""):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason
        self.line = line


class AlignmentError(ValueError):
    pass


_IRI = r"<((?:[^<>\"{}|^`\\\x00-\x20]|\\u[0-9A-Fa-f]{4}|\\U[0-9A-Fa-f]{8})*)>"
_BNODE = r"(_:[A-Za-z0-9_](?:[A-Za-z0-9_.\-]*[A-Za-z0-9_\-])?)"
_LITERAL = r'"((?:[^"\\\n\r]|\\.)*)"(?:@([A-Za-z]+(?:-[A-Za-z0-9]+)*)|\^\^' + _IRI + r")?"

_STATEMENT = re.compile(
    rf"^\s*(?:{_IRI}|{_BNODE})\s*{_IRI}\s*(?:{_IRI}|{_BNODE}|{_LITERAL})\s*\.\s*(?:#.*)?$"
)
_ESCAPE = re.compile(r"\\(?:u([0-9A-Fa-f]{4})|U([0-9A-Fa-f]{8})|(.))")
_SIMPLE_ESCAPES = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


def _unescape(text: str, lineno: int) -> str:
    if "\\" not in text:
        return text

    def repl(m: re.Match) -> str:
        if m.group(1) or m.group(2):
            return chr(int(m.group(1) or m.group(2), 16))
        ch = m.group(3)
        if ch not in _SIMPLE_ESCAPES:
            raise ParseError(lineno, f"invalid escape \\{ch}")
        return _SIMPLE_ESCAPES[ch]

    return _ESCAPE.sub(repl, text)


def parse_line(line: str, lineno: int = 0) -> Triple | None:
    """Parse a single N-Triples line; returns None for blank and comment lines."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    m = _STATEMENT.match(stripped)
    if m is None:
        raise ParseError(lineno, "malformed statement", line)
    s_iri, s_bnode, pred, o_iri, o_bnode, lit, lang, dtype = m.groups()
    subject = _unescape(s_iri, lineno) if s_iri is not None else s_bnode
    predicate = _unescape(pred, lineno)
    if o_iri is not None:
        obj: str | Literal = _unescape(o_iri, lineno)
    elif o_bnode is not None:
        obj = o_bnode
    else:
        obj = Literal(
            _unescape(lit, lineno),
            lang.lower() if lang else None,
            _unescape(dtype, lineno) if dtype is not None else None,
        )
    return Triple(subject, predicate, obj)


@dataclass
class ParseStats:
    lines: int = 0
    triples: int = 0
    errors: int = 0
    first_errors: list[ParseError] = field(default_factory=list)


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix == ".gz":
            return gzip.open(path, "rt", encoding="utf-8", errors="replace")
        return open(path, encoding="utf-8", errors="replace")
    # byte stream; sniff gzip magic
    if hasattr(source, "peek"):
        head = source.peek(2)[:2]
    else:
        source = io.BufferedReader(source)
        head = source.peek(2)[:2]
    if head == b"\x1f\x8b":
        source = gzip.GzipFile(fileobj=source)
    return io.TextIOWrapper(source, encoding="utf-8", errors="replace")


def parse_ntriples(source, strict: bool = False, stats: ParseStats | None = None) -> Iterator[Triple]:
    """Stream triples from a path or binary stream (gzip detected automatically).

    In strict mode the first malformed line raises :class:`ParseError`;
    otherwise malformed lines are skipped and counted in ``stats``.
    """
    if stats is None:
        stats = ParseStats()
    stream = _open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            stats.lines += 1
            try:
                triple = parse_line(line, lineno)
            except ParseError as err:
                if strict:
                    raise
                stats.errors += 1
                if len(stats.first_errors) < 10:
                    stats.first_errors.append(err)
                continue
            if triple is not None:
                stats.triples += 1
                yield triple
    finally:
        if isinstance(source, (str, Path)):
            stream.close()
    if stats.errors:
        logger.warning("skipped %d malformed lines", stats.errors)


def _escape_iri(iri: str) -> str:
    out = []
    for ch in iri:
        if ch in '<>"{}|^`\\' or ord(ch) <= 0x20:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def _escape_literal(text: str) -> str:
    return (
        text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r")
    )


def format_term(term: str | Literal) -> str:
    if isinstance(term, Literal):
        out = f'"{_escape_literal(term.value)}"'
        if term.lang:
            out += f"@{term.lang}"
        elif term.datatype is not None:
            out += f"^^<{_escape_iri(term.datatype)}>"
        return out
    if term.startswith("_:"):
        return term
    return f"<{_escape_iri(term)}>"


def format_triple(t: Triple) -> str:
    """Serialize a triple as one N-Triples line (without newline)."""
    return f"{format_term(t.subject)} {format_term(t.predicate)} {format_term(t.object)} ."


class KnowledgeGraph:
    """Immutable interned directed multigraph in CSR layout.

    Entity and predicate IRIs are mapped to dense ids in first-seen order.
    ``indptr[e]:indptr[e+1]`` slices ``edge_pred``/``edge_obj`` to give the
    out-edges of entity ``e`` sorted by (predicate id, object id).
    """

    def __init__(self, name, nodes, predicates, indptr, edge_pred, edge_obj, literal_triples=0):
        self.name = name
        self.nodes: tuple[str, ...] = tuple(nodes)
        self.predicates: tuple[str, ...] = tuple(predicates)
        self._node_index = {iri: i for i, iri in enumerate(self.nodes)}
        self._pred_index = {iri: i for i, iri in enumerate(self.predicates)}
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.edge_pred = np.asarray(edge_pred, dtype=np.int64)
        self.edge_obj = np.asarray(edge_obj, dtype=np.int64)
        for arr in (self.indptr, self.edge_pred, self.edge_obj):
            arr.flags.writeable = False
        self.literal_triples = int(literal_triples)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_predicates(self) -> int:
        return len(self.predicates)

    @property
    def num_edges(self) -> int:
        return len(self.edge_obj)

    def node_id(self, iri: str) -> int:
        try:
            return self._node_index[iri]
        except KeyError:
            raise KeyError(f"unknown entity {iri!r} in graph {self.name!r}") from None

    def predicate_id(self, iri: str) -> int:
        try:
            return self._pred_index[iri]
        except KeyError:
            raise KeyError(f"unknown predicate {iri!r} in graph {self.name!r}") from None

    def has_node(self, iri: str) -> bool:
        return iri in self._node_index

    def out_degree(self, entity_id: int) -> int:
        self._check(entity_id)
        return int(self.indptr[entity_id + 1] - self.indptr[entity_id])

    def out_edges(self, entity_id: int) -> list[tuple[int, int]]:
        self._check(entity_id)
        lo, hi = self.indptr[entity_id], self.indptr[entity_id + 1]
        return list(zip(self.edge_pred[lo:hi].tolist(), self.edge_obj[lo:hi].tolist()))

    def has_edge(self, subject_id: int, predicate_id: int, object_id: int) -> bool:
        lo, hi = self.indptr[subject_id], self.indptr[subject_id + 1]
        preds = self.edge_pred[lo:hi]
        objs = self.edge_obj[lo:hi]
        return bool(np.any((preds == predicate_id) & (objs == object_id)))

    def _check(self, entity_id: int) -> None:
        if not 0 <= entity_id < self.num_nodes:
            raise KeyError(f"entity id {entity_id} out of range for graph {self.name!r}")

    def iri_triples(self) -> set[tuple[str, str, str]]:
        """All entity-object edges at IRI level (used for isomorphism checks)."""
        subjects = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        return {
            (self.nodes[s], self.predicates[p], self.nodes[o])
            for s, p, o in zip(subjects.tolist(), self.edge_pred.tolist(), self.edge_obj.tolist())
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.name.encode())
        for table in (self.nodes, self.predicates):
            h.update(b"\x00".join(s.encode() for s in table))
            h.update(b"\x01")
        for arr in (self.indptr, self.edge_pred, self.edge_obj):
            h.update(arr.tobytes())
        return h.hexdigest()

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(name={self.name!r}, nodes={self.num_nodes}, "
            f"predicates={self.num_predicates}, edges={self.num_edges})"
        )


def build_graph(triples: Iterable[Triple], name: str) -> KnowledgeGraph:
    """Intern entities/predicates and build deduplicated adjacency.

    Literal objects are counted in ``literal_triples`` but kept out of the
    adjacency; their subjects are still interned.
    """
    nodes: dict[str, int] = {}
    preds: dict[str, int] = {}
    subj, pred, obj = [], [], []
    literals = 0
    for s, p, o in triples:
        sid = nodes.setdefault(s, len(nodes))
        if isinstance(o, Literal):
            literals += 1
            continue
        pid = preds.setdefault(p, len(preds))
        oid = nodes.setdefault(o, len(nodes))
        subj.append(sid)
        pred.append(pid)
        obj.append(oid)

    n, m = len(nodes), len(preds)
    if subj:
        s_arr = np.asarray(subj, dtype=np.int64)
        p_arr = np.asarray(pred, dtype=np.int64)
        o_arr = np.asarray(obj, dtype=np.int64)
        keys = np.unique((s_arr * max(m, 1) + p_arr) * max(n, 1) + o_arr)
        o_arr = keys % max(n, 1)
        rest = keys // max(n, 1)
        p_arr = rest % max(m, 1)
        s_arr = rest // max(m, 1)
    else:
        s_arr = p_arr = o_arr = np.zeros(0, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(s_arr, minlength=n), out=indptr[1:])
    return KnowledgeGraph(name, list(nodes), list(preds), indptr, p_arr, o_arr, literals)


def load_graph(paths: Iterable, name: str, strict: bool = False, threads: int = 1) -> KnowledgeGraph:
    """Parse several N-Triples files (optionally in parallel) and merge them into one graph."""
    paths = list(paths)

    def read(path):
        stats = ParseStats()
        triples = list(parse_ntriples(path, strict=strict, stats=stats))
        logger.info("%s: %d triples, %d malformed lines", path, stats.triples, stats.errors)
        return triples

    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(read, paths))
    else:
        chunks = [read(p) for p in paths]
    return build_graph((t for chunk in chunks for t in chunk), name)


@dataclass
class AlignmentMap:
    """item id -> {kg label -> entity IRI} for a fixed set of KG labels."""

    kgs: tuple[str, ...]
    entries: dict[int, dict[str, str]]

    def iri(self, item_id: int, kg: str) -> str | None:
        return self.entries.get(item_id, {}).get(kg)

    def is_complete(self, item_id: int) -> bool:
        links = self.entries.get(item_id, {})
        return all(kg in links for kg in self.kgs)

    @property
    def complete_items(self) -> set[int]:
        return {item for item in self.entries if self.is_complete(item)}

    @property
    def incomplete_items(self) -> set[int]:
        return set(self.entries) - self.complete_items


def load_alignment(link_files, kgs: Iterable[str]) -> AlignmentMap:
    """Read one or more ``item_id<TAB>kg_label<TAB>entity_iri`` TSV files (header required).

    IRIs may be given bare or in angle brackets. Rows for KG labels outside
    ``kgs`` are ignored.
    """
    if isinstance(link_files, (str, Path)):
        link_files = [link_files]
    kgs = tuple(kgs)
    wanted = set(kgs)
    entries: dict[int, dict[str, str]] = {}
    for path in link_files:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["item_id", "kg_label", "entity_iri"]:
                raise AlignmentError(f"{path}: missing or wrong header row")
            for rowno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != 3:
                    raise AlignmentError(f"{path}: row {rowno}: expected 3 columns, got {len(row)}")
                raw_item, kg, iri = (c.strip() for c in row)
                try:
                    item = int(raw_item)
                except ValueError:
                    raise AlignmentError(f"{path}: row {rowno}: bad item id {raw_item!r}") from None
                if iri.startswith("<") and iri.endswith(">"):
                    iri = iri[1:-1]
                if not iri:
                    raise AlignmentError(f"{path}: row {rowno}: empty IRI")
                if kg not in wanted:
                    continue
                links = entries.setdefault(item, {})
                if kg in links and links[kg] != iri:
                    raise AlignmentError(
                        f"{path}: row {rowno}: conflicting IRI for item {item} in {kg!r}: "
                        f"{links[kg]!r} vs {iri!r}"
                    )
                links[kg] = iri
    return AlignmentMap(kgs, entries)
