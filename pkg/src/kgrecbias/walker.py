"""Random-walk corpus extraction over a :class:`~kgrecbias.kg.KnowledgeGraph`."""

from __future__ import annotations

import gzip
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kg import KnowledgeGraph


@dataclass(frozen=True)
class WalkConfig:
    walks_per_entity: int = 500
    depth: int = 4
    seed: int = 0
    entity_set: tuple[str, ...] | None = None  # restrict start entities (IRIs); None means all

    def __post_init__(self):
        if self.walks_per_entity < 1:
            raise ValueError("walks_per_entity must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["entity_set"] = None if self.entity_set is None else sorted(self.entity_set)
        return d


class WalkCorpus:
    """Ragged collection of token-id walks plus the id -> token string table.

    Walk ``i`` is ``tokens[offsets[i]:offsets[i+1]]``. For corpora produced by
    :func:`generate_walks` the token space is entity ids followed by
    predicate ids shifted by the number of entities.
    """

    def __init__(self, tokens, offsets, labels: Sequence[str], name: str = "", config: dict | None = None):
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.labels = tuple(labels)
        self.name = name
        self.config = config

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def walk(self, i: int) -> np.ndarray:
        return self.tokens[self.offsets[i] : self.offsets[i + 1]]

    def __iter__(self):
        for i in range(len(self)):
            yield self.walk(i)

    def walk_labels(self, i: int) -> list[str]:
        return [self.labels[t] for t in self.walk(i)]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def starts(self) -> np.ndarray:
        return self.tokens[self.offsets[:-1]]

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence[str]], name: str = "") -> "WalkCorpus":
        index: dict[str, int] = {}
        tokens: list[int] = []
        offsets = [0]
        for seq in sequences:
            tokens.extend(index.setdefault(tok, len(index)) for tok in seq)
            offsets.append(len(tokens))
        return cls(tokens, offsets, list(index), name)

    def lines(self) -> Iterable[str]:
        labels = self.labels
        for i in range(len(self)):
            yield " ".join(labels[t] for t in self.walk(i))

    def to_bytes(self) -> bytes:
        return "".join(line + "\n" for line in self.lines()).encode("utf-8")


def _walks_from(g: KnowledgeGraph, entity: int, cfg: WalkConfig) -> tuple[np.ndarray, np.ndarray]:
    """All walks from one start entity as a padded (walks, 2*depth+1) matrix and hop counts."""
    n_walks, depth = cfg.walks_per_entity, cfg.depth
    rng = np.random.default_rng([cfg.seed, entity])
    indptr, edge_pred, edge_obj = g.indptr, g.edge_pred, g.edge_obj
    shift = g.num_nodes
    out = np.full((n_walks, 2 * depth + 1), -1, dtype=np.int64)
    out[:, 0] = entity
    cur = np.full(n_walks, entity, dtype=np.int64)
    hops = np.zeros(n_walks, dtype=np.int64)
    alive = np.ones(n_walks, dtype=bool)
    for h in range(depth):
        lo = indptr[cur]
        deg = indptr[cur + 1] - lo
        alive &= deg > 0
        u = rng.random(n_walks)
        if not alive.any():
            break
        pick = lo[alive] + np.minimum((u[alive] * deg[alive]).astype(np.int64), deg[alive] - 1)
        out[alive, 2 * h + 1] = edge_pred[pick] + shift
        out[alive, 2 * h + 2] = edge_obj[pick]
        cur[alive] = edge_obj[pick]
        hops[alive] += 1
    return out, hops


def _resolve_scope(g: KnowledgeGraph, cfg: WalkConfig) -> np.ndarray:
    if cfg.entity_set is None:
        scope = np.arange(g.num_nodes, dtype=np.int64)
    else:
        scope = np.unique([g.node_id(iri) for iri in cfg.entity_set if g.has_node(iri)]).astype(np.int64)
    if len(scope) == 0:
        raise ValueError(f"empty walk scope for graph {g.name!r}")
    return scope


def generate_walks(g: KnowledgeGraph, cfg: WalkConfig, threads: int = 1) -> WalkCorpus:
    """Uniform forward random walks, ``cfg.walks_per_entity`` per start entity.

    Each walk follows uniformly drawn out-edges (with replacement, revisits
    allowed) for ``cfg.depth`` hops, truncating at dead ends. Randomness is
    keyed on ``(seed, entity id)`` so output does not depend on ``threads``.
    Walks are ordered by start entity id, then walk index.
    """
    scope = _resolve_scope(g, cfg)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda e: _walks_from(g, int(e), cfg), scope))
    else:
        parts = [_walks_from(g, int(e), cfg) for e in scope]

    mat = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, 1), np.int64)
    hops = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
    lengths = 2 * hops + 1
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    tokens = mat[mat >= 0]  # rows are left-aligned, so row-major masking keeps walk order
    labels = g.nodes + g.predicates
    config = cfg.snapshot()
    config["truncated"] = int(np.count_nonzero(hops < cfg.depth))
    return WalkCorpus(tokens, offsets, labels, g.name, config)


def corpus_stats(c: WalkCorpus) -> dict:
    n = len(c)
    if n == 0:
        return {"walks": 0, "tokens": 0, "distinct_tokens": 0, "truncated_fraction": 0.0}
    depth = c.config.get("depth") if c.config else None
    if depth is None:
        depth = int((c.lengths.max() - 1) // 2)
    truncated = np.count_nonzero(c.lengths < 2 * depth + 1)
    return {
        "walks": n,
        "tokens": int(len(c.tokens)),
        "distinct_tokens": int(len(np.unique(c.tokens))),
        "truncated_fraction": truncated / n,
    }


def write_corpus(c: WalkCorpus, path) -> None:
    """One walk per line, space-separated token strings; ``.gz`` paths are gzipped (mtime 0)."""
    path = Path(path)
    data = c.to_bytes()
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(data)
    else:
        path.write_bytes(data)


def read_corpus(path, name: str = "") -> WalkCorpus:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return WalkCorpus.from_sequences((line.split(" ") for line in fh.read().splitlines() if line), name)
