"""Item-similarity top-N recommendation over entity embeddings.

A candidate ``j`` for user ``u`` is scored by the similarity-weighted mean of
the user's training ratings::

    y_uj = sum_i w(i, j) * r_ui / sum_i w(i, j),   w(i, j) = max(cos(i, j), 0)

Candidates whose total weight is at most ``MIN_WEIGHT`` have no score and are
never ranked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .embedder import EmbeddingSpace
from .kg import AlignmentMap

logger = logging.getLogger(__name__)

MIN_WEIGHT = 1e-12
# ranking compares scores at this many decimals so rounding noise cannot break id tie-breaks
SCORE_DECIMALS = 10


class ItemVectorIndex:
    """Unit-normalised item vectors for one KG, rows ordered by ascending item id."""

    def __init__(self, item_ids: Sequence[int], vectors: np.ndarray, kg: str = "", missing: Iterable[int] = ()):
        order = np.argsort(np.asarray(item_ids, dtype=np.int64), kind="stable")
        self.item_ids = np.asarray(item_ids, dtype=np.int64)[order]
        if len(np.unique(self.item_ids)) != len(self.item_ids):
            raise ValueError("duplicate item ids in index")
        vecs = np.asarray(vectors, dtype=np.float64)[order]
        norms = np.linalg.norm(vecs, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-norm item vector")
        self.vectors = vecs
        self.unit = vecs / norms[:, None]
        self.kg = kg
        self.missing = sorted(set(missing))
        self._row = {int(i): r for r, i in enumerate(self.item_ids)}

    @classmethod
    def from_embedding(cls, space: EmbeddingSpace, alignment: AlignmentMap, kg: str, items: Iterable[int]):
        ids, rows, missing = [], [], []
        for item in sorted(set(items)):
            iri = alignment.iri(item, kg)
            if iri is None or iri not in space:
                missing.append(item)
                continue
            ids.append(item)
            rows.append(space.vector(iri))
        if missing:
            logger.warning("%s: %d items have no embedding and are excluded", kg, len(missing))
        vecs = np.array(rows, dtype=np.float64).reshape(len(rows), space.dimension)
        return cls(ids, vecs, kg, missing)

    def __len__(self) -> int:
        return len(self.item_ids)

    def __contains__(self, item: int) -> bool:
        return int(item) in self._row

    def row(self, item: int) -> int:
        try:
            return self._row[int(item)]
        except KeyError:
            raise KeyError(f"item {item} has no vector in {self.kg!r}") from None

    def cosine(self, i: int, j: int) -> float:
        return float(np.clip(self.unit[self.row(i)] @ self.unit[self.row(j)], -1.0, 1.0))


@dataclass
class UserProfile:
    user_id: int
    items: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.ratings = np.asarray(self.ratings, dtype=np.float64)
        if len(self.items) != len(self.ratings):
            raise ValueError("items and ratings differ in length")
        if len(np.unique(self.items)) != len(self.items):
            raise ValueError(f"user {self.user_id}: duplicate items in profile")


@dataclass
class Recommendation:
    user_id: int
    items: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)


def score(u: UserProfile, j: int, idx: ItemVectorIndex) -> float | None:
    """Score one unrated item directly; ``None`` when the total similarity weight vanishes."""
    if int(j) in set(u.items.tolist()):
        raise ValueError(f"item {j} is already rated by user {u.user_id}")
    jrow = idx.unit[idx.row(j)]
    rated = [(idx.row(i), r) for i, r in zip(u.items.tolist(), u.ratings.tolist()) if i in idx]
    if not rated:
        return None
    rows = np.array([r for r, _ in rated])
    ratings = np.array([r for _, r in rated])
    w = np.maximum(idx.unit[rows] @ jrow, 0.0)
    den = w.sum()
    if den <= MIN_WEIGHT:
        return None
    return float(w @ ratings / den)


class SimilarityTable:
    """Per-item top-k neighbour similarities (positive only), stored as a sparse row matrix.

    Row ``a`` holds the neighbours of ``idx.item_ids[a]``; columns are index rows.
    """

    def __init__(self, idx: ItemVectorIndex, matrix: sparse.csr_matrix, k: int):
        self.idx = idx
        self.matrix = matrix
        self.k = k

    def neighbors(self, item: int) -> list[tuple[int, float]]:
        r = self.idx.row(item)
        lo, hi = self.matrix.indptr[r], self.matrix.indptr[r + 1]
        cols = self.matrix.indices[lo:hi]
        vals = self.matrix.data[lo:hi]
        order = np.lexsort((self.idx.item_ids[cols], -vals))
        return [(int(self.idx.item_ids[cols[o]]), float(vals[o])) for o in order]


def precompute_similarities(idx: ItemVectorIndex, k: int | None = None, block: int = 1024) -> SimilarityTable:
    """Keep, for each item, its ``k`` most similar other items with positive cosine."""
    n = len(idx)
    if k is None:
        k = max(n - 1, 1)
    if k < 1:
        raise ValueError("k must be >= 1")
    rows, cols, data = [], [], []
    for start in range(0, n, block):
        sims = idx.unit[start : start + block] @ idx.unit.T
        np.clip(sims, -1.0, 1.0, out=sims)
        for off in range(sims.shape[0]):
            a = start + off
            s = sims[off]
            s[a] = 0.0
            cand = np.flatnonzero(s > 0)
            if len(cand) > k:
                # most similar first, ties by ascending item id
                order = np.lexsort((idx.item_ids[cand], -s[cand]))[:k]
                cand = np.sort(cand[order])
            rows.append(np.full(len(cand), a))
            cols.append(cand)
            data.append(s[cand])
    if rows:
        matrix = sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
    else:
        matrix = sparse.csr_matrix((n, n))
    matrix.sort_indices()
    return SimilarityTable(idx, matrix, k)


def table_scores(u: UserProfile, table: SimilarityTable) -> tuple[np.ndarray, np.ndarray]:
    """Scores of every index item for ``u`` using the table; NaN where undefined or already rated."""
    idx = table.idx
    known = np.array([i in idx for i in u.items.tolist()], dtype=bool)
    rated_rows = np.array([idx.row(i) for i in u.items[known].tolist()], dtype=np.int64)
    ratings = u.ratings[known]
    out = np.full(len(idx), np.nan)
    if len(rated_rows) == 0:
        return idx.item_ids, out
    sub = table.matrix[:, rated_rows]
    den = np.asarray(sub.sum(axis=1)).ravel()
    num = sub @ ratings
    ok = den > MIN_WEIGHT
    out[ok] = num[ok] / den[ok]
    out[rated_rows] = np.nan
    return idx.item_ids, out


def rank(items: np.ndarray, scores: np.ndarray, n: int) -> tuple[list[int], list[float]]:
    """Top ``n`` defined scores, descending, ties broken by ascending item id.

    Returned scores are rounded to ``SCORE_DECIMALS``.
    """
    ok = ~np.isnan(scores)
    items, scores = items[ok], np.round(scores[ok], SCORE_DECIMALS)
    order = np.lexsort((items, -scores))[:n]
    return items[order].tolist(), scores[order].tolist()


def recommend_top_n(
    u: UserProfile,
    n: int,
    idx: ItemVectorIndex,
    candidates: Iterable[int] | None = None,
    table: SimilarityTable | None = None,
) -> Recommendation:
    """Rank candidates (default: every indexed item the user has not rated)."""
    rated = set(u.items.tolist())
    if candidates is None:
        cand = np.array([i for i in idx.item_ids.tolist() if i not in rated], dtype=np.int64)
    else:
        cand = np.array(sorted(set(candidates)), dtype=np.int64)
        if rated.intersection(cand.tolist()):
            raise ValueError(f"candidate set contains items rated by user {u.user_id}")
        cand = cand[[c in idx for c in cand.tolist()]] if len(cand) else cand
    if len(cand) == 0:
        return Recommendation(u.user_id)
    if table is None:
        table = precompute_similarities(idx)
    ids, all_scores = table_scores(u, table)
    rows = np.array([idx.row(c) for c in cand.tolist()], dtype=np.int64)
    items, scores = rank(ids[rows], all_scores[rows], n)
    return Recommendation(u.user_id, items, scores)


def recommend_all(
    profiles: Iterable[UserProfile],
    n: int,
    idx: ItemVectorIndex,
    k: int | None = None,
    candidates: Iterable[int] | None = None,
) -> dict[int, Recommendation]:
    table = precompute_similarities(idx, k)
    cand = None if candidates is None else set(candidates)
    out = {}
    for u in profiles:
        user_cand = None if cand is None else cand - set(u.items.tolist())
        out[u.user_id] = recommend_top_n(u, n, idx, user_cand, table)
    return out


def write_recommendations(recs: Mapping[int, Recommendation], path) -> None:
    """TSV ``user_id, rank, item_id, score`` (score with 6 decimals), users ascending."""
    lines = ["user_id\trank\titem_id\tscore\n"]
    for user in sorted(recs):
        rec = recs[user]
        for r, (item, s) in enumerate(zip(rec.items, rec.scores), start=1):
            lines.append(f"{user}\t{r}\t{item}\t{s:.6f}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_recommendations(path) -> dict[int, Recommendation]:
    recs: dict[int, Recommendation] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["user_id", "rank", "item_id", "score"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}: line {lineno}: expected 4 columns")
            user, _, item, s = int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])
            rec = recs.setdefault(user, Recommendation(user))
            rec.items.append(item)
            rec.scores.append(s)
    return recs
