"""Ratings ingestion, the filtering protocol, per-user holdout splits and P/R/F1."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .recommender import Recommendation, UserProfile

RATING_MIN, RATING_MAX = 1, 5


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ItemMeta:
    title: str = ""
    genres: frozenset[str] = frozenset()
    countries: frozenset[str] = frozenset()


@dataclass
class RatingsDataset:
    """Parallel rating arrays sorted by (user, item) plus item metadata."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    meta: dict[int, ItemMeta]
    notes: list[str] = field(default_factory=list)
    popularity_filtered: bool = False

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.ratings = np.asarray(self.ratings, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        order = np.lexsort((self.items, self.users))
        for name in ("users", "items", "ratings", "timestamps"):
            setattr(self, name, getattr(self, name)[order])
        if len(self.users) > 1:
            dup = (np.diff(self.users) == 0) & (np.diff(self.items) == 0)
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise DataError(f"duplicate rating for user {self.users[k]}, item {self.items[k]}")
        missing = set(np.unique(self.items).tolist()) - set(self.meta)
        if missing:
            raise DataError(f"{len(missing)} rated items lack metadata, e.g. {min(missing)}")

    def __len__(self) -> int:
        return len(self.users)

    @property
    def item_set(self) -> set[int]:
        return set(np.unique(self.items).tolist())

    @property
    def user_set(self) -> set[int]:
        return set(np.unique(self.users).tolist())

    def counts(self) -> dict[str, int]:
        return {"movies": len(np.unique(self.items)), "users": len(np.unique(self.users)), "ratings": len(self)}

    def subset(self, mask: np.ndarray, note: str | None = None) -> "RatingsDataset":
        kept_items = set(np.unique(self.items[mask]).tolist())
        notes = self.notes + ([note] if note else [])
        return RatingsDataset(
            self.users[mask], self.items[mask], self.ratings[mask], self.timestamps[mask],
            {i: m for i, m in self.meta.items() if i in kept_items}, notes, self.popularity_filtered,
        )

    def profiles(self) -> list[UserProfile]:
        out = []
        bounds = np.flatnonzero(np.diff(self.users)) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(self.users)]):
            if hi > lo:
                out.append(UserProfile(int(self.users[lo]), self.items[lo:hi], self.ratings[lo:hi]))
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.users, self.items, self.ratings, self.timestamps):
            h.update(arr.tobytes())
        for item in sorted(self.meta):
            m = self.meta[item]
            h.update(f"{item}\x00{m.title}\x00{sorted(m.genres)}\x00{sorted(m.countries)}\n".encode())
        return h.hexdigest()


def _read_lines(path) -> list[str]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        text = raw.decode("latin-1")
    return text.splitlines()


def load_movielens(ratings_file, items_file, countries_file=None) -> RatingsDataset:
    """Read ``UserID::MovieID::Rating::Timestamp`` and ``MovieID::Title::G1|G2`` files.

    Production countries come from an optional ``item_id<TAB>country`` TSV
    (header row optional, one row per country).
    """
    countries: dict[int, set[str]] = {}
    if countries_file is not None:
        for rowno, line in enumerate(_read_lines(countries_file), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{countries_file}: row {rowno}: expected 2 columns")
            if rowno == 1 and parts[0].strip() == "item_id":
                continue
            try:
                countries.setdefault(int(parts[0]), set()).add(parts[1].strip())
            except ValueError:
                raise DataError(f"{countries_file}: row {rowno}: bad item id {parts[0]!r}") from None

    meta: dict[int, ItemMeta] = {}
    for rowno, line in enumerate(_read_lines(items_file), start=1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 3:
            raise DataError(f"{items_file}: row {rowno}: expected 3 '::'-separated fields")
        try:
            item = int(parts[0])
        except ValueError:
            raise DataError(f"{items_file}: row {rowno}: bad movie id {parts[0]!r}") from None
        if item in meta:
            raise DataError(f"{items_file}: row {rowno}: duplicate movie {item}")
        genres = frozenset(g for g in parts[2].strip().split("|") if g)
        meta[item] = ItemMeta(parts[1], genres, frozenset(countries.get(item, ())))

    rows = []
    for rowno, line in enumerate(_read_lines(ratings_file), start=1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 4:
            raise DataError(f"{ratings_file}: row {rowno}: expected 4 '::'-separated fields")
        try:
            user, item, rating, ts = (int(p) for p in parts)
        except ValueError:
            raise DataError(f"{ratings_file}: row {rowno}: non-integer field") from None
        if not RATING_MIN <= rating <= RATING_MAX:
            raise DataError(f"{ratings_file}: row {rowno}: rating {rating} outside {RATING_MIN}-{RATING_MAX}")
        if item not in meta:
            raise DataError(f"{ratings_file}: row {rowno}: movie {item} missing from {items_file}")
        rows.append((user, item, rating, ts))
    arr = np.array(rows, dtype=np.int64).reshape(len(rows), 4)
    return RatingsDataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], meta, [f"loaded {ratings_file}"])


@dataclass(frozen=True)
class FilterSpec:
    top_fraction: float = 0.01
    min_user_ratings: int = 50


def apply_filters(
    d: RatingsDataset, aligned_items: Iterable[int] | None = None, spec: FilterSpec = FilterSpec()
) -> tuple[RatingsDataset, list[dict]]:
    """Run the four filter stages and return the result with per-stage counts.

    1. keep aligned items; 2. drop the ``ceil(top_fraction * movies)`` most
    rated movies (ties by ascending id); 3. drop users with fewer than
    ``min_user_ratings`` remaining ratings; 4. drop movies left unrated.
    Stage 2 is skipped for datasets that already went through it, which
    makes the whole pipeline idempotent.
    """
    report = [{"stage": "input", **d.counts()}]
    if aligned_items is not None:
        aligned = np.array(sorted(set(aligned_items)), dtype=np.int64)
        d = d.subset(np.isin(d.items, aligned), "restricted to aligned items")
    report.append({"stage": "aligned", **d.counts()})

    # the popularity cut is relative to the current catalog, so it runs once per lineage
    if not d.popularity_filtered:
        movies, counts = np.unique(d.items, return_counts=True)
        n_drop = math.ceil(spec.top_fraction * len(movies) - 1e-9) if len(movies) else 0
        order = np.lexsort((movies, -counts))
        dropped = movies[order[:n_drop]]
        d = d.subset(~np.isin(d.items, dropped), f"removed {n_drop} most-rated movies")
        d.popularity_filtered = True
    report.append({"stage": "popular_removed", **d.counts()})

    users, ucounts = np.unique(d.users, return_counts=True)
    keep_users = users[ucounts >= spec.min_user_ratings]
    d = d.subset(np.isin(d.users, keep_users), f"kept users with >= {spec.min_user_ratings} ratings")
    report.append({"stage": "users_filtered", **d.counts()})

    # ratings-derived arrays already carry only rated movies; metadata is pruned in subset()
    d = d.subset(np.ones(len(d), dtype=bool), "dropped unrated movies")
    report.append({"stage": "unrated_removed", **d.counts()})
    if len(d) == 0:
        raise DataError("filtering removed every rating")
    return d, report


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.2
    threshold: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ValueError("holdout fraction must lie in (0, 1)")
        if not RATING_MIN <= self.threshold <= RATING_MAX:
            raise ValueError(f"positive threshold must lie in {RATING_MIN}-{RATING_MAX}")


def split(d: RatingsDataset, s: SplitSpec) -> tuple[RatingsDataset, RatingsDataset]:
    """Per-user random holdout of ``floor(fraction * n + 0.5)`` ratings, seeded on (seed, user)."""
    test_mask = np.zeros(len(d), dtype=bool)
    bounds = np.flatnonzero(np.diff(d.users)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(d)]):
        n = hi - lo
        if n == 0:
            continue
        user = int(d.users[lo])
        n_test = int(math.floor(s.fraction * n + 0.5))
        if n - n_test < 1:
            raise DataError(f"user {user}: holdout fraction {s.fraction} leaves no training ratings ({n} total)")
        rng = np.random.default_rng([s.seed, user])
        test_mask[lo + rng.permutation(n)[:n_test]] = True
    train = d.subset(~test_mask, "train split")
    test = d.subset(test_mask, "test split")
    # evaluation needs metadata for the whole catalog on both sides
    train.meta, test.meta = dict(d.meta), dict(d.meta)
    return train, test


@dataclass
class EvalReport:
    kg: str
    precision: float
    recall: float
    f1: float
    n: int
    users: int

    def as_row(self) -> list:
        return [self.kg, self.precision, self.recall, self.f1, self.n, self.users]


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def per_user_metrics(recommended: Iterable[int], positives: set[int]) -> tuple[float, float]:
    recommended = list(recommended)
    hits = len(positives.intersection(recommended))
    precision = hits / len(recommended) if recommended else 0.0
    recall = hits / len(positives)
    return precision, recall


def positive_items(test: RatingsDataset, threshold: int) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {}
    mask = test.ratings >= threshold
    for u, i in zip(test.users[mask].tolist(), test.items[mask].tolist()):
        out.setdefault(u, set()).add(i)
    return out


def precision_recall_f1(
    recs: Mapping[int, Recommendation | Iterable[int]],
    test: RatingsDataset | Mapping[int, set[int]],
    threshold: int = 4,
    n: int = 10,
    kg: str = "",
) -> EvalReport:
    """Macro-averaged precision and recall over users with at least one test positive.

    F1 is the harmonic mean of the averaged precision and recall.
    """
    positives = positive_items(test, threshold) if isinstance(test, RatingsDataset) else dict(test)
    ps, rs = [], []
    for user in sorted(positives):
        pos = positives[user]
        if not pos:
            continue
        rec = recs.get(user, ())
        items = rec.items if isinstance(rec, Recommendation) else list(rec)
        p, r = per_user_metrics(items[:n], pos)
        ps.append(p)
        rs.append(r)
    if not ps:
        raise DataError("no user has a positive test rating to evaluate")
    precision = math.fsum(ps) / len(ps)
    recall = math.fsum(rs) / len(rs)
    return EvalReport(kg, precision, recall, f1_score(precision, recall), n, len(ps))
