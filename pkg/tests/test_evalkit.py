import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgrecbias.evalkit import (
    DataError,
    FilterSpec,
    ItemMeta,
    RatingsDataset,
    SplitSpec,
    apply_filters,
    f1_score,
    load_movielens,
    per_user_metrics,
    positive_items,
    precision_recall_f1,
    split,
)
from kgrecbias.recommender import Recommendation
from oracles import brute_force_prf


def dataset(rows, items=None):
    rows = list(rows)
    items = items if items is not None else sorted({i for _, i, _ in rows})
    return RatingsDataset(
        [u for u, _, _ in rows], [i for _, i, _ in rows], [r for _, _, r in rows], [0] * len(rows),
        {i: ItemMeta(f"m{i}") for i in items},
    )


def planted():
    """Nine users over 100 movies; movie 100 is the most rated (8 ratings).

    u1: 1..59 + 100     -> 59 after the popularity cut, kept
    u2: 1..49 + 100     -> 49, dropped
    u3: 1..50 + 100     -> 50, kept
    u4: 1..49           -> 49, dropped
    u5..u9: 60..99 + 100 -> 40 each, dropped
    """
    rated = {1: list(range(1, 60)) + [100], 2: list(range(1, 50)) + [100], 3: list(range(1, 51)) + [100],
             4: list(range(1, 50))}
    for u in range(5, 10):
        rated[u] = list(range(60, 100)) + [100]
    return dataset((u, i, 3 + (i % 3)) for u, items in rated.items() for i in items)


PLANTED_STAGES = [
    ("input", 100, 9, 415),
    ("aligned", 100, 9, 415),
    ("popular_removed", 99, 9, 407),
    ("users_filtered", 59, 2, 109),
    ("unrated_removed", 59, 2, 109),
]


def stage_rows(report):
    return [(s["stage"], s["movies"], s["users"], s["ratings"]) for s in report]


def test_planted_filter_counts():
    out, report = apply_filters(planted(), None)
    assert stage_rows(report) == PLANTED_STAGES
    assert 100 not in out.item_set
    assert out.user_set == {1, 3}
    assert set(out.meta) == out.item_set


def test_aligned_restriction():
    out, report = apply_filters(planted(), set(range(1, 100)), FilterSpec(0.01, 40))
    # 99 movies: ceil(0.99) = 1 removed; 60..99 tie at 5 ratings and the lowest id goes.
    # u5..u9 keep 39 ratings and fall below 40, u1..u4 keep 59/49/50/49
    assert stage_rows(report)[1:] == [
        ("aligned", 99, 9, 407),
        ("popular_removed", 98, 9, 402),
        ("users_filtered", 59, 4, 207),
        ("unrated_removed", 59, 4, 207),
    ]
    assert 60 not in out.item_set


def test_filter_idempotent():
    once, _ = apply_filters(planted(), None)
    twice, report = apply_filters(once, None)
    assert twice.digest() == once.digest()
    assert stage_rows(report)[0][1:] == stage_rows(report)[-1][1:]


def test_filter_empty_result_is_error():
    with pytest.raises(DataError):
        apply_filters(planted(), None, FilterSpec(0.01, 1000))


_rows = st.lists(st.tuples(st.integers(1, 12), st.integers(1, 30), st.integers(1, 5)), min_size=1, max_size=150)


@given(_rows, st.floats(0.0, 0.3), st.integers(1, 6))
@settings(max_examples=150, deadline=None)
def test_filter_monotone_and_idempotent(rows, frac, min_ratings):
    d = dataset({(u, i): (u, i, r) for u, i, r in rows}.values())
    try:
        out, report = apply_filters(d, None, FilterSpec(frac, min_ratings))
    except DataError:
        return
    for key in ("movies", "users", "ratings"):
        values = [s[key] for s in report]
        assert all(a >= b for a, b in zip(values, values[1:]))
    assert np.all(np.unique(out.users, return_counts=True)[1] >= min_ratings)
    again, _ = apply_filters(out, None, FilterSpec(frac, min_ratings))
    assert again.digest() == out.digest()


def test_split_counts_and_determinism():
    d = dataset((7, i, 4) for i in range(10))
    train, test = split(d, SplitSpec(0.2, 4, 0))
    assert (len(train), len(test)) == (8, 2)
    train2, test2 = split(d, SplitSpec(0.2, 4, 0))
    assert test2.items.tolist() == test.items.tolist()
    assert set(train.meta) == set(test.meta) == set(d.meta)


def test_split_infeasible_names_user():
    d = dataset([(42, 1, 4), (42, 2, 3)])
    with pytest.raises(DataError, match="user 42"):
        split(d, SplitSpec(0.99, 4, 0))


@pytest.mark.parametrize("kwargs", [{"fraction": 0.0}, {"fraction": 1.0}, {"threshold": 6}])
def test_split_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SplitSpec(**kwargs)


@given(_rows, st.integers(0, 100))
@settings(max_examples=100, deadline=None)
def test_split_partition(rows, seed):
    d = dataset({(u, i): (u, i, r) for u, i, r in rows}.values())
    try:
        train, test = split(d, SplitSpec(0.2, 4, seed))
    except DataError:
        return
    pairs = lambda x: set(zip(x.users.tolist(), x.items.tolist(), x.ratings.tolist()))
    assert not pairs(train) & pairs(test)
    assert pairs(train) | pairs(test) == pairs(d)


def test_metric_examples():
    a, b, c, d, e, f, g = range(1, 8)
    report = precision_recall_f1({1: [a, b, c, d, e]}, {1: {a, c, f, g}}, n=5)
    assert abs(report.precision - 0.4) < 1e-4 and abs(report.recall - 0.5) < 1e-4
    assert abs(report.f1 - 0.4444) < 1e-4
    none = precision_recall_f1({1: [a, b]}, {1: {c, d}}, n=2)
    assert (none.precision, none.recall, none.f1) == (0.0, 0.0, 0.0)
    full = precision_recall_f1({1: Recommendation(1, [a, b, c], [3.0, 2.0, 1.0])}, {1: {a, b, c}}, n=3)
    assert (full.precision, full.recall, full.f1) == (1.0, 1.0, 1.0)


def test_metric_edge_cases():
    assert per_user_metrics([], {1}) == (0.0, 0.0)
    assert f1_score(0.0, 0.0) == 0.0
    with pytest.raises(DataError):
        precision_recall_f1({1: [1]}, {2: set()})
    # users without positives are skipped, and the cutoff n truncates lists
    r = precision_recall_f1({1: [1, 2, 3], 2: [9]}, {1: {1}, 2: set()}, n=1)
    assert (r.users, r.precision, r.recall) == (1, 1.0, 1.0)


def test_positive_items_threshold():
    test = dataset([(1, 10, 5), (1, 11, 3), (2, 10, 4)])
    assert positive_items(test, 4) == {1: {10}, 2: {10}}
    assert precision_recall_f1({1: [10], 2: [11]}, test).precision == 0.5


_recs = st.dictionaries(
    st.integers(0, 5),
    st.tuples(st.lists(st.integers(0, 20), max_size=10, unique=True), st.sets(st.integers(0, 20), max_size=8)),
    min_size=1,
)


@given(_recs)
@settings(max_examples=200)
def test_metric_bounds_and_oracle(data):
    recs = {u: r for u, (r, _) in data.items()}
    relevant = {u: p for u, (_, p) in data.items()}
    for u in recs:
        if relevant[u]:
            p, r = per_user_metrics(recs[u], relevant[u])
            assert 0 <= p <= 1 and 0 <= r <= 1
    expected = brute_force_prf(recs, relevant)
    if expected is None:
        with pytest.raises(DataError):
            precision_recall_f1(recs, relevant, n=10)
        return
    rep = precision_recall_f1(recs, relevant, n=10)
    assert rep.f1 <= min(2 * rep.precision, 2 * rep.recall) + 1e-12
    np.testing.assert_allclose([rep.precision, rep.recall, rep.f1], expected, atol=1e-12)


def test_macro_average_of_identical_users():
    recs = {u: [1, 2, 3, 4] for u in range(6)}
    relevant = {u: {2, 4, 9} for u in range(6)}
    rep = precision_recall_f1(recs, relevant, n=4)
    p, r = per_user_metrics(recs[0], relevant[0])
    assert (rep.precision, rep.recall) == pytest.approx((p, r), abs=1e-15)
    assert rep.users == 6


def write_movielens(tmp_path, ratings, movies, countries=None, encoding="utf-8"):
    (tmp_path / "ratings.dat").write_text(ratings)
    (tmp_path / "movies.dat").write_bytes(movies.encode(encoding))
    if countries is not None:
        (tmp_path / "countries.tsv").write_text(countries)
        return load_movielens(tmp_path / "ratings.dat", tmp_path / "movies.dat", tmp_path / "countries.tsv")
    return load_movielens(tmp_path / "ratings.dat", tmp_path / "movies.dat")


def test_movielens_parsing(tmp_path):
    d = write_movielens(
        tmp_path,
        "1::1193::5::978300760\n1::1::3::978300761\n",
        "1::Toy Story (1995)::Animation|Children's|Comedy\n1193::Café (1975)::Drama\n",
        "item_id\tcountry\n1193\tUnited States\n1193\tFrance\n",
        encoding="latin-1",
    )
    assert (d.users.tolist(), d.items.tolist(), d.ratings.tolist()) == ([1, 1], [1, 1193], [3, 5])
    assert d.meta[1].genres == {"Animation", "Children's", "Comedy"}
    assert d.meta[1193].title == "Café (1975)"
    assert d.meta[1193].countries == {"United States", "France"}


@pytest.mark.parametrize(
    "ratings, match",
    [
        ("1::1::6::0\n", "row 1: rating 6"),
        ("1::1::5::0\n1::1::4::1\n", "duplicate"),
        ("1::1::5\n", "row 1"),
        ("1::1::5::0\n2::x::5::0\n", "row 2"),
        ("1::2::5::0\n", "movie 2"),
    ],
)
def test_movielens_errors(tmp_path, ratings, match):
    with pytest.raises(DataError, match=match):
        write_movielens(tmp_path, ratings, "1::A::Drama\n")
