"""Small synthetic experiments: two KG editions over one catalog with opposite genre structure.

Items are split evenly between two genres and, within each genre, into
communities. In the edition that "knows" a genre, members of each of its
communities are densely interlinked and attached to a community hub; items
of the other genre only point at random nodes of a shared background pool.
Every user loves one community per genre, so a recommender can only find
the user's loved items of a genre when the KG encodes that genre's structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import Literal, Triple, format_triple


@dataclass
class SyntheticExperiment:
    kgs: dict[str, list[Triple]]
    links: list[tuple[int, str, str]]
    ratings: list[tuple[int, int, int, int]]
    items: dict[int, tuple[str, list[str]]]
    countries: list[tuple[int, str]]
    genre_of: dict[int, str]


def _ns(kg: str) -> str:
    return f"http://{kg}.kg.example.org/resource/"


def _pred(kg: str, name: str) -> str:
    return f"http://{kg}.kg.example.org/ontology/{name}"


def genre_bias_experiment(
    seed: int = 7,
    n_items: int = 200,
    n_communities: int = 10,
    n_users: int = 120,
    genres: tuple[str, str] = ("Western", "Musical"),
    kg_labels: tuple[str, str] = ("xa", "xb"),
    pool_size: int = 40,
) -> SyntheticExperiment:
    """KG ``kg_labels[k]`` densely interlinks the communities of ``genres[k]``."""
    rng = np.random.default_rng(seed)
    half = n_items // 2
    item_ids = list(range(1, n_items + 1))
    genre_of = {i: genres[0] if i <= half else genres[1] for i in item_ids}
    per_comm = half // n_communities
    community = {i: ((i - 1) % half) // per_comm for i in item_ids}
    members = {
        (g, c): [i for i in item_ids if genre_of[i] == g and community[i] == c]
        for g in genres
        for c in range(n_communities)
    }

    kgs: dict[str, list[Triple]] = {}
    for kg, dense_genre in zip(kg_labels, genres):
        ns = _ns(kg)
        related, part_of, has_member = _pred(kg, "related"), _pred(kg, "partOf"), _pred(kg, "hasMember")
        mentions, links_to = _pred(kg, "mentions"), _pred(kg, "linksTo")
        triples = []
        for c in range(n_communities):
            group = members[(dense_genre, c)]
            hub = f"{ns}Community_{dense_genre}_{c}"
            for a in group:
                triples.append(Triple(f"{ns}Item_{a}", part_of, hub))
                triples.append(Triple(hub, has_member, f"{ns}Item_{a}"))
                for b in group:
                    if a != b:
                        triples.append(Triple(f"{ns}Item_{a}", related, f"{ns}Item_{b}"))
        pool = [f"{ns}Topic_{k}" for k in range(pool_size)]
        for k, node in enumerate(pool):
            for t in rng.choice(pool_size, size=2, replace=False):
                if t != k:
                    triples.append(Triple(node, links_to, pool[t]))
        for i in item_ids:
            if genre_of[i] != dense_genre:
                for t in rng.choice(pool_size, size=2, replace=False):
                    triples.append(Triple(f"{ns}Item_{i}", mentions, pool[t]))
            triples.append(Triple(f"{ns}Item_{i}", _pred(kg, "label"), Literal(f"Item {i}", "en")))
        kgs[kg] = triples

    links = [(i, kg, f"{_ns(kg)}Item_{i}") for i in item_ids for kg in kg_labels]

    country_names = ["USA", "UK", "France", "Germany", "Italy"]
    country_p = [0.6, 0.2, 0.1, 0.05, 0.05]
    countries = []
    for i in item_ids:
        first = rng.choice(len(country_names), p=country_p)
        countries.append((i, country_names[first]))
        if rng.random() < 0.15:
            second = rng.choice(len(country_names), p=country_p)
            if second != first:
                countries.append((i, country_names[second]))

    ratings = []
    ts = 978300000
    for u in range(1, n_users + 1):
        rated: dict[int, int] = {}
        for g in genres:
            fav = int(rng.integers(n_communities))
            loved = members[(g, fav)]
            for i in rng.choice(loved, size=min(8, len(loved)), replace=False):
                rated[int(i)] = 5
            others = [i for i in item_ids if genre_of[i] == g and community[i] != fav]
            for i in rng.choice(others, size=22, replace=False):
                rated[int(i)] = int(rng.choice([1, 2, 2, 3]))
        for i in sorted(rated):
            ts += 1
            ratings.append((u, i, rated[i], ts))

    items = {i: (f"Item {i} ({1980 + i % 30})", [genre_of[i]]) for i in item_ids}
    return SyntheticExperiment(kgs, links, ratings, items, countries, genre_of)


def write_experiment(exp: SyntheticExperiment, directory, config_overrides: dict | None = None) -> Path:
    """Write N-Triples, link, MovieLens-style and country files plus an ``experiment.ini``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    kg_lines = []
    for kg, triples in exp.kgs.items():
        path = d / f"{kg}.nt"
        path.write_text("".join(format_triple(t) + "\n" for t in triples), encoding="utf-8")
        kg_lines.append(f"{kg} = {path.name}")
    with open(d / "links.tsv", "w", encoding="utf-8") as fh:
        fh.write("item_id\tkg_label\tentity_iri\n")
        for item, kg, iri in exp.links:
            fh.write(f"{item}\t{kg}\t<{iri}>\n")
    (d / "ratings.dat").write_text("".join(f"{u}::{i}::{r}::{t}\n" for u, i, r, t in exp.ratings), encoding="utf-8")
    (d / "movies.dat").write_text(
        "".join(f"{i}::{title}::{'|'.join(g)}\n" for i, (title, g) in sorted(exp.items.items())), encoding="utf-8"
    )
    (d / "countries.tsv").write_text(
        "item_id\tcountry\n" + "".join(f"{i}\t{c}\n" for i, c in exp.countries), encoding="utf-8"
    )
    sections = {
        "kgs": dict(line.split(" = ") for line in kg_lines),
        "data": {"links": "links.tsv", "ratings": "ratings.dat", "items": "movies.dat", "countries": "countries.tsv"},
        "filter": {"top_fraction": "0.01", "min_user_ratings": "50"},
        "walk": {"walks_per_entity": "60", "depth": "4", "seed": "11", "scope": "all"},
        "embed": {"dimension": "48", "window": "5", "epochs": "5", "negative": "5", "alpha": "0.025", "seed": "3"},
        "recommend": {"n": "5"},
        "split": {"fraction": "0.2", "threshold": "4", "seed": "5"},
        "bias": {"features": "genre, country", "top": "10", "alpha": "0.05"},
        "output": {"dir": "out", "cache_dir": "cache"},
    }
    for key, value in (config_overrides or {}).items():
        section, name = key.split(".", 1)
        sections.setdefault(section, {})[name] = str(value)
    text = []
    for section, entries in sections.items():
        text.append(f"[{section}]")
        text.extend(f"{k} = {v}" for k, v in entries.items())
        text.append("")
    cfg = d / "experiment.ini"
    cfg.write_text("\n".join(text), encoding="utf-8")
    return cfg
