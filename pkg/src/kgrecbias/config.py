"""Experiment configuration: an INI file with one flat section per stage.

Example::

    [kgs]
    de = dumps/de_mappingbased_objects.nt.gz, dumps/de_instance_types.nt.gz
    en = dumps/en_mappingbased_objects.nt.gz

    [data]
    links = links.tsv
    ratings = ml-1m/ratings.dat
    items = ml-1m/movies.dat
    countries = countries.tsv

    [walk]
    walks_per_entity = 500
    depth = 4

Relative paths resolve against the config file's directory. Unknown
sections or keys are errors; :func:`validate_config` reports all problems
at once.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .embedder import TrainParams
from .evalkit import FilterSpec, SplitSpec


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


# section -> key -> (type, default); default None means required
_SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "data": {"links": (Path, None), "ratings": (Path, None), "items": (Path, None), "countries": (Path, "")},
    "filter": {"top_fraction": (float, 0.01), "min_user_ratings": (int, 50)},
    "walk": {"walks_per_entity": (int, 500), "depth": (int, 4), "seed": (int, 0), "scope": (str, "all")},
    "embed": {
        "dimension": (int, 200), "window": (int, 5), "epochs": (int, 5), "negative": (int, 5),
        "alpha": (float, 0.025), "min_alpha": (float, 1e-4), "seed": (int, 1), "min_count": (int, 1),
        "sample": (float, 0.0),
    },
    "recommend": {"n": (int, 10), "neighbors": (int, 0)},
    "split": {"fraction": (float, 0.2), "threshold": (int, 4), "seed": (int, 0)},
    "bias": {
        "features": (list, ["country", "genre"]), "top": (int, 10), "alpha": (float, 0.05),
        "expected": (str, "catalog"), "genre_grid": (list, []),
    },
    "output": {"dir": (Path, "out"), "cache_dir": (Path, ".kgrecbias-cache"), "cache": (str, "use")},
    "run": {"threads": (int, 1), "deterministic": (bool, True), "strict_parse": (bool, False)},
}


@dataclass
class ExperimentConfig:
    kgs: dict[str, list[Path]]
    links: Path
    ratings: Path
    items: Path
    countries: Path | None
    filter: FilterSpec
    walks_per_entity: int
    depth: int
    walk_seed: int
    walk_scope: str
    train: TrainParams
    n: int
    neighbors: int
    split: SplitSpec
    features: list[str]
    top: int
    alpha: float
    expected: str
    genre_grid: list[str]
    out_dir: Path
    cache_dir: Path
    cache: str = "use"
    threads: int = 1
    deterministic: bool = True
    strict_parse: bool = False
    source: Path | None = field(default=None, compare=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Path):
        return str(x)
    return x


def _convert(kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is list:
        return [v.strip() for v in raw.split(",") if v.strip()]
    if kind is Path:
        return Path(raw) if raw else None
    return kind(raw)


def validate_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and check a config file; ``overrides`` maps ``section.key`` to raw strings."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as err:
        raise ConfigError([f"unparsable config: {err}"]) from None
    for key, value in (overrides or {}).items():
        section, name = key.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, str(value))

    problems: list[str] = []
    base = path.parent
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section != "kgs" and section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
    for section, keys in _SCHEMA.items():
        values[section] = {}
        present = dict(parser.items(section)) if parser.has_section(section) else {}
        for key in present:
            if key not in keys:
                problems.append(f"unknown key {section}.{key}")
        for key, (kind, default) in keys.items():
            if key in present:
                try:
                    values[section][key] = _convert(kind, present[key])
                except ValueError as err:
                    problems.append(f"{section}.{key}: {err}")
                    continue
            elif default is None:
                problems.append(f"missing required key {section}.{key}")
                continue
            else:
                values[section][key] = _convert(kind, default) if isinstance(default, str) and kind is Path else default

    def resolve(p):
        return None if p is None else (p if p.is_absolute() else base / p)

    kgs: dict[str, list[Path]] = {}
    if not parser.has_section("kgs") or not parser.items("kgs"):
        problems.append("section [kgs] must list at least one knowledge graph")
    else:
        for label, raw in parser.items("kgs"):
            files = [resolve(Path(p)) for p in _convert(list, raw)]
            if not files:
                problems.append(f"kgs.{label}: no files given")
            for f in files:
                if not f.is_file():
                    problems.append(f"kgs.{label}: file not found: {f}")
            kgs[label] = files

    data = values["data"]
    for key in ("links", "ratings", "items", "countries"):
        if data.get(key) is not None:
            data[key] = resolve(data[key])
            if not data[key].is_file():
                problems.append(f"data.{key}: file not found: {data[key]}")

    w, e, r, s, b, o, run = (values[k] for k in ("walk", "embed", "recommend", "split", "bias", "output", "run"))
    f = values["filter"]

    def check(cond, msg):
        if not cond:
            problems.append(msg)

    check(w.get("walks_per_entity", 1) >= 1, "walk.walks_per_entity must be >= 1")
    check(w.get("depth", 1) >= 1, "walk.depth must be >= 1")
    check(0 <= w.get("seed", 0) < 2**64, "walk.seed must be an unsigned 64-bit integer")
    check(w.get("scope", "all") in ("all", "items"), "walk.scope must be 'all' or 'items'")
    for key in ("dimension", "window", "epochs", "negative", "min_count"):
        check(e.get(key, 1) >= 1, f"embed.{key} must be >= 1")
    check(e.get("alpha", 1) > 0, "embed.alpha must be > 0")
    check(0 <= e.get("min_alpha", 0) <= e.get("alpha", 1), "embed.min_alpha must lie in [0, alpha]")
    check(e.get("sample", 0) >= 0, "embed.sample must be >= 0")
    check(r.get("n", 1) >= 1, "recommend.n must be >= 1")
    check(r.get("neighbors", 0) >= 0, "recommend.neighbors must be >= 0 (0 = full catalog)")
    check(0 < s.get("fraction", 0.2) < 1, "split.fraction must lie in (0, 1)")
    check(1 <= s.get("threshold", 4) <= 5, "split.threshold must lie in 1-5")
    check(0 <= f.get("top_fraction", 0) < 1, "filter.top_fraction must lie in [0, 1)")
    check(f.get("min_user_ratings", 1) >= 1, "filter.min_user_ratings must be >= 1")
    check(set(b.get("features", [])) <= {"country", "genre"}, "bias.features may only contain country, genre")
    check(b.get("top", 2) >= 2, "bias.top must be >= 2")
    check(0 < b.get("alpha", 0.05) < 1, "bias.alpha must lie in (0, 1)")
    check(b.get("expected", "catalog") in ("catalog", "ratings"), "bias.expected must be 'catalog' or 'ratings'")
    check(o.get("cache", "use") in ("use", "refresh", "off"), "output.cache must be use, refresh or off")
    check(run.get("threads", 1) >= 1, "run.threads must be >= 1")
    if b.get("features") and len(kgs) < 2:
        problems.append("bias analysis needs at least two knowledge graphs")

    if problems:
        raise ConfigError(problems)

    return ExperimentConfig(
        kgs=kgs,
        links=data["links"],
        ratings=data["ratings"],
        items=data["items"],
        countries=data.get("countries"),
        filter=FilterSpec(f["top_fraction"], f["min_user_ratings"]),
        walks_per_entity=w["walks_per_entity"],
        depth=w["depth"],
        walk_seed=w["seed"],
        walk_scope=w["scope"],
        train=TrainParams(
            dimension=e["dimension"], window=e["window"], epochs=e["epochs"], negative=e["negative"],
            alpha=e["alpha"], min_alpha=e["min_alpha"], seed=e["seed"], min_count=e["min_count"],
            sample=e["sample"], deterministic=run["deterministic"], workers=run["threads"],
        ),
        n=r["n"],
        neighbors=r["neighbors"],
        split=SplitSpec(s["fraction"], s["threshold"], s["seed"]),
        features=b["features"],
        top=b["top"],
        alpha=b["alpha"],
        expected=b["expected"],
        genre_grid=b["genre_grid"],
        out_dir=resolve(o["dir"]),
        cache_dir=resolve(o["cache_dir"]),
        cache=o["cache"],
        threads=run["threads"],
        deterministic=run["deterministic"],
        strict_parse=run["strict_parse"],
        source=path,
    )
