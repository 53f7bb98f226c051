"""End-to-end multi-KG experiment runner with content-addressed stage caching.

Every stage is keyed on the digests of the artifacts it consumes plus its
own parameters. A stage whose key is already present in the cache is not
executed; its outputs are reused (and re-published into the output
directory when they are user-facing).
"""

from __future__ import annotations

import hashlib
import json
import logging
import pickle
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .bias import CategoricalFeature, bias_report, genre_partition
from .config import ExperimentConfig
from .embedder import EmbeddingSpace, train
from .evalkit import apply_filters, load_movielens, precision_recall_f1, split
from .kg import load_alignment, load_graph
from .recommender import ItemVectorIndex, read_recommendations, recommend_all, write_recommendations
from .reports import ReportError, Table, bias_table, genre_table, performance_table
from .walker import WalkConfig, generate_walks, read_corpus, write_corpus

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STAGES = ("ingest", "data", "walk", "embed", "recommend", "eval", "bias", "genre")


class StageError(RuntimeError):
    def __init__(self, stage: str, kg: str | None, cause: BaseException):
        where = f"{stage}" + (f" [{kg}]" if kg else "")
        super().__init__(f"stage {where} failed: {cause}")
        self.stage = stage
        self.kg = kg
        self.cause = cause


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


class Pipeline:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.cache = Path(cfg.cache_dir)
        self.records: dict[str, dict] = {}
        self.published: dict[str, str] = {}
        self.extra: dict = {}
        self._scratch: tempfile.TemporaryDirectory | None = None

    # -- stage machinery -------------------------------------------------

    def _stage(self, stage_id: str, inputs: dict, build: Callable[[Path], None], outputs: list[str],
               publish: dict[str, str] | None = None) -> dict[str, tuple[Path, str]]:
        stage, _, kg = stage_id.partition(":")
        key = _key({"stage": stage, "kg": kg, "inputs": inputs, "version": __version__})
        if self.cfg.cache == "off":
            base = Path(self._scratch.name)
        else:
            base = self.cache
        final = base / stage / f"{kg or '_'}-{key[:24]}"
        meta_path = final / "meta.json"
        executed = False
        started = time.perf_counter()
        hit = False
        if self.cfg.cache == "use" and meta_path.is_file():
            meta = json.loads(meta_path.read_text())
            hit = all((final / n).is_file() and sha256_file(final / n) == meta["outputs"].get(n) for n in outputs)
        if not hit:
            work = base / stage / f".tmp-{key[:24]}"
            shutil.rmtree(work, ignore_errors=True)
            work.mkdir(parents=True)
            logger.info("running %s", stage_id)
            try:
                build(work)
                missing = [n for n in outputs if not (work / n).is_file()]
                if missing:
                    raise RuntimeError(f"stage did not produce {missing}")
            except Exception as err:
                failed = base / stage / f"{kg or '_'}-{key[:24]}.failed"
                shutil.rmtree(failed, ignore_errors=True)
                work.rename(failed)
                raise StageError(stage, kg or None, err) from err
            digests = {n: sha256_file(work / n) for n in outputs}
            (work / "meta.json").write_text(json.dumps({"key": key, "inputs": inputs, "outputs": digests},
                                                       indent=2, sort_keys=True, default=str))
            shutil.rmtree(final, ignore_errors=True)
            work.rename(final)
            executed = True
        else:
            logger.info("cache hit %s", stage_id)
        result = {n: (final / n, sha256_file(final / n)) for n in outputs}
        for name, rel in (publish or {}).items():
            dest = self.out / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(result[name][0], dest)
            self.published[rel] = result[name][1]
        self.records[stage_id] = {
            "key": key,
            "executed": executed,
            "seconds": round(time.perf_counter() - started, 3),
            "outputs": {n: d for n, (_, d) in result.items()},
        }
        return result

    # -- stages -----------------------------------------------------------

    def ingest(self, kg: str):
        files = self.cfg.kgs[kg]
        inputs = {"files": [[p.name, sha256_file(p)] for p in files], "strict": self.cfg.strict_parse}

        def build(work: Path):
            g = load_graph(files, kg, strict=self.cfg.strict_parse, threads=self.cfg.threads)
            with open(work / "graph.pkl", "wb") as fh:
                pickle.dump(g, fh, protocol=4)
            stats = {"nodes": g.num_nodes, "predicates": g.num_predicates, "edges": g.num_edges,
                     "literal_triples": g.literal_triples}
            (work / "stats.json").write_text(json.dumps(stats, sort_keys=True))

        return self._stage(f"ingest:{kg}", inputs, build, ["graph.pkl", "stats.json"])

    def data(self):
        cfg = self.cfg
        sources = {k: None if p is None else sha256_file(p)
                   for k, p in (("links", cfg.links), ("ratings", cfg.ratings), ("items", cfg.items),
                                ("countries", cfg.countries))}
        inputs = {"sources": sources, "kgs": sorted(cfg.kgs), "filter": asdict(cfg.filter), "split": asdict(cfg.split)}

        def build(work: Path):
            dataset = load_movielens(cfg.ratings, cfg.items, cfg.countries)
            alignment = load_alignment(cfg.links, sorted(cfg.kgs))
            filtered, report = apply_filters(dataset, alignment.complete_items, cfg.filter)
            train_set, test_set = split(filtered, cfg.split)
            with open(work / "data.pkl", "wb") as fh:
                pickle.dump({"dataset": filtered, "train": train_set, "test": test_set, "alignment": alignment}, fh,
                            protocol=4)
            (work / "filter_report.json").write_text(json.dumps(report, indent=2))

        return self._stage("data", inputs, build, ["data.pkl", "filter_report.json"])

    def walk(self, kg: str, graph_art, data_art):
        cfg = self.cfg
        inputs = {"graph": graph_art["graph.pkl"][1], "walks_per_entity": cfg.walks_per_entity, "depth": cfg.depth,
                  "seed": cfg.walk_seed, "scope": cfg.walk_scope}
        if cfg.walk_scope == "items":
            inputs["data"] = data_art["data.pkl"][1]

        def build(work: Path):
            g = _load_pickle(graph_art["graph.pkl"][0])
            entity_set = None
            if cfg.walk_scope == "items":
                data = _load_pickle(data_art["data.pkl"][0])
                al = data["alignment"]
                entity_set = tuple(sorted(al.iri(i, kg) for i in data["dataset"].item_set if al.iri(i, kg)))
            wc = WalkConfig(cfg.walks_per_entity, cfg.depth, cfg.walk_seed, entity_set)
            write_corpus(generate_walks(g, wc, threads=cfg.threads), work / "walks.txt")

        return self._stage(f"walk:{kg}", inputs, build, ["walks.txt"])

    def embed(self, kg: str, walk_art):
        params = self.cfg.train
        snapshot = asdict(params)
        if params.deterministic:
            snapshot.pop("workers")
        inputs = {"walks": walk_art["walks.txt"][1], "params": snapshot}

        def build(work: Path):
            space = train(read_corpus(walk_art["walks.txt"][0], kg), params)
            space.save(work / "vectors.vec")
            (work / "loss.json").write_text(json.dumps(space.loss_history))

        return self._stage(f"embed:{kg}", inputs, build, ["vectors.vec", "loss.json"],
                           {"vectors.vec": f"embeddings/{kg}.vec"})

    def recommend(self, kg: str, embed_art, data_art):
        cfg = self.cfg
        inputs = {"embedding": embed_art["vectors.vec"][1], "data": data_art["data.pkl"][1], "n": cfg.n,
                  "neighbors": cfg.neighbors}

        def build(work: Path):
            data = _load_pickle(data_art["data.pkl"][0])
            space = EmbeddingSpace.load(embed_art["vectors.vec"][0], kg)
            idx = ItemVectorIndex.from_embedding(space, data["alignment"], kg, data["dataset"].item_set)
            profiles = data["train"].profiles()
            recs = recommend_all(profiles, cfg.n, idx, cfg.neighbors or None)
            for u in profiles:
                leaked = set(recs[u.user_id].items) & set(u.items.tolist())
                if leaked:
                    raise AssertionError(f"user {u.user_id} was recommended training items {sorted(leaked)}")
            write_recommendations(recs, work / "recommendations.tsv")
            (work / "missing.json").write_text(json.dumps(idx.missing))

        return self._stage(f"recommend:{kg}", inputs, build, ["recommendations.tsv", "missing.json"],
                           {"recommendations.tsv": f"recommendations/{kg}.tsv"})

    def evaluate(self, rec_arts, data_art):
        cfg = self.cfg
        inputs = {"recs": {kg: a["recommendations.tsv"][1] for kg, a in rec_arts.items()},
                  "data": data_art["data.pkl"][1], "threshold": cfg.split.threshold, "n": cfg.n}

        def build(work: Path):
            test = _load_pickle(data_art["data.pkl"][0])["test"]
            reports = [precision_recall_f1(read_recommendations(a["recommendations.tsv"][0]), test,
                                           cfg.split.threshold, cfg.n, kg)
                       for kg, a in rec_arts.items()]
            performance_table(reports).write_csv(work / "eval.csv")

        return self._stage("eval", inputs, build, ["eval.csv"], {"eval.csv": "eval.csv"})

    def bias(self, feature: str, rec_arts, data_art):
        cfg = self.cfg
        inputs = {"recs": {kg: a["recommendations.tsv"][1] for kg, a in rec_arts.items()},
                  "data": data_art["data.pkl"][1], "top": cfg.top, "alpha": cfg.alpha, "expected": cfg.expected}

        def build(work: Path):
            data = _load_pickle(data_art["data.pkl"][0])
            dataset = data["dataset"]
            f = CategoricalFeature.from_dataset(dataset, feature, cfg.top)
            weights = None
            if cfg.expected == "ratings":
                items, counts = np.unique(dataset.items, return_counts=True)
                weights = dict(zip(items.tolist(), counts.tolist()))
            recs = {kg: read_recommendations(a["recommendations.tsv"][0]) for kg, a in rec_arts.items()}
            report = bias_report(recs, f, sorted(dataset.item_set), cfg.alpha, weights)
            bias_table(report).write_csv(work / "bias.csv")
            report.write_json(work / "bias.json")

        return self._stage(f"bias:{feature}", inputs, build, ["bias.csv", "bias.json"],
                           {"bias.csv": f"bias_{feature}.csv", "bias.json": f"bias_{feature}.json"})

    def genre_grid(self, embed_arts, data_art):
        cfg = self.cfg
        inputs = {"embeddings": {kg: a["vectors.vec"][1] for kg, a in embed_arts.items()},
                  "data": data_art["data.pkl"][1], "genres": cfg.genre_grid, "n": cfg.n,
                  "neighbors": cfg.neighbors, "threshold": cfg.split.threshold}

        def build(work: Path):
            data = _load_pickle(data_art["data.pkl"][0])
            grid: dict[str, dict[str, float]] = {}
            for genre in cfg.genre_grid:
                train_part = genre_partition(data["train"], genre)
                test_part = genre_partition(data["test"], genre)
                items = sorted(i for i, m in data["dataset"].meta.items() if genre in m.genres)
                grid[genre] = {}
                for kg, art in embed_arts.items():
                    space = EmbeddingSpace.load(art["vectors.vec"][0], kg)
                    idx = ItemVectorIndex.from_embedding(space, data["alignment"], kg, items)
                    recs = recommend_all(train_part.profiles(), cfg.n, idx, cfg.neighbors or None)
                    grid[genre][kg] = precision_recall_f1(recs, test_part, cfg.split.threshold, cfg.n, kg).f1
            genre_table(grid).write_csv(work / "genre_f1.csv")

        return self._stage("genre", inputs, build, ["genre_f1.csv"], {"genre_f1.csv": "genre_f1.csv"})

    # -- driver -----------------------------------------------------------

    def run(self, until: str = "genre") -> dict:
        if until not in STAGES:
            raise ValueError(f"unknown stage {until!r}")
        stop = STAGES.index(until)
        cfg = self.cfg
        self.out.mkdir(parents=True, exist_ok=True)
        previous = _read_manifest(self.out)
        if cfg.cache == "off":
            self._scratch = tempfile.TemporaryDirectory(prefix="kgrecbias-")
        try:
            self._run(stop)
        finally:
            if self._scratch is not None:
                self._scratch.cleanup()
                self._scratch = None
        if previous:
            for rel in previous.get("artifacts", {}):
                if rel not in self.published and (self.out / rel).is_file():
                    (self.out / rel).unlink()
        manifest = {
            "tool_version": __version__,
            "config_hash": _key(cfg.as_dict()),
            "deterministic": cfg.deterministic,
            "seeds": {"walk": cfg.walk_seed, "embed": cfg.train.seed, "split": cfg.split.seed},
            "until": until,
            "stages": self.records,
            "artifacts": dict(sorted(self.published.items())),
            **self.extra,
        }
        write_manifest(self.out, manifest)
        return manifest

    def _run(self, stop: int):
        cfg = self.cfg
        kgs = list(cfg.kgs)
        need_data = stop >= STAGES.index("recommend") or (stop >= STAGES.index("walk") and cfg.walk_scope == "items")
        data_art = self.data() if need_data else None
        if data_art is not None:
            self.extra["filter_report"] = json.loads(data_art["filter_report.json"][0].read_text())

        def chain(kg):
            arts = {"ingest": self.ingest(kg)}
            if stop >= STAGES.index("walk"):
                arts["walk"] = self.walk(kg, arts["ingest"], data_art)
            if stop >= STAGES.index("embed"):
                arts["embed"] = self.embed(kg, arts["walk"])
            if stop >= STAGES.index("recommend"):
                arts["recommend"] = self.recommend(kg, arts["embed"], data_art)
            return arts

        if cfg.threads > 1 and len(kgs) > 1:
            with ThreadPoolExecutor(min(cfg.threads, len(kgs))) as pool:
                per_kg = dict(zip(kgs, pool.map(chain, kgs)))
        else:
            per_kg = {kg: chain(kg) for kg in kgs}

        if stop >= STAGES.index("eval"):
            rec_arts = {kg: per_kg[kg]["recommend"] for kg in kgs}
            self.evaluate(rec_arts, data_art)
        if stop >= STAGES.index("bias"):
            for feature in cfg.features:
                self.bias(feature, rec_arts, data_art)
        if stop >= STAGES.index("genre") and cfg.genre_grid:
            self.genre_grid({kg: per_kg[kg]["embed"] for kg in kgs}, data_art)


def _load_pickle(path):
    with open(path, "rb") as fh:
        return pickle.load(fh)


def _read_manifest(out: Path) -> dict | None:
    path = out / MANIFEST
    if not path.is_file():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def write_manifest(out: Path, manifest: dict) -> None:
    (Path(out) / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(out) -> dict:
    manifest = _read_manifest(Path(out))
    if manifest is None:
        raise FileNotFoundError(f"no {MANIFEST} in {out}")
    return manifest


def run_pipeline(cfg: ExperimentConfig, until: str = "genre") -> dict:
    return Pipeline(cfg).run(until)


_TABLES = {
    "eval.csv": ("performance", "column", [0, 1, 2]),
    "genre_f1.csv": ("genre_f1", "row", None),
}


def emit_tables(out) -> dict:
    """Render every report CSV listed in the manifest as ``tables/<name>.{csv,txt}``.

    Updates the manifest with the rendered files and returns it.
    """
    out = Path(out)
    manifest = load_manifest(out)
    artifacts = manifest.get("artifacts", {})
    for rel in list(artifacts):
        if rel.startswith("tables/"):
            artifacts.pop(rel)
    sources = [rel for rel in artifacts if rel in _TABLES or (rel.startswith("bias_") and rel.endswith(".csv"))]
    if "eval.csv" not in sources:
        raise ReportError("manifest lists no eval.csv; run the pipeline first")
    for rel in artifacts:
        path = out / rel
        if not path.is_file() or sha256_file(path) != artifacts[rel]:
            raise ReportError(f"artifact {rel} is missing or differs from the manifest")
    (out / "tables").mkdir(exist_ok=True)
    for rel in sorted(sources):
        name, mark, cols = _TABLES.get(rel, (rel[:-4], "row", None))
        table = Table.read_csv(out / rel, name)
        if mark == "row" and rel.startswith("bias_"):
            cols = list(range(len(table.columns) - 2))  # exclude c_e from the marker
        text = table.render_text(mark, columns=cols)
        for suffix, content in ((".csv", table.to_csv()), (".txt", text)):
            target = out / "tables" / f"{name}{suffix}"
            target.write_text(content, encoding="utf-8")
            artifacts[f"tables/{name}{suffix}"] = sha256_file(target)
    manifest["artifacts"] = dict(sorted(artifacts.items()))
    write_manifest(out, manifest)
    return manifest
