import json
from pathlib import Path

import pytest

from kgrecbias.cli import main
from kgrecbias.config import ConfigError, validate_config
from kgrecbias.pipeline import StageError, emit_tables, load_manifest, run_pipeline, sha256_file
from kgrecbias.reports import ReportError, Table, genre_table, performance_table
from kgrecbias.evalkit import EvalReport


def executed(manifest):
    return {sid for sid, rec in manifest["stages"].items() if rec["executed"]}


def rewrite(cfg_path: Path, section: str, key: str, value: str):
    lines = cfg_path.read_text().splitlines()
    out, current, done = [], None, False
    for line in lines:
        if line.startswith("["):
            if current == section and not done:
                out.append(f"{key} = {value}")
                done = True
            current = line.strip("[]")
        elif current == section and line.split(" = ")[0] == key:
            line, done = f"{key} = {value}", True
        out.append(line)
    if not done:
        out += [f"[{section}]", f"{key} = {value}"]
    cfg_path.write_text("\n".join(out) + "\n")


def minimal_config(tmp_path, extra=""):
    for name in ("a.nt", "b.nt", "links.tsv", "ratings.dat", "movies.dat"):
        (tmp_path / name).write_text("")
    path = tmp_path / "exp.ini"
    path.write_text(
        "[kgs]\nen = a.nt\nde = b.nt\n\n[data]\nlinks = links.tsv\nratings = ratings.dat\nitems = movies.dat\n"
        + extra
    )
    return path


def test_minimal_config(tmp_path):
    cfg = validate_config(minimal_config(tmp_path))
    assert sorted(cfg.kgs) == ["de", "en"]
    assert cfg.walks_per_entity == 500 and cfg.depth == 4 and cfg.n == 10
    assert cfg.train.dimension == 200 and cfg.split.threshold == 4
    assert cfg.links == tmp_path / "links.tsv"
    assert cfg.countries is None


def test_config_field_errors(tmp_path):
    with pytest.raises(ConfigError, match="walk.walks_per_entity"):
        validate_config(minimal_config(tmp_path, "[walk]\nwalks_per_entity = 0\n"))
    with pytest.raises(ConfigError, match="unknown key walk.walk_per_entity"):
        validate_config(minimal_config(tmp_path, "[walk]\nwalk_per_entity = 10\n"))
    with pytest.raises(ConfigError, match="unknown section"):
        validate_config(minimal_config(tmp_path, "[walks]\ndepth = 3\n"))


def test_config_reports_every_problem(tmp_path):
    path = minimal_config(tmp_path, "[walk]\ndepth = 0\n[embed]\ndimension = x\n[run]\nthreads = 0\n")
    (tmp_path / "b.nt").unlink()
    with pytest.raises(ConfigError) as err:
        validate_config(path)
    text = "\n".join(err.value.problems)
    for part in ("walk.depth", "embed.dimension", "run.threads", "b.nt"):
        assert part in text
    assert len(err.value.problems) == 4


def test_bias_needs_two_kgs(tmp_path):
    path = minimal_config(tmp_path)
    path.write_text(path.read_text().replace("de = b.nt\n", ""))
    with pytest.raises(ConfigError, match="two knowledge graphs"):
        validate_config(path)
    assert validate_config(path, {"bias.features": ""}).features == []


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        validate_config(tmp_path / "nope.ini")


def test_exact_output_set(small_experiment):
    out = small_experiment.parent / "out"
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
    assert files == [
        "bias_country.csv", "bias_country.json", "bias_genre.csv", "bias_genre.json",
        "embeddings/xa.vec", "embeddings/xb.vec", "eval.csv", "manifest.json",
        "recommendations/xa.tsv", "recommendations/xb.tsv",
    ]


def test_manifest_complete(small_experiment):
    out = small_experiment.parent / "out"
    manifest = load_manifest(out)
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(manifest["artifacts"]) == on_disk
    assert all(sha256_file(out / rel) == d for rel, d in manifest["artifacts"].items())
    assert manifest["seeds"] == {"walk": 11, "embed": 3, "split": 5}
    assert manifest["deterministic"] is True
    assert [s["stage"] for s in manifest["filter_report"]][-1] == "unrated_removed"


def test_warm_cache_does_no_work(experiment):
    first = run_pipeline(validate_config(experiment))
    second = run_pipeline(validate_config(experiment))
    assert executed(first) == executed(second) == set()
    assert first["artifacts"] == second["artifacts"]


def test_cache_off_and_refresh_reexecute(experiment):
    base = run_pipeline(validate_config(experiment))
    refreshed = run_pipeline(validate_config(experiment, {"output.cache": "refresh"}))
    assert executed(refreshed) == set(refreshed["stages"])
    assert refreshed["artifacts"] == base["artifacts"]
    off = run_pipeline(validate_config(experiment, {"output.cache": "off", "output.dir": "out_off"}))
    assert executed(off) == set(off["stages"])
    assert off["artifacts"] == base["artifacts"]


DOWNSTREAM_OF_RECS = {"recommend:xa", "recommend:xb", "eval", "bias:genre", "bias:country"}


@pytest.mark.parametrize(
    "section, key, value, expected",
    [
        ("walk", "seed", "12", {"walk:xa", "walk:xb", "embed:xa", "embed:xb"} | DOWNSTREAM_OF_RECS),
        ("embed", "epochs", "1", {"embed:xa", "embed:xb"} | DOWNSTREAM_OF_RECS),
        ("recommend", "n", "4", DOWNSTREAM_OF_RECS),
        ("bias", "alpha", "0.01", {"bias:genre", "bias:country"}),
        ("split", "seed", "6", {"data"} | DOWNSTREAM_OF_RECS),
    ],
)
def test_dependency_matrix(experiment, section, key, value, expected):
    run_pipeline(validate_config(experiment))
    rewrite(experiment, section, key, value)
    assert executed(run_pipeline(validate_config(experiment))) == expected


def test_upstream_file_change_invalidates_one_chain(experiment):
    run_pipeline(validate_config(experiment))
    kg = experiment.parent / "xa.nt"
    kg.write_text(kg.read_text() + "<http://extra/a> <http://extra/p> <http://extra/b> .\n")
    assert executed(run_pipeline(validate_config(experiment))) == {
        "ingest:xa", "walk:xa", "embed:xa", "recommend:xa", "eval", "bias:genre", "bias:country"
    }


def test_stale_outputs_removed(experiment):
    run_pipeline(validate_config(experiment))
    out = experiment.parent / "out"
    assert (out / "bias_country.csv").is_file()
    run_pipeline(validate_config(experiment, {"bias.features": "genre"}))
    assert not (out / "bias_country.csv").exists()
    assert (out / "bias_genre.csv").is_file()


def test_until_stops_early(experiment):
    m = run_pipeline(validate_config(experiment, {"output.dir": "partial"}), "walk")
    assert set(m["stages"]) == {"ingest:xa", "ingest:xb", "walk:xa", "walk:xb"}
    assert m["artifacts"] == {}


def test_threads_do_not_change_outputs(experiment):
    base = run_pipeline(validate_config(experiment))
    threaded = run_pipeline(validate_config(experiment, {"run.threads": "3", "output.cache": "off",
                                                         "output.dir": "out3"}))
    assert executed(threaded) == set(threaded["stages"])
    assert threaded["artifacts"] == base["artifacts"]


def test_stage_failure_names_stage_and_keeps_partial(experiment):
    (experiment.parent / "xb.nt").write_text("garbage line\n")
    cfg = validate_config(experiment, {"run.strict_parse": "true"})
    with pytest.raises(StageError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "ingest" and err.value.kg == "xb"
    assert list((experiment.parent / "cache" / "ingest").glob("xb-*.failed"))


def test_genre_grid(experiment):
    m = run_pipeline(validate_config(experiment, {"bias.genre_grid": "Western, Musical"}))
    assert "genre_f1.csv" in m["artifacts"]
    table = Table.read_csv(experiment.parent / "out" / "genre_f1.csv")
    assert [r[0] for r in table.rows] == ["Western", "Musical"] and table.columns == ["genre", "xa", "xb"]


def test_emit_tables(experiment):
    run_pipeline(validate_config(experiment))
    out = experiment.parent / "out"
    manifest = emit_tables(out)
    for name in ("performance", "bias_genre", "bias_country"):
        assert (out / "tables" / f"{name}.txt").is_file()
        assert f"tables/{name}.csv" in manifest["artifacts"]
    assert Table.read_csv(out / "tables" / "performance.csv").to_csv() == (out / "eval.csv").read_text()
    (out / "eval.csv").write_text("tampered\n")
    with pytest.raises(ReportError, match="eval.csv"):
        emit_tables(out)


def test_max_marker():
    table = performance_table([EvalReport("de", 0.1, 0.1, 0.047, 10, 5), EvalReport("fr", 0.1, 0.1, 0.044, 10, 5)])
    lines = table.render_text(mark="column", columns=[2]).splitlines()
    de = next(l for l in lines if l.startswith("de"))
    fr = next(l for l in lines if l.startswith("fr"))
    assert "0.047*" in de and "*" not in fr
    row = genre_table({"Drama": {"de": 0.047, "fr": 0.044}}).render_text(mark="row")
    assert "0.047*" in row and "0.044*" not in row


def test_empty_tables_error():
    with pytest.raises(ReportError):
        genre_table({})
    with pytest.raises(ReportError):
        Table("t", ["a", "b"], []).render_text()


def test_csv_roundtrip():
    t = Table("t", ["kg", "p", "n"], [("de", [0.1 + 0.2, 10]), ("fr", [1e-17, 3])])
    back = Table.from_csv(t.to_csv(), "t")
    assert back == t


def test_cli_exit_codes(experiment, tmp_path, caplog):
    assert main(["run", "--config", str(experiment), "--out", str(tmp_path / "cli_out")]) == 0
    assert (tmp_path / "cli_out" / "tables" / "performance.txt").is_file()
    assert main(["report", "--config", str(experiment), "--out", str(tmp_path / "cli_out")]) == 0
    assert main(["walk", "--config", str(experiment), "--out", str(tmp_path / "w"), "--threads", "2"]) == 0

    bad = tmp_path / "bad.ini"
    bad.write_text(experiment.read_text().replace("depth = 4", "depth = 0"))
    assert main(["run", "--config", str(bad)]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 3
    assert main(["report", "--config", str(experiment), "--out", str(tmp_path / "empty")]) == 3
    (experiment.parent / "xa.nt").write_text("not ntriples\n")
    strict = experiment.parent / "strict.ini"
    strict.write_text(experiment.read_text() + "\n[run]\nstrict_parse = true\n")
    assert main(["ingest", "--config", str(strict), "--out", str(tmp_path / "s")]) == 2


def test_cli_deterministic_flag(experiment):
    assert main(["embed", "--config", str(experiment), "--deterministic", "false", "--threads", "2"]) == 0
    m = load_manifest(experiment.parent / "out")
    assert m["deterministic"] is False
    with pytest.raises(SystemExit):
        main(["embed", "--config", str(experiment), "--deterministic", "maybe"])
