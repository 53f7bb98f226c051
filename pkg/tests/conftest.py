import shutil

import pytest

from kgrecbias.config import validate_config
from kgrecbias.pipeline import run_pipeline
from kgrecbias.synthetic import genre_bias_experiment, write_experiment

SMALL = {"walk.walks_per_entity": 20, "embed.dimension": 16, "embed.epochs": 2}


@pytest.fixture(scope="session")
def small_experiment(tmp_path_factory):
    """A two-KG synthetic experiment on disk with a warm stage cache."""
    root = tmp_path_factory.mktemp("small")
    exp = genre_bias_experiment(seed=7, n_items=100, n_communities=5, n_users=40)
    cfg_path = write_experiment(exp, root, SMALL)
    run_pipeline(validate_config(cfg_path))
    return cfg_path


@pytest.fixture
def experiment(small_experiment, tmp_path):
    """Private copy of the small experiment (inputs and warm cache) for tests that mutate it."""
    dest = tmp_path / "exp"
    shutil.copytree(small_experiment.parent, dest, ignore=shutil.ignore_patterns("out"))
    return dest / small_experiment.name


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
