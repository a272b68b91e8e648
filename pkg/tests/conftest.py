import shutil

import numpy as np
import pytest

from crowdroute import pipeline
from crowdroute.extract import default_lexicon
from crowdroute.fixture import CityConfig, generate_city, write_city

CITY_SEED = 7


@pytest.fixture(scope="session")
def city():
    return generate_city(CityConfig(seed=CITY_SEED))


@pytest.fixture(scope="session")
def city_dir(tmp_path_factory, city):
    lex = default_lexicon()
    out = tmp_path_factory.mktemp("city")
    write_city(city, out, CITY_SEED, list(lex.relations), sorted(lex.verbs))
    return out


def city_config(city_dir, output, **overrides):
    manifest = pipeline.load_manifest(city_dir / "pipeline.toml")
    manifest["paths"]["output"] = output
    return pipeline.build_config(manifest, **overrides)


@pytest.fixture(scope="session")
def built_city(city_dir, tmp_path_factory):
    """The seed-7 city with every stage up to enrichment run once."""
    cfg = city_config(city_dir, tmp_path_factory.mktemp("run"))
    for stage in (pipeline.run_extract, pipeline.run_features, pipeline.run_train,
                  pipeline.run_score, pipeline.run_enrich):
        stage(cfg)
    return cfg


@pytest.fixture(scope="session")
def bimodal():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, (500, 2))
    b = rng.normal(10.0, 1.0, (500, 2))
    return np.vstack([a, b]), a, b


@pytest.fixture
def scratch(tmp_path):
    yield tmp_path
    shutil.rmtree(tmp_path, ignore_errors=True)


# --- acceptance reporting -------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, title = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}")
