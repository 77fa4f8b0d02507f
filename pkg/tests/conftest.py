import warnings

import numpy as np
import pytest

from l3ae import datasets, synth

# Lines recorded by the acceptance tests, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    def record(number, description, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {description}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line
    return record


SMALL = synth.SynthConfig(users=300, items=120, clusters=4, dim=16, min_activity=12,
                          max_activity=25, seed=3)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A 300 x 120 clustered dataset written to disk, with its paths."""
    data = synth.generate(SMALL)
    paths = synth.write(data, tmp_path_factory.mktemp("synth"))
    return data, paths


@pytest.fixture(scope="session")
def small_split(small_synth):
    _, paths = small_synth
    bundle, stats = datasets.prepare(paths["interactions"], k=10, seed=0)
    return bundle, stats


@pytest.fixture(scope="session")
def small_embeddings(small_synth, small_split):
    _, paths = small_synth
    return datasets.load_embeddings(paths["embeddings"], item_ids=small_split[0].item_ids)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield
