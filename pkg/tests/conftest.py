import numpy as np
import pytest

from saga.embeddings import DatasetIndex, default_spec, split_dataset, synth_generate
from saga.tensor import set_precision


@pytest.fixture(autouse=True)
def _reset_precision():
    set_precision("f32")
    yield
    set_precision("f32")


@pytest.fixture(scope="session")
def small_spec():
    return default_spec(videos_per_class=24, seed=3)


@pytest.fixture(scope="session")
def small_index(small_spec):
    store, manifest = synth_generate(small_spec)
    index = DatasetIndex.build(store, manifest)
    return split_dataset(index, (0.5, 0.25, 0.25), seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one PASS/FAIL line per criterion in the terminal summary
_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number n")


@pytest.fixture
def detail():
    """Tests append human-readable measurements here; they show up in the summary line."""
    return []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    notes = getattr(item, "funcargs", {}).get("detail") or []
    line = "; ".join(notes)
    if rep.failed and rep.when != "call":
        line = f"{rep.when} error"
    _ACCEPTANCE[marker.args[0]] = (rep.passed, line)
    print(f"\nACCEPTANCE {marker.args[0]}: {'PASS' if rep.passed else 'FAIL'} {line}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, line = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {line}")
