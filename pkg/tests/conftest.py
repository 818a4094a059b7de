import pytest

from greensteg import pipeline
from greensteg.model import RunConfig

TINY = RunConfig(n_trees=15, group_count=3, split_train=0.5, split_val=0.25, split_test=0.25)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """24 synthetic 40x40 HILL pairs written to disk, plus a small config."""
    out = tmp_path_factory.mktemp("tiny")
    covers = pipeline.synthetic_covers(24, 40, 11)
    pairs = pipeline.embed_pairs(covers, "hill", 0.4, 11)
    manifest = pipeline.write_dataset(pairs, str(out / "data"))
    cfg_path = out / "run.cfg"
    cfg_path.write_text(TINY.to_text())
    return {"dir": out, "manifest": manifest, "config": str(cfg_path), "pairs": pairs}


@pytest.fixture(scope="session")
def tiny_model(tiny_data):
    pairs = tiny_data["pairs"]
    return pipeline.fit(pairs[:12], pairs[12:18], TINY)


# -- acceptance summary ------------------------------------------------------

_CRITERIA = {}
MEASUREMENTS = []  # free-form lines shown under the criteria


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "ran": False})
    if call.when == "call" or call.excinfo is not None:
        entry["ran"] = True
        if call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception):
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {e['title']}")
    for line in MEASUREMENTS:
        terminalreporter.write_line(f"  {line}")
