from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import pytest

from savime.catalog import Catalog
from savime.storage import DatasetStore, StorageConfig

CRITERIA = {
    1: "zero-conversion ingestion",
    2: "exact window query",
    3: "dense window scan efficiency",
    4: "sparse full-scan model",
    5: "oracle equivalence suite",
    6: "refcount correctness",
    7: "model invariants suite",
    8: "VTK export",
    9: "protocol robustness",
}

_outcomes: dict[int, list[tuple[str, str, list]]] = defaultdict(list)


@pytest.fixture
def store(tmp_path: Path) -> DatasetStore:
    return DatasetStore(StorageConfig(tmp_path / "data", tmp_path / "tmp"))


@pytest.fixture
def catalog(store: DatasetStore) -> Catalog:
    return Catalog(store)


@pytest.fixture
def make_catalog(tmp_path: Path):
    """Factory for independent catalogs inside one test."""
    counter = iter(range(1 << 30))

    def make() -> Catalog:
        k = next(counter)
        return Catalog(DatasetStore(StorageConfig(tmp_path / f"data{k}", tmp_path / f"tmp{k}")))

    return make


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    criterion = marker.kwargs["criterion"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _outcomes[criterion].append((item.name, status, list(item.user_properties)))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        runs = _outcomes.get(n)
        if not runs:
            tr.write_line(f"criterion {n} ({CRITERIA[n]}): NOT RUN")
            continue
        status = "PASS" if all(s == "PASS" for _, s, _ in runs) else "FAIL"
        details = "; ".join(f"{k}={v}" for _, _, props in runs for k, v in props)
        tr.write_line(f"criterion {n} ({CRITERIA[n]}): {status}" + (f" [{details}]" if details else ""))
