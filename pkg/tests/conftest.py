from pathlib import Path

import pytest

from synthgrad.config import ExperimentConfig

FIXTURES = Path(__file__).parent / "fixtures"

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    entry = _criteria.setdefault(number, {"outcome": "passed", "details": [], "title": ""})
    entry["title"] = dict(report.user_properties).get("title", entry["title"])
    for key, value in report.user_properties:
        if key == "detail" and value not in entry["details"]:
            entry["details"].append(value)
    if report.failed:
        entry["outcome"] = "failed"
    elif report.skipped and report.when == "setup":
        entry["outcome"] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        tag = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[e["outcome"]]
        line = f"[{tag}] criterion {number}: {e['title']}"
        if e["details"]:
            line += " -- " + "; ".join(e["details"])
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    record_property("criterion", marker.args[0])
    record_property("title", marker.args[1])

    def detail(text):
        record_property("detail", text)

    return detail


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


def tiny_config_values() -> dict:
    return dict(
        method="bptt", layers=2, hidden=12, embed=8, bptt=8, batch=4, epochs=6,
        lr=3e-3, dni_lr=1e-4, dni_hidden=6, seed=7, ckpt_every=5,
        train=str(FIXTURES / "tiny_train.txt"),
        valid=str(FIXTURES / "tiny_valid.txt"),
        test=str(FIXTURES / "tiny_test.txt"),
    )


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """Small model on the ~3 KB fixture corpus; a few seconds per run."""
    return ExperimentConfig(**tiny_config_values())
