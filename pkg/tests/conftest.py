import re
import sys
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "synthetic reproduction (accuracy, segments, importance)",
    2: "rank-row reproduction (+-0.01 vs published)",
    3: "significance reproduction (Nemenyi pair)",
    4: "gradient correctness (finite differences)",
    5: "loss oracle equivalence (1e-10)",
    6: "structural invariants",
    7: "archive spot check (user-supplied data)",
    8: "determinism (identical history CSVs)",
}

_results = defaultdict(set)


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::TestCriterion(\d+)", report.nodeid)
    if not match:
        return
    criterion = int(match.group(1))
    if report.when == "call":
        _results[criterion].add("failed" if report.failed else
                               "skipped" if report.skipped else "passed")
    elif report.when == "setup":
        if report.failed:
            _results[criterion].add("failed")
        elif report.skipped:
            _results[criterion].add("skipped")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for criterion in sorted(CRITERIA):
        outcomes = _results.get(criterion)
        if not outcomes:
            continue
        if "failed" in outcomes:
            verdict = "FAIL"
        elif outcomes == {"skipped"}:
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {criterion}: {verdict} - {CRITERIA[criterion]}")
