import json
import re
import sys
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    m = re.search(r"test_c(\d+)_", report.nodeid)
    if not m or not (report.when == "call" or report.failed):
        return
    row = {"criterion": int(m.group(1)), "ok": False, "detail": f"{report.when} error"}
    for key, value in report.user_properties:
        if key == "acceptance":
            row = json.loads(value)
    _ACCEPTANCE.append(row | {"passed": report.passed})


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for row in sorted(_ACCEPTANCE, key=lambda r: r["criterion"]):
        verdict = "PASS" if row["ok"] and row["passed"] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {verdict} criterion {row['criterion']:>2}: {row['detail']}")
