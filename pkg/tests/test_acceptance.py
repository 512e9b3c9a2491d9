"""The fixed-seed acceptance matrix, one test per criterion.

Each row prints a ``[PASS]``/``[FAIL]`` line with its measured value and
tolerance; the last test checks the five-minute wall-clock budget.
"""

import pytest

from jkoflow.verify import ROWS, run_row

_results = {}


@pytest.mark.parametrize("row", ROWS, ids=[f"{r.criterion:02d}_{r.name}" for r in ROWS])
def test_criterion(row, capsys):
    result = run_row(row)
    _results[row.name] = result
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.detail


def test_total_budget(capsys):
    if len(_results) != len(ROWS):
        pytest.skip("budget is only meaningful after the full matrix ran")
    total = sum(r.seconds for r in _results.values())
    with capsys.disabled():
        passed = sum(r.passed for r in _results.values())
        print(f"\n{passed}/{len(ROWS)} criteria passed in {total:.1f}s (budget 300s)")
    assert total <= 300.0
