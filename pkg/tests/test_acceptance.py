"""The eleven acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line, also when pytest captures output.
"""
import pytest

from blochfx.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = run_criterion(number)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.summary
