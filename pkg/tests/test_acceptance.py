"""Acceptance criteria at their stated tolerances, one pass/fail line each.

Criteria 1 and 10 are known to fail on this discretization; they are marked
as strict expected failures so the suite flags it if they start passing.
"""
import pytest

from mvsetlab.acceptance import CRITERIA, Context

KNOWN_RED = {
    1: "member-set volume carries a first-order deficit along the free boundary",
    10: "lumped-mass torsion exceeds the barrier value by about 5e-10",
}


@pytest.fixture(scope="module")
def ctx():
    return Context(h=0.01)


def _params():
    for k in sorted(CRITERIA):
        marks = [pytest.mark.slow]
        if k in KNOWN_RED:
            marks.append(pytest.mark.xfail(reason=KNOWN_RED[k], strict=True))
        yield pytest.param(k, marks=marks, id=f"criterion_{k:02d}")


@pytest.mark.parametrize("number", list(_params()))
def test_criterion(number, ctx, acceptance_lines):
    res = CRITERIA[number](ctx)
    line = res.line()
    acceptance_lines.append(line)
    print(line)
    assert res.passed, line
