"""Acceptance criteria 1-14; each test prints its checks and one PASS/FAIL line."""

import pytest

from rhfpt.validation import CRITERIA

_cache = {}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    checks = CRITERIA[number](_cache)
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"CRITERION {number} {'PASS' if ok else 'FAIL'}")
    failed = [c.line() for c in checks if not c.passed]
    assert not failed, "\n".join(failed)
