"""One test per acceptance criterion.  Each result line is printed and collected for the session summary."""

import pytest

from yamabe_gluing.verify import CHECKS


@pytest.mark.parametrize("k", sorted(CHECKS), ids=[f"{k:02d}-{CHECKS[k].__name__[6:]}" for k in sorted(CHECKS)])
def test_criterion(verify_context, acceptance_log, k):
    res = CHECKS[k](verify_context)
    print(res.line())
    acceptance_log.append(res.line())
    assert res.passed, res.line()
