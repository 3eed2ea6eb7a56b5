import numpy as np
import pytest

from fomvi.errors import NumericalFailure
from fomvi.roots import bracketed_root


class TestBracketedRoot:
    def test_cubic_batch(self):
        targets = np.array([-5.0, 0.1, 2.0, 7.5])
        r = bracketed_root(lambda x: x**3 - targets, -10.0 * np.ones(4), 10.0 * np.ones(4), xtol=1e-14)
        np.testing.assert_allclose(r, np.cbrt(targets), rtol=1e-12)

    def test_side_selection(self):
        f = lambda x: x - 0.3
        hi = bracketed_root(f, np.zeros(1), np.ones(1), side="hi", xtol=1e-6)
        lo = bracketed_root(f, np.zeros(1), np.ones(1), side="lo", xtol=1e-6)
        assert f(hi)[0] >= 0 and f(lo)[0] <= 0

    def test_endpoints_returned_when_sign_does_not_change(self):
        r = bracketed_root(lambda x: x + np.array([5.0, -5.0]), np.zeros(2), np.ones(2))
        np.testing.assert_array_equal(r, [0.0, 1.0])

    def test_failure_reports_bracket(self):
        with pytest.raises(NumericalFailure) as err:
            bracketed_root(lambda x: np.where(x < 0.3, -1.0, 1.0), np.zeros(1), np.ones(1), xtol=0.0,
                           max_iter=3)
        assert "lo" in err.value.state and "hi" in err.value.state
