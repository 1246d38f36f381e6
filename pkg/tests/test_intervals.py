"""Sound interval arithmetic: worked examples plus property tests."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridinfeas import intervals

finite = st.floats(min_value=-1e6, max_value=1e6,
                   allow_nan=False, allow_infinity=False)


def interval():
    return st.tuples(finite, finite).map(lambda t: (min(t), max(t)))


class TestWorkedExamples:
    def test_voltage_square_straddling_imaginary_axis(self):
        # Vr in [0.9, 1.1], Vi in [-0.1, 0.1]: the imaginary part straddles
        # zero, so its square's lower bound is 0, not 0.01
        r_lo, r_hi = intervals.square(0.9, 1.1)
        i_lo, i_hi = intervals.square(-0.1, 0.1)
        assert (r_lo + i_lo, r_hi + i_hi) == pytest.approx((0.81, 1.22))

    def test_conductance_from_active_power(self):
        lo, hi = intervals.divide_scalar(1.0, 0.81, 1.21)
        assert (lo, hi) == pytest.approx((1 / 1.21, 1 / 0.81))
        assert (float(lo), float(hi)) == pytest.approx((0.8264, 1.2346),
                                                       abs=1e-4)

    def test_susceptance_from_reactive_power(self):
        lo, hi = intervals.divide_scalar(-0.5, 0.81, 1.21)
        assert (lo, hi) == pytest.approx((-0.5 / 0.81, -0.5 / 1.21))
        assert (float(lo), float(hi)) == pytest.approx((-0.6173, -0.4132),
                                                       abs=1e-4)

    def test_divide_by_interval_containing_zero_raises(self):
        with pytest.raises(ZeroDivisionError):
            intervals.divide_scalar(1.0, -0.5, 0.5)

    def test_intersect(self):
        lo, hi = intervals.intersect(0.5, 1.5, 0.64, 1.44)
        assert (lo, hi) == (0.64, 1.44)


class TestSoundness:
    @given(interval(), st.floats(0, 1))
    def test_square_contains_pointwise_square(self, box, frac):
        lo, hi = box
        x = lo + frac * (hi - lo)
        out_lo, out_hi = intervals.square(lo, hi)
        assert out_lo <= x * x * (1 + 1e-12) + 1e-12
        assert x * x <= out_hi * (1 + 1e-12) + 1e-12

    @given(interval(), interval(), st.floats(0, 1), st.floats(0, 1))
    def test_product_contains_pointwise_product(self, a, b, fa, fb):
        x = a[0] + fa * (a[1] - a[0])
        y = b[0] + fb * (b[1] - b[0])
        lo, hi = intervals.product(a[0], a[1], b[0], b[1])
        assert lo <= x * y + 1e-6 * max(1.0, abs(x * y))
        assert x * y <= hi + 1e-6 * max(1.0, abs(x * y))

    @given(st.floats(-1e3, 1e3), interval(), st.floats(0, 1))
    def test_division_contains_pointwise_quotient(self, a, box, frac):
        lo, hi = box
        if lo <= 0 <= hi:
            with pytest.raises(ZeroDivisionError):
                intervals.divide_scalar(a, lo, hi)
            return
        t = lo + frac * (hi - lo)
        t = min(max(t, lo), hi)
        out_lo, out_hi = intervals.divide_scalar(a, lo, hi)
        q = a / t
        assert out_lo <= q + 1e-9 * max(1.0, abs(q))
        assert q <= out_hi + 1e-9 * max(1.0, abs(q))

    @given(interval(), interval())
    def test_square_inclusion_isotonic(self, outer, inner):
        o_lo, o_hi = outer
        i_lo = max(o_lo, min(inner[0], o_hi))
        i_hi = min(o_hi, max(inner[1], i_lo))
        so = intervals.square(o_lo, o_hi)
        si = intervals.square(i_lo, i_hi)
        assert so[0] <= si[0] + 1e-12 and si[1] <= so[1] + 1e-12

    def test_square_vectorized(self):
        lo, hi = intervals.square(np.array([-1.0, 0.5]), np.array([1.0, 2.0]))
        assert lo.tolist() == [0.0, 0.25]
        assert hi.tolist() == [1.0, 4.0]
