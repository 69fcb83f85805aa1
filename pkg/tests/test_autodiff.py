import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuitpinn import autodiff as ad
from circuitpinn.errors import DomainError, NonFiniteError


def central(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


class TestDual:
    def test_lift_has_zero_tangent(self):
        assert ad.lift(3.0).tangent == 0.0

    def test_seed_has_unit_tangent(self):
        assert ad.seed_input(0.5).tangent == 1.0

    def test_product_rule(self):
        assert (ad.lift(2.0) * ad.seed_input(3.0)).tangent == 2.0

    def test_tanh_at_zero(self):
        y = ad.tanh(ad.seed_input(0.0))
        assert y.value == 0.0
        assert y.tangent == 1.0

    def test_quotient(self):
        y = ad.seed_input(2.0) / ad.lift(4.0) + 1.0 / ad.seed_input(2.0)
        assert y.tangent == pytest.approx(0.25 - 0.25)


class TestPrimitives:
    @pytest.mark.parametrize("x", [-3.0, 0.0, 3.0])
    def test_softplus_identity(self, x):
        assert ad.softplus(x) - ad.softplus(-x) == pytest.approx(x, abs=1e-12)

    def test_softplus_no_overflow(self):
        assert ad.softplus(1000.0) == 1000.0
        assert ad.softplus(-1000.0) == 0.0

    def test_x_tanh_x2_matches_finite_difference(self):
        f = lambda x: x * ad.tanh(x * x)
        exact = f(ad.seed_input(0.7)).tangent
        assert exact == pytest.approx(central(f, 0.7), rel=1e-6)

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ad.log(0.0)
        tape = ad.Tape()
        with pytest.raises(DomainError):
            ad.log(tape.var(-1.0))

    def test_clamp_min_gradient(self):
        tape = ad.Tape()
        x = tape.var(np.array([-1.0, 2.0]))
        y = ad.total(ad.clamp_min(x, 0.5))
        g = tape.backward(y)
        np.testing.assert_array_equal(g[x], [0.0, 1.0])

    def test_select_routes_gradient(self):
        tape = ad.Tape()
        a = tape.var(np.array([1.0, 2.0, 3.0]))
        b = tape.var(np.array([10.0, 20.0, 30.0]))
        y = ad.total(ad.select(np.array([True, False, True]), a * 2.0, b * 3.0))
        g = tape.backward(y)
        np.testing.assert_array_equal(g[a], [2.0, 0.0, 2.0])
        np.testing.assert_array_equal(g[b], [0.0, 3.0, 0.0])


class TestTape:
    def test_square_adjoint(self):
        tape = ad.Tape()
        x = tape.var(3.0)
        g = tape.backward(x * x)
        assert g[x] == 6.0

    def test_reset_and_reuse(self):
        tape = ad.Tape()
        x = tape.var(3.0)
        assert tape.backward(ad.exp(x))[x] == pytest.approx(math.exp(3.0))
        tape.reset()
        assert len(tape) == 0
        y = tape.var(2.0)
        assert tape.backward(ad.tanh(y))[y] == pytest.approx(1 - math.tanh(2.0) ** 2)

    def test_length_is_linear_in_operations(self):
        tape = ad.Tape()
        x = tape.var(0.1)
        acc = x
        for _ in range(50):
            acc = ad.tanh(acc * 1.1 + x)
        # leaf + 3 nodes per iteration
        assert len(tape) == 1 + 3 * 50

    def test_nonfinite_reports_first_node(self):
        tape = ad.Tape()
        x = tape.var(1.0)
        y = x / 0.0 if False else x * float("inf")
        z = y - y
        with pytest.raises(NonFiniteError) as info:
            tape.backward(z)
        assert info.value.node == 1

    def test_scalar_operand_adjoint_is_summed_over_batch(self):
        tape = ad.Tape()
        w = tape.var(2.0)
        t = np.array([1.0, 2.0, 3.0])
        y = ad.total(w * t)
        assert tape.backward(y)[w] == pytest.approx(6.0)

    def test_forward_over_reverse_simple(self):
        # d/dw of (d/dt tanh(w t + b))^2
        def composite(w, b, t):
            tape = ad.Tape()
            wv, bv = tape.var(w), tape.var(b)
            y = ad.tanh(wv * ad.seed_input(t) + bv)
            root = ad.square(y.tangent)
            return root, tape.backward(root)[wv]

        w, b, t = 0.8, -0.3, 0.6
        _, gw = composite(w, b, t)
        fd = central(lambda ww: composite(ww, b, t)[0].value, w)
        assert gw == pytest.approx(fd, rel=1e-6)

    def test_deterministic_gradients(self):
        def run():
            tape = ad.Tape()
            x = tape.var(np.linspace(-1, 1, 7))
            y = ad.total(ad.softplus(x * 3.0) * ad.tanh(x) / (1.0 + ad.square(x)))
            return tape.backward(y)[x]

        np.testing.assert_array_equal(run(), run())


finite = st.floats(-2.0, 2.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(finite, finite)
def test_mixed_primitives_match_finite_difference(x, y):
    def f(a, b):
        return ad.tanh(a * b) + ad.softplus(a - 2.0 * b) * ad.exp(0.3 * b) + ad.square(a) / (2.0 + ad.square(b))

    tape = ad.Tape()
    xv, yv = tape.var(x), tape.var(y)
    g = tape.backward(f(xv, yv))
    fx = central(lambda s: f(s, y), x)
    fy = central(lambda s: f(x, s), y)
    assert g[xv] == pytest.approx(fx, rel=1e-6, abs=1e-8)
    assert g[yv] == pytest.approx(fy, rel=1e-6, abs=1e-8)
