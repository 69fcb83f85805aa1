import math

import numpy as np
import pytest

from circuitpinn.cli import case_text
from circuitpinn.errors import ConfigError, ConvergenceError
from circuitpinn.netlist import parse
from circuitpinn.refsolver import NewtonStats, StepConfig, dc_operating_point, small_signal_swing, transient
from circuitpinn.system import build_system

RC_STEP = "v1 in 0 dc 1\nr1 in out 1k\nc1 out 0 1u ic=0\n.tran 5m\n"
FE_LINE = "f1 fe 0 alpha=-2e8 beta=2.5e9 gamma=0 rho=50 area=1e-12 thick=10n p0={p0}\n"


def rc_error(method: str, n_steps: int) -> float:
    s = build_system(parse(RC_STEP))
    w = transient(s, StepConfig(method=method, dt=5e-3 / n_steps))
    exact = 1 - np.exp(-w.times / 1e-3)
    return float(np.max(np.abs(w["v(out)"] - exact)))


def rising_crossings(times, v, level):
    idx = np.flatnonzero((v[:-1] < level) & (v[1:] >= level))
    frac = (level - v[idx]) / (v[idx + 1] - v[idx])
    return times[idx] + frac * (times[idx + 1] - times[idx])


class TestOperatingPoint:
    def test_divider(self):
        s = build_system(parse("v1 in 0 dc 5\nr1 in mid 1k\nr2 mid 0 1k\n.tran 1m"))
        u = dc_operating_point(s)
        assert u[s.names.index("v(mid)")] == pytest.approx(2.5, abs=1e-12)
        assert u[s.names.index("i(v1)")] == pytest.approx(-2.5e-3, abs=1e-15)

    def test_common_source_bisection_oracle(self):
        s = build_system(parse("vdd vdd 0 dc 5\nvg g 0 dc 1.5\nrd vdd d 10k\nm1 d g 0 type=nmos k=1m vth=1\n.tran 1u"))
        vd = dc_operating_point(s)[s.names.index("v(d)")]

        def mismatch(v):
            vov = 0.05 * math.log1p(math.exp((1.5 - 1.0) / 0.05))
            return (5 - v) / 1e4 - 0.5e-3 * vov * vov * math.tanh(2 * v / vov)

        lo, hi = 0.0, 5.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if mismatch(mid) > 0 else (lo, mid)
        assert vd == pytest.approx(0.5 * (lo + hi), abs=1e-9)
        assert 3.5 < vd < 4.0

    def test_held_initial_condition(self):
        s = build_system(parse("v1 in 0 dc 1\nr1 in out 1k\nc1 out 0 1u ic=0.25\n.tran 5m"))
        u = dc_operating_point(s)
        assert u[1] == 0.25
        assert u[2] == pytest.approx(-0.75e-3)

    def test_feram_at_rest_keeps_remanent_state(self):
        for p0 in (0.2, -0.2):
            text = "v1 in 0 dc 0\nr1 in fe 1k\n" + FE_LINE.format(p0=p0) + ".tran 1u\n"
            w = transient(build_system(parse(text)), StepConfig(dt=1e-8))
            np.testing.assert_allclose(w["p(f1)"], p0, atol=1e-12)


class TestSmallSignal:
    @pytest.mark.parametrize("freq", [100.0, 159.15494309189535, 5e3])
    def test_rc_lowpass_magnitude(self, freq):
        s = build_system(parse(f"v1 in 0 sin(0.5 0.2 {freq})\nr1 in out 1k\nc1 out 0 1u\n.tran 5m"))
        swing = dict(zip(s.names, small_signal_swing(s, dc_operating_point(s))))
        wrc = 2 * math.pi * freq * 1e-3
        assert swing["v(in)"] == pytest.approx(0.2, rel=1e-12)
        assert swing["v(out)"] == pytest.approx(0.2 / math.sqrt(1 + wrc**2), rel=1e-12)
        assert swing["i(v1)"] == pytest.approx(0.2 * wrc / math.sqrt(1 + wrc**2) / 1e3, rel=1e-12)

    def test_sources_add(self):
        text = "v1 a 0 sin(0 1 1k)\nr1 a b 1k\nr2 b c 1k\nv2 c 0 pulse(0 3 0 1u 1u 1m 2m)\n.tran 2m"
        s = build_system(parse(text))
        swing = dict(zip(s.names, small_signal_swing(s, dc_operating_point(s))))
        assert swing["v(b)"] == pytest.approx(0.5 * 1 + 0.5 * 3)

    def test_dc_only_circuit(self):
        s = build_system(parse(case_text("ringosc5")))
        np.testing.assert_array_equal(small_signal_swing(s, dc_operating_point(s)), 0.0)


class TestTransient:
    def test_rc_trapezoidal_accuracy(self):
        assert rc_error("trapezoidal", 2000) <= 0.002

    @pytest.mark.parametrize("method, lo, hi", [("backward_euler", 1.7, 2.3), ("trapezoidal", 3.4, 4.6)])
    def test_convergence_order(self, method, lo, hi):
        e1, e2, e3 = (rc_error(method, n) for n in (250, 500, 1000))
        assert lo <= e1 / e2 <= hi
        assert lo <= e2 / e3 <= hi

    def test_backward_euler_dissipates_energy(self):
        s = build_system(parse("v1 in 0 dc 0\nr1 in out 1k\nc1 out 0 1u ic=1\n.tran 5m"))
        w = transient(s, StepConfig(method="backward_euler", dt=1e-4))
        energy = 0.5 * 1e-6 * w["v(out)"] ** 2
        assert np.all(np.diff(energy) < 0)

    def test_stats_and_columns(self):
        s = build_system(parse(RC_STEP))
        stats = NewtonStats()
        w = transient(s, StepConfig(dt=5e-5), stats=stats)
        assert w.names == s.names
        assert len(w) == 101
        assert stats.solves == 100
        assert stats.max_iterations <= 2  # linear circuit: one Newton step

    def test_ring_oscillator_period_stable_under_refinement(self):
        s = build_system(parse(case_text("ringosc5")))
        periods = []
        for n in (2000, 4000):
            w = transient(s, StepConfig(dt=s.t_stop / n))
            z = rising_crossings(w.times, w["v(n1)"], 0.5)
            assert z.size >= 3
            periods.append(float(np.mean(np.diff(z))))
        assert periods[0] == pytest.approx(periods[1], rel=0.01)

    def test_quasi_static_switching_voltage(self):
        text = "v1 in 0 tri(-1 1 1m)\nr1 in fe 1k\n" + FE_LINE.format(p0=-0.2) + ".tran 1m\n"
        s = build_system(parse(text))
        w = transient(s, StepConfig(method="backward_euler", dt=1e-3 / 20000))
        v, p = w["v(fe)"], w["p(f1)"]
        up = v[np.flatnonzero((p[:-1] < 0) & (p[1:] >= 0))]
        down = v[np.flatnonzero((p[:-1] > 0) & (p[1:] <= 0))]
        assert up.size == 1 and down.size == 1
        assert up[0] == pytest.approx(0.308, rel=0.05)
        assert down[0] == pytest.approx(-0.308, rel=0.05)


class TestErrors:
    @pytest.mark.parametrize(
        "cfg",
        [
            StepConfig(method="rk4"),
            StepConfig(dt=0.0),
            StepConfig(newton_tol=0.0),
            StepConfig(newton_max_iter=0),
            StepConfig(damping=1.5),
        ],
    )
    def test_bad_config(self, cfg):
        with pytest.raises(ConfigError):
            transient(build_system(parse(RC_STEP)), cfg)

    def test_dt_larger_than_t_stop(self):
        with pytest.raises(ConfigError):
            transient(build_system(parse(RC_STEP)), StepConfig(dt=1.0))

    def test_newton_budget_exhausted(self):
        s = build_system(parse(case_text("amplifier")))
        with pytest.raises(ConvergenceError) as info:
            dc_operating_point(s, cfg=StepConfig(newton_max_iter=1, newton_tol=1e-14))
        assert info.value.step is None
        assert len(info.value.trace) >= 1
