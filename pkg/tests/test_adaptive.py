import math

import numpy as np
import pytest

from nudge3d.adaptive import (
    assumption_lhs,
    check_adaptive_assumption,
    plan_interval,
    run_adaptive,
    uniform_boundaries,
)
from nudge3d.dynamics import NudgeConfig, SolverConfig, integrate
from nudge3d.errors import ConfigurationError, SchedulingError
from nudge3d.interpolants import InterpolantSpec, apply_interpolant
from nudge3d.io import ObservationRecorder
from nudge3d.spectral import GridSpec, beltrami_field

NU = 0.1
SPEC = InterpolantSpec.modal(48.0)


def decaying_flow(grid, amp=0.0311):
    # amplitude chosen so the data term dominates the first interval's lower bound
    return beltrami_field(1, 1, 1, grid) * (NU * amp)


class TestAssumption:
    def test_trivial(self):
        ok, margin = check_adaptive_assumption(([0.0, 1.0], [0.0, 0.0]), 0.0, 1.0, 1.0, 4.0, 1.0)
        assert ok and margin == math.inf

    def test_passes_at_1024(self):
        assert assumption_lhs(1.0, 1.0, 1.0, 1.0, 1024.0) == pytest.approx(40 / 1024)
        ok, margin = check_adaptive_assumption(([0.0], [1.0]), 1.0, 1.0, 1.0, 1024.0, 1.0)
        assert ok and margin == pytest.approx((1 / 16) / (40 / 1024))

    def test_fails_at_512(self):
        ok, margin = check_adaptive_assumption(([0.0], [1.0]), 1.0, 1.0, 1.0, 512.0, 1.0)
        assert not ok and margin < 1


class TestPlan:
    def test_zero_data(self):
        p = plan_interval(0.0, [0.0, 0.0], 0.0, 1.0, 1.0, 64.0, 1.0)
        assert p.M == 0.0
        assert (p.lower, p.upper) == (1.0, 8.0)
        assert p.mu == pytest.approx(math.sqrt(8.0))

    def test_bound_arithmetic(self):
        # max{||w||^2, 4|f|^2/(nu^2 lambda1) + 2 M~^2} = max{2, 6}
        p = plan_interval(math.sqrt(2.0), [0.5, 1.0], 1.0, 1.0, 1.0, 10**6, 1.0)
        assert p.M**2 == pytest.approx(6.0)
        assert p.lower == pytest.approx(72.0)

    def test_endpoint_state_can_dominate(self):
        p = plan_interval(3.0, [1.0], 0.0, 1.0, 1.0, 10**6, 1.0)
        assert p.M**2 == pytest.approx(9.0)

    def test_upper_override(self):
        p = plan_interval(0.0, [0.0], 0.0, 1.0, 1.0, 64.0, 1.0, lambda_upper=128.0)
        assert p.upper == 16.0

    def test_empty_range(self):
        with pytest.raises(SchedulingError) as info:
            plan_interval(0.0, [10.0], 0.0, 1.0, 1.0, 64.0, 1.0, index=3)
        assert info.value.interval == 3

    def test_uniform_boundaries(self):
        assert uniform_boundaries(8.0, 4) == [0.0, 2.0, 4.0, 6.0, 8.0]


class TestRun:
    def test_single_interval_matches_constant_mu_bitwise(self, grid16):
        u0 = decaying_flow(grid16)
        cfg = SolverConfig(grid16, NU, 0.5, 10.0, "IF-RK4")
        mu = 0.3
        a = run_adaptive(cfg, SPEC, [0.0, 10.0], u0=u0, mus=[mu], strict=False)
        b = integrate(u0, cfg, NudgeConfig(mu, SPEC))
        assert np.array_equal(a.w.coeffs, b.w.coeffs)
        assert a.series.rows == b.series.rows

    def test_decaying_flow_lowers_mu(self, grid16):
        cfg = SolverConfig(grid16, NU, 0.5, 20.0, "IF-RK4")
        r = run_adaptive(cfg, SPEC, [0.0, 10.0, 20.0], u0=decaying_flow(grid16), strict=False)
        mu1, mu2 = r.schedule.mus
        assert mu2 <= mu1
        assert not r.report["h1_violations"]
        assert all(e["ok"] for e in r.report["envelope"])

    def test_turbulent_interval_gets_larger_mu(self, grid16):
        # synthetic record: quiet first interval, strong second one
        dt = 0.5
        cfg = SolverConfig(grid16, NU, dt, 20.0, "IF-RK4")
        base = apply_interpolant(SPEC, beltrami_field(1, 1, 1, grid16)).coeffs
        rec = ObservationRecorder(None, SPEC, grid16, dt)
        for i in range(41):
            t = i * dt
            rec.append(t, base * NU * (0.003 if t <= 10.0 else 0.0311))
        record = rec.close()
        r = run_adaptive(cfg, SPEC, [0.0, 10.0, 20.0], record=record, strict=False)
        mu1, mu2 = r.schedule.mus
        assert mu2 > mu1
        assert r.u is None and np.isnan(r.series["l2_err"]).all()

    def test_live_and_replay_agree(self, grid16):
        from nudge3d.io import record_observations

        u0 = decaying_flow(grid16)
        cfg = SolverConfig(grid16, NU, 0.5, 20.0, "IF-RK4")
        record, _ = record_observations(u0, cfg, SPEC, 0.5)
        live = run_adaptive(cfg, SPEC, [0.0, 10.0, 20.0], u0=u0, strict=False)
        replay = run_adaptive(cfg, SPEC, [0.0, 10.0, 20.0], record=record, strict=False)
        assert live.schedule.mus == replay.schedule.mus
        assert np.array_equal(live.w.coeffs, replay.w.coeffs)

    def test_rejects_volume(self, grid16):
        cfg = SolverConfig(grid16, NU, 0.5, 10.0)
        with pytest.raises(ConfigurationError):
            run_adaptive(cfg, InterpolantSpec.volume(math.pi / 2), [0.0, 10.0],
                         u0=decaying_flow(grid16))

    def test_rejects_partial_steps(self, grid16):
        cfg = SolverConfig(grid16, NU, 0.3, 10.0)
        with pytest.raises(ConfigurationError):
            run_adaptive(cfg, SPEC, [0.0, 1.0], u0=decaying_flow(grid16))

    def test_infeasible_interval_raises(self):
        g = GridSpec(16)
        cfg = SolverConfig(g, NU, 0.5, 10.0)
        with pytest.raises(SchedulingError):
            run_adaptive(cfg, SPEC, [0.0, 10.0], u0=beltrami_field(1, 1, 1, g))
