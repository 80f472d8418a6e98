"""Interval-wise adaptive nudging with the modal interpolant.

The horizon is split at T_0 < T_1 < ... ; on (T_k, T_{k+1}] the nudged run
uses mu_{k+1}, chosen from the endpoint state w(T_k) and the sup of the
observed H^1 norm over the interval. The state is carried across boundaries
unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from nudge3d.assimilation import _in_window, _observed_h1, decay_envelope_check
from nudge3d.dynamics import COLUMNS, NudgeConfig, TimeSeries, _band, _stepper, integrate
from nudge3d.errors import BoundViolation, ConfigurationError, SchedulingError
from nudge3d.interpolants import lambda_of_cutoff, make_operator
from nudge3d.io import ReplaySource
from nudge3d.spectral import SpectralField, _norm_sq


def assumption_lhs(f_norm, obs_h1, nu, lambda1, lambda_K):
    """(32 |f|^4 / (nu^4 lambda1^2) + 8 ||P_K u||^4) / lambda_K, elementwise."""
    v = np.asarray(obs_h1, float)
    return (32 * f_norm**4 / (nu**4 * lambda1**2) + 8 * v**4) / lambda_K


def check_adaptive_assumption(obs, f_norm, nu, lambda1, lambda_K, c, window=None):
    """Compare the sup of the assumption's left side with nu^4 / (16 c).

    Returns (ok, margin) with margin = (nu^4 / 16c) / sup, infinite when the
    sup vanishes.
    """
    times, vals = _observed_h1(obs)
    sel = _in_window(times, window)
    if not sel.any():
        raise ConfigurationError(f"no observations in window {window}")
    lhs = float(np.max(assumption_lhs(f_norm, vals[sel], nu, lambda1, lambda_K)))
    rhs = nu**4 / (16 * c)
    margin = math.inf if lhs == 0 else rhs / lhs
    return lhs <= rhs, margin


@dataclass
class IntervalPlan:
    index: int
    t_start: float
    t_end: float
    mu: float
    M: float
    M_tilde: float
    w_norm: float
    lower: float
    upper: float

    def to_dict(self):
        return dict(self.__dict__)


def plan_interval(w_norm, interval_obs, f_norm, nu, lambda1, lambda_K, c, lambda_upper=None,
                  index=1, span=(math.nan, math.nan)):
    """mu_{k+1} for one interval from ||w(T_k)|| and the interval's observed H^1 norms.

    ``w_norm`` may be a SpectralField or the number ||w(T_k)||.
    """
    if isinstance(w_norm, SpectralField):
        w_norm = math.sqrt(_norm_sq(w_norm.grid, w_norm.coeffs, 1))
    vals = np.asarray(interval_obs, float)
    M_tilde = float(vals.max()) if vals.size else 0.0
    M_sq = max(w_norm**2, 4 * f_norm**2 / (nu**2 * lambda1) + 2 * M_tilde**2)
    lam_up = lambda_K if lambda_upper is None else lambda_upper
    lower = max(2 * c * M_sq**2 / nu**3, nu * lambda1)
    upper = nu * lam_up / 8
    if lower > upper:
        raise SchedulingError(index, f"empty range [{lower:.6g}, {upper:.6g}] for mu")
    return IntervalPlan(index, span[0], span[1], math.sqrt(lower * upper), math.sqrt(M_sq),
                        M_tilde, float(w_norm), lower, upper)


def uniform_boundaries(t_end, count, t0=0.0):
    return [t0 + (t_end - t0) * i / count for i in range(count + 1)]


@dataclass
class AdaptiveSchedule:
    boundaries: list
    plans: list = field(default_factory=list)
    assumption_ok: bool | None = None
    assumption_margin: float | None = None

    @property
    def mus(self):
        return [p.mu for p in self.plans]

    def to_dict(self):
        return {"boundaries": list(self.boundaries), "assumption_ok": self.assumption_ok,
                "assumption_margin": self.assumption_margin,
                "intervals": [p.to_dict() for p in self.plans]}


@dataclass
class AdaptiveResult:
    series: TimeSeries
    schedule: AdaptiveSchedule
    w: SpectralField
    u: SpectralField | None
    report: dict


def _steps_between(a, b, dt):
    r = (b - a) / dt
    k = int(round(r))
    if k < 1 or abs(r - k) > 1e-6:
        raise ConfigurationError(f"interval [{a:g}, {b:g}] is not a whole number of steps of {dt:g}")
    return k


def run_adaptive(cfg, spec, boundaries, u0=None, record=None, c=None, lambda_upper=None,
                 floor=1e-7, tol=0.05, strict=True, mus=None, emit_every=1):
    """Run the adaptive scheme over ``boundaries`` with the modal interpolant ``spec``.

    Observations come from a live reference run started at ``u0`` or from a
    modal ``record``. With ``mus`` given the per-interval parameters are taken
    as is (planning is still reported). Bound checks raise BoundViolation when
    ``strict``; otherwise failures are reported.
    """
    if spec.kind != "modal":
        raise ConfigurationError("the adaptive scheme is defined for the modal interpolant")
    if u0 is None and record is None:
        raise ConfigurationError("need u0 (live) or an observation record (replay)")
    g = cfg.grid
    nu, lam1 = cfg.nu, g.lambda1
    c = spec.c if c is None else c
    lam_K = lambda_of_cutoff(g, spec.cutoff)[0] if not math.isinf(spec.cutoff) else g.max_eigenvalue
    f_norm = cfg.forcing_norm
    op = make_operator(spec, g)
    ref = _stepper(cfg)
    bnd = [float(b) for b in boundaries]
    if len(bnd) < 2 or any(b1 <= b0 for b0, b1 in zip(bnd, bnd[1:])):
        raise ConfigurationError("boundaries must be strictly increasing with at least two entries")
    source = ReplaySource(record) if record is not None else None

    # pass 1: observed H^1 norms per interval
    obs_times, obs_vals = [], []
    u_start = []
    u = _band(cfg, u0) if u0 is not None else None
    for k, (a, b) in enumerate(zip(bnd, bnd[1:])):
        n = _steps_between(a, b, cfg.dt)
        ts = [a + i * cfg.dt for i in range(n + 1)]
        if u is not None:
            u_start.append(u)
            vals = [math.sqrt(_norm_sq(g, op.apply(u), 1))]
            for _ in range(n):
                u = ref.step(u)
                vals.append(math.sqrt(_norm_sq(g, op.apply(u), 1)))
        else:
            sel = _in_window(record.times, (a, b))
            vals = [math.sqrt(_norm_sq(g, op.apply(record.block(i)), 1)) for i in np.nonzero(sel)[0]]
            ts = list(record.times[sel])
            if not vals:
                raise SchedulingError(k + 1, "no observations in the interval")
        obs_times.append(ts)
        obs_vals.append(vals)
    all_vals = np.concatenate([np.asarray(v) for v in obs_vals])
    all_t = np.concatenate([np.asarray(t) for t in obs_times])
    ok, margin = check_adaptive_assumption((all_t, all_vals), f_norm, nu, lam1, lam_K, c)
    schedule = AdaptiveSchedule(bnd, [], ok, margin)
    sup_obs = float(all_vals.max())
    h1_bound = 4 * f_norm**2 / (nu**2 * lam1) + 2 * sup_obs**2
    theorem_cap = nu**2 * math.sqrt(lam_K) / (4 * c)

    # pass 2: nudged run interval by interval
    series = TimeSeries()
    w_field = None
    violations = []
    envelope = []
    e0 = None
    for k, (a, b) in enumerate(zip(bnd, bnd[1:])):
        w_norm = 0.0 if w_field is None else math.sqrt(_norm_sq(g, w_field.coeffs, 1))
        try:
            plan = plan_interval(w_norm, obs_vals[k], f_norm, nu, lam1, lam_K, c, lambda_upper,
                                 index=k + 1, span=(a, b))
        except SchedulingError:
            if mus is None:
                raise
            # prescribed parameters: record the empty range instead of failing
            plan = IntervalPlan(k + 1, a, b, math.nan, math.nan, float(np.max(obs_vals[k])),
                                w_norm, math.nan, math.nan)
        if mus is not None:
            plan.mu = float(mus[k])
        schedule.plans.append(plan)
        nudge = NudgeConfig(plan.mu, spec, w0=w_field)
        n = _steps_between(a, b, cfg.dt)
        if u0 is not None:
            res = integrate(SpectralField(g, u_start[k], copy=False), cfg, nudge,
                            emit_every=emit_every, t0=a, n_steps=n)
        else:
            res = integrate(None, cfg, nudge, emit_every=emit_every, obs_source=source,
                            t0=a, n_steps=n)
        rows = res.series.rows if k == 0 else res.series.rows[1:]
        series.rows.extend(rows)
        w_field = res.w
        h1w = res.series["h1_w"] ** 2
        times = res.series["time"]
        bad = np.nonzero(h1w > min(h1_bound, theorem_cap) * (1 + 1e-12))[0]
        if bad.size:
            violations.append({"interval": k + 1, "time": float(times[bad[0]]),
                               "h1_w_sq": float(h1w[bad[0]])})
        if u0 is not None:
            err = res.series["l2_err"] ** 2
            if e0 is None:
                e0 = err[0]
            env_ok, ratio, first, count = decay_envelope_check(
                times, err, plan.mu / 2, floor, tol, floor_value=floor * e0)
            envelope.append({"interval": k + 1, "ok": env_ok, "max_ratio": ratio,
                             "first_violation": first, "samples": count})
            if not env_ok and strict:
                raise BoundViolation(f"decay envelope exceeded in interval {k + 1}", first, k + 1)
        if bad.size and strict:
            v = violations[-1]
            raise BoundViolation(
                f"||w||^2={v['h1_w_sq']:.6g} exceeds the bound in interval {k + 1}",
                v["time"], k + 1)
    report = {
        "assumption_ok": ok,
        "assumption_margin": margin,
        "lambda_K": lam_K,
        "c": c,
        "h1_bound": h1_bound,
        "theorem_cap": theorem_cap,
        "chain_ok": h1_bound <= theorem_cap,
        "h1_violations": violations,
        "envelope": envelope,
        "passed": ok and not violations and all(e["ok"] for e in envelope) and h1_bound <= theorem_cap,
        "mus": schedule.mus,
    }
    u_final = None
    if u0 is not None:
        u_final = res.u
    return AdaptiveResult(series, schedule, w_field, u_final, report)


__all__ = [
    "AdaptiveResult", "AdaptiveSchedule", "IntervalPlan", "COLUMNS", "assumption_lhs",
    "check_adaptive_assumption", "plan_interval", "run_adaptive", "uniform_boundaries",
]
