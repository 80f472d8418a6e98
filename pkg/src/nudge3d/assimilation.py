"""Data bounds, nudging-parameter windows, K_inf search and tracking checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from nudge3d.errors import BlowUpError, ConfigurationError
from nudge3d.interpolants import lambda_of_cutoff, make_operator
from nudge3d.spectral import _norm_sq

_TIME_RTOL = 1e-9


@dataclass(frozen=True)
class DataBound:
    """Running sup of an observed H^1 norm over a window and the bound M built from it.

    M^2 = 8 (|f|^2 / (nu^2 lambda1) + value^2).
    """

    value: float
    window: tuple
    f_norm: float
    nu: float
    lambda1: float
    given_M: float | None = None

    @property
    def M_sq(self):
        if self.given_M is not None:
            return self.given_M**2
        return 8.0 * (self.f_norm**2 / (self.nu**2 * self.lambda1) + self.value**2)

    @property
    def M(self):
        return math.sqrt(self.M_sq)

    @classmethod
    def from_M(cls, M, nu, lambda1):
        """A bound with M supplied directly (no observations behind it)."""
        return cls(value=math.nan, window=(math.nan, math.nan), f_norm=math.nan, nu=nu,
                   lambda1=lambda1, given_M=float(M))

    def to_dict(self):
        return {"value": self.value, "window": list(self.window), "f_norm": self.f_norm,
                "nu": self.nu, "lambda1": self.lambda1, "M": self.M}


@dataclass(frozen=True)
class MuWindow:
    lower: float
    upper: float
    provenance: str
    bound: DataBound | None = None

    @property
    def feasible(self):
        return self.lower <= self.upper and self.lower > 0

    @property
    def recommended(self):
        """Geometric mean of the endpoints, or None when infeasible."""
        if not self.feasible:
            return None
        if math.isinf(self.upper):
            return self.lower
        return math.sqrt(self.lower * self.upper)

    def contains(self, mu):
        return self.lower <= mu <= self.upper

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "feasible": self.feasible,
                "provenance": self.provenance, "recommended": self.recommended}


PURPOSES = ("weak", "regular")


def mu_window(spec, bound, purpose="regular", lambda_K=None, grid=None):
    """Admissible nudging parameters for ``spec`` given the data bound.

    weak:             [nu lambda1, nu / (4 c h^2)]
    regular, modal:   [nu max(2 c M^4 / nu^4, lambda1), nu lambda_K / 4]
    regular, general: [max(2 c M^4 / nu^3, nu lambda1), nu / (4 c h^2)]

    For the modal kind, ``lambda_K`` is the largest retained eigenvalue; it is
    looked up on ``grid`` when omitted, falling back to the cutoff itself.
    """
    if purpose not in PURPOSES:
        raise ConfigurationError(f"purpose must be one of {PURPOSES}")
    nu, lam1 = bound.nu, bound.lambda1
    c = spec.c
    h = spec.resolution
    upper_h = math.inf if h == 0 else nu / (4 * c * h * h)
    if purpose == "weak":
        return MuWindow(nu * lam1, upper_h, "weak-existence window", bound)
    M4 = bound.M_sq**2
    if spec.kind == "modal":
        if lambda_K is None:
            if grid is not None and not math.isinf(spec.cutoff):
                lambda_K = lambda_of_cutoff(grid, spec.cutoff)[0]
            else:
                lambda_K = spec.cutoff
        lower = nu * max(2 * c * M4 / nu**4, lam1)
        return MuWindow(lower, nu * lambda_K / 4, "modal regularity window", bound)
    lower = max(2 * c * M4 / nu**3, nu * lam1)
    return MuWindow(lower, upper_h, "general type-1 window", bound)


def _in_window(times, window):
    times = np.asarray(times, dtype=float)
    if window is None:
        return np.ones(times.shape, bool)
    t0, t1 = window
    tol = _TIME_RTOL * max(1.0, abs(t0), abs(t1))
    return (times >= t0 - tol) & (times <= t1 + tol)


def _observed_h1(obs):
    """(times, H^1 norms) from a record, a TimeSeries or a (times, values) pair."""
    if hasattr(obs, "h1_norms"):
        return np.asarray(obs.times, float), np.asarray(obs.h1_norms(), float)
    if hasattr(obs, "rows"):
        return obs["time"], obs["obs_h1"]
    times, vals = obs
    return np.asarray(times, float), np.asarray(vals, float)


def compute_data_bound(obs, f_norm, nu, lambda1, window=None):
    """Sup of the observed H^1 norm over the closed ``window`` and the resulting M."""
    times, vals = _observed_h1(obs)
    sel = _in_window(times, window)
    if not sel.any():
        raise ConfigurationError(f"no observations in window {window}")
    value = float(np.max(vals[sel]))
    ts = times[sel]
    return DataBound(value, (float(ts[0]), float(ts[-1])), float(f_norm), nu, lambda1)


def grashof_energy_bound(G, nu, lambda1):
    """Long-time bound 2 G^2 nu^2 lambda1 on |u|^2."""
    return 2 * G * G * nu * nu * lambda1


def settling_time(series, G, nu, lambda1, column="l2_u"):
    """First sample time at which |u|^2 <= 2 G^2 nu^2 lambda1, or None."""
    vals = series[column] ** 2
    hit = np.nonzero(vals <= grashof_energy_bound(G, nu, lambda1))[0]
    return float(series["time"][hit[0]]) if hit.size else None


class ShellHistory:
    """Cumulative H^1 energy of P_L u over every shell cutoff L, per sample time.

    Row j of ``cum`` holds ||P_L u(t_j)||^2 for L running over ``eigenvalues``.
    Built incrementally from coefficient arrays or from a modal record.
    """

    def __init__(self, grid, max_cutoff=math.inf):
        self.grid = grid
        band = (grid.dealias_mask > 0) & (grid.k2 > 0)
        idx = np.rint(grid.k2).astype(np.int64)
        if not math.isinf(max_cutoff):
            band &= grid.eigenvalues <= max_cutoff * (1 + _TIME_RTOL)
        n = grid.n
        band[n // 2, :, :] = False
        band[:, n // 2, :] = False
        band[:, :, -1] = False
        self._sel = band
        self._idx = idx[band]
        self._wt = (grid.volume * grid.lambda1) * (grid.k2 * grid.weights)[band]
        self.shells = np.unique(self._idx)
        self.eigenvalues = self.shells * grid.lambda1
        self.max_cutoff = max_cutoff
        self.times = []
        self.cum = []

    def add(self, t, coeffs):
        a2 = np.sum(np.abs(coeffs[:, self._sel]) ** 2, axis=0)
        e = np.bincount(self._idx, weights=a2 * self._wt, minlength=int(self.shells[-1]) + 1)
        self.times.append(float(t))
        self.cum.append(np.cumsum(e)[self.shells])

    @classmethod
    def from_record(cls, record):
        spec = record.spec
        if spec.kind != "modal":
            raise ConfigurationError("K_inf search needs a modal observation record")
        hist = cls(record.grid, spec.cutoff)
        for t, block in record.items():
            hist.add(t, block)
        return hist

    def sup(self, window=None):
        times = np.asarray(self.times)
        sel = _in_window(times, window)
        if not sel.any():
            raise ConfigurationError(f"no observations in window {window}")
        return np.max(np.asarray(self.cum)[sel], axis=0), times[sel]

    def data_bound(self, cutoff, f_norm, nu, window=None):
        sups, ts = self.sup(window)
        j = np.searchsorted(self.eigenvalues, cutoff * (1 + _TIME_RTOL), side="right") - 1
        value = math.sqrt(sups[j]) if j >= 0 else 0.0
        return DataBound(value, (float(ts[0]), float(ts[-1])), float(f_norm), nu, self.grid.lambda1)


def kinf_threshold(M_sq, c, nu, lambda1):
    """max(8 c M^4 / nu^4, 4 lambda1): the smallest lambda_K admitting a modal window."""
    return max(8 * c * M_sq * M_sq / nu**4, 4 * lambda1)


def find_K_inf(obs, nu, lambda1, c, window=None, f_norm=0.0):
    """Smallest shell cutoff whose data bound passes the K_inf test.

    ``obs`` is a :class:`ShellHistory` or a modal observation record. Returns
    ``(lambda_star, report)``; ``lambda_star`` is None when no cutoff on the
    record passes.
    """
    hist = obs if isinstance(obs, ShellHistory) else ShellHistory.from_record(obs)
    sups, ts = hist.sup(window)
    lam = hist.eigenvalues
    M_sq = 8.0 * (f_norm**2 / (nu**2 * lambda1) + sups)
    thresh = np.maximum(8 * c * M_sq**2 / nu**4, 4 * lambda1)
    ok = lam >= thresh
    star = float(lam[np.argmax(ok)]) if ok.any() else None
    grid_top = hist.grid.max_eigenvalue
    if star is None and hist.max_cutoff < grid_top * (1 - _TIME_RTOL):
        raise ConfigurationError(
            f"record stops at cutoff {hist.max_cutoff:g}; shells up to {grid_top:g} are needed")
    report = {
        "lambda_star": star,
        "verdict": "feasible" if star is not None else "infeasible on this grid",
        "window": [float(ts[0]), float(ts[-1])],
        "M_K_curve": [[float(a), float(math.sqrt(b))] for a, b in zip(lam, M_sq)],
        "threshold_curve": [[float(a), float(b)] for a, b in zip(lam, thresh)],
        "nu": nu, "lambda1": lambda1, "c": c, "f_norm": f_norm,
    }
    return star, report


@dataclass
class TrackingReport:
    passed: bool
    verdict: str
    fitted_rate: float | None
    envelope_ok: bool | None
    h1_ok: bool | None
    max_envelope_ratio: float | None = None
    first_violation: float | None = None
    samples_above_floor: int = 0
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "passed", "verdict", "fitted_rate", "envelope_ok", "h1_ok",
            "max_envelope_ratio", "first_violation", "samples_above_floor")} | self.details


def decay_envelope_check(times, err_sq, rate, floor=1e-7, tol=0.05, t_ref=None, e_ref=None,
                         floor_value=None):
    """Check err^2(t) <= exp(-rate (t - t_ref)) e_ref (1 + tol) where err^2 is above the floor.

    The floor is ``floor * e_ref`` unless an absolute ``floor_value`` is given.
    Returns (ok, max ratio, first violating time, number of samples checked).
    """
    times = np.asarray(times, float)
    err_sq = np.asarray(err_sq, float)
    t_ref = times[0] if t_ref is None else t_ref
    e_ref = err_sq[0] if e_ref is None else e_ref
    if e_ref == 0:
        return bool(np.all(err_sq == 0)), 0.0, None, 0
    above = err_sq > (floor * e_ref if floor_value is None else floor_value)
    env = np.exp(-rate * (times - t_ref)) * e_ref
    ratio = err_sq[above] / env[above]
    if ratio.size == 0:
        return True, 0.0, None, 0
    bad = np.nonzero(ratio > 1 + tol)[0]
    first = float(times[above][bad[0]]) if bad.size else None
    return bad.size == 0, float(ratio.max()), first, int(above.sum())


def fit_decay_rate(times, err_sq, floor=1e-7, min_samples=10):
    """Least-squares slope of -log err^2 over samples above ``floor`` times the initial value."""
    times = np.asarray(times, float)
    err_sq = np.asarray(err_sq, float)
    above = (err_sq > floor * err_sq[0]) & (err_sq > 0)
    if above.sum() < min_samples:
        raise ConfigurationError(
            f"only {int(above.sum())} samples above the floor; need {min_samples} to fit")
    slope = np.polyfit(times[above], np.log(err_sq[above]), 1)[0]
    return float(-slope)


def tracking_report(series, mu, bound=None, floor=1e-7, tol=0.05):
    """Compare a twin run's error against exp(-mu t / 2) and its H^1 norm against M."""
    times = series["time"]
    err_sq = series["l2_err"] ** 2
    rate = fit_decay_rate(times, err_sq, floor)
    if mu <= 0:
        return TrackingReport(True, "no decay guarantee", rate, None, None,
                              samples_above_floor=int(np.sum(err_sq > floor * err_sq[0])))
    ok, ratio, first, count = decay_envelope_check(times, err_sq, mu / 2, floor, tol)
    h1_ok = None
    details = {}
    if bound is not None:
        h1 = series["h1_w"]
        h1_ok = bool(np.all(h1 <= bound.M * (1 + 1e-12)))
        details = {"M": bound.M, "max_h1_w": float(h1.max())}
    passed = ok and h1_ok is not False
    verdict = "pass" if passed else "fail"
    return TrackingReport(passed, verdict, rate, ok, h1_ok, ratio, first, count, details)


def determining_modes_experiment(cfg, ic1, ic2, spec, mu=None, horizon=None, theta_obs=1e-6,
                                 theta_full=1e-3, emit_every=1, check_condition=True):
    """Integrate two solutions with the same forcing and compare their observed and full differences.

    Verdict: once |I_h(u1-u2)| drops below ``theta_obs`` for good, |u1-u2|
    must drop below ``theta_full`` before the horizon. Both thresholds are
    relative to the initial |u1-u2|. The hypothesis check asks that the
    regular window for ``spec`` be non-empty for the data bounds of both runs.
    """
    from nudge3d.dynamics import _band, _stepper

    g = cfg.grid
    horizon = cfg.t_end if horizon is None else horizon
    n_steps = int(round(horizon / cfg.dt))
    st = _stepper(cfg)
    op = make_operator(spec, g)
    u1, u2 = _band(cfg, ic1), _band(cfg, ic2)
    times, obs_d, full_d = [], [], []
    sup_obs = [0.0, 0.0]

    def sample(t):
        d = u1 - u2
        times.append(t)
        obs_d.append(math.sqrt(_norm_sq(g, op.apply(d), 0)))
        full_d.append(math.sqrt(_norm_sq(g, d, 0)))
        if check_condition:
            for i, u in enumerate((u1, u2)):
                sup_obs[i] = max(sup_obs[i], math.sqrt(_norm_sq(g, op.apply(u), 1)))

    sample(0.0)
    for i in range(n_steps):
        u1 = st.step(u1)
        u2 = st.step(u2)
        if not (np.isfinite(u1).all() and np.isfinite(u2).all()):
            raise BlowUpError((i + 1) * cfg.dt)
        if (i + 1) % emit_every == 0 or i + 1 == n_steps:
            sample((i + 1) * cfg.dt)
    times = np.array(times)
    obs_d = np.array(obs_d)
    full_d = np.array(full_d)

    # both thresholds are relative to the initial full difference; the observed
    # difference may start at exactly zero
    scale = full_d[0]

    def settle(vals, theta):
        if scale == 0:
            return float(times[0])
        above = np.nonzero(vals > theta * scale)[0]
        if above.size == 0:
            return float(times[0])
        j = above[-1] + 1
        return float(times[j]) if j < len(times) else None

    t_obs = settle(obs_d, theta_obs)
    t_full = settle(full_d, theta_full)
    within = None
    cond = {}
    if check_condition:
        span = (float(times[0]), float(times[-1]))
        windows = [mu_window(spec, DataBound(v, span, cfg.forcing_norm, cfg.nu, g.lambda1),
                             "regular", grid=g) for v in sup_obs]
        within = all(w.feasible for w in windows)
        cond = {"windows": [w.to_dict() for w in windows], "within_hypotheses": within}
    if full_d[0] == 0:
        verdict = "pass"
    elif t_obs is None:
        verdict = "observed difference never settled"
    elif t_full is None:
        verdict = "fail"
    else:
        verdict = "pass"
    passed = verdict == "pass"
    if within is False:
        verdict += " (outside hypotheses)"
    rate = None
    pos = full_d > 0
    if pos.sum() >= 2:
        rate = float(-np.polyfit(times[pos], np.log(full_d[pos] ** 2), 1)[0])
    return {
        "verdict": verdict,
        "passed": passed,
        "t_obs_below": t_obs,
        "t_full_below": t_full,
        "theta_obs": theta_obs,
        "theta_full": theta_full,
        "implied_rate": rate,
        "mu": mu,
        "times": times,
        "obs_diff": obs_d,
        "full_diff": full_d,
        **cond,
    }
