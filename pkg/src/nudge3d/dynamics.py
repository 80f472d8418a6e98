"""Time integration of the reference and nudged Navier-Stokes systems.

Both systems are advanced with integrating-factor Runge-Kutta schemes: the
viscous term (and, for modal nudging, the relaxation term on the observed
shells) is integrated exactly per mode, everything else explicitly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from nudge3d import kernels
from nudge3d.errors import BlowUpError, ConfigurationError, EndOfObservations, StabilityError
from nudge3d.interpolants import InterpolantSpec, make_operator
from nudge3d.spectral import GridSpec, SpectralField, _norm_sq, to_physical, to_spectral

INTEGRATORS = ("IF-RK2", "IF-RK4")

COLUMNS = ("time", "l2_u", "h1_u", "l2_w", "h1_w", "l2_err", "h1_err", "obs_h1",
           "energy_residual")


@dataclass(frozen=True)
class SolverConfig:
    grid: GridSpec
    nu: float
    dt: float
    t_end: float
    integrator: str = "IF-RK2"
    forcing: SpectralField | None = None
    nonlinear: bool = True
    cfl: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ConfigurationError("solver.nu must be positive")
        if not self.dt > 0:
            raise ConfigurationError("solver.dt must be positive")
        if not self.t_end >= 0:
            raise ConfigurationError("solver.t_end must be non-negative")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.forcing is not None:
            if self.forcing.grid != self.grid:
                raise ConfigurationError("forcing lives on a different grid")
            if not self.forcing.is_divergence_free(1e-10):
                raise ConfigurationError("forcing must be divergence-free")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def forcing_norm(self):
        if self.forcing is None:
            return 0.0
        return math.sqrt(_norm_sq(self.grid, self.forcing.coeffs, 0))

    @property
    def grashof(self):
        """|f| / (nu^2 lambda1^{3/2})."""
        return self.forcing_norm / (self.nu**2 * self.grid.lambda1**1.5)


@dataclass(frozen=True)
class NudgeConfig:
    mu: float
    interpolant: InterpolantSpec
    w0: SpectralField | None = None
    theorem_mode: bool = False

    def __post_init__(self):
        if not self.mu >= 0:
            raise ConfigurationError("nudge.mu must be >= 0")


class Stepper:
    """One integrating-factor RK step of dw/dt = -nu A w - B(w,w) + f - mu P I_h(w - u)."""

    def __init__(self, cfg, mu=0.0, interpolant=None):
        g = cfg.grid
        self.cfg = cfg
        self.grid = g
        self.mu = float(mu)
        self.dt = cfg.dt
        self.mask = g.dealias_mask
        self.kd = g.deriv_k
        lin = cfg.nu * g.eigenvalues
        self.op = None
        self.modal = False
        if self.mu > 0:
            if interpolant is None:
                raise ConfigurationError("nudging needs an interpolant")
            self.op = make_operator(interpolant, g)
            self.modal = interpolant.kind == "modal"
            if self.modal:
                lin = lin + self.mu * self.op.mask
            elif self.mu * cfg.dt > 0.5:
                raise StabilityError(
                    f"mu*dt={self.mu * cfg.dt:g} exceeds 0.5 for explicitly treated nudging")
        if cfg.integrator == "IF-RK4":
            self.E2 = np.ascontiguousarray(np.exp(-0.5 * cfg.dt * lin))
            self.E = np.ascontiguousarray(self.E2 * self.E2)
        else:
            self.E = np.ascontiguousarray(np.exp(-cfg.dt * lin))
            self.E2 = None
        self.f = None
        if cfg.forcing is not None:
            self.f = np.ascontiguousarray(cfg.forcing.coeffs * self.mask)
        self.umax = 0.0

    def rhs(self, u, obs):
        g = self.grid
        up = None
        if self.cfg.nonlinear:
            kx, kz = self.kd
            wh = np.empty_like(u)
            kernels.curl(u, kx, kx, kz, wh)
            up = np.ascontiguousarray(to_physical(g, u))
            wp = np.ascontiguousarray(to_physical(g, wh))
            prod = np.empty_like(up)
            kernels.cross(up, wp, prod)
            self.umax = float(np.abs(up).max())
            acc = to_spectral(g, prod)
        else:
            acc = np.zeros_like(u)
        if self.mu > 0 and not self.modal:
            acc -= self.mu * (self.op.apply(u, up) - obs)
        out = np.empty_like(u)
        kernels.project(np.ascontiguousarray(acc), g.kx, g.kx, g.kz, g.inv_k2, self.mask, 1.0, out)
        if self.f is not None:
            out += self.f
        if self.mu > 0 and self.modal:
            out += self.mu * (obs * self.mask)
        return out

    def step(self, u, obs0=None, obs1=None):
        """Advance coefficients ``u`` by one step; obs0/obs1 are I_h u at the step ends."""
        dt = self.dt
        if obs1 is None:
            obs1 = obs0
        k1 = self.rhs(u, obs0)
        out = np.empty_like(u)
        if self.E2 is None:
            ua = np.empty_like(u)
            kernels.if_stage(self.E, u, dt, k1, ua)
            k2 = self.rhs(ua, obs1)
            kernels.if_stage(self.E, u, 0.5 * dt, k1, out)
            out += 0.5 * dt * k2
        else:
            mid = obs0 if obs1 is obs0 else (None if obs0 is None else 0.5 * (obs0 + obs1))
            E2 = self.E2
            ua = np.empty_like(u)
            kernels.if_stage(E2, u, 0.5 * dt, k1, ua)
            k2 = self.rhs(ua, mid)
            e2u = E2 * u
            ub = e2u + (0.5 * dt) * k2
            k3 = self.rhs(ub, mid)
            uc = np.empty_like(u)
            kernels.if_stage(E2, e2u, dt, k3, uc)
            k4 = self.rhs(uc, obs1)
            inner = np.empty_like(u)
            kernels.if_stage(E2, u, dt / 6.0, k1, inner)
            inner += (dt / 3.0) * (k2 + k3)
            kernels.if_stage(E2, inner, 0.0, inner, out)
            out += (dt / 6.0) * k4
        out[:, 0, 0, 0] = 0.0
        return out


_stepper_cache = {}


def _stepper(cfg, mu=0.0, interpolant=None):
    key = (cfg, float(mu), None if interpolant is None or mu == 0 else interpolant.key())
    st = _stepper_cache.get(key)
    if st is None:
        if len(_stepper_cache) > 16:
            _stepper_cache.clear()
        st = Stepper(cfg, mu, interpolant)
        _stepper_cache[key] = st
    return st


def _band(cfg, v):
    return np.ascontiguousarray(v.coeffs * cfg.grid.dealias_mask)


def _checked(cfg, arr, t):
    if not np.isfinite(arr).all():
        raise BlowUpError(t)
    return SpectralField(cfg.grid, arr, copy=False)


def step_reference(state, cfg):
    """One step of du/dt = -nu A u - B(u,u) + f."""
    st = _stepper(cfg)
    return _checked(cfg, st.step(_band(cfg, state)), math.nan)


def step_nudged(w, obs, cfg, nudge, obs_next=None):
    """One step of the nudged system with observation ``obs`` (I_h u) held or
    linearly interpolated towards ``obs_next`` over the step."""
    st = _stepper(cfg, nudge.mu, nudge.interpolant)
    o0 = None if obs is None else np.ascontiguousarray(obs.coeffs)
    o1 = None if obs_next is None else np.ascontiguousarray(obs_next.coeffs)
    return _checked(cfg, st.step(_band(cfg, w), o0, o1), math.nan)


class TimeSeries:
    """Scalar diagnostics sampled along a run, optionally streamed to CSV."""

    def __init__(self, path=None):
        self.rows = []
        self._fh = None
        self._writer = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(COLUMNS)
            self._fh.flush()

    def append(self, **row):
        vals = tuple(float(row.get(c, math.nan)) for c in COLUMNS)
        self.rows.append(vals)
        if self._writer is not None:
            self._writer.writerow([repr(v) for v in vals])
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            self._writer = None

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, name):
        i = COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(COLUMNS)
            for r in self.rows:
                wr.writerow([repr(v) for v in r])

    @classmethod
    def from_csv(cls, path):
        ts = cls()
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if tuple(header) != COLUMNS:
                raise ConfigurationError(f"unexpected CSV columns {header}")
            for row in rd:
                ts.rows.append(tuple(float(x) for x in row))
        return ts


@dataclass
class RunResult:
    series: TimeSeries
    u: SpectralField | None
    w: SpectralField | None
    t: float
    steps: int
    stopped_early: bool = False
    extras: dict = field(default_factory=dict)


class _EnergyLedger:
    """Running 1/2|u|^2 + nu int ||u||^2 - int (f,u) - 1/2|u0|^2.

    The time integral is composite Simpson over step pairs, with a trapezoid
    on a trailing odd step, so the quadrature error stays well below the
    energy-inequality tolerance.
    """

    def __init__(self, cfg, u):
        self.cfg = cfg
        self.e0 = 0.5 * _norm_sq(cfg.grid, u, 0)
        self.paired = 0.0
        self.rates = [self._rate(u)]

    def _rate(self, u):
        g = self.cfg.grid
        r = self.cfg.nu * _norm_sq(g, u, 1)
        if self.cfg.forcing is not None:
            f = self.cfg.forcing.coeffs
            r -= g.volume * float(np.sum(np.sum(u * np.conj(f), axis=0).real * g.weights))
        return r

    def advance(self, u, dt):
        self.rates.append(self._rate(u))
        if len(self.rates) == 3:
            a, b, c = self.rates
            self.paired += dt / 3.0 * (a + 4.0 * b + c)
            self.rates = [c]
            integral = self.paired
        else:
            integral = self.paired + 0.5 * dt * sum(self.rates)
        return 0.5 * _norm_sq(self.cfg.grid, u, 0) + integral - self.e0


def _diagnostics(cfg, t, u, w, obs, residual):
    g = cfg.grid
    row = {"time": t, "energy_residual": residual}
    if u is not None:
        row["l2_u"] = math.sqrt(_norm_sq(g, u, 0))
        row["h1_u"] = math.sqrt(_norm_sq(g, u, 1))
    if w is not None:
        row["l2_w"] = math.sqrt(_norm_sq(g, w, 0))
        row["h1_w"] = math.sqrt(_norm_sq(g, w, 1))
        if u is not None:
            d = w - u
            row["l2_err"] = math.sqrt(_norm_sq(g, d, 0))
            row["h1_err"] = math.sqrt(_norm_sq(g, d, 1))
    if obs is not None:
        row["obs_h1"] = math.sqrt(_norm_sq(g, obs, 1))
    return row


def integrate(u0, cfg, nudge=None, emit_every=1, obs_source=None, recorder=None,
              record_every=1, csv_path=None, t0=0.0, n_steps=None, check_cfl=True):
    """Integrate the reference system, a live twin experiment, or a replayed assimilation.

    * ``nudge is None``: reference run from ``u0``.
    * ``nudge`` given, ``obs_source is None``: live twin; the reference starts
      at ``u0`` and feeds I_h u to the nudged run each step.
    * ``nudge`` and ``obs_source`` given: the nudged run consumes replayed
      observations; ``u0`` may be None (no truth diagnostics).

    Observations at the two ends of each step are interpolated linearly across
    the stages. Returns a :class:`RunResult`; a replay that runs out of data
    stops cleanly with ``stopped_early=True``.
    """
    g = cfg.grid
    if nudge is not None and nudge.theorem_mode and nudge.mu < cfg.nu * g.lambda1:
        raise ConfigurationError(
            f"theorem mode requires mu >= nu*lambda1 = {cfg.nu * g.lambda1:g}")
    n_steps = cfg.n_steps if n_steps is None else int(n_steps)
    dt = cfg.dt
    live = nudge is not None and obs_source is None
    ref = _stepper(cfg) if (u0 is not None and obs_source is None) else None
    if nudge is not None and obs_source is not None and u0 is not None:
        ref = _stepper(cfg)
    nud = _stepper(cfg, nudge.mu, nudge.interpolant) if nudge is not None else None
    op = make_operator(nudge.interpolant, g) if nudge is not None else None

    u = _band(cfg, u0) if u0 is not None else None
    w = None
    if nudge is not None:
        w = _band(cfg, nudge.w0) if nudge.w0 is not None else np.zeros(g.spectral_shape, np.complex128)

    series = TimeSeries(csv_path)
    ledger = _EnergyLedger(cfg, u) if u is not None else None
    obs_now = op.apply(u) if live else None
    rec_op = None
    if recorder is not None:
        if u is None:
            raise ConfigurationError("recording observations needs a reference trajectory")
        rec_op = make_operator(recorder.spec, g)
        same = live and recorder.spec.key() == nudge.interpolant.key()

    def _rec_obs():
        return obs_now if same else rec_op.apply(u)

    t = t0
    stopped = False
    steps_done = 0
    try:
        if recorder is not None:
            recorder.append(t, _rec_obs())
        disp_obs = obs_now if live else None
        if obs_source is not None:
            try:
                disp_obs = obs_source.at(t)
            except EndOfObservations:
                disp_obs = None
        series.append(**_diagnostics(cfg, t, u, w, disp_obs, 0.0 if ledger else math.nan))
        residual = 0.0 if ledger else math.nan
        for step in range(n_steps):
            t_next = t0 + (step + 1) * dt
            if obs_source is not None:
                try:
                    o0, o1 = obs_source.window(t, dt)
                except EndOfObservations:
                    stopped = True
                    break
            if u is not None and ref is not None:
                u_next = ref.step(u)
                if check_cfl and cfg.nonlinear and ref.umax * dt > cfg.cfl * g.dx:
                    raise StabilityError(
                        f"CFL violated at t={t:g}: max|u|*dt/dx={ref.umax * dt / g.dx:.3g}", t)
            else:
                u_next = None
            if nud is not None:
                if live:
                    obs_next = op.apply(u_next)
                    w = nud.step(w, obs_now, obs_next)
                    obs_now = obs_next
                else:
                    w = nud.step(w, o0, o1)
                    obs_now = o1
                if check_cfl and cfg.nonlinear and nud.umax * dt > cfg.cfl * g.dx:
                    raise StabilityError(f"CFL violated in nudged run at t={t:g}", t)
                if not np.isfinite(w).all():
                    raise BlowUpError(t_next)
            if u_next is not None:
                if not np.isfinite(u_next).all():
                    raise BlowUpError(t_next)
                u = u_next
                residual = ledger.advance(u, dt)
            t = t_next
            steps_done = step + 1
            if recorder is not None and steps_done % record_every == 0:
                recorder.append(t, _rec_obs())
            if steps_done % emit_every == 0 or steps_done == n_steps:
                series.append(**_diagnostics(cfg, t, u, w, obs_now, residual))
    finally:
        series.close()
    if stopped and (not series.rows or series.rows[-1][0] != t):
        series.append(**_diagnostics(cfg, t, u, w, obs_now, residual))
    return RunResult(
        series=series,
        u=SpectralField(g, u, copy=False) if u is not None else None,
        w=SpectralField(g, w, copy=False) if w is not None else None,
        t=t,
        steps=steps_done,
        stopped_early=stopped,
    )

