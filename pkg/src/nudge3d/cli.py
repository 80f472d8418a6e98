"""Command line entry point.

Exit status: 0 success, 1 verdict or run failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys

from nudge3d import __version__, kernels
from nudge3d.adaptive import run_adaptive, uniform_boundaries
from nudge3d.assimilation import (
    ShellHistory,
    compute_data_bound,
    find_K_inf,
    mu_window,
    tracking_report,
)
from nudge3d.config import build_nudge, build_run
from nudge3d.dynamics import NudgeConfig, TimeSeries, integrate
from nudge3d.errors import (
    BlowUpError,
    BoundViolation,
    ConfigurationError,
    Nudge3DError,
    RecordFormatError,
    SchedulingError,
    StabilityError,
)
from nudge3d.interpolants import InterpolantSpec, calibrate
from nudge3d.io import (
    ObservationRecord,
    ReplaySource,
    RunManifest,
    coerce_value,
    config_hash,
    dumps_json,
    load_config,
    parse_length,
    record_observations,
    write_snapshot,
)
from nudge3d.spectral import GridSpec, set_fft_workers


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable)")
    p.add_argument("--seed", type=int, help="seed for the initial condition")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded FFTs (bitwise reproducible)")
    p.add_argument("--workers", type=int, default=1, help="FFT worker threads")
    p.add_argument("--out-dir", default=".", help="directory for outputs")


def build_parser():
    parser = _Parser(prog="nudge3d", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate the reference system")
    _common(p)
    p.add_argument("--record", action="store_true", help="also record observations")

    p = sub.add_parser("assimilate", help="live twin experiment")
    _common(p)
    p.add_argument("--mu", help="nudging parameter or 'auto'")

    p = sub.add_parser("replay", help="assimilate from an observation record")
    _common(p)
    p.add_argument("--record", required=True)
    p.add_argument("--mu", help="nudging parameter or 'auto'")

    p = sub.add_parser("adaptive", help="interval-wise adaptive nudging")
    _common(p)
    p.add_argument("--boundaries", help="comma separated interval boundaries")
    p.add_argument("--lambda-cutoff", help="modal cutoff eigenvalue (expression allowed)")
    p.add_argument("--lambda-upper", type=float, help="upper eigenvalue in the mu range")
    p.add_argument("--report", help="write the JSON report here")

    p = sub.add_parser("analyze", help="analyse an observation record or a series")
    p.add_argument("--record")
    p.add_argument("--series", help="TimeSeries CSV (tracking mode)")
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--f-norm", type=float, default=0.0)
    p.add_argument("--window", help="t0:t1")
    p.add_argument("--mu", type=float)
    p.add_argument("--purpose", choices=("weak", "regular"), default="regular")
    p.add_argument("--mode", choices=("kinf", "window", "tracking"), required=True)
    p.add_argument("--out", help="also write the JSON report here")

    p = sub.add_parser("interp-check", help="estimate type-1 constants")
    p.add_argument("--kind", choices=("modal", "volume", "mollified"), required=True)
    p.add_argument("--h", default="L/8")
    p.add_argument("--cutoff", default="4*lambda1")
    p.add_argument("--eps-fraction", type=float, default=0.5)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--L", default="2*pi")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _flat_config(args):
    flat = load_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flat[k.strip()] = coerce_value(v)
    if args.seed is not None:
        flat["init.seed"] = args.seed
    return flat


def _prepare(args):
    set_fft_workers(1 if args.deterministic else max(1, args.workers))
    setup = build_run(_flat_config(args))
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = RunManifest(setup.config, __version__, setup.config.get("init.seed"),
                           kernel_backend=kernels.BACKEND)
    return setup, manifest


def _out(args, name):
    return os.path.join(args.out_dir, name)


def _with_constants(spec, setup):
    if spec.kind == "modal" or spec.c_override is not None:
        return spec
    cfg = setup.config
    return calibrate(spec, setup.grid, int(cfg["interp.samples"]), int(cfg["interp.seed"]))


def _finish(args, manifest, outputs):
    manifest.outputs.extend(outputs)
    manifest.finish()
    path = _out(args, "manifest.json")
    manifest.write(path)
    return path


def cmd_simulate(args):
    setup, manifest = _prepare(args)
    cfg = setup.config
    series_path = _out(args, "series.csv")
    outputs = [series_path]
    if args.record:
        spec = _with_constants(setup.interpolant, setup)
        dt_obs = parse_length(cfg.get("obs.dt", setup.solver.dt))
        rec_path = _out(args, "observations.nsob")
        record, result = record_observations(setup.u0, setup.solver, spec, dt_obs, rec_path,
                                             config_hash(cfg))
        result.series.to_csv(series_path)
        outputs.append(rec_path)
        manifest.interpolant = spec.to_dict()
    else:
        result = integrate(setup.u0, setup.solver, emit_every=int(cfg["run.emit_every"]),
                           csv_path=series_path)
    snap = _out(args, "final.nse3")
    write_snapshot(snap, result.u, result.t)
    outputs.append(snap)
    _finish(args, manifest, outputs)
    print(f"simulated {result.steps} steps to t={result.t:g}; outputs in {args.out_dir}")
    return 0


def cmd_assimilate(args):
    setup, manifest = _prepare(args)
    cfg = setup.config
    spec = _with_constants(setup.interpolant, setup)
    mu_arg = args.mu if args.mu is not None else cfg["nudge.mu"]
    solver = setup.solver
    probe = integrate(setup.u0, solver, NudgeConfig(0.0, spec),
                      emit_every=int(cfg["run.emit_every"]))
    bound = compute_data_bound(probe.series, solver.forcing_norm, solver.nu, setup.grid.lambda1)
    window = mu_window(spec, bound, str(cfg["nudge.purpose"]), grid=setup.grid)
    if str(mu_arg) == "auto":
        mu = window.recommended
        if mu is None:
            print(dumps_json({"verdict": "infeasible window", "window": window}))
            return 1
    else:
        mu = float(mu_arg)
    nudge = build_nudge(cfg, setup.grid, spec, mu)
    series_path = _out(args, "series.csv")
    result = integrate(setup.u0, solver, nudge, emit_every=int(cfg["run.emit_every"]),
                       csv_path=series_path)
    try:
        rep = tracking_report(result.series, mu, bound)
        report = rep.to_dict()
    except ConfigurationError as exc:
        report = {"passed": False, "verdict": f"not enough samples: {exc}"}
    report.update({"mu": mu, "window": window.to_dict(), "bound": bound.to_dict()})
    rep_path = _out(args, "report.json")
    with open(rep_path, "w") as fh:
        fh.write(dumps_json(report))
    snap = _out(args, "final_w.nse3")
    write_snapshot(snap, result.w, result.t)
    manifest.interpolant = spec.to_dict()
    manifest.verdicts["tracking"] = report["verdict"]
    _finish(args, manifest, [series_path, rep_path, snap])
    print(dumps_json({k: report[k] for k in ("verdict", "mu", "fitted_rate") if k in report}))
    return 0 if report["passed"] else 1


def cmd_replay(args):
    setup, manifest = _prepare(args)
    cfg = setup.config
    record = ObservationRecord.load(args.record)
    if record.grid != setup.grid:
        raise ConfigurationError("record grid does not match the configured grid")
    spec = record.spec
    mu_arg = args.mu if args.mu is not None else cfg["nudge.mu"]
    if str(mu_arg) == "auto":
        spec = _with_constants(spec, setup)
        solver = setup.solver
        bound = compute_data_bound(record, solver.forcing_norm, solver.nu, setup.grid.lambda1)
        window = mu_window(spec, bound, str(cfg["nudge.purpose"]), grid=setup.grid)
        mu = window.recommended
        if mu is None:
            print(dumps_json({"verdict": "infeasible window", "window": window}))
            return 1
    else:
        mu = float(mu_arg)
    nudge = build_nudge(cfg, setup.grid, spec, mu)
    source = ReplaySource(record, str(cfg["obs.hold"]))
    series_path = _out(args, "series.csv")
    result = integrate(None, setup.solver, nudge, emit_every=int(cfg["run.emit_every"]),
                       obs_source=source, csv_path=series_path)
    snap = _out(args, "final_w.nse3")
    write_snapshot(snap, result.w, result.t)
    manifest.interpolant = spec.to_dict()
    manifest.verdicts["replay"] = "stopped at end of observations" if result.stopped_early else "completed"
    _finish(args, manifest, [series_path, snap])
    print(f"replayed {result.steps} steps to t={result.t:g} with mu={mu:g}")
    return 0


def cmd_adaptive(args):
    setup, manifest = _prepare(args)
    cfg = setup.config
    solver = setup.solver
    spec = setup.interpolant
    if args.lambda_cutoff is not None:
        cut = parse_length(args.lambda_cutoff, setup.grid.L, lambda1=setup.grid.lambda1)
        spec = InterpolantSpec.modal(cut, c_override=spec.c_override)
    if spec.kind != "modal":
        raise ConfigurationError("adaptive runs need interp.kind = modal")
    t_end = solver.t_end
    if args.boundaries:
        pts = [parse_length(x) for x in args.boundaries.split(",") if x.strip()]
        bnd = sorted(set([0.0] + pts + [t_end]))
        bnd = [b for b in bnd if b <= t_end]
    else:
        bnd = uniform_boundaries(t_end, int(cfg["adaptive.intervals"]))
    lam_up = args.lambda_upper if args.lambda_upper is not None else cfg.get("adaptive.lambda_upper")
    status = 0
    try:
        res = run_adaptive(solver, spec, bnd, u0=setup.u0,
                           lambda_upper=None if lam_up is None else float(lam_up), strict=False,
                           emit_every=int(cfg["run.emit_every"]))
        report = res.report | {"schedule": res.schedule.to_dict()}
        series_path = _out(args, "series.csv")
        res.series.to_csv(series_path)
        outputs = [series_path]
        manifest.schedule = res.schedule.to_dict()["intervals"]
        if not report["passed"]:
            status = 1
    except (SchedulingError, BoundViolation) as exc:
        report = {"passed": False, "verdict": str(exc),
                  "interval": getattr(exc, "interval", None), "time": getattr(exc, "time", None)}
        outputs = []
        status = 1
    report.setdefault("verdict", "pass" if status == 0 else "fail")
    rep_path = args.report or _out(args, "adaptive_report.json")
    with open(rep_path, "w") as fh:
        fh.write(dumps_json(report))
    manifest.interpolant = spec.to_dict()
    manifest.verdicts["adaptive"] = report["verdict"]
    _finish(args, manifest, outputs + [rep_path])
    print(dumps_json({"verdict": report["verdict"], "mus": report.get("mus")}))
    return status


def _window_arg(text):
    if text is None:
        return None
    try:
        a, b = text.split(":")
        return (float(a), float(b))
    except ValueError as exc:
        raise ConfigurationError(f"--window expects t0:t1, got {text!r}") from exc


def cmd_analyze(args):
    window = _window_arg(args.window)
    out = {"lambda_star": None, "M_K_curve": None, "window": None, "verdict": None,
           "fitted_rate": None}
    status = 0
    if args.mode == "tracking":
        if not args.series or args.mu is None:
            raise ConfigurationError("tracking mode needs --series and --mu")
        series = TimeSeries.from_csv(args.series)
        rep = tracking_report(series, args.mu)
        out.update(verdict=rep.verdict, fitted_rate=rep.fitted_rate, details=rep.to_dict())
        status = 0 if rep.passed else 1
    else:
        if not args.record:
            raise ConfigurationError(f"{args.mode} mode needs --record")
        record = ObservationRecord.load(args.record)
        lam1 = args.lambda1 if args.lambda1 is not None else record.grid.lambda1
        if args.mode == "kinf":
            c = 1.0 if args.c is None else args.c
            star, rep = find_K_inf(ShellHistory.from_record(record), args.nu, lam1, c, window,
                                   args.f_norm)
            out.update(lambda_star=star, M_K_curve=rep["M_K_curve"], verdict=rep["verdict"])
            if star is not None:
                bound = ShellHistory.from_record(record).data_bound(star, args.f_norm, args.nu, window)
                spec = InterpolantSpec.modal(star, c_override=c)
                out["window"] = mu_window(spec, bound, "regular", lambda_K=star).to_dict()
            status = 0 if star is not None else 1
        else:
            spec = record.spec
            if args.c is not None:
                spec = InterpolantSpec.from_dict(spec.to_dict() | {"c_override": args.c})
            bound = compute_data_bound(record, args.f_norm, args.nu, lam1, window)
            w = mu_window(spec, bound, args.purpose, grid=record.grid)
            out.update(window=w.to_dict(), verdict="feasible" if w.feasible else "infeasible",
                       M=bound.M)
            status = 0 if w.feasible else 1
    text = dumps_json(out)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text)
    return status


def cmd_interp_check(args):
    L = parse_length(args.L)
    grid = GridSpec(args.n, L)
    if args.kind == "modal":
        spec = InterpolantSpec.modal(parse_length(args.cutoff, L, lambda1=grid.lambda1))
    elif args.kind == "volume":
        spec = InterpolantSpec.volume(parse_length(args.h, L))
    else:
        spec = InterpolantSpec.mollified(parse_length(args.h, L), args.eps_fraction)
    spec = calibrate(spec, grid, args.samples, args.seed)
    print(dumps_json({"kind": spec.kind, "c1": spec.c1, "c2": spec.c2, "c3": spec.c3,
                      "c": spec.c, "protocol": spec.protocol}))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "assimilate": cmd_assimilate,
    "replay": cmd_replay,
    "adaptive": cmd_adaptive,
    "analyze": cmd_analyze,
    "interp-check": cmd_interp_check,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, RecordFormatError) as exc:
        print(f"nudge3d: configuration error: {exc}", file=sys.stderr)
        return 2
    except (BlowUpError, StabilityError) as exc:
        print(f"nudge3d: run failed: {exc}", file=sys.stderr)
        return 1
    except Nudge3DError as exc:
        print(f"nudge3d: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
