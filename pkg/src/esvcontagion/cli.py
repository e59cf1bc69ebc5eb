"""Command-line entry point: ``esvcontagion <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import itertools
import math
import sys
from pathlib import Path

from . import pipeline
from .contagion import (CrisisWindows, fit_crisis_contagion, fit_static_contagion,
                        rolling_residual_correlation, write_crisis_table, write_static_table)
from .diagnostics import (anscombe_kurtosis, dagostino_skewness, format_comparison,
                          model_comparison, write_comparison_csv)
from .errors import NumericError, StageFailed, ValidationError
from .esv import EsvParams, GridSpec
from .factors import FactorPanel, build_factor_panel
from .ingest import ReturnPanel, load_series, write_wide_csv
from .simulate import JointSimConfig, business_days, sim_esv, sim_garch, sim_joint_panel
from .volmodels import GarchParams, MeanModelSpec, largest_residuals

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _out(args) -> Path:
    p = Path(args.out or ".")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _need_seed(args) -> int:
    if args.seed is None:
        raise ValidationError("--seed is required for this command")
    return args.seed


def _series(path, column):
    by_name = {s.ticker: s for s in load_series(path, "wide")}
    if column not in by_name:
        raise ValidationError(f"{path}: no column {column!r}; have {sorted(by_name)}")
    return by_name[column]


# ---------------------------------------------------------------- simulate

def _section_floats(sec, *keys):
    try:
        return [float(sec[k]) for k in keys]
    except KeyError as e:
        raise ValidationError(f"[{sec.name}] needs key {e}") from None


def _alpha(sec, spec: MeanModelSpec):
    vals = pipeline._floats(sec.get("alpha", "")) or (0.0,) * len(spec.alpha_names)
    if len(vals) != len(spec.alpha_names):
        raise ValidationError(f"[{sec.name}] alpha needs {len(spec.alpha_names)} values")
    return vals


def _esv_section(sec) -> EsvParams:
    s0, phi, tau2 = _section_floats(sec, "sigma0", "phi", "tau2")
    return EsvParams(s0, phi, tau2, float(sec.get("nu", "2")))


def cmd_simulate(args):
    cp = pipeline._parser(Path(args.config).read_text())
    if not cp.has_section("simulation"):
        raise ValidationError(f"{args.config}: missing [simulation] section")
    sim = cp["simulation"]
    kind = sim.get("kind", "joint")
    T = int(sim.get("T", "2000"))
    seed = args.seed if args.seed is not None else int(sim.get("seed", "0"))
    out = _out(args)
    if kind == "garch":
        sec = cp["garch"]
        spec = MeanModelSpec.of(sec.get("spec", "M3"))
        a = dict(zip(spec.alpha_names, _alpha(sec, spec)))
        params = GarchParams(*_section_floats(sec, "zeta0", "zeta1", "zeta2", "zeta3"), **a)
        x, sigma = sim_garch(params, spec, T, seed)
        dates = business_days(T)
        write_wide_csv(out / "series.csv", dates, {"x": x})
        write_wide_csv(out / "truth.csv", dates, {"sigma": sigma})
    elif kind == "esv":
        sec = cp["esv"]
        spec = MeanModelSpec.of(sec.get("spec", "M3"))
        path = sim_esv(_esv_section(sec), spec, _alpha(sec, spec), T, seed)
        dates = business_days(T)
        write_wide_csv(out / "series.csv", dates, {"x": path.x})
        write_wide_csv(out / "truth.csv", dates, {"sigma": path.sigma, "mu": path.mu,
                                                  "shock": path.shocks})
    elif kind == "joint":
        countries = [s for s in cp.sections() if s.startswith("country ")]
        if not countries:
            raise ValidationError(f"{args.config}: no [country NAME] sections")
        rows = [_section_floats(cp[c], "b_us", "b_eu", "gamma1", "gamma2") for c in countries]
        cfg = JointSimConfig(
            esv_us=_esv_section(cp["us"]), esv_eu=_esv_section(cp["eu"]),
            chol=tuple(_section_floats(sim, "l11", "l21", "l22")),
            B=[r[:2] for r in rows], Gamma_u=[r[2:] for r in rows],
            alpha=[float(cp[c].get("alpha", "0")) for c in countries],
            idio_sd=[float(cp[c].get("idio_sd", "1")) for c in countries],
            T=T, seed=seed, countries=tuple(c.split(None, 1)[1] for c in countries))
        js = sim_joint_panel(cfg)
        js.countries.to_csv(out / "countries.csv")
        js.factors.to_csv(out / "factors.csv")
        write_wide_csv(out / "truth.csv", js.countries.dates, {
            "sigma_US": js.sigma[:, 0], "sigma_EU": js.sigma[:, 1],
            "mu_US": js.mu[:, 0], "mu_EU": js.mu[:, 1],
            "delta1": js.deltas[:, 0], "delta2": js.deltas[:, 1],
            "eta1": js.eta[:, 0], "eta2": js.eta[:, 1]})
        pipeline.write_json({**js.meta, "seed": seed, "T": T}, out / "simulation.json")
    else:
        raise ValidationError(f"unknown simulation kind {kind!r} (garch, esv or joint)")
    print(f"wrote simulated {kind} data to {out}")


# ---------------------------------------------------------------- fits

def cmd_fit_garch(args):
    s = _series(args.data, args.column)
    fit = pipeline.fit_factor(s.values, s.dates, args.spec, "garch")
    out = _out(args)
    pipeline.write_fit(fit, out / f"fit_{args.column}.csv")
    meta = fit.meta
    print(f"GARCH-AM {meta['spec']} on {args.column}: loglik {fit.loglik:.2f}")
    for name, v in meta["params"].items():
        se = meta["se"].get(name, math.nan)
        print(f"  {name:7s} {v: .6f}  (se {se:.6f})")
    print("largest standardized residuals:")
    for d, x, r in largest_residuals(fit, s.dates, args.top):
        print(f"  {d}  return {x: .3f}  std resid {r: .3f}")


def cmd_fit_esv(args):
    s = _series(args.data, args.column)
    seed = _need_seed(args)
    grid = pipeline.read_grid(args.grid) if args.grid else GridSpec.default()
    vol = "sv" if math.isinf(args.nu) else "esv"
    fit = pipeline.fit_factor(s.values, s.dates, args.spec, vol, nu=args.nu,
                              particles=args.particles,
                              grid_particles=args.grid_particles or args.particles,
                              grid=grid, seed=seed)
    out = _out(args)
    pipeline.write_fit(fit, out / f"fit_{args.column}.csv")
    p = fit.meta["params"]
    print(f"{vol.upper()} {fit.meta['spec']} on {args.column}: loglik {fit.loglik:.2f}")
    print(f"  sigma0 {p['sigma0']}  phi {p['phi']}  tau2 {p['tau2']}  nu {p['nu']}")
    for name in fit.meta["alpha"]:
        print(f"  {name:7s} {fit.meta['alpha'][name]: .6f}  (t {fit.meta['alpha_t'][name]:.3f})")


def cmd_diagnose(args):
    cols = {s.ticker: s for s in load_series(args.residuals, "wide", rf_column=None)}
    if args.column:
        names = [args.column]
    else:
        names = [c for c in ("std_residual", "normal_score") if c in cols] or list(cols)
    rows = []
    for name in names:
        if name not in cols:
            raise ValidationError(f"{args.residuals}: no column {name!r}")
        r = cols[name].values
        sk, ku = dagostino_skewness(r), anscombe_kurtosis(r)
        rows.append({"label": name, "model": "", "spec": "", "alpha0": math.nan,
                     "alpha0_t": math.nan, "alpha1": math.nan, "alpha1_t": math.nan,
                     "skewness": sk.sample_moment, "skew_p": sk.p_value,
                     "excess_kurtosis": ku.sample_moment, "kurt_p": ku.p_value,
                     "loglik": math.nan})
    out = _out(args)
    write_comparison_csv(rows, out / "diagnostics.csv")
    sys.stdout.write(format_comparison(rows))


def cmd_compare(args):
    fits = [(Path(f).stem, pipeline.read_fit(f)) for f in args.fits]
    rows = model_comparison(fits)
    write_comparison_csv(rows, _out(args) / "comparison.csv")
    sys.stdout.write(format_comparison(rows))


def cmd_build_factors(args):
    us, eu = pipeline.read_fit(args.us_fit), pipeline.read_fit(args.eu_fit)
    panel = ReturnPanel.from_csv(args.panel) if args.panel else None
    fp = build_factor_panel(us, eu, panel)
    out = _out(args)
    fp.to_csv(out / "factors.csv")
    pipeline.write_json(fp.meta, out / "factors.json")
    print(f"wrote {len(fp)} rows to {out / 'factors.csv'} (EU-on-US slope "
          f"{fp.meta['eu_on_us_slope']:.4f})")


def cmd_fit_contagion(args):
    fp = FactorPanel.from_csv(args.factors)
    panel = ReturnPanel.from_csv(args.panel)
    fp, panel = fp.align_to(panel)
    windows = CrisisWindows.from_keyvalue(args.windows) if args.windows else \
        CrisisWindows.default()
    static, crisis = {}, {}
    for c in panel.columns:
        y = panel.column(c)
        static[c] = fit_static_contagion(y, fp, robust=args.robust)
        crisis[c] = fit_crisis_contagion(y, fp, windows, robust=args.robust)
    out = _out(args)
    write_static_table(static, out / "static_contagion.csv")
    write_crisis_table(crisis, out / "crisis_contagion.csv")
    corr = {f"{a}~{b}": rolling_residual_correlation(static[a].residuals, static[b].residuals,
                                                     args.window)
            for a, b in itertools.combinations(panel.columns, 2)}
    if corr:
        write_wide_csv(out / "rolling_correlation.csv", fp.dates, corr)
    for c in panel.columns:
        f = static[c]
        F, p = crisis[c][1]
        print(f"{c:8s} " + "  ".join(f"{n} {f.coef(n): .3f} [{f.t(n):.2f}]"
                                     for n in f.names[1:]) + f"  F {F:.2f} p {p:.3f}")


def cmd_run(args):
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = Path(args.out)
    if args.threads is not None:
        cfg.threads = args.threads
    manifest = pipeline.run_pipeline(cfg, from_stage=args.from_stage)
    print(f"pipeline finished; {len(manifest['outputs'])} outputs under {cfg.out_dir}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root random seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads for independent fits")

    ap = argparse.ArgumentParser(prog="esvcontagion", description=__doc__.splitlines()[0],
                                 parents=[common])
    ap.set_defaults(seed=None, out=None, threads=None)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic data")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-garch", parents=[common], help="GARCH-AM maximum likelihood")
    p.add_argument("--data", required=True)
    p.add_argument("--column", default="US")
    p.add_argument("--spec", default="M1a")
    p.add_argument("--top", type=int, default=5, help="largest residuals to list")
    p.set_defaults(func=cmd_fit_garch)

    p = sub.add_parser("fit-esv", parents=[common], help="SV/ESV particle filter + grid search")
    p.add_argument("--data", required=True)
    p.add_argument("--column", default="US")
    p.add_argument("--spec", default="M1a")
    p.add_argument("--nu", type=float, default=2.0, help="'inf' gives Gaussian SV")
    p.add_argument("--particles", type=int, default=10000)
    p.add_argument("--grid-particles", type=int, default=None)
    p.add_argument("--grid", help="grid file with sigma0, phi, tau2 lists")
    p.set_defaults(func=cmd_fit_esv)

    p = sub.add_parser("diagnose", parents=[common], help="skewness and kurtosis tests")
    p.add_argument("--residuals", required=True)
    p.add_argument("--column")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", parents=[common], help="model comparison of fit files")
    p.add_argument("fits", nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("build-factors", parents=[common], help="four-factor panel from two fits")
    p.add_argument("--us-fit", required=True)
    p.add_argument("--eu-fit", required=True)
    p.add_argument("--panel")
    p.set_defaults(func=cmd_build_factors)

    p = sub.add_parser("fit-contagion", parents=[common], help="country regressions")
    p.add_argument("--factors", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--windows")
    p.add_argument("--window", type=int, default=42, help="rolling correlation length")
    p.add_argument("--robust", action="store_true", help="HC1 standard errors")
    p.set_defaults(func=cmd_fit_contagion)

    p = sub.add_parser("run", parents=[common], help="full two-stage pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--from-stage", type=int, choices=(1, 2), default=1)
    p.set_defaults(func=cmd_run)
    return ap


def _exit_code(err: BaseException) -> int:
    if isinstance(err, StageFailed):
        return _exit_code(err.cause)
    if isinstance(err, NumericError):
        return EXIT_NUMERIC
    return EXIT_INVALID


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, NumericError, StageFailed, FileNotFoundError,
            configparser.Error) as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
