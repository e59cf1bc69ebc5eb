"""Two-stage pipeline: factor volatility fits, then country contagion regressions."""

from __future__ import annotations

import configparser
import hashlib
import itertools
import json
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .contagion import (CrisisWindows, fit_crisis_contagion, fit_static_contagion,
                        rolling_residual_correlation, window_issues, write_crisis_table,
                        write_static_table)
from .diagnostics import model_comparison, write_comparison_csv
from .errors import StageFailed, ValidationError
from .esv import GridSpec, esv_filter, grid_search
from .factors import FactorPanel, build_factor_panel
from .ingest import ReturnPanel, align, load_series, parse_date, write_wide_csv
from .volmodels import FilterOutput, MeanModelSpec, garch_fit

VOL_MODELS = ("garch", "sv", "esv")


# ---------------------------------------------------------------- config

@dataclass
class PipelineConfig:
    factors_path: Path
    countries_path: Path
    out_dir: Path = Path("out")
    us_column: str = "US"
    eu_column: str = "EU"
    countries: tuple | None = None
    us_spec: str = "M1a"
    eu_spec: str = "M1a"
    us_vol: str = "esv"
    eu_vol: str = "esv"
    nu: float = 2.0
    particles: int = 10000
    grid_particles: int = 2000
    grid: GridSpec | None = None
    grid_path: Path | None = None
    seed: int | None = None
    windows: list = field(default_factory=lambda: list(CrisisWindows.default().windows))
    corr_window: int = 42
    robust: bool = False
    threads: int = 1


def _parser(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(delimiters=("=",), interpolation=None,
                                   inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    cp.read_string(text)
    return cp


def _floats(value: str) -> tuple:
    return tuple(float(v) for v in value.replace(",", " ").split())


def read_grid(path) -> GridSpec:
    """Grid file: ``sigma0``, ``phi``, ``tau2`` keys, each a list of values
    separated by commas or spaces, optionally under a ``[grid]`` header."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[grid]\n" + text
    try:
        sec = _parser(text)["grid"]
        return GridSpec(_floats(sec["sigma0"]), _floats(sec["phi"]), _floats(sec["tau2"]))
    except KeyError as e:
        raise ValidationError(f"{path}: grid needs key {e}") from None
    except (ValueError, configparser.Error) as e:
        raise ValidationError(f"{path}: {e}") from None


def load_config(path) -> PipelineConfig:
    """Read an INI-style pipeline config. Relative paths resolve against the file's folder.

    Sections and keys (all optional unless marked)::

        [data]    factors (required), countries (required), us_column, eu_column,
                  columns (comma-separated subset of country columns)
        [model]   us_spec, eu_spec, us_vol, eu_vol (garch|sv|esv), nu,
                  particles, grid_particles, grid (path to a grid file)
        [run]     seed, out, corr_window, robust, threads
        [windows] label = start, end     (replaces the default crisis windows)
    """
    path = Path(path)
    base = path.parent
    try:
        cp = _parser(path.read_text())
    except configparser.Error as e:
        raise ValidationError(f"{path}: {e}") from None
    if not cp.has_section("data"):
        raise ValidationError(f"{path}: missing [data] section")
    data = cp["data"]
    for key in ("factors", "countries"):
        if key not in data:
            raise ValidationError(f"{path}: [data] needs '{key}'")
    model = cp["model"] if cp.has_section("model") else {}
    run = cp["run"] if cp.has_section("run") else {}

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        cfg = PipelineConfig(
            factors_path=rel(data["factors"]),
            countries_path=rel(data["countries"]),
            us_column=data.get("us_column", "US"),
            eu_column=data.get("eu_column", "EU"),
            countries=tuple(c.strip() for c in data["columns"].split(",")) if "columns" in data
            else None,
            us_spec=model.get("us_spec", "M1a"),
            eu_spec=model.get("eu_spec", "M1a"),
            us_vol=model.get("us_vol", "esv").lower(),
            eu_vol=model.get("eu_vol", "esv").lower(),
            nu=float(model.get("nu", "2")),
            particles=int(model.get("particles", "10000")),
            grid_particles=int(model.get("grid_particles", "2000")),
            grid_path=rel(model["grid"]) if "grid" in model else None,
            seed=int(run["seed"]) if "seed" in run else None,
            out_dir=rel(run.get("out", "out")),
            corr_window=int(run.get("corr_window", "42")),
            robust=run.get("robust", "false").lower() in ("1", "true", "yes", "on"),
            threads=int(run.get("threads", "1")),
        )
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from None
    if cp.has_section("windows"):
        wins = []
        for label, value in cp.items("windows"):
            parts = [p.strip() for p in value.split(",")]
            try:
                if len(parts) != 2:
                    raise ValueError
                wins.append((label, parse_date(parts[0]), parse_date(parts[1])))
            except ValueError:
                raise ValidationError(f"{path}: window {label!r} must be 'start, end'") from None
        cfg.windows = wins
    return cfg


def validate_config(cfg: PipelineConfig) -> list[str]:
    """Every problem found in ``cfg``; an empty list means it is runnable."""
    issues = []
    for p in (cfg.factors_path, cfg.countries_path, cfg.grid_path):
        if p is not None and not Path(p).is_file():
            issues.append(f"file not found: {p}")
    for who, spec, vol in (("US", cfg.us_spec, cfg.us_vol), ("EU", cfg.eu_spec, cfg.eu_vol)):
        try:
            MeanModelSpec.of(spec)
        except ValidationError as e:
            issues.append(f"{who} mean spec: {e}")
        if vol not in VOL_MODELS:
            issues.append(f"{who} volatility model {vol!r} not one of {VOL_MODELS}")
    if cfg.seed is None and {cfg.us_vol, cfg.eu_vol} & {"sv", "esv"}:
        issues.append("a seed is required when a stochastic-volatility model is selected")
    if not (cfg.nu >= 1):
        issues.append(f"nu must be >= 1, got {cfg.nu}")
    if cfg.particles < 100 or cfg.grid_particles < 100:
        issues.append("particle counts must be >= 100")
    if cfg.corr_window < 3:
        issues.append("corr_window must be >= 3")
    if cfg.threads < 1:
        issues.append("threads must be >= 1")
    issues.extend(window_issues([(l, np.datetime64(s, "D"), np.datetime64(e, "D"))
                                 for l, s, e in cfg.windows]))
    return issues


# ---------------------------------------------------------------- fit files

FIT_COLUMNS = ("x", "mu", "sigma", "shock", "std_residual", "normal_score")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_fit(out: FilterOutput, path) -> None:
    """CSV of the per-day series plus a JSON sidecar with the fit metadata."""
    path = Path(path)
    dates = out.dates if out.dates is not None else np.arange(len(out)).astype("datetime64[D]")
    cols = {"x": out.x, "mu": out.mu, "sigma": out.sigma, "shock": out.shock,
            "std_residual": out.std_residuals}
    if out.normal_scores is not None:
        cols["normal_score"] = out.normal_scores
    write_wide_csv(path, dates, cols)
    write_json({**out.meta, "loglik": out.loglik}, path.with_suffix(".json"))


def read_fit(path) -> FilterOutput:
    path = Path(path)
    cols = {s.ticker: s for s in load_series(path, "wide", rf_column=None)}
    missing = [c for c in ("x", "mu", "sigma", "shock") if c not in cols]
    if missing:
        raise ValidationError(f"{path}: not a fit file (missing {missing})")
    meta = {}
    side = path.with_suffix(".json")
    if side.is_file():
        meta = json.loads(side.read_text())
    loglik = float(meta.pop("loglik", "nan"))
    scores = cols["normal_score"].values if "normal_score" in cols else None
    return FilterOutput(cols["x"].values, cols["mu"].values, cols["sigma"].values,
                        cols["shock"].values, loglik, dates=cols["x"].dates, meta=meta,
                        normal_scores=scores)


# ---------------------------------------------------------------- stages

def fit_factor(x, dates, spec, vol: str, *, nu=2.0, particles=10000, grid_particles=2000,
               grid: GridSpec | None = None, seed=None) -> FilterOutput:
    """Fit one factor series with GARCH-AM, SV or ESV volatility."""
    spec = MeanModelSpec.of(spec)
    if vol == "garch":
        return garch_fit(x, spec, dates=dates).output
    if vol not in ("sv", "esv"):
        raise ValidationError(f"unknown volatility model {vol!r}")
    if seed is None:
        raise ValidationError("stochastic-volatility fits need a seed")
    nu = math.inf if vol == "sv" else float(nu)
    grid = grid or GridSpec.default()
    search = grid_search(x, grid, spec, nu, grid_particles, seed=seed, on_error="skip",
                         dates=dates)
    if particles == grid_particles:
        out = search.output
    else:
        out = esv_filter(x, search.params, spec, particles, seed=seed, dates=dates)
    out.meta["grid"] = {"sigma0": list(grid.sigma0_values), "phi": list(grid.phi_values),
                        "tau2": list(grid.tau2_values)}
    out.meta["grid_loglik"] = search.logliks.tolist()
    out.meta["grid_particles"] = grid_particles
    if "failed_points" in search.output.meta:
        out.meta["failed_points"] = search.output.meta["failed_points"]
    return out


def _load_inputs(cfg: PipelineConfig):
    series = {s.ticker: s for s in load_series(cfg.factors_path, "wide")}
    for c in (cfg.us_column, cfg.eu_column):
        if c not in series:
            raise ValidationError(f"{cfg.factors_path}: no column {c!r}")
    countries = ReturnPanel.from_csv(cfg.countries_path, cfg.countries)
    joined = align([series[cfg.us_column], series[cfg.eu_column], *countries.series()])
    factors = joined.select([cfg.us_column, cfg.eu_column])
    return factors, joined.select(list(countries.columns))


def _stage(name):
    def wrap(fn):
        def inner(*a, **k):
            try:
                return fn(*a, **k)
            except StageFailed:
                raise
            except Exception as e:  # noqa: BLE001 - re-raised with the stage name
                raise StageFailed(name, e) from e
        return inner
    return wrap


@_stage("stage 1 (factor fits)")
def run_stage1(cfg: PipelineConfig, factors: ReturnPanel, countries: ReturnPanel, out1: Path):
    grid = cfg.grid or (read_grid(cfg.grid_path) if cfg.grid_path else None)
    jobs = [("US", cfg.us_column, cfg.us_spec, cfg.us_vol), ("EU", cfg.eu_column, cfg.eu_spec,
                                                             cfg.eu_vol)]

    def one(job):
        who, col, spec, vol = job
        seed = rngmod.derive_seed(cfg.seed, "stage1", who) if cfg.seed is not None else None
        return fit_factor(factors.column(col), factors.dates, spec, vol, nu=cfg.nu,
                          particles=cfg.particles, grid_particles=cfg.grid_particles,
                          grid=grid, seed=seed)

    with ThreadPoolExecutor(max_workers=min(cfg.threads, 2)) as pool:
        us_fit, eu_fit = pool.map(one, jobs)
    out1.mkdir(parents=True, exist_ok=True)
    write_fit(us_fit, out1 / "fit_US.csv")
    write_fit(eu_fit, out1 / "fit_EU.csv")
    rows = []
    for who, fit in (("US", us_fit), ("EU", eu_fit)):
        rows += model_comparison([(f"{who} {fit.meta['model']} {fit.meta['spec']}", fit)])
    write_comparison_csv(rows, out1 / "factor_fits.csv")
    fp = build_factor_panel(us_fit, eu_fit, countries)
    fp.to_csv(out1 / "factors.csv")
    write_json(fp.meta, out1 / "factors.json")
    return fp


@_stage("stage 2 (contagion regressions)")
def run_stage2(cfg: PipelineConfig, fp: FactorPanel, countries: ReturnPanel, out2: Path):
    windows = CrisisWindows(cfg.windows)
    fp, countries = fp.align_to(countries)
    names = countries.columns

    def one(c):
        y = countries.column(c)
        return (fit_static_contagion(y, fp, robust=cfg.robust),
                fit_crisis_contagion(y, fp, windows, robust=cfg.robust))

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        results = list(pool.map(one, names))
    static = {c: r[0] for c, r in zip(names, results)}
    crisis = {c: r[1] for c, r in zip(names, results)}
    out2.mkdir(parents=True, exist_ok=True)
    write_static_table(static, out2 / "static_contagion.csv")
    write_crisis_table(crisis, out2 / "crisis_contagion.csv")
    corr = {f"{a}~{b}": rolling_residual_correlation(static[a].residuals, static[b].residuals,
                                                     cfg.corr_window)
            for a, b in itertools.combinations(names, 2)}
    if corr:
        write_wide_csv(out2 / "rolling_correlation.csv", fp.dates, corr)
    write_json({c: {"static": static[c].as_dict(), "crisis": crisis[c][0].as_dict(),
                    "F": crisis[c][1][0], "p_value": crisis[c][1][1], "r2": static[c].r2,
                    "n": static[c].n} for c in names}, out2 / "regressions.json")
    return static, crisis


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"esvcontagion": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_pipeline(cfg: PipelineConfig, from_stage: int = 1) -> dict:
    """Run both stages (or only stage 2 from cached stage-1 output) and write a manifest.

    Returns the manifest. Raises :class:`ValidationError` listing every
    config issue before any computation, and :class:`StageFailed` if a
    stage errors.
    """
    issues = validate_config(cfg)
    if issues:
        raise ValidationError("invalid config:\n  " + "\n  ".join(issues))
    if from_stage not in (1, 2):
        raise ValidationError("from_stage must be 1 or 2")
    out = Path(cfg.out_dir)
    out1, out2 = out / "stage1", out / "stage2"
    try:
        factors, countries = _load_inputs(cfg)
    except Exception as e:
        raise StageFailed("loading inputs", e) from e
    if from_stage == 1:
        fp = run_stage1(cfg, factors, countries, out1)
    else:
        cached = out1 / "factors.csv"
        if not cached.is_file():
            raise ValidationError(f"--from-stage 2 needs {cached}")
        fp = FactorPanel.from_csv(cached)
    run_stage2(cfg, fp, countries, out2)

    inputs = {str(p): sha256(p) for p in (cfg.factors_path, cfg.countries_path, cfg.grid_path)
              if p is not None}
    outputs = {str(p.relative_to(out)): sha256(p) for p in sorted(out.rglob("*"))
               if p.is_file() and p.name != "manifest.json"}
    manifest = {"seed": cfg.seed, "inputs": inputs, "outputs": outputs,
                "versions": _versions(),
                "settings": {"us": [cfg.us_column, cfg.us_spec, cfg.us_vol],
                             "eu": [cfg.eu_column, cfg.eu_spec, cfg.eu_vol],
                             "nu": cfg.nu, "particles": cfg.particles,
                             "grid_particles": cfg.grid_particles,
                             "windows": [[l, str(s), str(e)] for l, s, e in cfg.windows],
                             "corr_window": cfg.corr_window, "robust": cfg.robust,
                             "shocks_standardized": False}}
    write_json(manifest, out / "manifest.json")
    return manifest


__all__ = ["PipelineConfig", "load_config", "validate_config", "run_pipeline", "read_grid",
           "fit_factor", "write_fit", "read_fit"]
