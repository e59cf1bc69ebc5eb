"""Cross-sectional four-factor regressions with crisis-window loadings."""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .errors import EmptyWindow, LengthMismatch, RankDeficient, ValidationError
from .factors import FACTOR_COLUMNS, FactorPanel
from .ingest import format_float, parse_date

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RegressionFit:
    names: tuple
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_stats: np.ndarray
    residuals: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    r2: float
    loglik_gaussian: float
    n: int
    k: int
    rss: float
    cov: np.ndarray = field(repr=False)
    robust: bool = False

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.standard_errors[self.names.index(name)])

    def t(self, name: str) -> float:
        return float(self.t_stats[self.names.index(name)])

    def as_dict(self) -> dict:
        return {nm: (float(b), float(s), float(t)) for nm, b, s, t in
                zip(self.names, self.coefficients, self.standard_errors, self.t_stats)}


def ols(y, X, intercept: bool = True, names=None, robust: bool = False) -> RegressionFit:
    """Least squares via QR.

    Args:
        y: Response, length n.
        X: Regressors, shape (n, k0) (a 1-D array is one column).
        intercept: Prepend a constant column named ``const``.
        names: Column names for X; defaults to ``x0, x1, ...``.
        robust: Use HC1 heteroskedasticity-consistent standard errors
            instead of the classical ``s^2 (X'X)^-1``.

    Raises:
        RankDeficient: naming the first column that is (numerically) a
            linear combination of the columns before it.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if y.ndim != 1 or X.shape[0] != y.size:
        raise LengthMismatch(f"y has {y.size} rows, X has {X.shape[0]}")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValidationError("names must match the number of columns")
    if intercept:
        X = np.column_stack([np.ones(y.size), X])
        names = ["const", *names]
    n, k = X.shape
    if n <= k:
        raise ValidationError(f"need more observations ({n}) than regressors ({k})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite values in regression data")
    Q, R = linalg.qr(X, mode="economic")
    col_norm = np.linalg.norm(X, axis=0)
    for j in range(k):
        if col_norm[j] == 0.0 or abs(R[j, j]) <= RANK_TOL * col_norm[j]:
            raise RankDeficient("regressor matrix is rank deficient", column=names[j])
    beta = linalg.solve_triangular(R, Q.T @ y)
    fitted = X @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    Rinv = linalg.solve_triangular(R, np.eye(k))
    xtx_inv = Rinv @ Rinv.T
    if robust:
        meat = (X * resid[:, None] ** 2).T @ X
        cov = xtx_inv @ meat @ xtx_inv * (n / (n - k))
    else:
        cov = xtx_inv * (rss / (n - k))
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, beta / se, np.nan)
    tss = float(np.sum((y - y.mean()) ** 2)) if intercept else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    ll = -0.5 * n * (math.log(2 * math.pi) + math.log(rss / n) + 1.0) if rss > 0 else math.inf
    return RegressionFit(tuple(names), beta, se, tstat, resid, fitted, r2, ll, n, k, rss, cov,
                         robust)


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class CrisisWindows:
    windows: tuple  # ((label, start, end), ...)

    def __post_init__(self):
        ws = tuple((str(lbl), np.datetime64(s, "D"), np.datetime64(e, "D"))
                   for lbl, s, e in self.windows)
        object.__setattr__(self, "windows", ws)
        problems = window_issues(ws)
        if problems:
            raise ValidationError("; ".join(problems))

    @classmethod
    def default(cls) -> "CrisisWindows":
        return cls((("Sep/Oct 08", "2008-09-01", "2008-10-31"),
                    ("May 10", "2010-05-01", "2010-05-31"),
                    ("Aug 11", "2011-08-01", "2011-08-31")))

    @classmethod
    def from_keyvalue(cls, path) -> "CrisisWindows":
        """Read ``label = start, end`` lines (under an optional ``[windows]`` header)."""
        return cls(read_windows(path))

    @property
    def labels(self) -> tuple:
        return tuple(w[0] for w in self.windows)

    def __len__(self):
        return len(self.windows)

    def indicators(self, dates) -> np.ndarray:
        d = np.asarray(dates, dtype="datetime64[D]")
        return np.column_stack([(d >= s) & (d <= e) for _, s, e in self.windows]).astype(float) \
            if self.windows else np.zeros((d.size, 0))


def window_issues(windows) -> list[str]:
    """Problems with a list of (label, start, end): reversed bounds, duplicates, overlaps."""
    issues = []
    labels = [w[0] for w in windows]
    for lbl in sorted({l for l in labels if labels.count(l) > 1}):
        issues.append(f"duplicate window label {lbl!r}")
    for lbl, s, e in windows:
        if e < s:
            issues.append(f"window {lbl!r} ends ({e}) before it starts ({s})")
    ordered = sorted((w for w in windows if w[2] >= w[1]), key=lambda w: (w[1], w[2]))
    # sweep: compare each window against the furthest-reaching earlier one
    reach = None
    for w in ordered:
        if reach is not None and w[1] <= reach[2]:
            issues.append(f"windows {reach[0]!r} and {w[0]!r} overlap")
        if reach is None or w[2] > reach[2]:
            reach = w
    return issues


def read_windows(path) -> list[tuple]:
    text = open(path).read()
    cp = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    cp.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[windows]\n" + text
    cp.read_string(text)
    if not cp.has_section("windows"):
        raise ValidationError(f"{path}: no [windows] section")
    out = []
    for label, value in cp.items("windows"):
        parts = [p.strip() for p in value.split(",")]
        if len(parts) != 2:
            raise ValidationError(f"{path}: window {label!r} needs 'start, end'")
        try:
            out.append((label, parse_date(parts[0]), parse_date(parts[1])))
        except ValueError:
            raise ValidationError(f"{path}: bad date in window {label!r}") from None
    return out


# ---------------------------------------------------------------- regressions

def _check(country, factors: FactorPanel):
    y = np.asarray(country, dtype=float)
    if y.shape != (len(factors),):
        raise LengthMismatch(f"country series has {y.size} rows, factors have {len(factors)}")
    return y


def fit_static_contagion(country, factors: FactorPanel, robust: bool = False) -> RegressionFit:
    y = _check(country, factors)
    return ols(y, factors.matrix(), intercept=True, names=FACTOR_COLUMNS, robust=robust)


def crisis_design(factors: FactorPanel, windows: CrisisWindows):
    ind = windows.indicators(factors.dates)
    for j, lbl in enumerate(windows.labels):
        if not ind[:, j].any():
            raise EmptyWindow(f"window {lbl!r} contains no sample dates")
    calm = 1.0 - ind.sum(axis=1)
    cols = [factors.x_us, factors.x_eu, factors.delta_us, factors.delta_eu * calm]
    cols += [factors.delta_eu * ind[:, j] for j in range(len(windows))]
    names = ["x_us", "x_eu", "delta_us", "delta_eu"] + [f"delta_eu[{l}]" for l in windows.labels]
    return np.column_stack(cols), names


def fit_crisis_contagion(country, factors: FactorPanel, windows: CrisisWindows,
                         robust: bool = False):
    """Regime-specific EU-shock loadings and the partial F-test of their equality.

    Returns ``(fit, (F, p_value))``. The restricted model is the static
    four-factor fit; the test has ``(len(windows), n - k)`` degrees of freedom.
    """
    y = _check(country, factors)
    X, names = crisis_design(factors, windows)
    full = ols(y, X, intercept=True, names=names, robust=robust)
    restricted = fit_static_contagion(y, factors)
    q = len(windows)
    df = full.n - full.k
    F = max(0.0, (restricted.rss - full.rss) / q) / (full.rss / df)
    return full, (float(F), float(stats.f.sf(F, q, df)))


def rolling_residual_correlation(residuals_a, residuals_b, window: int = 42) -> np.ndarray:
    """Trailing-window Pearson correlation; NaN before the first full window
    and wherever either side is constant inside the window."""
    a = np.asarray(residuals_a, dtype=float)
    b = np.asarray(residuals_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch("residual series differ in shape")
    if window < 3:
        raise ValidationError("window must be >= 3")
    if a.size < window:
        raise ValidationError(f"series shorter ({a.size}) than window ({window})")
    out = np.full(a.size, np.nan)
    wa = np.lib.stride_tricks.sliding_window_view(a, window)
    wb = np.lib.stride_tricks.sliding_window_view(b, window)
    da = wa - wa.mean(axis=1, keepdims=True)
    db = wb - wb.mean(axis=1, keepdims=True)
    num = np.einsum("ij,ij->i", da, db)
    den = np.sqrt(np.einsum("ij,ij->i", da, da) * np.einsum("ij,ij->i", db, db))
    const = (np.ptp(wa, axis=1) == 0) | (np.ptp(wb, axis=1) == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.clip(num / den, -1.0, 1.0)
    r[const] = np.nan
    out[window - 1:] = r
    return out


def capm_bias_demo(beta_i, beta_j, sigma_it2, sigma_jt2, sigma_t2) -> float:
    """Correlation of two assets that share one market factor.

    ``beta_i beta_j / sqrt((beta_i^2 + s_i/s_m)(beta_j^2 + s_j/s_m))``. Left
    unmodelled, the common factor shows up as residual correlation.
    """
    if min(sigma_it2, sigma_jt2, sigma_t2) <= 0:
        raise ValidationError("variances must be positive")
    return float(beta_i * beta_j / math.sqrt((beta_i ** 2 + sigma_it2 / sigma_t2)
                                             * (beta_j ** 2 + sigma_jt2 / sigma_t2)))


# ---------------------------------------------------------------- tables

def write_static_table(fits: dict, path) -> None:
    """One row per country: coefficient and t for every regressor, R^2, n."""
    names = next(iter(fits.values())).names if fits else ()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", *(f"{nm}{s}" for nm in names for s in ("", "_t")), "r2", "n"])
        for country, fit in fits.items():
            cells = [format_float(v) for b, t in zip(fit.coefficients, fit.t_stats) for v in (b, t)]
            w.writerow([country, *cells, format_float(fit.r2), fit.n])


def write_crisis_table(results: dict, path) -> None:
    """One row per country: regime loadings on the EU shock, their t, F and p."""
    first = next(iter(results.values()))[0] if results else None
    cols = [nm for nm in (first.names if first else ()) if nm.startswith("delta_eu")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", *(f"{nm}{s}" for nm in cols for s in ("", "_t")), "F", "p_value"])
        for country, (fit, (F, p)) in results.items():
            cells = [format_float(v) for nm in cols for v in (fit.coef(nm), fit.t(nm))]
            w.writerow([country, *cells, format_float(F), format_float(p)])
