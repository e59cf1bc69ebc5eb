"""Residual moment tests and side-by-side model comparison tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import SampleTooSmall, SeriesMismatch, ValidationError
from .volmodels import FilterOutput


@dataclass(frozen=True)
class MomentTestResult:
    statistic: float
    sample_moment: float
    p_value: float
    n: int


def _central_moments(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("residuals must be a 1-D series")
    if not np.all(np.isfinite(x)):
        raise ValidationError("residuals contain non-finite values")
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0.0:
        raise ValidationError("residuals are constant")
    return x.size, m2, np.mean(d ** 3), np.mean(d ** 4)


def _two_sided(z: float) -> float:
    return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


def dagostino_skewness(residuals) -> MomentTestResult:
    """D'Agostino (1970) test of zero skewness (``scipy.stats.skewtest``).

    The sample skewness sqrt(b1) is mapped to an approximately standard
    normal Z through a Johnson S_U transformation.
    """
    x = np.asarray(residuals, dtype=float)
    if x.size < 8:
        raise SampleTooSmall(f"skewness test needs n >= 8, got {x.size}")
    n, m2, m3, _ = _central_moments(x)
    z = float(stats.skewtest(x).statistic)
    return MomentTestResult(z, float(m3 / m2 ** 1.5), _two_sided(z), int(n))


def anscombe_kurtosis(residuals) -> MomentTestResult:
    """Anscombe-Glynn (1983) test of zero excess kurtosis (``scipy.stats.kurtosistest``).

    ``sample_moment`` is the excess kurtosis b2 - 3.
    """
    x = np.asarray(residuals, dtype=float)
    if x.size < 20:
        raise SampleTooSmall(f"kurtosis test needs n >= 20, got {x.size}")
    n, m2, _, m4 = _central_moments(x)
    z = float(stats.kurtosistest(x).statistic)
    return MomentTestResult(z, float(m4 / (m2 * m2) - 3.0), _two_sided(z), int(n))


# ---------------------------------------------------------------- comparison

COLUMNS = ("label", "model", "spec", "alpha0", "alpha0_t", "alpha1", "alpha1_t",
           "skewness", "skew_p", "excess_kurtosis", "kurt_p", "loglik")


def _same_series(a: FilterOutput, b: FilterOutput) -> bool:
    if a.x.shape != b.x.shape or not np.array_equal(a.x, b.x):
        return False
    if a.dates is not None and b.dates is not None:
        return np.array_equal(np.asarray(a.dates), np.asarray(b.dates))
    return True


def model_comparison(fits) -> list[dict]:
    """One row per ``(label, FilterOutput)`` pair, in the order given.

    Mean coefficients and their t-statistics come from the fit metadata
    when present; missing entries are NaN.
    """
    fits = list(fits)
    if not fits:
        raise ValidationError("no fits to compare")
    ref = fits[0][1]
    rows = []
    for label, out in fits:
        if not _same_series(ref, out):
            raise SeriesMismatch(f"fit {label!r} is on a different series than {fits[0][0]!r}")
        r = out.std_residuals
        sk = dagostino_skewness(r)
        ku = anscombe_kurtosis(r)
        alpha = out.meta.get("alpha", {})
        tval = out.meta.get("alpha_t", {})
        rows.append({
            "label": label,
            "model": out.meta.get("model", ""),
            "spec": out.meta.get("spec", ""),
            "alpha0": alpha.get("alpha0", math.nan),
            "alpha0_t": tval.get("alpha0", math.nan),
            "alpha1": alpha.get("alpha1", math.nan),
            "alpha1_t": tval.get("alpha1", math.nan),
            "skewness": sk.sample_moment,
            "skew_p": sk.p_value,
            "excess_kurtosis": ku.sample_moment,
            "kurt_p": ku.p_value,
            "loglik": out.loglik,
        })
    return rows


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    return "" if math.isnan(v) else repr(float(v))


def write_comparison_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in COLUMNS])


def format_comparison(rows) -> str:
    """Aligned plain-text rendering (alphas scaled by 100, as usually reported)."""
    head = ("label", "a0x100", "t", "a1x100", "t", "skew", "p", "exkurt", "p", "loglik")

    def fmt(v, spec):
        return "" if isinstance(v, float) and math.isnan(v) else format(v, spec)

    body = [(r["label"], fmt(100 * r["alpha0"], ".3f"), fmt(r["alpha0_t"], ".3f"),
             fmt(100 * r["alpha1"], ".3f"), fmt(r["alpha1_t"], ".3f"),
             fmt(r["skewness"], ".3f"), fmt(r["skew_p"], ".3f"),
             fmt(r["excess_kurtosis"], ".3f"), fmt(r["kurt_p"], ".3f"),
             fmt(r["loglik"], ".2f")) for r in rows]
    widths = [max(len(str(row[i])) for row in (head, *body)) for i in range(len(head))]
    lines = ["  ".join(str(c).rjust(w) if i else str(c).ljust(w)
                       for i, (c, w) in enumerate(zip(row, widths))) for row in (head, *body)]
    return "\n".join(lines) + "\n"
