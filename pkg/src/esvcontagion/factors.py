"""Four-factor regressor panel: market innovations and volatility shocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DateMismatch, DegenerateRegressor, LengthMismatch, ValidationError
from .ingest import ReturnPanel, load_series, write_wide_csv
from .volmodels import FilterOutput

FACTOR_COLUMNS = ("x_us", "x_eu", "delta_us", "delta_eu")


def orthogonalize(eu_shocks, us_shocks):
    """Residual of an OLS regression (with intercept) of ``eu_shocks`` on ``us_shocks``.

    Returns ``(delta_eu, slope)``.
    """
    e = np.asarray(eu_shocks, dtype=float)
    u = np.asarray(us_shocks, dtype=float)
    if e.shape != u.shape or e.ndim != 1:
        raise LengthMismatch(f"shock series differ in shape: {e.shape} vs {u.shape}")
    if e.size < 3:
        raise ValidationError("orthogonalization needs at least 3 observations")
    uc = u - u.mean()
    ss = float(uc @ uc)
    if ss <= 1e-300 or np.ptp(u) == 0.0:
        raise DegenerateRegressor("US shock series is constant")
    ec = e - e.mean()
    slope = float(uc @ ec) / ss
    return ec - slope * uc, slope


@dataclass(frozen=True)
class FactorPanel:
    dates: np.ndarray
    x_us: np.ndarray
    x_eu: np.ndarray
    delta_us: np.ndarray
    delta_eu: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dates", np.asarray(self.dates, dtype="datetime64[D]"))
        for name in FACTOR_COLUMNS:
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != self.dates.shape:
                raise LengthMismatch(f"factor column {name} has {v.size} rows, "
                                     f"dates have {self.dates.size}")
            object.__setattr__(self, name, v)

    def __len__(self):
        return self.dates.size

    def matrix(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in FACTOR_COLUMNS])

    def to_csv(self, path) -> None:
        write_wide_csv(path, self.dates, {c: getattr(self, c) for c in FACTOR_COLUMNS})

    @classmethod
    def from_csv(cls, path) -> "FactorPanel":
        by_name = {s.ticker: s for s in load_series(path, "wide", rf_column=None)}
        missing = [c for c in FACTOR_COLUMNS if c not in by_name]
        if missing:
            raise ValidationError(f"{path}: missing factor columns {missing}")
        dates = by_name["x_us"].dates
        for c in FACTOR_COLUMNS:
            if not np.array_equal(by_name[c].dates, dates):
                raise DateMismatch(f"{path}: column {c} has gaps")
        return cls(dates, *(by_name[c].values for c in FACTOR_COLUMNS))

    def align_to(self, panel: ReturnPanel) -> tuple["FactorPanel", ReturnPanel]:
        """Restrict factors and panel to their common dates."""
        common = np.intersect1d(self.dates, panel.dates, assume_unique=True)
        if common.size < 2:
            raise DateMismatch("factors and panel share fewer than 2 dates")
        i = np.searchsorted(self.dates, common)
        j = np.searchsorted(panel.dates, common)
        fp = FactorPanel(common, *(getattr(self, c)[i] for c in FACTOR_COLUMNS), meta=self.meta)
        return fp, ReturnPanel(common, panel.columns, panel.values[j])


def _check_dates(fit: FilterOutput, dates, name):
    if fit.x.size != dates.size:
        raise DateMismatch(f"{name} fit has {fit.x.size} days, panel has {dates.size}")
    if fit.dates is not None and not np.array_equal(np.asarray(fit.dates, dtype="datetime64[D]"),
                                                    dates):
        raise DateMismatch(f"{name} fit dates differ from the panel dates")


def build_factor_panel(us_fit: FilterOutput, eu_fit: FilterOutput,
                       panel: ReturnPanel | None = None) -> FactorPanel:
    """Demeaned factor returns plus US and orthogonalized EU volatility shocks.

    The market columns are observed return minus the filtered conditional
    mean. Shocks are left in percent units (not standardized). If the US
    shocks are constant the EU shocks are only demeaned (slope 0); the
    contagion regression then reports the rank deficiency.
    """
    if panel is not None:
        dates = panel.dates
    elif us_fit.dates is not None:
        dates = np.asarray(us_fit.dates, dtype="datetime64[D]")
    else:
        raise DateMismatch("no dates: pass a panel or fits that carry dates")
    _check_dates(us_fit, dates, "US")
    _check_dates(eu_fit, dates, "EU")
    if np.ptp(us_fit.shock) == 0.0:
        delta_eu, slope = eu_fit.shock - eu_fit.shock.mean(), 0.0
    else:
        delta_eu, slope = orthogonalize(eu_fit.shock, us_fit.shock)
    meta = {"eu_on_us_slope": slope, "standardized": False,
            "us_model": us_fit.meta.get("model"), "eu_model": eu_fit.meta.get("model")}
    fp = FactorPanel(dates, us_fit.x - us_fit.mu, eu_fit.x - eu_fit.mu, us_fit.shock.copy(),
                     delta_eu, meta)
    uc = fp.delta_us - fp.delta_us.mean()
    if uc @ uc > 0:
        resid_slope = float(uc @ fp.delta_eu) / float(uc @ uc)
        assert abs(resid_slope) < 1e-8, resid_slope
    return fp
