import math

import numpy as np
import pytest

from esvcontagion.errors import DateMismatch, DegenerateRegressor, LengthMismatch, ValidationError
from esvcontagion.esv import EsvParams, esv_filter
from esvcontagion.factors import FACTOR_COLUMNS, FactorPanel, build_factor_panel, orthogonalize
from esvcontagion.ingest import ReturnPanel
from esvcontagion.simulate import JointSimConfig, business_days, sim_joint_panel
from esvcontagion.volmodels import FilterOutput

# mean correlations between filtered and true shocks over joint-simulation
# seeds 0-4 (T=2000, N=10000, true parameters) in the calibration run:
# delta_us vs delta1 0.350 (range 0.20-0.52), delta_eu vs delta2 0.238
DELTA_US_CORR = 0.25
DELTA_EU_CORR = 0.15

US = EsvParams(0.05, 0.95, 0.01, 2.0)
EU = EsvParams(0.06, 0.94, 0.01, 2.0)


def ols_slope_se(y, x):
    xc, yc = x - x.mean(), y - y.mean()
    b = xc @ yc / (xc @ xc)
    r = yc - b * xc
    return b, math.sqrt(r @ r / (len(x) - 2) / (xc @ xc))


def fit(x, mu, shock, dates=None):
    n = len(x)
    return FilterOutput(np.asarray(x, float), np.asarray(mu, float), np.ones(n),
                        np.asarray(shock, float), 0.0, dates=dates, meta={"model": "test"})


def test_exact_collinearity():
    us = np.random.default_rng(1).standard_normal(50)
    d, slope = orthogonalize(2 * us, us)
    assert slope == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_independent_shocks_have_no_slope():
    g = np.random.default_rng(2)
    us, eu = g.standard_normal(3000), g.standard_normal(3000)
    _, slope = orthogonalize(eu, us)
    b, se = ols_slope_se(eu, us)
    assert slope == pytest.approx(b)
    assert abs(slope) < 3 * se


def test_triangular_system_slope():
    hits = 0
    for seed in range(40):
        sim = sim_joint_panel(JointSimConfig(US, EU, (1.0, 0.7, 0.8), [[1, 0]], [[0, 0]], [0],
                                             [1], 5000, seed))
        _, slope = orthogonalize(sim.eta[:, 1], sim.eta[:, 0])
        _, se = ols_slope_se(sim.eta[:, 1], sim.eta[:, 0])
        hits += abs(slope - 0.7) < 3 * se
    assert hits >= 38


def test_residual_is_mean_zero_and_orthogonal():
    g = np.random.default_rng(4)
    us = g.standard_normal(200)
    eu = 0.3 + 0.5 * us + g.standard_normal(200)
    d, _ = orthogonalize(eu, us)
    assert abs(d.mean()) < 1e-12
    assert abs(d @ (us - us.mean())) < 1e-9


def test_orthogonalize_errors():
    with pytest.raises(DegenerateRegressor):
        orthogonalize(np.arange(5.0), np.ones(5))
    with pytest.raises(LengthMismatch):
        orthogonalize(np.arange(5.0), np.arange(4.0))
    with pytest.raises(ValidationError):
        orthogonalize(np.arange(2.0), np.arange(2.0))


def test_panel_columns():
    g = np.random.default_rng(5)
    dates = business_days(100)
    us = fit(g.standard_normal(100), g.standard_normal(100), g.standard_normal(100), dates)
    eu = fit(g.standard_normal(100), g.standard_normal(100), g.standard_normal(100), dates)
    fp = build_factor_panel(us, eu)
    np.testing.assert_array_equal(fp.x_us, us.x - us.mu)
    np.testing.assert_array_equal(fp.x_eu, eu.x - eu.mu)
    np.testing.assert_array_equal(fp.delta_us, us.shock)
    np.testing.assert_allclose(fp.delta_eu, orthogonalize(eu.shock, us.shock)[0])
    assert fp.meta["standardized"] is False
    assert fp.matrix().shape == (100, 4)
    again = build_factor_panel(us, eu)
    for c in FACTOR_COLUMNS:
        assert np.array_equal(getattr(fp, c), getattr(again, c))


def test_zero_shocks_give_zero_deltas():
    dates = business_days(30)
    z = np.zeros(30)
    fp = build_factor_panel(fit(np.ones(30), z, z, dates), fit(np.ones(30), z, z, dates))
    assert np.all(fp.delta_us == 0) and np.all(fp.delta_eu == 0)


def test_date_mismatch():
    dates = business_days(30)
    a = fit(np.zeros(30), np.zeros(30), np.arange(30.0), dates)
    b = fit(np.zeros(30), np.zeros(30), np.arange(30.0), business_days(30, np.datetime64("2001-01-01")))
    with pytest.raises(DateMismatch):
        build_factor_panel(a, b)
    panel = ReturnPanel(business_days(29), ("C",), np.zeros((29, 1)))
    with pytest.raises(DateMismatch):
        build_factor_panel(a, a, panel)
    with pytest.raises(DateMismatch):
        build_factor_panel(fit(np.zeros(5), np.zeros(5), np.arange(5.0)),
                           fit(np.zeros(5), np.zeros(5), np.arange(5.0)))


def test_csv_round_trip_and_alignment(tmp_path):
    g = np.random.default_rng(6)
    dates = business_days(40)
    fp = FactorPanel(dates, *g.standard_normal((4, 40)))
    fp.to_csv(tmp_path / "f.csv")
    back = FactorPanel.from_csv(tmp_path / "f.csv")
    assert np.array_equal(back.dates, fp.dates)
    for c in FACTOR_COLUMNS:
        np.testing.assert_array_equal(getattr(back, c), getattr(fp, c))
    panel = ReturnPanel(dates[10:], ("C",), np.zeros((30, 1)))
    f2, p2 = fp.align_to(panel)
    assert len(f2) == 30 and np.array_equal(f2.dates, p2.dates)
    with pytest.raises(LengthMismatch):
        FactorPanel(dates, np.zeros(40), np.zeros(40), np.zeros(40), np.zeros(39))


@pytest.mark.slow
def test_filtered_factors_track_simulated_truth():
    cu, ce, xerr = [], [], []
    for seed in range(5):
        cfg = JointSimConfig(US, EU, (1.0, 0.5, 0.8), [[0.2, 0.9]], [[0.4, -0.2]], [0.0], [1.0],
                             2000, seed)
        sim = sim_joint_panel(cfg)
        d = sim.factors.dates
        fu = esv_filter(sim.factors.values[:, 0], US, "M3", 10000, seed=seed + 1, alpha=[0.0],
                        dates=d)
        fe = esv_filter(sim.factors.values[:, 1], EU, "M3", 10000, seed=seed + 2, alpha=[0.0],
                        dates=d)
        fp = build_factor_panel(fu, fe, sim.countries)
        cu.append(np.corrcoef(fp.delta_us[1:], sim.deltas[1:, 0])[0, 1])
        ce.append(np.corrcoef(fp.delta_eu[1:], sim.deltas[1:, 1])[0, 1])
        # with the mean known, the market columns are exactly sigma * xi
        xerr.append(np.max(np.abs(fp.x_us - (sim.factors.values[:, 0] - sim.mu[:, 0]))))
    assert np.mean(cu) > DELTA_US_CORR
    assert np.mean(ce) > DELTA_EU_CORR
    assert max(xerr) < 1e-12
