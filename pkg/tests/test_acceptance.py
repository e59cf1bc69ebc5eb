"""Exit criteria. Each test records one PASS/FAIL line, listed at the end of the run."""

import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esvcontagion import pipeline
from esvcontagion.contagion import CrisisWindows, fit_crisis_contagion, fit_static_contagion
from esvcontagion.diagnostics import anscombe_kurtosis, dagostino_skewness
from esvcontagion.esv import EsvParams, GridSpec, esv_filter, grid_search
from esvcontagion.factors import FactorPanel, build_factor_panel, orthogonalize
from esvcontagion.ingest import load_series
from esvcontagion.simulate import (JointSimConfig, business_days, grid_filter_oracle, sim_esv,
                                   sim_garch, sim_joint_panel)
from esvcontagion.volmodels import GarchParams, garch_filter, garch_fit

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

P2 = EsvParams(0.05, 0.95, 0.01, 2.0)


# ---------------------------------------------------------------- 1

def test_filter_matches_grid_oracle(verdict):
    t0 = time.perf_counter()
    gaps = []
    for seed in range(10):
        x = sim_esv(P2, "M3", [0.05], 200, seed).x
        exact = grid_filter_oracle(x, P2, "M3", [0.05], 2000)
        gaps.append(abs(esv_filter(x, P2, "M3", 10000, seed=seed, alpha=[0.05]).loglik - exact))
    elapsed = time.perf_counter() - t0
    gap = float(np.mean(gaps))
    ok = gap < 0.5 and elapsed < 120
    verdict("1", ok, f"mean |loglik gap| {gap:.4f} nats (< 0.5), {elapsed:.0f} s (< 120)")
    assert gap < 0.5
    assert elapsed < 120


# ---------------------------------------------------------------- 2

GRID5 = GridSpec((0.02, 0.035, 0.05, 0.065, 0.08), (0.9, 0.925, 0.95, 0.975, 0.99),
                 (0.0025, 0.005, 0.01, 0.02, 0.04))


def test_grid_search_recovers_truth(verdict):
    # the truth is the centre point (2, 2, 2) of the grid
    t0 = time.perf_counter()
    hits = 0
    for seed in range(20):
        x = sim_esv(P2, "M1a", [0.05, -0.02], 4000, seed).x
        res = grid_search(x, GRID5, "M1a", 2.0, 1000, seed=seed + 1000, on_error="skip")
        hits += all(abs(int(i) - 2) <= 1 for i in res.index)
    elapsed = time.perf_counter() - t0
    ok = hits >= 16 and elapsed < 600
    verdict("2", ok, f"{hits}/20 seeds within one grid step (>= 16), {elapsed:.0f} s (< 600)")
    assert hits >= 16
    assert elapsed < 600


# ---------------------------------------------------------------- 3

def test_garch_mle_recovery(verdict):
    truth = GarchParams(0.02, 0.03, 0.10, 0.88, alpha0=0.03, alpha1=-0.02)
    t0 = time.perf_counter()
    inside = total = dominates = 0
    for seed in range(20):
        x, _ = sim_garch(truth, "M1a", 20000, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = garch_fit(x, "M1a")
        for name in fit.names:
            inside += abs(fit.estimates[name] - getattr(truth, name)) <= 3 * fit.se[name]
            total += 1
        dominates += fit.loglik >= garch_filter(x, truth, "M1a").loglik
    elapsed = time.perf_counter() - t0
    rate = inside / total
    ok = rate >= 0.95 and dominates == 20 and elapsed < 300
    verdict("3", ok, f"{rate:.1%} of (seed, parameter) within 3 se (>= 95%), MLE >= truth "
                     f"loglik in {dominates}/20, {elapsed:.0f} s (< 300)")
    assert rate >= 0.95
    assert dominates == 20
    assert elapsed < 300


# ---------------------------------------------------------------- 4

def test_moment_tests_have_nominal_size(verdict):
    t0 = time.perf_counter()
    gen = np.random.default_rng(404)
    rej_s = rej_k = 0
    for _ in range(1000):
        x = gen.standard_normal(1000)
        rej_s += dagostino_skewness(x).p_value < 0.05
        rej_k += anscombe_kurtosis(x).p_value < 0.05
    elapsed = time.perf_counter() - t0
    ok = 25 <= rej_s <= 75 and 25 <= rej_k <= 75 and elapsed < 60
    verdict("4", ok, f"size skewness {rej_s / 10:.1f}%, kurtosis {rej_k / 10:.1f}% "
                     f"(2.5-7.5%), {elapsed:.1f} s (< 60)")
    assert 25 <= rej_s <= 75 and 25 <= rej_k <= 75
    assert elapsed < 60


# ---------------------------------------------------------------- 5

US = EsvParams(0.05, 0.95, 0.01, 2.0)
EU = EsvParams(0.06, 0.94, 0.01, 2.0)
CHOL = (1.0, 0.5, 0.8)
K = 25
_g = np.random.default_rng(77)
B = np.column_stack([_g.uniform(0.0, 0.5, K), _g.uniform(0.5, 1.2, K)])
GAMMA = _g.uniform(-0.5, 0.5, (K, 2))
IDIO = _g.uniform(0.5, 1.0, K)
LO, HI = 1000, 1041


def _oracle_panel(sim, seed):
    f = sim.factors.values - sim.mu
    return FactorPanel(sim.factors.dates, f[:, 0], f[:, 1], CHOL[0] * sim.deltas[:, 0],
                       CHOL[2] * sim.deltas[:, 1])


def _filtered_panel(sim, seed):
    fits = [esv_filter(sim.factors.column(c), p, "M3", 10000, seed=100 * seed + i, alpha=[0.0],
                       dates=sim.factors.dates)
            for i, (c, p) in enumerate((("US", US), ("EU", EU)))]
    return build_factor_panel(*fits, sim.countries)


def contagion_study(make_panel):
    """Static loading coverage, F-test size and power for a 4-se shift over 20 seeds.

    The truth for the loadings on (delta_us, delta_eu) is Gamma / (l11, l22).
    The shift moves each country's in-window delta2 loading by 4 standard
    errors of its window coefficient, measured under the null on the same seed.
    """
    truth = GAMMA / np.array([CHOL[0], CHOL[2]])
    covered = total = size = power = n = 0
    for seed in range(20):
        base = dict(esv_us=US, esv_eu=EU, chol=CHOL, B=B, Gamma_u=GAMMA, alpha=np.zeros(K),
                    idio_sd=IDIO, T=2000, seed=seed)
        sim = sim_joint_panel(JointSimConfig(**base))
        fp = make_panel(sim, seed)
        start, end = fp.dates[LO], fp.dates[HI]
        w = CrisisWindows((("W", start, end),))
        se = []
        for i, c in enumerate(sim.countries.columns):
            y = sim.countries.column(c)
            fit = fit_static_contagion(y, fp)
            for j, name in enumerate(("delta_us", "delta_eu")):
                covered += abs(fit.coef(name) - truth[i, j]) <= 3 * fit.se(name)
                total += 1
            full, (_, p) = fit_crisis_contagion(y, fp, w)
            size += p < 0.05
            se.append(full.se("delta_eu[W]"))
        shifted = GAMMA[:, 1] + 4 * np.array(se) * CHOL[2]
        alt = sim_joint_panel(JointSimConfig(**base, window_loadings=[(start, end, shifted)]))
        for c in alt.countries.columns:
            power += fit_crisis_contagion(alt.countries.column(c), fp, w)[1][1] < 0.05
            n += 1
    return covered / total, size / n, power / n


def _judge(cover, size, power, elapsed):
    return cover >= 0.9 and 0.025 <= size <= 0.075 and power >= 0.95 and elapsed < 600


@pytest.mark.xfail(strict=True, reason="filtered volatility shocks are noisy proxies; "
                                       "errors-in-variables attenuates loadings and power")
def test_contagion_recovery_end_to_end(verdict):
    t0 = time.perf_counter()
    cover, size, power = contagion_study(_filtered_panel)
    elapsed = time.perf_counter() - t0
    ok = _judge(cover, size, power, elapsed)
    verdict("5", ok, f"filtered factors: loadings within 3 se {cover:.1%} (>= 90%), F size "
                     f"{size:.1%} (2.5-7.5%), power {power:.1%} (>= 95%), {elapsed:.0f} s")
    assert cover >= 0.9
    assert 0.025 <= size <= 0.075
    assert power >= 0.95
    assert elapsed < 600


def test_contagion_recovery_known_factors(verdict):
    t0 = time.perf_counter()
    cover, size, power = contagion_study(_oracle_panel)
    elapsed = time.perf_counter() - t0
    ok = _judge(cover, size, power, elapsed)
    verdict("5 (true factors)", ok, f"loadings within 3 se {cover:.1%} (>= 90%), F size "
                                    f"{size:.1%} (2.5-7.5%), power {power:.1%} (>= 95%)")
    assert cover >= 0.9
    assert 0.025 <= size <= 0.075
    assert power >= 0.95


# ---------------------------------------------------------------- 6

_worst = [0.0]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), T=st.integers(20, 3000), rho=st.floats(-2, 2),
       scale=st.floats(1e-3, 1e3))
def _invariance_case(seed, T, rho, scale):
    g = np.random.default_rng(seed)
    dates = business_days(T)
    x_us, x_eu = g.standard_normal((2, T))
    eta_us = scale * g.standard_t(3, T)
    eta_eu = rho * eta_us + scale * g.standard_t(3, T) + 0.3
    y = g.standard_normal(4) @ [x_us, x_eu, eta_us / scale, eta_eu / scale] + g.standard_normal(T)
    raw = FactorPanel(dates, x_us, x_eu, eta_us, eta_eu)
    orth = FactorPanel(dates, x_us, x_eu, eta_us, orthogonalize(eta_eu, eta_us)[0])
    a, b = fit_static_contagion(y, raw).fitted, fit_static_contagion(y, orth).fitted
    _worst[0] = max(_worst[0], float(np.max(np.abs(a - b))))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-8)


def test_reparameterization_invariance(verdict):
    _worst[0] = 0.0
    try:
        _invariance_case()
        sim = sim_joint_panel(JointSimConfig(US, EU, CHOL, B, GAMMA, np.zeros(K), IDIO, 2000, 0))
        f = sim.factors.values - sim.mu
        raw = FactorPanel(sim.factors.dates, f[:, 0], f[:, 1], sim.eta[:, 0], sim.eta[:, 1])
        orth = FactorPanel(sim.factors.dates, f[:, 0], f[:, 1], sim.eta[:, 0],
                           orthogonalize(sim.eta[:, 1], sim.eta[:, 0])[0])
        for c in sim.countries.columns:
            y = sim.countries.column(c)
            d = np.max(np.abs(fit_static_contagion(y, raw).fitted -
                              fit_static_contagion(y, orth).fitted))
            _worst[0] = max(_worst[0], float(d))
        ok = _worst[0] <= 1e-8
    except AssertionError:
        ok = False
    verdict("6", ok, f"largest fitted-value difference {_worst[0]:.2e} (<= 1e-8) over 100 random "
                     f"panels and {K} simulated countries")
    assert ok


# ---------------------------------------------------------------- 7

FRENCH = os.environ.get("ESVCONTAGION_FRENCH_CSV")
RUN_CONFIG = os.environ.get("ESVCONTAGION_RUN_CONFIG")


def test_table_reproduction(verdict):
    if not FRENCH or not Path(FRENCH).is_file():
        verdict("7", None, "set ESVCONTAGION_FRENCH_CSV to the daily French factor file "
                           "(and optionally ESVCONTAGION_RUN_CONFIG for the country block)")
        pytest.skip("market data not supplied")
    s = {r.ticker: r for r in load_series(FRENCH, "wide")}["Mkt-RF"]
    keep = (s.dates >= np.datetime64("1963-07-01")) & (s.dates <= np.datetime64("2010-10-29"))
    x, dates = s.values[keep], s.dates[keep]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = garch_fit(x, "M1a", dates=dates)
    e = grid_search(x, GridSpec.default(), "M1a", 2.0, 2000, seed=1, on_error="skip",
                    dates=dates)
    e_out = esv_filter(x, e.params, "M1a", 10000, seed=1, dates=dates)
    t = e_out.meta["alpha_t"]
    checks = {
        "GARCH alpha0*100 within 3.0 +- 0.5": abs(100 * g.params.alpha0 - 3.0) <= 0.5,
        "GARCH loglik within -14029.97 +- 15": abs(g.loglik + 14029.97) <= 15,
        "ESV alpha0 > 0 significant": t["alpha0"] > 1.96,
        "ESV alpha1 < 0 significant": t["alpha1"] < -1.96,
        "ESV loglik gap over GARCH > 500": e_out.loglik - g.loglik > 500,
    }
    if RUN_CONFIG:
        cfg = pipeline.load_config(RUN_CONFIG)
        pipeline.run_pipeline(cfg)
        rows = {}
        text = (Path(cfg.out_dir) / "stage2" / "static_contagion.csv").read_text().splitlines()
        head = text[0].split(",")
        for line in text[1:]:
            cells = line.split(",")
            rows[cells[0]] = dict(zip(head, cells))
        for c, sign in (("DEU", -1), ("ITA", 1), ("ESP", 1)):
            if c in rows:
                checks[f"{c} gamma_EU sign {sign:+d}"] = \
                    sign * float(rows[c]["delta_eu"]) > 0 and abs(float(rows[c]["delta_eu_t"])) > 1.96
    failed = [k for k, v in checks.items() if not v]
    verdict("7", not failed, f"GARCH alpha0*100 {100 * g.params.alpha0:.2f}, loglik "
                             f"{g.loglik:.2f}; ESV loglik {e_out.loglik:.2f}; failed: {failed}")
    assert not failed


# ---------------------------------------------------------------- 8

def test_pipeline_determinism(verdict, tmp_path):
    sim = sim_joint_panel(JointSimConfig(US, EU, CHOL, B[:4], GAMMA[:4], np.zeros(4), IDIO[:4],
                                         800, 8))
    sim.factors.to_csv(tmp_path / "factors.csv")
    sim.countries.to_csv(tmp_path / "countries.csv")
    (tmp_path / "grid.kv").write_text("sigma0 = 0.04, 0.05\nphi = 0.94 0.95\ntau2 = 0.01\n")
    d = sim.factors.dates

    def run(name):
        cfg = pipeline.PipelineConfig(tmp_path / "factors.csv", tmp_path / "countries.csv",
                                      out_dir=tmp_path / name, particles=1000,
                                      grid_particles=500, grid_path=tmp_path / "grid.kv",
                                      seed=8, threads=2,
                                      windows=[("A", d[200], d[240]), ("B", d[500], d[530])])
        return pipeline.run_pipeline(cfg)

    a, b = run("a"), run("b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    same = [((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes())
            for f in files]
    ok = all(same) and a["outputs"] == b["outputs"] and len(files) >= 7
    verdict("8", ok, f"{sum(same)}/{len(files)} numeric CSVs byte-identical across two runs")
    assert ok
