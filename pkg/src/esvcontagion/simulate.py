"""Seeded synthetic data with known latent truth.

Generators for GARCH-AM and ESV paths, the bivariate triangular volatility
system feeding a four-factor country panel, and a deterministic grid filter
that computes the ESV likelihood exactly up to discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import rng as rngmod
from .errors import MassLeak, ValidationError
from .esv import FLOOR, EsvParams, shock_sf_abs
from .ingest import ReturnPanel
from .volmodels import LOG_2PI, GarchParams, MeanModelSpec

SIM_START = np.datetime64("2005-03-11")


def business_days(n: int, start=SIM_START) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


@numba.njit(cache=True)
def _garch_sim_kernel(eps, z0, z1, z2, z3, a0, a1, vol, s2_init, x, s2):
    v = s2_init
    for t in range(eps.shape[0]):
        s2[t] = v
        if vol == 1:
            m = a0 + a1 * v
        elif vol == 2:
            m = a0 + a1 * math.sqrt(v)
        else:
            m = a0
        e = math.sqrt(v) * eps[t]
        x[t] = m + e
        w = z1 + z2 if e < 0.0 else z1
        v = z0 + w * e * e + z3 * v


def sim_garch(params: GarchParams, spec, T: int, seed: int, sigma2_init: float | None = None):
    """Simulate a GARCH-AM path with Gaussian innovations.

    Returns ``(x, sigma)``; ``sigma2_init`` defaults to the unconditional variance.
    """
    spec = MeanModelSpec.of(spec)
    if not params.stationary:
        raise ValidationError("GARCH parameters are not covariance stationary")
    eps = rngmod.stream(seed, rngmod.SIMULATE, rngmod.tag("garch")).standard_normal(T)
    x = np.empty(T)
    s2 = np.empty(T)
    s2_init = params.unconditional_variance if sigma2_init is None else float(sigma2_init)
    a0 = params.alpha0 if spec.uses_intercept else 0.0
    a1 = params.alpha1 if spec.vol_regressor != "none" else 0.0
    _garch_sim_kernel(eps, params.zeta0, params.zeta1, params.zeta2, params.zeta3, a0, a1,
                      spec.vol_code, s2_init, x, s2)
    return x, np.sqrt(s2)


@numba.njit(cache=True)
def _vol_path(start, sigma0, phi, shocks, floor, out):
    prev = start
    for t in range(shocks.shape[0]):
        c = sigma0 + phi * prev + shocks[t]
        prev = c if c > floor else floor
        out[t] = prev


def esv_shocks(gen: np.random.Generator, params: EsvParams, T: int) -> np.ndarray:
    """``lam * z`` draws, in the filter's order (z first, then lam)."""
    z = params.tau * gen.standard_normal(T)
    return rngmod.half_t(gen, params.nu, T) * z


def vol_path(params: EsvParams, shocks) -> np.ndarray:
    """Run the truncated recursion from the mean level; identical to repeated propagate_particle."""
    shocks = np.ascontiguousarray(shocks, dtype=float)
    out = np.empty_like(shocks)
    _vol_path(params.mean_level, params.sigma0, params.phi, shocks, FLOOR, out)
    return out


@dataclass
class EsvPath:
    x: np.ndarray
    sigma: np.ndarray
    shocks: np.ndarray
    mu: np.ndarray


def sim_esv(params: EsvParams, spec, alpha, T: int, seed: int) -> EsvPath:
    """Simulate an (E)SV path; ``alpha`` lists the mean coefficients of ``spec``."""
    spec = MeanModelSpec.of(spec)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.shape != (len(spec.alpha_names),):
        raise ValidationError(f"{spec.variant} takes {len(spec.alpha_names)} mean coefficients")
    gen = rngmod.stream(seed, rngmod.SIMULATE, rngmod.tag("esv"))
    shocks = esv_shocks(gen, params, T)
    sigma = vol_path(params, shocks)
    mu = spec.regressors(sigma) @ alpha
    x = mu + sigma * gen.standard_normal(T)
    return EsvPath(x, sigma, shocks, mu)


# ---------------------------------------------------------------------------
# joint factor / country panel


@dataclass
class JointSimConfig:
    """Configuration of the two-factor, two-volatility-shock country panel.

    Factor volatilities follow the ESV recursion with innovations
    ``chol @ (delta1, delta2)``; ``chol = (l11, l21, l22)`` is lower
    triangular. Country i returns are
    ``alpha[i] + B[i] @ (f - mu) + Gamma_u[i] @ (delta1, delta2) + idio_sd[i] * e``.

    ``window_loadings`` optionally overrides the delta2 loading inside date
    windows: a list of ``(start, end, per-country loadings)``.
    """

    esv_us: EsvParams
    esv_eu: EsvParams
    chol: tuple
    B: np.ndarray
    Gamma_u: np.ndarray
    alpha: np.ndarray
    idio_sd: np.ndarray
    T: int
    seed: int
    countries: tuple | None = None
    factor_spec: str = "M3"
    factor_alpha: tuple = ((0.0,), (0.0,))
    window_loadings: list = field(default_factory=list)
    start: np.datetime64 = SIM_START

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.Gamma_u = np.atleast_2d(np.asarray(self.Gamma_u, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.idio_sd = np.atleast_1d(np.asarray(self.idio_sd, dtype=float))
        l11, l21, l22 = map(float, self.chol)
        if not (l11 > 0 and l22 > 0):
            raise ValidationError("chol diagonal (l11, l22) must be positive")
        self.chol = (l11, l21, l22)
        n = self.alpha.size
        if self.B.shape != (n, 2) or self.Gamma_u.shape != (n, 2) or self.idio_sd.shape != (n,):
            raise ValidationError("B and Gamma_u must be (n_countries, 2); alpha and idio_sd length n")
        if np.any(self.idio_sd <= 0):
            raise ValidationError("idio_sd must be positive")
        if self.countries is None:
            self.countries = tuple(f"C{i + 1}" for i in range(n))
        if len(self.countries) != n:
            raise ValidationError("countries must name every country")

    @property
    def L(self) -> np.ndarray:
        l11, l21, l22 = self.chol
        return np.array([[l11, 0.0], [l21, l22]])


@dataclass
class JointSim:
    countries: ReturnPanel
    factors: ReturnPanel
    sigma: np.ndarray  # (T, 2) true factor volatilities
    mu: np.ndarray  # (T, 2) true factor conditional means
    deltas: np.ndarray  # (T, 2) independent shocks (delta1, delta2)
    eta: np.ndarray  # (T, 2) factor-volatility innovations chol @ delta
    config: JointSimConfig
    meta: dict = field(default_factory=dict)


def sim_joint_panel(cfg: JointSimConfig) -> JointSim:
    T = int(cfg.T)
    gen = rngmod.stream(cfg.seed, rngmod.SIMULATE, rngmod.tag("joint"))
    d1 = esv_shocks(gen, cfg.esv_us, T)
    d2 = esv_shocks(gen, cfg.esv_eu, T)
    deltas = np.column_stack([d1, d2])
    eta = deltas @ cfg.L.T
    sigma = np.column_stack([vol_path(cfg.esv_us, eta[:, 0]), vol_path(cfg.esv_eu, eta[:, 1])])
    spec = MeanModelSpec.of(cfg.factor_spec)
    mu = np.column_stack([spec.regressors(sigma[:, j]) @ np.asarray(cfg.factor_alpha[j], float)
                          for j in range(2)])
    xi = gen.standard_normal((T, 2))
    f = mu + sigma * xi
    dates = business_days(T, cfg.start)

    n = cfg.alpha.size
    gamma = np.broadcast_to(cfg.Gamma_u, (T, n, 2)).copy()
    for start, end, loads in cfg.window_loadings:
        inside = (dates >= np.datetime64(start, "D")) & (dates <= np.datetime64(end, "D"))
        gamma[inside, :, 1] = np.asarray(loads, dtype=float)
    e = gen.standard_normal((T, n))
    y = (cfg.alpha[None, :] + (f - mu) @ cfg.B.T + np.einsum("tij,tj->ti", gamma, deltas)
         + e * cfg.idio_sd[None, :])
    meta = {"delta_law": "half-t(nu) x N(0, tau2) per factor, mutually independent",
            "factor_innovation_cov": "identity"}
    return JointSim(countries=ReturnPanel(dates, cfg.countries, y),
                    factors=ReturnPanel(dates, ("US", "EU"), f),
                    sigma=sigma, mu=mu, deltas=deltas, eta=eta, config=cfg, meta=meta)


# ---------------------------------------------------------------------------
# exact-up-to-discretization grid filter


def _tail_quantile(tau2, nu, p):
    """Smallest a with P(lam * z > a) <= p (one-sided), by bisection on a log scale."""
    lo, hi = 0.0, math.sqrt(tau2)
    while 0.5 * shock_sf_abs(hi, tau2, nu)[0] > p:
        lo, hi = hi, hi * 4.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if 0.5 * shock_sf_abs(mid, tau2, nu)[0] > p:
            lo = mid
        else:
            hi = mid
    return hi


class _CdfTable:
    """Linear interpolation table of the shock CDF on a sinh-spaced abscissa."""

    def __init__(self, tau2, nu, umax, n=40001):
        tau = math.sqrt(tau2)
        scale = 0.02 * tau
        y = np.linspace(-math.asinh(umax / scale), math.asinh(umax / scale), n)
        self.u = scale * np.sinh(y)
        sf = shock_sf_abs(np.abs(self.u), tau2, nu)
        self.F = np.where(self.u >= 0, 1.0 - 0.5 * sf, 0.5 * sf)

    def __call__(self, u):
        return np.interp(u, self.u, self.F, left=0.0, right=1.0)


def grid_filter_oracle(x, params: EsvParams, spec, alpha, grid_size: int = 2000,
                       sigma_hi: float | None = None, leak_tol: float = 1e-6,
                       return_sigma: bool = False):
    """Filtered log-likelihood of the ESV model with known mean coefficients.

    sigma is discretized as an atom at the floor plus ``grid_size`` cells
    between the floor and ``sigma_hi`` (sinh-spaced: linear near zero,
    geometric far out). Transition masses are differences of the shock CDF,
    computed by quadrature. ``sigma_hi`` defaults to the level above which
    even the top state leaks less than 1e-8 per step. The predictive mass
    lost above ``sigma_hi`` is tracked; more than ``leak_tol`` in any step
    raises :class:`MassLeak`.
    """
    spec = MeanModelSpec.of(spec)
    x = np.asarray(x, dtype=float)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if grid_size < 500:
        raise ValidationError("grid_size must be >= 500")
    sbar = params.mean_level
    if sigma_hi is None:
        u_star = _tail_quantile(params.tau2, params.nu, 1e-8)
        sigma_hi = max((params.sigma0 + u_star) / (1.0 - params.phi), sbar + u_star,
                       4.0 * float(np.max(np.abs(x))))
    scale = 0.05 * max(sbar, 10 * FLOOR)
    ymax = math.asinh((sigma_hi - FLOOR) / scale)
    edges = FLOOR + scale * np.sinh(np.linspace(0.0, ymax, grid_size + 1))
    states = np.concatenate([[FLOOR], 0.5 * (edges[:-1] + edges[1:])])
    # represent the cell holding the stationary level by that level itself
    j = int(np.searchsorted(edges, sbar, side="right")) - 1
    if 0 <= j < grid_size:
        states[1 + j] = sbar

    span = sigma_hi + params.sigma0 + 1.0
    table = _CdfTable(params.tau2, params.nu, span)

    def transition(means):
        cdf = table(edges[None, :] - means[:, None])  # (S, M+1)
        K = np.empty((means.size, states.size))
        K[:, 0] = cdf[:, 0]
        K[:, 1:] = np.diff(cdf, axis=1)
        return K, 1.0 - cdf[:, -1]

    K, leak = transition(params.sigma0 + params.phi * states)
    K0, leak0 = transition(np.array([params.sigma0 + params.phi * sbar]))
    mean = spec.regressors(states) @ alpha
    var = states * states
    loglik = 0.0
    pi = None
    filt_sigma = np.empty(x.size)
    for t in range(x.size):
        if pi is None:
            pred, lost = K0[0], float(leak0[0])
        else:
            pred, lost = pi @ K, float(pi @ leak)
        if lost > leak_tol:
            raise MassLeak(f"transition mass {lost:.3g} above sigma_hi={sigma_hi:.4g} at t={t}")
        logl = -0.5 * (LOG_2PI + np.log(var) + (x[t] - mean) ** 2 / var)
        c = logl.max()
        w = pred * np.exp(logl - c)
        z = w.sum()
        loglik += c + math.log(z / pred.sum())
        pi = w / z
        filt_sigma[t] = pi @ states
    if return_sigma:
        return loglik, filt_sigma
    return loglik
