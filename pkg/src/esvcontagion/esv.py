"""Particle filtering for Gaussian and explosive stochastic volatility.

Volatility follows a truncated linear recursion with a scale-mixture shock::

    sigma[t] = max(sigma0 + phi * sigma[t-1] + lam[t] * z[t], FLOOR)
    lam[t] ~ half-t(nu),  z[t] ~ N(0, tau2)

and the return is ``x[t] ~ N(mu(sigma[t]), sigma[t]**2)`` with the mean from a
:class:`~esvcontagion.volmodels.MeanModelSpec`. ``nu = inf`` is the Gaussian
SV model.

The mean coefficients are either fixed or learned: each particle carries the
Gaussian posterior (mean vector and covariance) of the regression of x on the
spec's regressors with known error variance ``sigma[t]**2``, under a
N(0, prior_sd**2 I) prior. Particles are propagated from the transition
prior, weighted by the posterior-predictive density of x[t], and resampled
systematically when the effective sample size drops below N/2.

Random numbers for time step t come from ``rng.stream(seed, FILTER, t)`` and
are shared by every grid point, which makes grid-search comparisons use
common random numbers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy import special

from . import rng as rngmod
from .errors import (LengthMismatch, NonFiniteLikelihood, ParticleDegeneracy, ValidationError)
from .volmodels import LOG_2PI, FilterOutput, MeanModelSpec

FLOOR = 1e-4
INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class EsvParams:
    sigma0: float
    phi: float
    tau2: float
    nu: float = 2.0

    def __post_init__(self):
        if not self.sigma0 >= 0:
            raise ValidationError(f"sigma0 must be >= 0, got {self.sigma0}")
        if not 0 <= self.phi < 1:
            raise ValidationError(f"phi must be in [0, 1), got {self.phi}")
        if not self.tau2 > 0:
            raise ValidationError(f"tau2 must be > 0, got {self.tau2}")
        if not (self.nu >= 1 or math.isinf(self.nu)):
            raise ValidationError(f"nu must be >= 1 or inf, got {self.nu}")

    @property
    def tau(self) -> float:
        return math.sqrt(self.tau2)

    @property
    def mean_level(self) -> float:
        """Fixed point of the noiseless recursion, used as sigma on day 0."""
        return max(self.sigma0 / (1.0 - self.phi), FLOOR)

    @property
    def gaussian(self) -> bool:
        return math.isinf(self.nu)


@dataclass
class ParticleSet:
    sigmas: np.ndarray
    alpha_mean: np.ndarray
    alpha_cov: np.ndarray
    weights: np.ndarray
    rng_seed: int


@dataclass(frozen=True)
class GridSpec:
    sigma0_values: tuple
    phi_values: tuple
    tau2_values: tuple

    def __post_init__(self):
        for name in ("sigma0_values", "phi_values", "tau2_values"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValidationError(f"{name} is empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValidationError(f"{name} must be strictly ascending")
            object.__setattr__(self, name, vals)
        for s0, ph, t2 in self.points():
            EsvParams(s0, ph, t2)

    @classmethod
    def default(cls) -> "GridSpec":
        return cls(tuple(np.round(np.linspace(0.01, 0.1, 10), 6)),
                   (0.90, 0.95, 0.97, 0.99),
                   tuple(np.round(np.geomspace(1e-4, 1e-1, 8), 8)))

    @property
    def shape(self) -> tuple:
        return (len(self.sigma0_values), len(self.phi_values), len(self.tau2_values))

    def points(self):
        return list(itertools.product(self.sigma0_values, self.phi_values, self.tau2_values))


def propagate_particle(sigma_prev, params: EsvParams, draws):
    """One transition step. ``draws = (lam, z)`` with z already on the N(0, tau2) scale."""
    lam, z = draws
    cand = params.sigma0 + params.phi * np.asarray(sigma_prev, dtype=float) + lam * z
    return np.maximum(cand, FLOOR)


# ---------------------------------------------------------------------------
# distribution of the volatility shock lam * z


def half_t_sf(y, nu):
    """P(lam > y) for lam ~ half-t(nu), y >= 0."""
    y = np.asarray(y, dtype=float)
    if math.isinf(nu):
        return (y < 1.0).astype(float)
    if nu == 1:
        return 1.0 - 2.0 / math.pi * np.arctan(y)
    if nu == 2:
        return 1.0 - y / np.sqrt(y * y + 2.0)
    return 2.0 * special.stdtr(nu, -y)


@lru_cache(maxsize=8)
def _halfnormal_nodes(n: int):
    p, w = np.polynomial.legendre.leggauss(n)
    p = 0.5 * (p + 1.0)
    return special.ndtri(0.5 * (1.0 + p)), 0.5 * w


def shock_sf_abs(a, tau2: float, nu: float, n_nodes: int = 1000, chunk: int = 2000):
    """P(|lam * z| > a) for a >= 0, integrating over |z| by Gauss-Legendre in probability space."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    tau = math.sqrt(tau2)
    if math.isinf(nu):
        return 2.0 * special.ndtr(-a / tau)
    h, w = _halfnormal_nodes(n_nodes)
    out = np.empty_like(a)
    for i in range(0, a.size, chunk):
        blk = a[i:i + chunk, None] / (tau * h[None, :])
        out[i:i + chunk] = half_t_sf(blk, nu) @ w
    return out


def shock_cdf(u, tau2: float, nu: float, n_nodes: int = 1000):
    """CDF of the volatility shock ``lam * z`` (symmetric about 0)."""
    u = np.asarray(u, dtype=float)
    g = shock_sf_abs(np.abs(u).ravel(), tau2, nu, n_nodes).reshape(u.shape)
    return np.where(u >= 0, 1.0 - 0.5 * g, 0.5 * g)


# ---------------------------------------------------------------------------
# the filter


_FM = {"nsz", "arcp", "contract", "reassoc"}  # no nnan/ninf: -inf and NaN must survive


@numba.njit(cache=True, nogil=True, fastmath=_FM)
def _pf_row(xt, lam, z, s0, ph, ta, r0, vol, floor, sig, m0, m1, v00, v01, v11, W,
            k, isd, w, mean, scores):
    """Propagate one grid row and reweight it.

    Updates the per-particle coefficient posteriors in place, overwrites W
    with the new normalized weights and returns the log of the weighted mean
    predictive density (-inf if every weight vanished) together with the
    predictive tail probability of xt (0 unless ``scores``). The tail is the upper one when ``upper``
    is true, chosen from the first particle so the smaller tail keeps full
    precision.
    """
    n = sig.size
    tail = 0.0
    upper = xt >= r0 * m0[0] + m1[0] * (s0 + ph * sig[0])
    sgn = INV_SQRT2 if upper else -INV_SQRT2
    for i in range(n):
        c = s0 + ph * sig[i] + lam[i] * ta * z[i]
        s = max(c, floor)
        sig[i] = s
        if vol == 1:
            r1 = s * s
        elif vol == 2:
            r1 = s
        else:
            r1 = 0.0
        mu = r0 * m0[i] + r1 * m1[i]
        vr0 = v00[i] * r0 + v01[i] * r1
        vr1 = v01[i] * r0 + v11[i] * r1
        iv = 1.0 / (s * s + r0 * vr0 + r1 * vr1)
        e = xt - mu
        k[i] = -0.5 * e * e * iv
        isd[i] = math.sqrt(iv)
        if scores:
            tail += W[i] * 0.5 * math.erfc(sgn * e * isd[i])
        mean[i] = mu
        gain = e * iv
        m0[i] += vr0 * gain
        m1[i] += vr1 * gain
        v00[i] -= vr0 * vr0 * iv
        v01[i] -= vr0 * vr1 * iv
        v11[i] -= vr1 * vr1 * iv
    kmax = -np.inf
    for i in range(n):
        if W[i] > 0.0 and k[i] > kmax:
            kmax = k[i]
    tot = 0.0
    for i in range(n):
        w[i] = W[i] * isd[i] * math.exp(k[i] - kmax)
        tot += w[i]
    if not (tot > 0.0 and math.isfinite(tot)):
        # linear weights under/overflowed; redo in log space
        lmax = -np.inf
        for i in range(n):
            w[i] = math.log(W[i]) + k[i] + math.log(isd[i]) if W[i] > 0.0 else -np.inf
            if w[i] > lmax:
                lmax = w[i]
        if not math.isfinite(lmax):
            return -np.inf, tail, upper
        tot = 0.0
        for i in range(n):
            w[i] = math.exp(w[i] - lmax)
            tot += w[i]
        kmax = lmax
    for i in range(n):
        W[i] = w[i] / tot
    return kmax + math.log(tot) - 0.5 * LOG_2PI, tail, upper


@numba.njit(cache=True, nogil=True)
def _resample_row(W, u, sig, m0, m1, v00, v01, v11, idx, buf):
    """Systematic resampling of one row in place; W becomes uniform.

    Returns the number of distinct ancestors kept.
    """
    n = W.size
    cum = W[0]
    j = 0
    distinct = 0
    for i in range(n):
        pos = (u + i) / n
        while cum <= pos and j < n - 1:
            j += 1
            cum += W[j]
        if i == 0 or j != idx[i - 1]:
            distinct += 1
        idx[i] = j
    for arr in (sig, m0, m1, v00, v01, v11):
        for i in range(n):
            buf[i] = arr[idx[i]]
        arr[:] = buf
    W[:] = 1.0 / n
    return distinct


@numba.njit(cache=True, nogil=True)
def _pf_step(xt, u, lam, z, s0, ph, ta, r0, vol, floor, min_ess, sig, M, V, W,
             ll, sig_hat, mu_hat, tail_hat, upper_hat, ess_min, n_res, dead, fail_t,
             fail_ess, t, scores, k, isd, w, mean, idx):
    """Advance every live grid row by one day; returns the number of new failures."""
    G, n = sig.shape
    n_fail = 0
    for g in range(G):
        if dead[g]:
            continue
        inc, tail, upper = _pf_row(xt, lam, z, s0[g], ph[g], ta[g], r0, vol, floor, sig[g],
                                   M[0, g], M[1, g], V[0, g], V[1, g], V[2, g], W[g], k, isd,
                                   w, mean, scores)
        tail_hat[g, t] = tail
        upper_hat[g, t] = upper
        ess = 0.0
        kept = n
        if math.isfinite(inc):
            sh = 0.0
            mh = 0.0
            sq = 0.0
            for i in range(n):
                wi = W[g, i]
                sh += wi * sig[g, i]
                mh += wi * mean[i]
                sq += wi * wi
            sig_hat[g, t] = sh
            mu_hat[g, t] = mh
            ess = 1.0 / sq
            ess_min[g] = min(ess_min[g], ess)
            if ess < 0.5 * n:
                kept = _resample_row(W[g], u, sig[g], M[0, g], M[1, g], V[0, g], V[1, g],
                                     V[2, g], idx, w)
                n_res[g] += 1
        if not math.isfinite(inc) or kept < min_ess:
            dead[g] = True
            fail_t[g] = t
            fail_ess[g] = kept if math.isfinite(inc) else 0.0
            ll[g] = -np.inf
            n_fail += 1
            continue
        ll[g] += inc
    return n_fail


@dataclass
class _BatchResult:
    mu: np.ndarray
    sigma: np.ndarray
    loglik: np.ndarray
    alpha_mean: np.ndarray | None
    alpha_cov: np.ndarray | None
    min_ess: np.ndarray
    n_resample: np.ndarray
    tail: np.ndarray
    upper: np.ndarray
    failures: dict = field(default_factory=dict)
    particles: list = field(default_factory=list)


def _filter_batch(x, sigma0, phi, tau2, nu, spec: MeanModelSpec, n, seed, alpha=None,
                  prior_sd=10.0, min_ess=2.0, grid_offset=0, keep_particles=False, skip=False,
                  scores=True):
    """Filter G parameter points at once on shared random numbers.

    Mean coefficients live in two slots (intercept, volatility term) with a
    packed symmetric covariance ``(v00, v01, v11)``; a slot the mean model does not
    use has zero regressor and zero variance. Fixed coefficients are the
    special case of zero covariance, so both paths share one kernel.
    """
    x = np.ascontiguousarray(x, dtype=float)
    sigma0 = np.ascontiguousarray(sigma0, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)
    tau = np.sqrt(np.asarray(tau2, dtype=float))
    G, T = sigma0.size, x.size
    slots = [i for i, on in enumerate((spec.uses_intercept, spec.vol_regressor != "none")) if on]
    learn = alpha is None
    M = np.zeros((2, G, n))
    V = np.zeros((3, G, n))
    if learn:
        for sl in slots:
            V[0 if sl == 0 else 2] = prior_sd ** 2
    else:
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (len(slots),):
            raise ValidationError(f"{spec.variant} takes {len(slots)} mean coefficients, "
                                  f"got shape {alpha.shape}")
        for sl, a in zip(slots, alpha):
            M[sl] = a
    sig = np.repeat(np.maximum(sigma0 / (1.0 - phi), FLOOR)[:, None], n, axis=1)
    W = np.full((G, n), 1.0 / n)
    mu_hat = np.zeros((G, T))
    sig_hat = np.zeros((G, T))
    tail_hat = np.zeros((G, T))
    upper_hat = np.zeros((G, T), dtype=np.bool_)
    ll = np.zeros(G)
    ess_min = np.full(G, float(n))
    n_res = np.zeros(G, dtype=np.int64)
    dead = np.zeros(G, dtype=np.bool_)
    fail_t = np.full(G, -1, dtype=np.int64)
    fail_ess = np.zeros(G)
    scratch = (np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n, dtype=np.int64))
    r0 = 1.0 if spec.uses_intercept else 0.0

    for t in range(T):
        gen = rngmod.stream(seed, rngmod.FILTER, t)
        z = gen.standard_normal(n)
        lam = rngmod.half_t(gen, nu, n)
        u = gen.random()
        n_fail = _pf_step(x[t], u, lam, z, sigma0, phi, tau, r0, spec.vol_code, FLOOR,
                          float(min_ess), sig, M, V, W, ll, sig_hat, mu_hat, tail_hat,
                          upper_hat, ess_min, n_res, dead, fail_t, fail_ess, t, scores,
                          *scratch)
        if n_fail and not skip:
            g = int(np.flatnonzero(fail_t == t)[0])
            if fail_ess[g] == 0.0:
                raise NonFiniteLikelihood(f"particle weights vanished "
                                          f"(grid point {g + grid_offset})", index=t)
            raise ParticleDegeneracy(f"only {fail_ess[g]:.0f} distinct particles survived "
                                     f"resampling (minimum {min_ess})",
                                     index=t, grid_point=g + grid_offset)
        if dead.all():
            break

    a_mean = a_cov = None
    if learn:
        mean = np.einsum("gn,kgn->gk", W, M)
        c = np.empty((G, 2, 2))
        for (i, j), v in zip(((0, 0), (0, 1), (1, 1)), V):
            c[:, i, j] = c[:, j, i] = np.einsum("gn,gn->g", W, v + M[i] * M[j]) - mean[:, i] * mean[:, j]
        a_mean = mean[:, slots]
        a_cov = c[:, slots][:, :, slots]
    failures = {int(g) + grid_offset: (int(fail_t[g]), float(fail_ess[g]))
                for g in np.flatnonzero(dead)}
    particles = []
    if keep_particles:
        for g in range(G):
            cov = np.empty((n, 2, 2))
            cov[:, 0, 0], cov[:, 1, 1] = V[0, g], V[2, g]
            cov[:, 0, 1] = cov[:, 1, 0] = V[1, g]
            particles.append(ParticleSet(sigmas=sig[g].copy(), alpha_mean=M[:, g].T[:, slots].copy(),
                                         alpha_cov=cov[:, slots][:, :, slots].copy(),
                                         weights=W[g].copy(), rng_seed=seed))
    return _BatchResult(mu_hat, sig_hat, ll, a_mean, a_cov, ess_min, n_res, tail_hat, upper_hat,
                        failures, particles)


def _shocks(sigma_hat, sigma0, phi):
    shock = np.zeros_like(sigma_hat)
    shock[..., 1:] = sigma_hat[..., 1:] - (sigma0 + phi * sigma_hat[..., :-1])
    return shock


def _normal_scores(tail, upper, scores=True):
    """Standard-normal quantiles of the predictive CDF values given as tails."""
    if not scores:
        return None
    z = special.ndtri(np.clip(tail, 1e-300, 1.0))
    return np.where(upper, -z, z)


def _output_from_batch(res: _BatchResult, g, x, params: EsvParams, spec, n, seed, alpha, dates):
    meta = {
        "model": "sv" if params.gaussian else "esv",
        "spec": spec.variant,
        "params": {"sigma0": params.sigma0, "phi": params.phi, "tau2": params.tau2,
                   "nu": params.nu},
        "n_particles": n,
        "seed": seed,
        "min_ess": float(res.min_ess[g]),
        "n_resample": int(res.n_resample[g]),
    }
    if alpha is None:
        mean, cov = res.alpha_mean[g], res.alpha_cov[g]
        sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        names = spec.alpha_names
        meta["alpha"] = dict(zip(names, map(float, mean)))
        meta["alpha_sd"] = dict(zip(names, map(float, sd)))
        meta["alpha_t"] = {nm: float(mu / s) if s > 0 else float("nan")
                           for nm, mu, s in zip(names, mean, sd)}
        meta["tstat_convention"] = "posterior mean / posterior sd"
    else:
        meta["alpha"] = dict(zip(spec.alpha_names, map(float, alpha)))
        meta["alpha_fixed"] = True
    return FilterOutput(x=np.asarray(x, dtype=float), mu=res.mu[g].copy(), sigma=res.sigma[g].copy(),
                        shock=_shocks(res.sigma[g], params.sigma0, params.phi),
                        loglik=float(res.loglik[g]), dates=dates, meta=meta,
                        normal_scores=_normal_scores(res.tail[g], res.upper[g]))


def esv_filter(x, params: EsvParams, spec, n_particles: int = 10000, seed: int = 0,
               alpha=None, prior_sd: float = 10.0, min_ess: float = 2.0, dates=None,
               return_particles: bool = False):
    """Filter one series at fixed volatility parameters.

    Args:
        x: Daily excess returns (percent).
        params: Volatility parameters; ``params.nu = inf`` gives Gaussian SV.
        spec: Mean model.
        n_particles: Number of particles (>= 100).
        seed: Root seed; the output is a pure function of the inputs and seed.
        alpha: Fixed mean coefficients (ordered as ``spec.alpha_names``);
            ``None`` learns them per particle.
        prior_sd: Prior standard deviation of each mean coefficient.
        min_ess: Raise :class:`ParticleDegeneracy` if a resampling step
            keeps fewer distinct particles than this. (``meta["min_ess"]``
            records the smallest weight-based ESS seen, for diagnostics.)

    Returns:
        FilterOutput whose ``sigma`` and ``mu`` are the weighted particle
        means after weighting by day t, ``shock`` is
        ``sigma[t] - (sigma0 + phi * sigma[t-1])`` (0 on day 1), and
        ``loglik`` sums the log of the weighted mean incremental weights.
        With ``return_particles`` the final :class:`ParticleSet` is returned
        as well.
    """
    spec = MeanModelSpec.of(spec)
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValidationError("empty series")
    if n_particles < 100:
        raise ValidationError("n_particles must be >= 100")
    res = _filter_batch(x, [params.sigma0], [params.phi], [params.tau2], params.nu, spec,
                        int(n_particles), seed, alpha, prior_sd, min_ess,
                        keep_particles=return_particles)
    out = _output_from_batch(res, 0, x, params, spec, n_particles, seed, alpha, dates)
    if return_particles:
        return out, res.particles[0]
    return out


@dataclass
class GridSearchResult:
    params: EsvParams
    output: FilterOutput
    logliks: np.ndarray
    grid: GridSpec

    @property
    def index(self) -> tuple:
        return np.unravel_index(int(np.argmax(self.logliks)), self.logliks.shape)


def grid_search(x, grid: GridSpec, spec, nu: float = 2.0, n_particles: int = 2000,
                seed: int = 0, alpha=None, prior_sd: float = 10.0, min_ess: float = 2.0,
                on_error: str = "raise", chunk: int = 64, dates=None) -> GridSearchResult:
    """Empirical-Bayes search for the (sigma0, phi, tau2) with the highest filtered loglik.

    Every grid point is filtered with the same seed; the returned output is
    bit-identical to ``esv_filter`` at the chosen point. Filter errors carry
    the flat index of the failing grid point. With ``on_error="skip"`` a
    failing point is given loglik ``-inf`` and listed in
    ``output.meta["failed_points"]`` instead.
    """
    if on_error not in ("raise", "skip"):
        raise ValidationError("on_error must be 'raise' or 'skip'")
    spec = MeanModelSpec.of(spec)
    x = np.asarray(x, dtype=float)
    pts = np.array(grid.points())
    ll = np.full(len(pts), -np.inf)
    failed = []
    best = (-np.inf, None)
    for start in range(0, len(pts), chunk):
        blk = pts[start:start + chunk]
        res = _filter_batch(x, blk[:, 0], blk[:, 1], blk[:, 2], nu, spec, int(n_particles), seed,
                            alpha, prior_sd, min_ess, grid_offset=start, skip=on_error == "skip",
                            scores=False)
        ll[start:start + len(blk)] = res.loglik
        failed.extend({"point": g, "t": ft, "ess": e} for g, (ft, e) in res.failures.items())
        g = int(np.argmax(res.loglik))
        if res.loglik[g] > best[0]:
            best = (res.loglik[g], start + g)
    if best[1] is None:
        raise ParticleDegeneracy("every grid point failed")
    p = pts[best[1]]
    params = EsvParams(float(p[0]), float(p[1]), float(p[2]), nu)
    # refilter the winner with predictive scores; shared draws make it identical
    res = _filter_batch(x, p[:1], p[1:2], p[2:3], nu, spec, int(n_particles), seed, alpha,
                        prior_sd, min_ess, grid_offset=best[1])
    out = _output_from_batch(res, 0, x, params, spec, n_particles, seed, alpha, dates)
    out.meta["grid_loglik"] = ll.reshape(grid.shape).tolist()
    if failed:
        out.meta["failed_points"] = failed
    return GridSearchResult(params, out, ll.reshape(grid.shape), grid)


def extract_shocks(out: FilterOutput, params: EsvParams) -> np.ndarray:
    """Volatility innovations implied by a filtered path: 0 on day 1, then
    ``sigma[t] - (sigma0 + phi * sigma[t-1])``."""
    sigma = np.asarray(out.sigma, dtype=float)
    if sigma.ndim != 1 or sigma.size != len(out.x):
        raise LengthMismatch("filtered sigma does not match the series length")
    return _shocks(sigma, params.sigma0, params.phi)
