"""Asymmetric GARCH-in-mean (GARCH-AM) filtering and maximum likelihood.

Variance recursion (GJR form)::

    s2[t] = z0 + z1 * e[t-1]**2 + z2 * e[t-1]**2 * (e[t-1] < 0) + z3 * s2[t-1]

with the conditional mean ``mu[t]`` built from ``s2[t]`` according to one of
five mean specifications (see :class:`MeanModelSpec`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import optimize

from .errors import HessianNotPD, NonConvergence, NonFiniteLikelihood, ValidationError

LOG_2PI = math.log(2.0 * math.pi)

# vol_regressor codes used by the compiled kernels
_VOL_CODES = {"none": 0, "variance": 1, "stddev": 2}


@dataclass(frozen=True)
class MeanModelSpec:
    """One of the five conditional-mean models.

    ======  ===========================  ==============
    variant mean                         vol regressor
    ======  ===========================  ==============
    M1a     alpha0 + alpha1 * sigma^2    variance
    M1b     alpha1 * sigma^2             variance
    M2a     alpha0 + alpha1 * sigma      stddev
    M2b     alpha1 * sigma               stddev
    M3      alpha0                       none
    ======  ===========================  ==============
    """

    variant: str
    uses_intercept: bool
    vol_regressor: str

    _TABLE = {
        "M1a": (True, "variance"),
        "M1b": (False, "variance"),
        "M2a": (True, "stddev"),
        "M2b": (False, "stddev"),
        "M3": (True, "none"),
    }

    def __post_init__(self):
        expected = self._TABLE.get(self.variant)
        if expected is None:
            raise ValidationError(f"unknown mean model {self.variant!r}")
        if expected != (self.uses_intercept, self.vol_regressor):
            raise ValidationError(f"{self.variant} requires uses_intercept={expected[0]}, "
                                  f"vol_regressor={expected[1]!r}")

    @classmethod
    def of(cls, variant) -> "MeanModelSpec":
        """Build from ``"M1a"``, ``"1a"``, ``"1(a)"`` or an existing spec."""
        if isinstance(variant, MeanModelSpec):
            return variant
        key = str(variant).strip().replace("(", "").replace(")", "")
        if not key.upper().startswith("M"):
            key = "M" + key
        key = "M" + key[1:].lower()
        if key not in cls._TABLE:
            raise ValidationError(f"unknown mean model {variant!r}")
        return cls(key, *cls._TABLE[key])

    @property
    def alpha_names(self) -> tuple:
        names = []
        if self.uses_intercept:
            names.append("alpha0")
        if self.vol_regressor != "none":
            names.append("alpha1")
        return tuple(names)

    @property
    def vol_code(self) -> int:
        return _VOL_CODES[self.vol_regressor]

    def regressors(self, sigma):
        """Design columns of the mean equation, stacked on a trailing axis."""
        sigma = np.asarray(sigma, dtype=float)
        cols = []
        if self.uses_intercept:
            cols.append(np.ones_like(sigma))
        if self.vol_regressor == "variance":
            cols.append(sigma * sigma)
        elif self.vol_regressor == "stddev":
            cols.append(sigma)
        return np.stack(cols, axis=-1)

    def mean(self, sigma, alpha0=0.0, alpha1=0.0):
        sigma = np.asarray(sigma, dtype=float)
        mu = np.full_like(sigma, alpha0 if self.uses_intercept else 0.0)
        if self.vol_regressor == "variance":
            mu = mu + alpha1 * sigma * sigma
        elif self.vol_regressor == "stddev":
            mu = mu + alpha1 * sigma
        return mu


@dataclass(frozen=True)
class GarchParams:
    zeta0: float
    zeta1: float
    zeta2: float
    zeta3: float
    alpha0: float = 0.0
    alpha1: float = 0.0

    def __post_init__(self):
        if not self.zeta0 > 0:
            raise ValidationError("zeta0 must be > 0")
        if self.zeta1 < 0 or self.zeta1 + self.zeta2 < 0 or self.zeta3 < 0:
            raise ValidationError("need zeta1 >= 0, zeta1 + zeta2 >= 0, zeta3 >= 0")

    @property
    def persistence(self) -> float:
        return self.zeta1 + 0.5 * self.zeta2 + self.zeta3

    @property
    def stationary(self) -> bool:
        return self.persistence < 1.0

    @property
    def unconditional_variance(self) -> float:
        return self.zeta0 / (1.0 - self.persistence)


@dataclass
class FilterOutput:
    """Per-day filter results; every vector has the length of the input series.

    ``normal_scores`` are the standard-normal quantiles of each day's
    one-step-ahead predictive CDF at the observed return. They are i.i.d.
    N(0, 1) when the model is correct, whereas ``std_residuals`` divide by
    the filtered sigma, which already reflects day t's return.
    """

    x: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    shock: np.ndarray
    loglik: float
    dates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    normal_scores: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.x)
        for name in ("mu", "sigma", "shock", "normal_scores"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ValidationError(f"FilterOutput.{name} has wrong length")
        if self.dates is not None and len(self.dates) != n:
            raise ValidationError("FilterOutput.dates has wrong length")

    @property
    def std_residuals(self) -> np.ndarray:
        return (self.x - self.mu) / self.sigma

    def __len__(self):
        return len(self.x)


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _garch_kernel(x, z0, z1, z2, z3, a0, a1, vol, sigma2_init, mu, s2):
    """Run the recursion, filling mu and s2. Returns (loglik, bad_index)."""
    T = x.shape[0]
    ll = 0.0
    v = sigma2_init
    for t in range(T):
        s2[t] = v
        if vol == 1:
            m = a0 + a1 * v
        elif vol == 2:
            m = a0 + a1 * math.sqrt(v)
        else:
            m = a0
        mu[t] = m
        e = x[t] - m
        lt = -0.5 * (LOG_2PI + math.log(v) + e * e / v)
        if not math.isfinite(lt) or not v > 0.0:
            return ll, t
        ll += lt
        w = z1 + z2 if e < 0.0 else z1
        v = z0 + w * e * e + z3 * v
    return ll, -1


@numba.njit(cache=True)
def _garch_grad_kernel(x, z0, z1, z2, z3, a0, a1, vol, sigma2_init):
    """Loglik and its gradient w.r.t. (z0, z1, z2, z3, a0, a1) by forward-mode recursion.

    The mean intercept enters as ``a0`` for every spec; callers drop the
    entries that do not apply.
    """
    T = x.shape[0]
    ll = 0.0
    g = np.zeros(6)
    dv = np.zeros(6)  # d s2[t]
    dm = np.zeros(6)
    v = sigma2_init
    for t in range(T):
        if vol == 1:
            m = a0 + a1 * v
            for i in range(6):
                dm[i] = a1 * dv[i]
            dm[5] += v
        elif vol == 2:
            sd = math.sqrt(v)
            m = a0 + a1 * sd
            for i in range(6):
                dm[i] = a1 * dv[i] / (2.0 * sd)
            dm[5] += sd
        else:
            m = a0
            for i in range(6):
                dm[i] = 0.0
        dm[4] += 1.0
        e = x[t] - m
        if not v > 0.0:
            return -np.inf, g
        ll += -0.5 * (LOG_2PI + math.log(v) + e * e / v)
        # dl = -0.5 * (dv / v - 2 e dm / v - e^2 dv / v^2), using de = -dm
        for i in range(6):
            g[i] += -0.5 * (dv[i] / v - 2.0 * e * dm[i] / v - e * e * dv[i] / (v * v))
        neg = e < 0.0
        w = z1 + z2 if neg else z1
        vn = z0 + w * e * e + z3 * v
        # d vn = unit terms + 2 w e de + z3 dv
        for i in range(6):
            dv[i] = -2.0 * w * e * dm[i] + z3 * dv[i]
        dv[0] += 1.0
        dv[1] += e * e
        if neg:
            dv[2] += e * e
        dv[3] += v
        v = vn
    return ll, g


# ---------------------------------------------------------------------------


def default_sigma2_init(x, n: int = 50) -> float:
    """Sample variance of the first ``n`` observations."""
    head = np.asarray(x, dtype=float)[:n]
    return float(np.var(head, ddof=1)) if head.size > 1 else float(np.var(x))


def garch_filter(x, params: GarchParams, spec, sigma2_init: float | None = None,
                 dates=None) -> FilterOutput:
    """Deterministic GARCH-AM filter at fixed parameters.

    ``sigma2_init`` is the variance on day 1; defaults to the sample variance
    of the first 50 observations. ``shock[t]`` is the surprise in next-day
    volatility caused by day t's return, ``sigma[t+1] - sqrt(E_{t-1} sigma[t+1]^2)``.
    """
    spec = MeanModelSpec.of(spec)
    x = np.ascontiguousarray(x, dtype=float)
    if x.size == 0:
        raise ValidationError("empty series")
    if sigma2_init is None:
        sigma2_init = default_sigma2_init(x)
    if not sigma2_init > 0:
        raise ValidationError("sigma2_init must be > 0")
    a0 = params.alpha0 if spec.uses_intercept else 0.0
    a1 = params.alpha1 if spec.vol_regressor != "none" else 0.0
    mu = np.empty_like(x)
    s2 = np.empty_like(x)
    ll, bad = _garch_kernel(x, params.zeta0, params.zeta1, params.zeta2, params.zeta3,
                            a0, a1, spec.vol_code, float(sigma2_init), mu, s2)
    if bad >= 0:
        raise NonFiniteLikelihood("GARCH likelihood not finite", index=int(bad))
    # volatility news: next-day sigma minus its expectation before day t's return
    e = x - mu
    nxt = params.zeta0 + (params.zeta1 + params.zeta2 * (e < 0)) * e * e + params.zeta3 * s2
    expected = params.zeta0 + (params.zeta1 + 0.5 * params.zeta2 + params.zeta3) * s2
    shock = np.sqrt(nxt) - np.sqrt(expected)
    sigma = np.sqrt(s2)
    # sigma is known a day ahead, so the standardized residual is already
    # the predictive normal score
    return FilterOutput(x=x, mu=mu, sigma=sigma, shock=shock, loglik=float(ll),
                        dates=dates, meta={"model": "garch", "spec": spec.variant,
                                           "sigma2_init": float(sigma2_init)},
                        normal_scores=e / sigma)


# ---------------------------------------------------------------------------
# estimation


def _param_names(spec: MeanModelSpec) -> list[str]:
    return ["zeta0", "zeta1", "zeta2", "zeta3", *spec.alpha_names]


def _to_vector(p: GarchParams, spec: MeanModelSpec) -> np.ndarray:
    return np.array([getattr(p, n) for n in _param_names(spec)])


def _from_vector(v, spec: MeanModelSpec) -> GarchParams:
    kw = dict(zip(_param_names(spec), map(float, v)))
    return GarchParams(**kw)


def _raw_from_theta(theta, spec):
    """Map unconstrained theta to (zeta0..zeta3, alphas).

    zeta0 = exp(theta0). The weights (zeta1/2, (zeta1+zeta2)/2, zeta3, slack)
    are a softmax of (theta1, theta2, theta3, 0), so zeta1 >= 0,
    zeta1 + zeta2 >= 0, zeta3 >= 0 and zeta1 + zeta2/2 + zeta3 < 1 hold by
    construction.
    """
    theta = np.asarray(theta, dtype=float)
    ex = np.exp(np.append(theta[1:4], 0.0) - max(theta[1:4].max(), 0.0))
    w = ex / ex.sum()
    z1 = 2.0 * w[0]
    z2 = 2.0 * w[1] - 2.0 * w[0]
    return np.concatenate([[math.exp(theta[0]), z1, z2, w[2]], theta[4:]])


def _theta_from_raw(raw, spec):
    raw = np.asarray(raw, dtype=float)
    w = np.array([raw[1] / 2.0, (raw[1] + raw[2]) / 2.0, raw[3]])
    w = np.clip(w, 1e-6, None)
    slack = 1.0 - w.sum()
    if slack <= 1e-6:
        w *= (1.0 - 1e-3) / w.sum()
        slack = 1.0 - w.sum()
    return np.concatenate([[math.log(raw[0])], np.log(w / slack), raw[4:]])


def _theta_jacobian(theta, spec):
    """d raw / d theta (square matrix)."""
    k = len(theta)
    J = np.zeros((k, k))
    ex = np.exp(np.append(theta[1:4], 0.0) - max(theta[1:4].max(), 0.0))
    w = ex / ex.sum()
    J[0, 0] = math.exp(theta[0])
    dw = np.diag(w[:3]) - np.outer(w[:3], w[:3])  # d w[0:3] / d theta[1:4]
    J[1, 1:4] = 2.0 * dw[0]
    J[2, 1:4] = 2.0 * dw[1] - 2.0 * dw[0]
    J[3, 1:4] = dw[2]
    for i in range(4, k):
        J[i, i] = 1.0
    return J


def _loglik_and_grad_raw(raw, x, spec, sigma2_init):
    a0 = raw[4] if spec.uses_intercept else 0.0
    a1 = raw[-1] if spec.vol_regressor != "none" else 0.0
    ll, g = _garch_grad_kernel(x, raw[0], raw[1], raw[2], raw[3], a0, a1,
                               spec.vol_code, sigma2_init)
    keep = [0, 1, 2, 3]
    if spec.uses_intercept:
        keep.append(4)
    if spec.vol_regressor != "none":
        keep.append(5)
    return ll, g[keep]


def garch_loglik_grad(params: GarchParams, x, spec, sigma2_init: float | None = None):
    """Log-likelihood and its analytic gradient in raw parameter space."""
    spec = MeanModelSpec.of(spec)
    x = np.ascontiguousarray(x, dtype=float)
    s2 = default_sigma2_init(x) if sigma2_init is None else float(sigma2_init)
    return _loglik_and_grad_raw(_to_vector(params, spec), x, spec, s2)


@dataclass
class GarchFit:
    params: GarchParams
    output: FilterOutput
    cov: np.ndarray
    names: list
    n_iter: int
    grad_norm: float

    @property
    def loglik(self) -> float:
        return self.output.loglik

    @property
    def estimates(self) -> dict:
        return {n: getattr(self.params, n) for n in self.names}

    @property
    def se(self) -> dict:
        d = np.diag(self.cov)
        return {n: float(math.sqrt(v)) if v > 0 else float("nan") for n, v in zip(self.names, d)}

    @property
    def tstats(self) -> dict:
        se = self.se
        return {n: getattr(self.params, n) / se[n] for n in self.names}

    def __iter__(self):
        # allows ``params, output, cov = garch_fit(...)``
        return iter((self.params, self.output, self.cov))


def numerical_hessian(grad_fn, v, rel_step=1e-4, floor=1e-2):
    """Symmetrized central-difference Jacobian of an analytic gradient.

    The step for coordinate i is ``rel_step * max(|v_i|, floor)``.
    """
    v = np.asarray(v, dtype=float)
    k = v.size
    H = np.empty((k, k))
    for i in range(k):
        h = rel_step * max(abs(v[i]), floor)
        up, dn = v.copy(), v.copy()
        up[i] += h
        dn[i] -= h
        H[:, i] = (grad_fn(up) - grad_fn(dn)) / (2.0 * h)
    return 0.5 * (H + H.T)


def _default_init(x, spec) -> GarchParams:
    var = float(np.var(x))
    return GarchParams(zeta0=0.03 * var, zeta1=0.03, zeta2=0.08, zeta3=0.9,
                       alpha0=float(np.mean(x)) if spec.uses_intercept else 0.0, alpha1=0.0)


def garch_fit(x, spec, init: GarchParams | None = None, sigma2_init: float | None = None,
              gtol: float = 1e-6, maxiter: int = 2000, dates=None) -> GarchFit:
    """Maximum-likelihood fit of the GARCH-AM model.

    Quasi-Newton (BFGS) on transformed parameters with the analytic gradient.
    Converged when the infinity norm of the log-likelihood gradient in the
    transformed space is below ``gtol``. Standard errors come from the
    inverse of a central-difference Hessian in raw parameter space; if that
    Hessian is not negative definite a :class:`HessianNotPD` warning is
    issued and the covariance is NaN.
    """
    spec = MeanModelSpec.of(spec)
    x = np.ascontiguousarray(x, dtype=float)
    T = x.size
    if T < 100:
        raise ValidationError(f"garch_fit needs at least 100 observations, got {T}")
    if T < 500:
        warnings.warn(f"garch_fit on only {T} observations; estimates will be noisy", stacklevel=2)
    s2 = default_sigma2_init(x) if sigma2_init is None else float(sigma2_init)
    init = init or _default_init(x, spec)
    theta0 = _theta_from_raw(_to_vector(init, spec), spec)
    big = 1e10

    def objective(theta):
        raw = _raw_from_theta(theta, spec)
        ll, g = _loglik_and_grad_raw(raw, x, spec, s2)
        if not np.isfinite(ll) or not np.all(np.isfinite(g)):
            return big, np.zeros_like(theta)
        return -ll / T, -(g @ _theta_jacobian(theta, spec)) / T

    theta = theta0
    n_iter = 0
    # BFGS can stop on line-search precision loss far from the optimum; restart
    # from the last point until the gradient criterion holds or the cap is hit.
    for _ in range(20):
        res = optimize.minimize(objective, theta, jac=True, method="BFGS",
                                options={"gtol": gtol / T, "maxiter": maxiter - n_iter,
                                         "norm": np.inf})
        n_iter += res.nit
        theta = res.x
        grad_norm = float(np.max(np.abs(res.jac))) * T
        if grad_norm < gtol or n_iter >= maxiter or res.nit == 0:
            break
    if n_iter >= maxiter and grad_norm >= gtol:
        raise NonConvergence(f"BFGS hit {maxiter} iterations with |grad|={grad_norm:.3g}")
    if grad_norm >= gtol:
        warnings.warn(f"GARCH optimizer stopped at |grad|={grad_norm:.3g} "
                      f"({res.message})", RuntimeWarning, stacklevel=2)

    raw = _raw_from_theta(theta, spec)
    params = _from_vector(raw, spec)
    out = garch_filter(x, params, spec, s2, dates=dates)
    names = _param_names(spec)

    def grad_raw(v):
        return _loglik_and_grad_raw(v, x, spec, s2)[1]

    H = numerical_hessian(grad_raw, raw)
    try:
        np.linalg.cholesky(-H)
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        warnings.warn("Hessian is not negative definite; standard errors unavailable",
                      HessianNotPD, stacklevel=2)
        cov = np.full((len(names), len(names)), np.nan)
    out.meta.update({"params": dict(zip(names, map(float, raw))),
                     "se": {n: float(math.sqrt(c)) if c > 0 else float("nan")
                            for n, c in zip(names, np.diag(cov))}})
    out.meta["alpha"] = {n: out.meta["params"][n] for n in spec.alpha_names}
    out.meta["alpha_t"] = {n: out.meta["params"][n] / out.meta["se"][n] for n in spec.alpha_names}
    return GarchFit(params=params, output=out, cov=cov, names=names, n_iter=n_iter,
                    grad_norm=grad_norm)


def largest_residuals(out: FilterOutput, dates, k: int):
    """The ``k`` days with the largest absolute standardized residual, in date order.

    Returns a list of ``(date, return, standardized_residual)``; ties in
    magnitude go to the earlier date.
    """
    r = out.std_residuals
    if not 0 <= k <= r.size:
        raise ValidationError(f"k must be in [0, {r.size}]")
    order = np.argsort(-np.abs(r), kind="stable")[:k]
    order = np.sort(order)
    dates = np.asarray(dates)
    return [(dates[i], float(out.x[i]), float(r[i])) for i in order]
