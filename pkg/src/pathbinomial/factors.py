"""Systematic-factor series: ARMA(1,1)-GJR-GARCH(1,1) residuals and regression alphas.

Mean and variance recursions::

    a_k     = R_k - mu - phi (R_{k-1} - mu) - theta a_{k-1}
    s2_k    = alpha0 + (alpha1 + gamma1 I[a_{k-1} < 0]) a_{k-1}^2 + beta1 s2_{k-1}

started from ``a_0 = 0`` and ``s2_1`` equal to the sample variance.
"""
import csv
from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from . import kernels

__all__ = [
    "ArmaGjrGarchParams",
    "GarchFit",
    "GarchConvergenceError",
    "AlphaSeries",
    "garch_loglik_terms",
    "simulate_arma_gjr_garch",
    "fit_arma_gjr_garch",
    "garch_residuals",
    "jensen_alpha_series",
    "ff3_alpha_series",
    "load_factor_table",
    "daily_rate",
]

PARAM_NAMES = ("mu", "phi1", "theta1", "alpha0", "alpha1", "beta1", "gamma1", "shape")
_PENALTY = 1e10


@dataclass(frozen=True)
class ArmaGjrGarchParams:
    """ARMA(1,1)-GJR-GARCH(1,1) parameters; ``shape`` is the Student-t dof."""

    mu: float
    phi1: float
    theta1: float
    alpha0: float
    alpha1: float
    beta1: float
    gamma1: float = 0.0
    innovation: str = "gaussian"
    shape: float = None

    def __post_init__(self):
        if self.innovation not in ("gaussian", "student_t"):
            raise ValueError("innovation must be 'gaussian' or 'student_t'")
        if self.innovation == "student_t" and not (self.shape is not None and self.shape > 2):
            raise ValueError("student_t innovations need shape > 2")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")

    @property
    def persistence(self):
        return self.alpha1 + self.beta1 + 0.5 * self.gamma1

    def as_dict(self):
        d = {k: getattr(self, k) for k in PARAM_NAMES[:7]}
        if self.innovation == "student_t":
            d["shape"] = self.shape
        return d


@dataclass
class GarchFit:
    params: ArmaGjrGarchParams
    log_likelihood: float
    converged: bool
    a: np.ndarray
    sigmas: np.ndarray
    std_errors: dict = field(default_factory=dict)
    start_log_likelihoods: list = field(default_factory=list)
    n_evals: int = 0

    @property
    def residuals(self):
        return self.a / self.sigmas

    def to_dict(self):
        return {
            "params": self.params.as_dict(),
            "innovation": self.params.innovation,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "std_errors": self.std_errors,
            "n_obs": int(self.a.size),
        }


class GarchConvergenceError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# --------------------------------------------------------------------------
# likelihood
# --------------------------------------------------------------------------

def _filter(returns, p, s2_0):
    return kernels.garch_filter(returns, p.mu, p.phi1, p.theta1, p.alpha0, p.alpha1,
                                p.gamma1, p.beta1, s2_0)


def garch_loglik_terms(params, returns, s2_0=None):
    """Per-observation log-likelihood contributions."""
    returns = np.ascontiguousarray(returns, dtype=np.float64)
    s2_0 = float(np.var(returns)) if s2_0 is None else s2_0
    a, s2 = _filter(returns, params, s2_0)
    if np.any(s2 <= 0) or not np.all(np.isfinite(s2)):
        return np.full(returns.size, -np.inf)
    if params.innovation == "gaussian":
        return -0.5 * (math.log(2.0 * math.pi) + np.log(s2) + a * a / s2)
    v = params.shape
    c = gammaln(0.5 * (v + 1)) - gammaln(0.5 * v) - 0.5 * math.log(math.pi * (v - 2.0))
    return c - 0.5 * np.log(s2) - 0.5 * (v + 1) * np.log1p(a * a / (s2 * (v - 2.0)))


def simulate_arma_gjr_garch(params, T, seed, burn=500):
    """Simulate ``T`` returns (after ``burn`` discarded steps)."""
    rng = np.random.default_rng(seed)
    n = T + burn
    if params.innovation == "gaussian":
        z = rng.standard_normal(n)
    else:
        v = params.shape
        z = rng.standard_t(v, n) * math.sqrt((v - 2.0) / v)
    if params.persistence >= 1:
        raise ValueError("simulation needs a covariance-stationary parameter set")
    s2 = params.alpha0 / (1.0 - params.persistence)
    r = np.empty(n)
    a_prev, r_prev = 0.0, params.mu
    for k in range(n):
        a = math.sqrt(s2) * z[k]
        r[k] = params.mu + params.phi1 * (r_prev - params.mu) + params.theta1 * a_prev + a
        lev = params.gamma1 if a < 0 else 0.0
        s2 = params.alpha0 + (params.alpha1 + lev) * a * a + params.beta1 * s2
        a_prev, r_prev = a, r[k]
    return r[burn:]


# --------------------------------------------------------------------------
# estimation
# --------------------------------------------------------------------------

class _Objective:
    """Negative mean log-likelihood over an unconstrained-ish vector.

    Vector layout: ``mu, phi1, theta1, log(alpha0), alpha1, beta1[, gamma1][, shape]``.
    """

    def __init__(self, returns, innovation, leverage):
        self.r = np.ascontiguousarray(returns, dtype=np.float64)
        self.var = float(np.var(self.r))
        self.innovation = innovation
        self.leverage = leverage
        self.evals = 0
        sd = math.sqrt(self.var)
        m = float(np.mean(self.r))
        self.bounds = [(m - 10 * sd, m + 10 * sd), (-0.99, 0.99), (-0.99, 0.99),
                       (math.log(self.var) - 25.0, math.log(self.var) + 2.0),
                       (0.0, 1.0), (0.0, 1.0)]
        if leverage:
            self.bounds.append((-1.0, 1.0))
        if innovation == "student_t":
            self.bounds.append((2.05, 200.0))

    def unpack(self, x):
        i = 6
        g = 0.0
        if self.leverage:
            g = float(x[i])
            i += 1
        shape = float(x[i]) if self.innovation == "student_t" else None
        return ArmaGjrGarchParams(float(x[0]), float(x[1]), float(x[2]), math.exp(x[3]),
                                  float(x[4]), float(x[5]), g, self.innovation, shape)

    def pack(self, p):
        x = [p.mu, p.phi1, p.theta1, math.log(p.alpha0), p.alpha1, p.beta1]
        if self.leverage:
            x.append(p.gamma1)
        if self.innovation == "student_t":
            x.append(p.shape)
        return np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(x, self.bounds)])

    def __call__(self, x):
        self.evals += 1
        alpha1, beta1 = x[4], x[5]
        g = x[6] if self.leverage else 0.0
        if alpha1 + beta1 + 0.5 * g >= 1.0 or alpha1 + g < 0.0:
            return _PENALTY
        p = self.unpack(x)
        ll = garch_loglik_terms(p, self.r, self.var)
        total = float(np.sum(ll))
        if not np.isfinite(total):
            return _PENALTY
        return -total / self.r.size


def _starts(obj, n_starts, rng, extra=()):
    m = float(np.mean(obj.r))
    out = []
    for p in extra:
        out.append(obj.pack(p))
    base = dict(mu=m, phi1=0.0, theta1=0.0, alpha1=0.05, beta1=0.90, gamma1=0.0)
    for i in range(n_starts):
        if i == 0:
            d = dict(base)
        else:
            d = dict(mu=m, phi1=rng.uniform(-0.5, 0.5), theta1=rng.uniform(-0.5, 0.5),
                     alpha1=rng.uniform(0.02, 0.25), beta1=rng.uniform(0.4, 0.9),
                     gamma1=rng.uniform(0.0, 0.15) if obj.leverage else 0.0)
            if d["alpha1"] + d["beta1"] + 0.5 * d["gamma1"] > 0.98:
                d["beta1"] = 0.98 - d["alpha1"] - 0.5 * d["gamma1"]
        a0 = obj.var * max(1.0 - d["alpha1"] - d["beta1"] - 0.5 * d["gamma1"], 0.02)
        shape = 8.0 if i == 0 else rng.uniform(4.0, 30.0)
        p = ArmaGjrGarchParams(d["mu"], d["phi1"], d["theta1"], a0, d["alpha1"], d["beta1"],
                               d["gamma1"], obj.innovation,
                               shape if obj.innovation == "student_t" else None)
        out.append(obj.pack(p))
    return out


def _nelder_mead(obj, x0, maxiter, restarts=3):
    best = minimize(obj, x0, method="Nelder-Mead", bounds=obj.bounds,
                    options={"maxiter": maxiter, "maxfev": 2 * maxiter,
                             "xatol": 1e-8, "fatol": 1e-12, "adaptive": True})
    for _ in range(restarts):
        nxt = minimize(obj, best.x, method="Nelder-Mead", bounds=obj.bounds,
                       options={"maxiter": maxiter, "maxfev": 2 * maxiter,
                                "xatol": 1e-9, "fatol": 1e-13, "adaptive": True})
        improved = nxt.fun < best.fun - 1e-12
        if nxt.fun <= best.fun:
            best = nxt
        if not improved:
            break
    return best


def _opg_std_errors(p, returns, leverage):
    names = ["mu", "phi1", "theta1", "alpha0", "alpha1", "beta1"]
    if leverage:
        names.append("gamma1")
    if p.innovation == "student_t":
        names.append("shape")
    theta0 = np.array([getattr(p, k) for k in names], dtype=np.float64)
    var = float(np.var(returns))
    grads = np.empty((returns.size, theta0.size))
    for j in range(theta0.size):
        h = 1e-5 * max(abs(theta0[j]), 1e-3 if names[j] != "alpha0" else theta0[j])
        up, dn = theta0.copy(), theta0.copy()
        up[j] += h
        dn[j] -= h
        lu = garch_loglik_terms(replace(p, **dict(zip(names, up))), returns, var)
        ld = garch_loglik_terms(replace(p, **dict(zip(names, dn))), returns, var)
        grads[:, j] = (lu - ld) / (2 * h)
    J = grads.T @ grads
    cov = np.linalg.pinv(J)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return dict(zip(names, se.tolist()))


def fit_arma_gjr_garch(returns, innovation="gaussian", leverage=True, n_starts=8, seed=0,
                       maxiter=4000, extra_starts=()):
    """Quasi-maximum-likelihood fit by bounded Nelder-Mead with multi-start.

    With ``leverage=True`` the plain GARCH optimum (``gamma1 = 0``) is found
    first and used as an extra start, so the leveraged likelihood never falls
    below the nested one.  Starts are seeded; the best likelihood wins, ties
    going to the earlier start.

    Raises
    ------
    GarchConvergenceError
        If no start improves on its initial value; the best parameters found
        are attached as ``.best``.
    """
    if innovation not in ("gaussian", "student_t"):
        raise ValueError("innovation must be 'gaussian' or 'student_t'")
    r = np.ascontiguousarray(returns, dtype=np.float64)
    if r.size < 250:
        raise ValueError("need at least 250 observations")
    if not np.var(r) > 0:
        raise ValueError("degenerate input: zero sample variance")
    extra = list(extra_starts)
    if leverage:
        nested = fit_arma_gjr_garch(r, innovation, False, n_starts, seed, maxiter)
        extra.append(nested.params)
    obj = _Objective(r, innovation, leverage)
    rng = np.random.default_rng(seed)
    starts = _starts(obj, n_starts, rng, extra)
    start_f, results = [], []
    for x0 in starts:
        start_f.append(obj(x0))
        results.append(_nelder_mead(obj, x0, maxiter))
    best_i = min(range(len(results)), key=lambda i: (results[i].fun, i))
    best = results[best_i]
    p = obj.unpack(best.x)
    a, s2 = _filter(r, p, obj.var)
    improved = any(res.fun < f0 for res, f0 in zip(results, start_f))
    fit = GarchFit(p, float(-best.fun * r.size), bool(improved), a, np.sqrt(s2),
                   start_log_likelihoods=[-f * r.size if f < _PENALTY else -np.inf
                                          for f in start_f],
                   n_evals=obj.evals)
    if best.fun >= _PENALTY or not improved:
        raise GarchConvergenceError("no start improved on its initial likelihood", fit)
    fit.std_errors = _opg_std_errors(p, r, leverage)
    return fit


def garch_residuals(fit):
    """Standardised residuals ``a_k / sigma_k``."""
    if np.any(fit.sigmas <= 0):
        raise ValueError("zero conditional sigma")
    return fit.a / fit.sigmas


# --------------------------------------------------------------------------
# regression alphas
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaSeries:
    dates: np.ndarray
    alpha: np.ndarray
    betas: dict
    intercept: float


def daily_rate(annual, periods_per_year=252):
    """Per-period simple rate from an annualised quote."""
    return np.asarray(annual, dtype=np.float64) / periods_per_year


def _aligned(*arrays):
    arrs = [np.asarray(a, dtype=np.float64) for a in arrays]
    n = arrs[0].size
    if any(a.size != n for a in arrs):
        raise ValueError("series must be aligned (equal length)")
    return arrs


def jensen_alpha_series(stock_returns, market_returns, rf, dates=None):
    """Single-beta CAPM regression over the window and the implied alpha series."""
    y, x, f = _aligned(stock_returns, market_returns, np.broadcast_to(rf, np.shape(stock_returns)))
    ye, xe = y - f, x - f
    xc = xe - xe.mean()
    sxx = float(xc @ xc)
    if sxx <= xe.size * (1e-12 * float(np.max(np.abs(xe), initial=0.0))) ** 2:
        raise ValueError("market excess returns have zero variance")
    beta = float(xc @ (ye - ye.mean())) / sxx
    alpha = ye - beta * xe
    return AlphaSeries(dates, alpha, {"market": beta}, float(ye.mean() - beta * xe.mean()))


def ff3_alpha_series(stock_returns, factor_table, dates=None):
    """Three-factor regression over the window and the implied alpha series.

    ``factor_table`` maps ``mkt_excess``, ``smb``, ``hml`` and ``rf`` to
    aligned arrays; a factor column may be omitted to nest a smaller model.
    """
    y = np.asarray(stock_returns, dtype=np.float64)
    rf = np.broadcast_to(np.asarray(factor_table["rf"], dtype=np.float64), y.shape)
    names = [k for k in ("mkt_excess", "smb", "hml") if k in factor_table]
    F = np.column_stack([_aligned(y, factor_table[k])[1] for k in names])
    X = np.column_stack([np.ones(y.size), F])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("factor matrix is rank deficient")
    ye = y - rf
    coef, *_ = np.linalg.lstsq(X, ye, rcond=None)
    betas = dict(zip(names, coef[1:].tolist()))
    alpha = ye - F @ coef[1:]
    return AlphaSeries(dates, alpha, betas, float(coef[0]))


def load_factor_table(path):
    """Read ``date,mkt_excess,smb,hml,rf`` into a dict of arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    need = ("date", "mkt_excess", "smb", "hml", "rf")
    if not rows or any(k not in rows[0] for k in need):
        raise ValueError(f"{path}: expected columns {need}")
    out = {"date": np.array([r["date"] for r in rows], dtype="datetime64[D]")}
    for k in need[1:]:
        out[k] = np.array([float(r[k]) for r in rows])
    return out
