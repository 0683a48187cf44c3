"""Model calibration: CSY regression fit and implied q, DEV and lambda surfaces."""
import csv
from dataclasses import dataclass, field
import io
import itertools
import json
import math

import numpy as np
from scipy.optimize import brentq, lsq_linear, minimize, minimize_scalar

from . import kernels
from .blackscholes import DomainError, implied_vol, price_bounds
from .csy import CSYParams, FilterSpec, accumulate
from .informed import AdmissibilityError, TraderSpec, price_informed
from .lattice import ArbitrageError, OptionSpec, step_logs

__all__ = [
    "CsyFit",
    "CsySolution",
    "SurfaceGrid",
    "fit_csy",
    "csy_design",
    "p_from_q",
    "binomial_price_at_q",
    "implied_q",
    "implied_q_surface",
    "implied_p_surface",
    "dev_surface",
    "implied_lambda",
    "implied_lambda_surface",
    "band_annotation",
    "REFERENCE_Q_BAND",
    "REFERENCE_DEV_BAND",
]

FORMAT_VERSION = 1
FINITE_STATUSES = ("ok", "clamped", "non-unique", "no exact match")
REFERENCE_Q_BAND = (0.5, 0.62)
REFERENCE_DEV_BAND = (-0.68, 2.01)


# --------------------------------------------------------------------------
# CSY regression
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CsySolution:
    params: CSYParams
    rmse: float
    sigma_h: float
    sigma_g: float
    start: tuple
    at_bound: tuple


@dataclass
class CsyFit:
    """Best CSY regression fit plus every near-optimal local solution."""

    params: CSYParams
    rmse: float
    residuals: np.ndarray
    start_point: tuple
    boundary_flags: tuple
    solutions: list = field(default_factory=list)
    start_rmse: list = field(default_factory=list)

    def to_dict(self):
        def row(s):
            p = s.params
            return {"nu": p.nu, "sigma": p.sigma, "gamma": p.gamma, "sigma_h": s.sigma_h,
                    "delta": p.delta, "sigma_g": s.sigma_g, "rmse": s.rmse,
                    "at_bound": list(s.at_bound)}
        return {"best": row(self.solutions[0]), "solutions": [row(s) for s in self.solutions],
                "start_point": list(self.start_point)}


def csy_design(xi, dt, sigma_h, sigma_g):
    """Regression columns for ``(nu, sigma, gamma, delta)`` at fixed bandwidths."""
    h, g = FilterSpec.gaussian(sigma_h), FilterSpec.gaussian(sigma_g)
    acc = accumulate(xi, h, g, dt)
    n = xi.size
    step = np.sqrt(dt) * xi
    return np.column_stack([
        np.full(n, float(dt)),
        step,
        step * h(acc.X[:-1]),
        step * g(acc.arg_g[:-1]),
    ])


def _inner(y, xi, dt, r, log_bw):
    sh, sg = math.exp(log_bw[0]), math.exp(log_bw[1])
    A = csy_design(xi, dt, sh, sg)
    lb = np.array([r, 0.0, 0.0, 0.0])
    res = lsq_linear(A, y, bounds=(lb, np.full(4, np.inf)), method="bvls", tol=1e-14)
    resid = y - A @ res.x
    return res.x, resid, float(np.sqrt(np.mean(resid ** 2)))


def fit_csy(stock_returns, intensity_series, r, init=None, bounds=None, n_starts=8, seed=0,
            tolerance=0.01, scan_points=25):
    """Least-squares fit of the stock log-returns to the CSY step formula.

    For fixed bandwidths ``(sigma_h, sigma_g)`` the model is linear in
    ``(nu, sigma, gamma, delta)``; that inner problem is solved exactly as a
    bound-constrained linear least-squares problem (``nu >= r`` and the
    loadings non-negative).  The bandwidths are searched by bounded
    Nelder-Mead on their logarithms from ``n_starts`` starts: the best
    points of a ``scan_points`` x ``scan_points`` log-grid scan plus seeded
    log-uniform draws.

    Parameters
    ----------
    init : (sigma_h, sigma_g), optional
        First start; the remaining starts are log-uniform within ``bounds``.
    bounds : ((lo_h, hi_h), (lo_g, hi_g)), optional
        Bandwidth bounds (default ``(0.1, 1e3)`` and ``(1, 1e5)``).
    tolerance : float
        Relative RMSE slack for reporting alternative local solutions.
    scan_points : int
        Grid points per bandwidth axis in the seeding scan.
    """
    y = np.asarray(stock_returns, dtype=np.float64)
    xi = intensity_series.xi
    dt = intensity_series.dt
    if y.size != xi.size:
        raise ValueError("stock returns and intensities must be aligned")
    bounds = bounds or ((0.1, 1e3), (1.0, 1e5))
    lb = np.log([bounds[0][0], bounds[1][0]])
    ub = np.log([bounds[0][1], bounds[1][1]])
    if np.any(lb >= ub):
        raise ValueError("inconsistent bandwidth bounds")
    def objective(z):
        return _inner(y, xi, dt, r, z)[2]

    # the landscape is flat away from a narrow basin, so half of the starts
    # come from the best points of a coarse log-grid scan
    axes = [np.linspace(lo, hi, scan_points) for lo, hi in zip(lb, ub)]
    scan = sorted((objective(np.array(z)), z) for z in itertools.product(*axes))
    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        starts.append(np.log(np.asarray(init, dtype=np.float64)))
    starts.extend(np.array(z) for _, z in scan[:max(1, n_starts // 2)])
    while len(starts) < n_starts:
        starts.append(rng.uniform(lb, ub))
    starts = [np.clip(s, lb, ub) for s in starts[:max(n_starts, 1)]]

    found = []
    start_rmse = []
    for s in starts:
        f0 = objective(s)
        start_rmse.append(f0)
        if not np.isfinite(f0):
            continue
        res = minimize(objective, s, method="Nelder-Mead", bounds=list(zip(lb, ub)),
                       options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 2000})
        z = res.x if res.fun <= f0 else s
        found.append((min(res.fun, f0), tuple(np.exp(s)), z))
    if not found:
        raise RuntimeError("no feasible start for the CSY fit")
    found.sort(key=lambda t: t[0])
    best_rmse = found[0][0]
    solutions = []
    seen = []
    for f, start, z in found:
        if f > best_rmse * (1.0 + tolerance) + 1e-300:
            continue
        coef, resid, rmse = _inner(y, xi, dt, r, z)
        key = np.round(np.concatenate((coef, z)), 6)
        if any(np.array_equal(key, k) for k in seen):
            continue
        seen.append(key)
        sh, sg = float(np.exp(z[0])), float(np.exp(z[1]))
        flags = (bool(coef[0] <= r * (1 + 1e-12) + 1e-15), bool(coef[1] <= 0), bool(coef[2] <= 0),
                 bool(coef[3] <= 0), bool(np.isclose(z[0], lb[0]) or np.isclose(z[0], ub[0])),
                 bool(np.isclose(z[1], lb[1]) or np.isclose(z[1], ub[1])))
        params = CSYParams.gaussian(float(coef[0]), max(float(coef[1]), 1e-300), float(coef[2]),
                                    sh, float(coef[3]), sg)
        solutions.append(CsySolution(params, rmse, sh, sg, start, flags))
    best = solutions[0]
    _, resid, _ = _inner(y, xi, dt, r, np.log([best.sigma_h, best.sigma_g]))
    return CsyFit(best.params, best.rmse, resid, best.start, best.at_bound, solutions, start_rmse)


# --------------------------------------------------------------------------
# surfaces
# --------------------------------------------------------------------------

@dataclass
class SurfaceGrid:
    """Values on a (moneyness, maturity) grid; failed cells carry a reason."""

    moneyness: np.ndarray
    maturity: np.ndarray
    values: np.ndarray
    kind: str
    status: np.ndarray
    maturity_unit: str = "years"

    def __post_init__(self):
        if self.values.shape != (self.moneyness.size, self.maturity.size):
            raise ValueError("value matrix does not match the axes")
        bad = np.isnan(self.values) & np.isin(self.status, FINITE_STATUSES)
        if np.any(bad):
            raise ValueError("NaN cell without a failure reason")

    @classmethod
    def from_cells(cls, cells, kind, maturity_unit="years"):
        """Build from ``(moneyness, maturity, value, status)`` tuples."""
        M = np.unique([c[0] for c in cells])
        T = np.unique([c[1] for c in cells])
        vals = np.full((M.size, T.size), np.nan)
        status = np.full((M.size, T.size), "missing", dtype=object)
        for m, t, v, s in cells:
            i, j = np.searchsorted(M, m), np.searchsorted(T, t)
            vals[i, j] = v
            status[i, j] = s
        return cls(M, T, vals, kind, status, maturity_unit)

    def cells(self):
        for i, m in enumerate(self.moneyness):
            for j, t in enumerate(self.maturity):
                yield float(m), float(t), float(self.values[i, j]), str(self.status[i, j])

    def finite_values(self):
        return self.values[np.isfinite(self.values)]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["moneyness", "maturity", "value", "status"])
        for m, t, v, s in self.cells():
            w.writerow([repr(m), repr(t), "" if math.isnan(v) else repr(v), s])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "maturity_unit": self.maturity_unit,
            "moneyness": self.moneyness.tolist(),
            "maturity": self.maturity.tolist(),
            "values": [[None if math.isnan(v) else v for v in row] for row in self.values.tolist()],
            "status": self.status.tolist(),
        }, sort_keys=True)


def band_annotation(values, band):
    """Share of finite ``values`` inside ``band`` and their observed range."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"n": 0, "inside": 0.0, "min": None, "max": None, "band": list(band)}
    inside = float(np.mean((v >= band[0]) & (v <= band[1])))
    return {"n": int(v.size), "inside": inside, "min": float(v.min()), "max": float(v.max()),
            "band": list(band)}


# --------------------------------------------------------------------------
# implied q
# --------------------------------------------------------------------------

def p_from_q(q, theta, dt):
    """Natural upturn probability implied by a risk-neutral ``q``.

    Returns ``(p, clamped)`` with
    ``p = q + |theta| sqrt(q (1-q) dt) + (1/2 - q) theta^2 dt`` pulled into
    (0, 1) when necessary.
    """
    if not 0.0 < q < 1.0 or not dt > 0:
        raise ValueError("need q in (0, 1) and dt > 0")
    p = q + abs(theta) * math.sqrt(q * (1.0 - q) * dt) + (0.5 - q) * theta * theta * dt
    eps = 1e-12
    pc = min(max(p, eps), 1.0 - eps)
    return pc, pc != p


def binomial_price_at_q(q, S0, K, T, mu, sigma, r, kind="call", dt=1.0 / 252, nodes="fixed",
                        node_p=0.5):
    """Backward-induction price with constant step probability ``q``.

    ``nodes="fixed"`` places the tree nodes at the natural probability
    ``node_p``; the price is then a strictly monotone polynomial in ``q``.
    ``nodes="coupled"`` places them at ``p_from_q(q)``, which makes the nodes
    move with ``q`` and the price a jagged, non-injective function of it.
    """
    n = max(1, int(round(T / dt)))
    h = T / n
    if nodes == "fixed":
        p = node_p
    elif nodes == "coupled":
        p, _ = p_from_q(q, (mu - r) / sigma, h)
    else:
        raise ValueError("nodes must be 'fixed' or 'coupled'")
    up, down = step_logs(mu, sigma, p, h)
    j = np.arange(n + 1)
    ST = S0 * np.exp(j * up + (n - j) * down)
    pay = np.maximum(ST - K, 0.0) if kind == "call" else np.maximum(K - ST, 0.0)
    f0, _ = kernels.rollback_recombining(pay, np.full(n, q), np.full(n, math.exp(-r * h)), False)
    return float(f0)


def implied_q(price, S0, K, T, mu, sigma, r, kind="call", dt=1.0 / 252, nodes="fixed",
              node_p=0.5, rtol=1e-10):
    """Constant ``q`` reproducing one quote.

    A 99-point scan of the relative error locates a sign change, refined by
    Brent root finding; without one, a bounded Brent minimisation of the
    squared relative error around the best scan point is used.  Returns
    ``(q, status)``.
    """
    lo, hi = price_bounds(S0, K, T, r, kind)
    if not (lo < price < hi):
        return math.nan, "bound violation"

    def err(q):
        return (binomial_price_at_q(q, S0, K, T, mu, sigma, r, kind, dt, nodes, node_p)
                - price) / price

    grid = np.concatenate(([1e-9], np.linspace(0.01, 0.99, 99), [1 - 1e-9]))
    vals = np.array([err(q) for q in grid])
    zero = np.flatnonzero(vals == 0.0)
    cross = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    if zero.size + cross.size:
        if zero.size and (not cross.size or zero[0] <= cross[0]):
            q = grid[int(zero[0])]
        else:
            i = int(cross[0])
            q = brentq(err, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
        status = "ok" if abs(err(q)) <= rtol else "no exact match"
        if zero.size + cross.size > 1 and status == "ok":
            status = "non-unique"
        return float(q), status
    i = int(np.argmin(np.abs(vals)))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda q: err(q) ** 2, bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12, "maxiter": 500})
    return float(res.x), "no exact match"


def implied_q_surface(chain, S0, mu, sigma, r, dt=1.0 / 252, year_basis=365.0, nodes="fixed",
                      node_p=0.5, units_per_year=1.0):
    """Implied ``q`` per quote of an option chain, as a surface on ``(K/S, T)``.

    ``mu``, ``sigma``, ``r`` and ``dt`` share one time unit, with
    ``units_per_year`` of them in a year (1 for annual inputs, 252 for daily
    ones).  The surface maturity axis is in years.
    """
    T = chain.maturities(year_basis)
    cells = []
    for quote, t in zip(chain.quotes, T):
        t_model = t * units_per_year
        q, status = implied_q(quote.price, S0, quote.strike, t_model, mu, sigma, r, quote.kind,
                              dt, nodes, node_p)
        cells.append((quote.strike / S0, float(t), q, status))
    return SurfaceGrid.from_cells(cells, "q")


def implied_p_surface(q_surface, mu, sigma, r, dt=1.0 / 252):
    """Map an implied ``q`` surface to natural probabilities with :func:`p_from_q`."""
    theta = (mu - r) / sigma
    vals = np.full(q_surface.values.shape, np.nan)
    status = q_surface.status.copy()
    for idx, q in np.ndenumerate(q_surface.values):
        if status[idx] == "ok" and 0.0 < q < 1.0:
            vals[idx], clamped = p_from_q(q, theta, dt)
            if clamped:
                status[idx] = "clamped"
        elif status[idx] == "ok":
            status[idx] = "q outside (0, 1)"
    return SurfaceGrid(q_surface.moneyness, q_surface.maturity, vals, "p", status,
                       q_surface.maturity_unit)


# --------------------------------------------------------------------------
# DEV
# --------------------------------------------------------------------------

def dev_surface(model_prices, chain, S0, r, year_basis=365.0):
    """Relative deviation of model-implied from market-implied volatility.

    ``model_prices`` is a sequence aligned with ``chain.quotes`` or a callable
    ``pricer(quote, T)`` returning the model price.
    """
    T = chain.maturities(year_basis)
    cells = []
    for i, (quote, t) in enumerate(zip(chain.quotes, T)):
        mp = model_prices(quote, t) if callable(model_prices) else model_prices[i]
        try:
            sm = implied_vol(mp, S0, quote.strike, t, r, quote.kind)
            sk = implied_vol(quote.price, S0, quote.strike, t, r, quote.kind)
            cells.append((quote.strike / S0, float(t), (sm - sk) / sm, "ok"))
        except DomainError as exc:
            cells.append((quote.strike / S0, float(t), math.nan, f"implied vol failure: {exc}"))
    return SurfaceGrid.from_cells(cells, "dev")


# --------------------------------------------------------------------------
# implied lambda
# --------------------------------------------------------------------------

def implied_lambda(price, S0, K, n_steps, params, intensity_series, rates, kind="call",
                   q_rule="first_order", rtol=1e-12):
    """Information intensity reproducing one quote.

    Returns ``(lambda, status)``; ``status`` is ``"ok"``, ``"unidentified"``
    when the price does not react to ``lambda``, or a failure reason.
    """
    dt = intensity_series.dt
    T = n_steps * dt
    option = OptionSpec(kind, K, T)
    lam_max = (1.0 - 1e-9) / math.sqrt(dt)

    def model(lam):
        return price_informed(params, intensity_series, TraderSpec(lam), rates, option, S0,
                              n_steps, q_rule=q_rule, keep_levels=False).f0

    try:
        f0 = model(0.0)
    except (AdmissibilityError, ArbitrageError, ValueError) as exc:
        return math.nan, f"model failure: {exc}"

    def err(lam):
        return (model(lam) - price) / price

    e0 = (f0 - price) / price
    if abs(e0) <= rtol:
        return 0.0, "ok"
    grid = np.concatenate(([0.0], np.geomspace(1e-7, lam_max, 40)))
    errs = [e0]
    last = 0
    for lam in grid[1:]:
        try:
            errs.append(err(lam))
            last += 1
        except (AdmissibilityError, ArbitrageError):
            break
    errs = np.array(errs)
    lams = grid[:errs.size]
    if np.max(np.abs(errs - e0)) <= 1e-13:
        return math.nan, "unidentified"
    sign = np.flatnonzero(np.sign(errs[:-1]) != np.sign(errs[1:]))
    if sign.size:
        i = int(sign[0])
        lam = brentq(err, lams[i], lams[i + 1], xtol=1e-16, rtol=4 * np.finfo(float).eps)
        return float(lam), "ok"
    i = int(np.argmin(np.abs(errs)))
    a, b = lams[max(i - 1, 0)], lams[min(i + 1, lams.size - 1)]
    res = minimize_scalar(lambda l: err(l) ** 2, bounds=(a, b), method="bounded",
                          options={"xatol": 1e-14})
    return float(res.x), "no exact match"


def implied_lambda_surface(chain, S0, params, intensity_series, rates, steps_per_year=252,
                           year_basis=365.0, q_rule="first_order"):
    """Implied information intensity per quote, as a ``(K/S, T)`` surface.

    Maturities are converted to a whole number of tree steps with
    ``steps_per_year``; ``intensity_series.dt`` fixes the model time unit.
    """
    T = chain.maturities(year_basis)
    cells = []
    for quote, t in zip(chain.quotes, T):
        n = max(1, int(round(t * steps_per_year)))
        lo, hi = price_bounds(S0, quote.strike, n * intensity_series.dt,
                              float(np.mean(rates)), quote.kind)
        if not (lo < quote.price < hi):
            cells.append((quote.strike / S0, float(t), math.nan, "bound violation"))
            continue
        lam, status = implied_lambda(quote.price, S0, quote.strike, n, params,
                                     intensity_series, rates, quote.kind, q_rule)
        cells.append((quote.strike / S0, float(t), lam, status))
    return SurfaceGrid.from_cells(cells, "lambda")
