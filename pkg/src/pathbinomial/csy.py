"""Path-dependent stock dynamics driven by index return intensities.

An index log-return series is centred and scaled, its signs become a
two-point intensity ``xi`` with mean 0 and variance 1, and the stock
log-price is

    ln(S_k / S0) = nu t_k + sigma X_k + gamma Y_k + delta V_k

with running sums

    X_k = sum_{i<=k} sqrt(dt) xi_i
    Y_k = sum_{i<=k} sqrt(dt) xi_i h(X_{i-1})
    V_k = sum_{i<=k} sqrt(dt) xi_i g(A_{i-1}),   A_k = sum_{j<=k} X_{j-1} dt.

The local volatility on step ``k -> k+1`` is
``eta_k = sigma + gamma h(X_k) + delta g(A_k)`` (``eta_0 = sigma``).
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .lattice import ArbitrageError, Lattice, TimeGrid, price_backward_induction

__all__ = [
    "FilterSpec",
    "CSYParams",
    "IntensitySeries",
    "PathAccumulators",
    "SdeCoefficients",
    "centralize",
    "intensity",
    "two_point_values",
    "accumulate",
    "eta_series",
    "eta",
    "stock_path",
    "step_log_returns",
    "sde_coefficients",
    "simulate_continuum",
    "coarsen_increments",
    "bandpass_experiment",
    "csy_moves",
    "step_probability",
    "price_csy",
]

PATH_BLOCK = 1024


# --------------------------------------------------------------------------
# filters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterSpec:
    """Piecewise-continuous weight function.

    ``kind="gaussian"`` is the kernel ``exp(-x^2 / (2 b^2)) / (b sqrt(2 pi))``;
    ``kind="constant"`` returns ``value`` everywhere; ``kind="piecewise"``
    applies ``pieces[i]`` on ``[breakpoints[i-1], breakpoints[i])`` so that a
    breakpoint takes the right-hand limit.
    """

    kind: str = "gaussian"
    bandwidth: float = 1.0
    value: float = 0.0
    breakpoints: tuple = ()
    pieces: tuple = ()

    def __post_init__(self):
        if self.kind == "gaussian" and not self.bandwidth > 0:
            raise ValueError("gaussian filter bandwidth must be positive")
        if self.kind == "piecewise" and len(self.pieces) != len(self.breakpoints) + 1:
            raise ValueError("piecewise filter needs one more piece than breakpoints")
        if self.kind not in ("gaussian", "constant", "piecewise"):
            raise ValueError(f"unknown filter kind {self.kind!r}")

    @classmethod
    def gaussian(cls, bandwidth):
        return cls("gaussian", float(bandwidth))

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def piecewise(cls, breakpoints, pieces):
        return cls("piecewise", breakpoints=tuple(breakpoints), pieces=tuple(pieces))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gaussian":
            b = self.bandwidth
            return np.exp(-0.5 * (x / b) ** 2) / (b * math.sqrt(2.0 * math.pi))
        if self.kind == "constant":
            return np.full_like(x, self.value)
        idx = np.searchsorted(np.asarray(self.breakpoints), x, side="right")
        out = np.empty_like(x)
        for i, fn in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                out[m] = fn(x[m])
        return out


@dataclass(frozen=True)
class CSYParams:
    """Stock drift ``nu``, base volatility ``sigma`` and filter loadings."""

    nu: float
    sigma: float
    gamma: float = 0.0
    delta: float = 0.0
    filter_h: FilterSpec = field(default_factory=lambda: FilterSpec.gaussian(1.0))
    filter_g: FilterSpec = field(default_factory=lambda: FilterSpec.gaussian(1.0))

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def gaussian(cls, nu, sigma, gamma, sigma_h, delta, sigma_g):
        return cls(nu, sigma, gamma, delta, FilterSpec.gaussian(sigma_h),
                   FilterSpec.gaussian(sigma_g))


# --------------------------------------------------------------------------
# intensities and accumulators
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IntensitySeries:
    """Two-point intensities with upturn probability ``p_upturn``."""

    xi: np.ndarray
    p_upturn: float
    dt: float

    def __len__(self):
        return self.xi.size


def centralize(returns, mu_M, sigma_M, dt):
    """Standard scores ``(R - (mu - sigma^2/2) dt) / (sigma sqrt(dt))``."""
    if not sigma_M > 0:
        raise ValueError("sigma_M must be positive")
    r = np.asarray(returns, dtype=np.float64)
    return (r - (mu_M - 0.5 * sigma_M ** 2) * dt) / (sigma_M * math.sqrt(dt))


def two_point_values(p_upturn):
    """``(sqrt((1-p)/p), -sqrt(p/(1-p)))``."""
    return math.sqrt((1.0 - p_upturn) / p_upturn), -math.sqrt(p_upturn / (1.0 - p_upturn))


def intensity(z, p_upturn=None, dt=1.0 / 252, raw_sign=False):
    """Map standard scores to two-point intensities.

    ``p_upturn`` defaults to the share of ``z >= 0``.  With ``raw_sign`` the
    intensities are plain signs ``+-1`` (the symmetric case ``p = 1/2``)
    while ``p_upturn`` still records the observed up share.
    """
    z = np.asarray(z, dtype=np.float64)
    up = z >= 0
    if p_upturn is None:
        p_upturn = float(np.mean(up))
        if p_upturn in (0.0, 1.0):
            raise ValueError("all intensities share one sign; upturn probability is degenerate")
    if not 0.0 < p_upturn < 1.0:
        raise ValueError("p_upturn must lie in (0, 1)")
    if raw_sign:
        xi = np.where(up, 1.0, -1.0)
    else:
        a, b = two_point_values(p_upturn)
        xi = np.where(up, a, b)
    return IntensitySeries(xi, float(p_upturn), float(dt))


def _steps(dt, n):
    return np.broadcast_to(np.asarray(dt, dtype=np.float64), (n,))


@dataclass(frozen=True)
class PathAccumulators:
    """Running sums indexed ``0..n``; every entry at index 0 is zero."""

    X: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    arg_g: np.ndarray

    @property
    def arg_h(self):
        return self.X


def accumulate(xi, filter_h, filter_g, dt=None):
    """Running sums ``X``, ``Y``, ``V`` and the ``g`` argument ``A``."""
    if isinstance(xi, IntensitySeries):
        dt = xi.dt if dt is None else dt
        xi = xi.xi
    xi = np.asarray(xi, dtype=np.float64)
    n = xi.size
    h = _steps(dt, n)
    inc = np.sqrt(h) * xi
    X = np.concatenate(([0.0], np.cumsum(inc)))
    A = np.concatenate(([0.0], np.cumsum(X[:-1] * h)))
    Y = np.concatenate(([0.0], np.cumsum(inc * filter_h(X[:-1]))))
    V = np.concatenate(([0.0], np.cumsum(inc * filter_g(A[:-1]))))
    return PathAccumulators(X, Y, V, A)


def eta_series(params, xi, dt=None, convention="previsible"):
    """Local volatilities ``eta_0 .. eta_m`` along an intensity path.

    ``convention="previsible"`` evaluates ``h`` at ``X_k`` (intensities up to
    step ``k``) and returns ``n + 1`` values.  ``convention="shifted"``
    evaluates ``h`` at ``X_{k+1} - X_1``, which reads one intensity ahead, and
    returns ``n`` values.  Both use ``eta_0 = sigma`` and ``g(A_k)``.
    """
    acc = accumulate(xi, params.filter_h, params.filter_g, dt)
    if convention == "previsible":
        harg = acc.X
        garg = acc.arg_g
    elif convention == "shifted":
        harg = acc.X[1:] - acc.X[1]
        garg = acc.arg_g[:-1]
    else:
        raise ValueError("convention must be 'previsible' or 'shifted'")
    out = params.sigma + params.gamma * params.filter_h(harg) + params.delta * params.filter_g(garg)
    out[0] = params.sigma
    bad = np.flatnonzero(out <= 0)
    if bad.size:
        raise ValueError(f"non-positive volatility {out[bad[0]]!r} at step {int(bad[0])}")
    return out


def eta(params, xi, k, dt=None, convention="previsible"):
    """Single entry ``eta_k`` of :func:`eta_series`."""
    return float(eta_series(params, xi, dt, convention)[k])


def stock_path(params, xi, S0, dt=None):
    """Prices ``S_0..S_n`` and per-step log-returns along an intensity path."""
    if S0 <= 0:
        raise ValueError("S0 must be positive")
    if isinstance(xi, IntensitySeries):
        dt = xi.dt if dt is None else dt
    acc = accumulate(xi, params.filter_h, params.filter_g, dt)
    n = acc.X.size - 1
    t = np.concatenate(([0.0], np.cumsum(_steps(dt, n))))
    logs = params.nu * t + params.sigma * acc.X + params.gamma * acc.Y + params.delta * acc.V
    return S0 * np.exp(logs), np.diff(logs)


def step_log_returns(params, xi, dt=None):
    """Per-step log-returns evaluated term by term from the step formula."""
    if isinstance(xi, IntensitySeries):
        dt = xi.dt if dt is None else dt
        xi = xi.xi
    acc = accumulate(xi, params.filter_h, params.filter_g, dt)
    n = acc.X.size - 1
    h = _steps(dt, n)
    coef = (params.sigma + params.gamma * params.filter_h(acc.X[:-1])
            + params.delta * params.filter_g(acc.arg_g[:-1]))
    return params.nu * h + np.sqrt(h) * np.asarray(xi) * coef


# --------------------------------------------------------------------------
# continuum limit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SdeCoefficients:
    drift: float
    diffusion: float
    theta: float


def sde_coefficients(params, B_value, integrated_B, r=0.0):
    """Drift, diffusion and market price of risk of ``dS/S``."""
    h = params.filter_h(B_value)
    g = params.filter_g(integrated_B)
    s, c, d = params.sigma, params.gamma, params.delta
    diffusion = s + c * h + d * g
    drift = (params.nu + 0.5 * s * s + 0.5 * c * c * h * h + 0.5 * d * d * g * g
             + s * c * h + s * d * g + c * d * h * g)
    if np.any(diffusion <= 0):
        raise ValueError("diffusion coefficient must be positive")
    theta = (drift - r) / diffusion
    if np.ndim(drift) == 0:
        return SdeCoefficients(float(drift), float(diffusion), float(theta))
    return SdeCoefficients(drift, diffusion, theta)


def coarsen_increments(dB):
    """Sum adjacent pairs of Brownian increments along the last axis."""
    dB = np.asarray(dB)
    m = dB.shape[-1] // 2 * 2
    return dB[..., :m:2] + dB[..., 1:m:2]


def brownian_increments(T, dt_fine, n_paths, seed):
    """Increments of shape ``(n_paths, m)``.

    Paths are drawn in blocks of 1024; block ``b`` uses the generator seeded
    by ``SeedSequence(seed, spawn_key=(b,))`` so any block can be reproduced
    on its own.
    """
    m = int(round(T / dt_fine))
    out = np.empty((n_paths, m))
    for b, start in enumerate(range(0, n_paths, PATH_BLOCK)):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        stop = min(start + PATH_BLOCK, n_paths)
        out[start:stop] = rng.standard_normal((stop - start, m))
    return out * math.sqrt(T / m)


def simulate_continuum(params, T, dt_fine, seed=0, n_paths=1, S0=1.0, increments=None):
    """Euler (left-point) paths of ``B``, ``C = int h(B) dB``, ``G`` and ``S``.

    Returns a dict with ``t`` of shape ``(m+1,)`` and ``B, C, G, S`` of shape
    ``(n_paths, m+1)``.  Pass ``increments`` to reuse Brownian increments.
    """
    if dt_fine > 1e-2:
        raise ValueError("dt_fine must be at most 1e-2")
    dB = increments if increments is not None else brownian_increments(T, dt_fine, n_paths, seed)
    dB = np.atleast_2d(dB)
    n_paths, m = dB.shape
    h = T / m
    B = np.concatenate((np.zeros((n_paths, 1)), np.cumsum(dB, axis=1)), axis=1)
    intB = np.concatenate((np.zeros((n_paths, 1)), np.cumsum(B[:, :-1] * h, axis=1)), axis=1)
    C = np.concatenate((np.zeros((n_paths, 1)),
                        np.cumsum(params.filter_h(B[:, :-1]) * dB, axis=1)), axis=1)
    G = np.concatenate((np.zeros((n_paths, 1)),
                        np.cumsum(params.filter_g(intB[:, :-1]) * dB, axis=1)), axis=1)
    t = np.arange(m + 1) * h
    S = S0 * np.exp(params.nu * t + params.sigma * B + params.gamma * C + params.delta * G)
    return {"t": t, "B": B, "C": C, "G": G, "S": S}


def bandpass_experiment(sigma_g_list, xi, dt=None):
    """``V`` traces for Gaussian ``g`` at each bandwidth, with ``max|V|``."""
    if len(sigma_g_list) == 0:
        raise ValueError("need at least one bandwidth")
    traces, peaks = {}, {}
    for sg in sigma_g_list:
        acc = accumulate(xi, FilterSpec.constant(0.0), FilterSpec.gaussian(sg), dt)
        traces[float(sg)] = acc.V
        peaks[float(sg)] = float(np.max(np.abs(acc.V)))
    return traces, peaks


# --------------------------------------------------------------------------
# pricing on the conditional tree
# --------------------------------------------------------------------------

def csy_moves(nu, eta_k, p_upturn, dt):
    """Up and down log-moves ``nu dt +- eta sqrt(dt) * two-point value``."""
    a, b = two_point_values(p_upturn)
    s = eta_k * math.sqrt(dt)
    return nu * dt + s * a, nu * dt + s * b


def step_probability(nu, eta_k, r, p_upturn, dt, dividend=0.0, rule="first_order"):
    """Risk-neutral step probability on the conditional tree.

    ``rule="first_order"`` is the first-order form
    ``p - ((nu + dividend - r) / eta) sqrt(p (1-p) dt)``; ``rule="exact"``
    solves ``q e^u + (1-q) e^d = e^{(r - dividend) dt}``.
    """
    if rule == "first_order":
        theta = (nu + dividend - r) / eta_k
        return p_upturn - theta * np.sqrt(p_upturn * (1.0 - p_upturn) * dt)
    if rule == "exact":
        up, down = csy_moves(nu, eta_k, p_upturn, dt)
        eu, ed = np.exp(up), np.exp(down)
        return (np.exp((r - dividend) * dt) - ed) / (eu - ed)
    raise ValueError("rule must be 'first_order' or 'exact'")


def _check_q(q, step):
    q = np.asarray(q)
    if np.any((q <= 0) | (q >= 1)):
        bad = q[(q <= 0) | (q >= 1)].flat[0]
        raise ArbitrageError(f"risk-neutral probability {bad!r} outside (0, 1) at step {step}",
                             step=step)


def _ladder(values, n, name):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.size < n:
        raise ValueError(f"{name} ladder shorter than the tree")
    return v[:n]


def price_csy(params, intensity_series, option, r, S0, n=None, eta_mode="ladder",
              q_rule="first_order", convention="previsible", nu_steps=None, dividend_fn=None,
              layout="auto", keep_levels=True):
    """Price a European claim on the conditional binomial tree.

    Parameters
    ----------
    intensity_series : IntensitySeries
        Supplies ``p_upturn`` and ``dt``; in ``"ladder"`` mode its path also
        fixes the volatility of every step.
    eta_mode : {"ladder", "path"}
        ``"ladder"`` uses one volatility per step taken from the observed
        intensity path.  ``"path"`` builds the full non-recombining tree and
        evaluates the volatility from each node's own history.
    q_rule : {"first_order", "exact"}
        See :func:`step_probability`.
    nu_steps, r : float or array
        Per-step drift and annual rate ladders (scalars are broadcast).
    dividend_fn : callable, optional
        ``dividend_fn(nu, eta, r, step)`` gives a dividend yield lowering the
        risk-neutral drift; used by the informed-trader pricer.
    """
    dt = intensity_series.dt
    n = int(round(option.maturity / dt)) if n is None else int(n)
    if abs(n * dt - option.maturity) > 1e-9 * max(1.0, option.maturity):
        raise ValueError("option maturity must be a whole number of steps")
    pu = intensity_series.p_upturn
    nu = _ladder(params.nu if nu_steps is None else nu_steps, n, "drift")
    rates = _ladder(r, n, "rate")
    grid = TimeGrid.uniform(n, n * dt)
    div = dividend_fn or (lambda nu_k, eta_k, r_k, step: 0.0)

    if eta_mode == "ladder":
        need = n + 1 if convention == "shifted" else n
        xi = intensity_series.xi
        if xi.size < need:
            raise ValueError(f"intensity path has {xi.size} steps, ladder needs {need}")
        etas = eta_series(params, xi[:need], dt, convention)[:n]
        up = np.empty(n)
        down = np.empty(n)
        q = np.empty(n)
        divs = np.empty(n)
        for k in range(n):
            up[k], down[k] = csy_moves(nu[k], etas[k], pu, dt)
            divs[k] = div(nu[k], etas[k], rates[k], k)
            q[k] = step_probability(nu[k], etas[k], rates[k], pu, dt, divs[k], q_rule)
            _check_q(q[k], k + 1)
        lat = Lattice.from_moves(grid, S0, up, down, q, rates, "risk_neutral", layout=layout)
        res = price_backward_induction(lat, option, keep_levels=keep_levels)
        res.extra = {"eta": etas.tolist(), "q": q.tolist(), "dividend": divs.tolist(),
                     "layout": lat.layout}
        return res

    if eta_mode != "path":
        raise ValueError("eta_mode must be 'ladder' or 'path'")
    if convention != "previsible":
        raise ValueError("the shifted convention reads future intensities; use ladder mode")
    a, b = two_point_values(pu)
    sq = math.sqrt(dt)
    X = np.zeros(1)
    A = np.zeros(1)
    logs = [np.zeros(1)]
    probs = []
    for k in range(n):
        if k == 0:
            e = np.full(1, params.sigma)
        else:
            e = params.sigma + params.gamma * params.filter_h(X) + params.delta * params.filter_g(A)
        if np.any(e <= 0):
            raise ValueError(f"non-positive volatility at step {k}")
        d_k = np.array([div(nu[k], ei, rates[k], k) for ei in e]) if dividend_fn else 0.0
        qk = step_probability(nu[k], e, rates[k], pu, dt, d_k, q_rule)
        _check_q(qk, k + 1)
        probs.append(np.broadcast_to(qk, e.shape).copy())
        nxt = np.empty(2 * e.size)
        nxt[0::2] = logs[-1] + nu[k] * dt + e * sq * b
        nxt[1::2] = logs[-1] + nu[k] * dt + e * sq * a
        logs.append(nxt)
        Xn = np.empty(2 * X.size)
        Xn[0::2] = X + sq * b
        Xn[1::2] = X + sq * a
        A = np.repeat(A + X * dt, 2)
        X = Xn
    lat = Lattice.from_levels(grid, S0, logs, probs, rates, "risk_neutral")
    res = price_backward_induction(lat, option, keep_levels=keep_levels)
    res.extra = {"layout": "general"}
    return res
