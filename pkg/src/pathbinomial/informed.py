"""Pricing for a trader who forecasts index direction with an edge.

The trader guesses the sign of the next index intensity correctly with
probability ``(1 + lam sqrt(dt)) / 2`` and runs ``N`` forward contracts per
share alongside the stock.  At the optimal ``N`` the strategy earns the
dividend yield

    D = eta (sqrt(theta^2 + 4 lam^2 p (1-p)) - theta),
    theta = (nu - eta^2/2 - r) / eta,

which raises the drift to ``nu + D`` and lowers the risk-neutral upturn
probability used for option pricing.
"""
from dataclasses import dataclass
import math

import numpy as np

from .csy import csy_moves, price_csy, step_probability
from .lattice import ArbitrageError

__all__ = [
    "TraderSpec",
    "StepParams",
    "ForwardStep",
    "InformedStep",
    "EnhancedStep",
    "AdmissibilityError",
    "forward_step",
    "information_ratio",
    "optimal_allocation",
    "market_price_of_risk",
    "dividend_yield",
    "informed_drift",
    "informed_step",
    "enhanced_step_distribution",
    "price_informed",
]


class AdmissibilityError(ValueError):
    """The drift condition ``nu - eta^2/2 > r > 0`` fails at some step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TraderSpec:
    """Information intensity ``lam`` (per square-root time unit)."""

    lam: float

    def p_success(self, dt):
        """Probability of a correct directional call, ``(1 + lam sqrt(dt)) / 2``."""
        x = self.lam * math.sqrt(dt)
        if not abs(x) < 1.0:
            raise ValueError(f"lam * sqrt(dt) = {x!r} must be below 1")
        return 0.5 * (1.0 + x)


@dataclass(frozen=True)
class StepParams:
    """Conditional one-step inputs: drift, volatility, rate, upturn probability."""

    nu: float
    eta: float
    r: float
    p_upturn: float
    dt: float

    @property
    def theta(self):
        return (self.nu - 0.5 * self.eta ** 2 - self.r) / self.eta


@dataclass(frozen=True)
class ForwardStep:
    """Four-outcome law of the forward payoff per unit of stock."""

    payoffs: np.ndarray
    probs: np.ndarray
    allocation: float

    @property
    def mean(self):
        return float(self.probs @ self.payoffs)

    @property
    def variance(self):
        m = self.mean
        return float(self.probs @ (self.payoffs - m) ** 2)


@dataclass(frozen=True)
class EnhancedStep:
    """Next-price ratios ``S_{k+1} / S_k`` of stock plus forwards."""

    ratios: np.ndarray
    probs: np.ndarray

    def moments(self):
        """Mean and variance of the simple return ``ratio - 1``."""
        x = self.ratios - 1.0
        m = float(self.probs @ x)
        return m, float(self.probs @ (x - m) ** 2)


@dataclass(frozen=True)
class InformedStep:
    up_log: float
    down_log: float
    nu: float
    eta: float
    theta: float
    allocation: float
    dividend: float
    nu_informed: float
    q_informed: float


def _four_probs(p_upturn, p_success):
    return np.array([p_upturn * p_success, (1.0 - p_upturn) * p_success,
                     p_upturn * (1.0 - p_success), (1.0 - p_upturn) * (1.0 - p_success)])


def forward_step(step, N, trader):
    """Payoffs and probabilities of ``N`` forwards on one step (unit stock)."""
    if N < 0:
        raise ValueError("N must be non-negative")
    pa = trader.p_success(step.dt)
    U, D = csy_moves(step.nu, step.eta, step.p_upturn, step.dt)
    eu, ed, er = math.exp(U), math.exp(D), math.exp(step.r * step.dt)
    pay = N * np.array([eu - er, er - ed, er - eu, ed - er])
    return ForwardStep(pay, _four_probs(step.p_upturn, pa), float(N))


def information_ratio(lam, p_upturn):
    """``2 lam sqrt(p (1-p))``."""
    if not 0.0 < p_upturn < 1.0:
        raise ValueError("p_upturn must lie in (0, 1)")
    return 2.0 * lam * math.sqrt(p_upturn * (1.0 - p_upturn))


def market_price_of_risk(N, lam, theta, p_upturn):
    """Instantaneous market price of risk with ``N`` forwards per share."""
    N = np.asarray(N, dtype=np.float64)
    return (theta + 2.0 * N * lam * math.sqrt(p_upturn * (1.0 - p_upturn))) / np.sqrt(1.0 + N * N)


def optimal_allocation(lam, theta, p_upturn):
    """Allocation maximising :func:`market_price_of_risk` and the maximum."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    s = p_upturn * (1.0 - p_upturn)
    return 2.0 * lam / theta * math.sqrt(s), math.sqrt(theta * theta + 4.0 * lam * lam * s)


def dividend_yield(lam, theta, eta, p_upturn):
    """Dividend of the optimal forward strategy; negative for a misinformed trader."""
    s = p_upturn * (1.0 - p_upturn)
    mag = eta * (math.sqrt(theta * theta + 4.0 * lam * lam * s) - theta)
    return math.copysign(mag, lam) if lam != 0 else 0.0 * mag


def informed_drift(step, lam):
    """Closed form ``eta sqrt(theta^2 + 4 lam^2 p(1-p)) + eta^2/2 + r``."""
    s = step.p_upturn * (1.0 - step.p_upturn)
    th = step.theta
    return step.eta * math.sqrt(th * th + 4.0 * lam * lam * s) + 0.5 * step.eta ** 2 + step.r


def _admissible(step, k=None):
    where = "" if k is None else f" at step {k}"
    if not step.r > 0:
        raise AdmissibilityError(f"rate {step.r!r} must be positive{where}", k)
    if not step.nu - 0.5 * step.eta ** 2 > step.r:
        raise AdmissibilityError(
            f"nu - eta^2/2 = {step.nu - 0.5 * step.eta ** 2!r} must exceed r = {step.r!r}{where}", k)


def informed_step(step, trader, q_rule="first_order", k=None):
    """Optimal allocation, dividend, informed drift and risk-neutral probability."""
    _admissible(step, k)
    trader.p_success(step.dt)
    th = step.theta
    lam = trader.lam
    allocation, _ = optimal_allocation(lam, th, step.p_upturn)
    D = step.eta * (math.sqrt(th * th + 4.0 * lam * lam * step.p_upturn * (1.0 - step.p_upturn)) - th)
    q = float(step_probability(step.nu, step.eta, step.r, step.p_upturn, step.dt, D, q_rule))
    if not 0.0 < q < 1.0:
        where = "" if k is None else f" at step {k}"
        raise ArbitrageError(f"informed risk-neutral probability {q!r} outside (0, 1){where}", k)
    U, Dn = csy_moves(step.nu, step.eta, step.p_upturn, step.dt)
    return InformedStep(U, Dn, step.nu, step.eta, th, allocation, D, step.nu + D, q)


def enhanced_step_distribution(step, N, trader):
    """Four-outcome law of the stock-plus-forwards price ratio.

    Outcomes with equal ratio (all of them pairwise when ``N = 0``) are merged.
    """
    f = forward_step(step, N, trader)
    U, D = csy_moves(step.nu, step.eta, step.p_upturn, step.dt)
    base = np.array([math.exp(U), math.exp(D), math.exp(U), math.exp(D)])
    ratios = base + f.payoffs
    uniq, inv = np.unique(ratios, return_inverse=True)
    probs = np.zeros(uniq.size)
    np.add.at(probs, inv, f.probs)
    return EnhancedStep(uniq, probs)


def price_informed(params, intensity_series, trader, rates, option, S0, n=None,
                   eta_mode="ladder", q_rule="first_order", convention="previsible",
                   nu_steps=None, layout="auto", keep_levels=True):
    """Price on the conditional tree with the informed trader's dividend.

    With ``trader.lam == 0`` the dividend is exactly zero and the result is
    identical to :func:`pathbinomial.csy.price_csy`.
    """
    pu, dt = intensity_series.p_upturn, intensity_series.dt
    records = []

    def dividend(nu_k, eta_k, r_k, k):
        st = informed_step(StepParams(float(nu_k), float(eta_k), float(r_k), pu, dt),
                           trader, q_rule, k + 1)
        if eta_mode == "ladder":
            records.append({"step": k + 1, "lambda": trader.lam, "allocation": st.allocation,
                            "dividend": st.dividend, "q_informed": st.q_informed})
        return st.dividend

    res = price_csy(params, intensity_series, option, rates, S0, n, eta_mode, q_rule,
                    convention, nu_steps, dividend, layout, keep_levels)
    res.extra = dict(res.extra or {}, informed_steps=records)
    return res
