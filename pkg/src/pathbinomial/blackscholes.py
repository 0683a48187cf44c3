"""Closed-form European option prices and implied volatility."""
import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

__all__ = ["bsm_price", "implied_vol", "DomainError"]

SIGMA_BOUNDS = (1e-6, 5.0)


class DomainError(ValueError):
    """Raised when a quote lies outside the static no-arbitrage bounds."""


def _check_kind(kind):
    if kind not in ("call", "put"):
        raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")


def bsm_price(S0, K, T, r, sigma, kind="call"):
    """Black-Scholes-Merton price of a European call or put.

    Parameters
    ----------
    S0, K, T : float
        Spot, strike and time to maturity in years, all positive.
    r : float
        Continuously compounded annual risk-free rate.
    sigma : float
        Annual volatility, positive.
    kind : {"call", "put"}
    """
    _check_kind(kind)
    if S0 <= 0 or K <= 0 or T <= 0 or sigma <= 0:
        raise ValueError("S0, K, T and sigma must be positive")
    vol = sigma * np.sqrt(T)
    d1 = (np.log(S0 / K) + (r + 0.5 * sigma * sigma) * T) / vol
    d2 = d1 - vol
    disc_k = K * np.exp(-r * T)
    if kind == "call":
        return float(S0 * ndtr(d1) - disc_k * ndtr(d2))
    return float(disc_k * ndtr(-d2) - S0 * ndtr(-d1))


def price_bounds(S0, K, T, r, kind="call"):
    """Static no-arbitrage (lower, upper) bounds for a European quote."""
    _check_kind(kind)
    disc_k = K * np.exp(-r * T)
    if kind == "call":
        return max(S0 - disc_k, 0.0), S0
    return max(disc_k - S0, 0.0), disc_k


def implied_vol(price, S0, K, T, r, kind="call", tol=1e-10):
    """Invert :func:`bsm_price` for volatility by bracketed root finding.

    Raises
    ------
    DomainError
        If ``price`` is not strictly inside the no-arbitrage bounds or no
        volatility in ``[1e-6, 5]`` reproduces it.
    """
    lo, hi = price_bounds(S0, K, T, r, kind)
    if not (lo < price < hi):
        raise DomainError(
            f"price {price!r} outside no-arbitrage bounds ({lo:.6g}, {hi:.6g})"
        )

    def resid(s):
        return bsm_price(S0, K, T, r, s, kind) - price

    a, b = SIGMA_BOUNDS
    fa, fb = resid(a), resid(b)
    if fa > 0 or fb < 0:
        raise DomainError(f"price {price!r} not attainable for sigma in {SIGMA_BOUNDS}")
    if fa == 0:
        return a
    sigma = brentq(resid, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(resid(sigma)) > max(tol, 1e-12 * price):
        raise DomainError(f"implied vol did not reach tolerance at price {price!r}")
    return float(sigma)
