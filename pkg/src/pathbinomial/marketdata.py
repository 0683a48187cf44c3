"""Price, rate and option-chain ingestion plus upturn-probability statistics."""
import csv
from dataclasses import dataclass
import math

import numpy as np
from scipy.stats import binom

__all__ = [
    "PriceSeries",
    "LogReturnSeries",
    "RateCurve",
    "WindowEstimate",
    "OptionQuote",
    "OptionChain",
    "load_price_series",
    "write_price_series",
    "load_rate_curve",
    "load_option_chain",
    "log_returns",
    "rolling_upturn_probability",
    "sign_test_two_sided",
    "crr_jr_implied_p",
    "rolling_crr_jr",
    "interval_sign_tests",
]


def _dates(values):
    return np.asarray(values, dtype="datetime64[D]")


@dataclass(frozen=True)
class PriceSeries:
    """Closing prices on strictly increasing trading dates."""

    dates: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        d = _dates(self.dates)
        p = np.asarray(self.prices, dtype=np.float64)
        if d.shape != p.shape or d.ndim != 1:
            raise ValueError("dates and prices must be 1-d and of equal length")
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("non-positive price")
        if np.any(np.diff(d) <= np.timedelta64(0, "D")):
            raise ValueError("dates must be strictly increasing")
        object.__setattr__(self, "dates", d)
        object.__setattr__(self, "prices", p)

    def __len__(self):
        return self.prices.size


@dataclass(frozen=True)
class LogReturnSeries:
    """Per-period log-returns stamped with the period-end date."""

    dates: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.returns.size


@dataclass(frozen=True)
class RateCurve:
    """Annualised risk-free rates looked up by nearest preceding date."""

    dates: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        d = _dates(self.dates)
        r = np.asarray(self.rates, dtype=np.float64)
        if np.any(~np.isfinite(r)):
            raise ValueError("rates must be finite")
        order = np.argsort(d, kind="stable")
        object.__setattr__(self, "dates", d[order])
        object.__setattr__(self, "rates", r[order])

    def at(self, dates):
        """Rates on ``dates``; dates before the first quote take the first rate."""
        idx = np.searchsorted(self.dates, _dates(dates), side="right") - 1
        return self.rates[np.clip(idx, 0, self.rates.size - 1)]


@dataclass(frozen=True)
class WindowEstimate:
    window_end: np.datetime64
    p_hat: float
    n_up: int
    n_total: int


@dataclass(frozen=True)
class OptionQuote:
    expiry: np.datetime64
    strike: float
    kind: str
    price: float


@dataclass(frozen=True)
class OptionChain:
    quote_date: np.datetime64
    quotes: tuple

    def __post_init__(self):
        for q in self.quotes:
            if q.strike <= 0:
                raise ValueError("strike must be positive")
            if q.expiry <= self.quote_date:
                raise ValueError("expiry must follow the quote date")
            if q.price < 0:
                raise ValueError("option price must be non-negative")
            if q.kind not in ("call", "put"):
                raise ValueError(f"unknown option kind {q.kind!r}")

    def maturities(self, basis=365.0):
        """Year fractions to expiry for every quote."""
        days = np.array([(q.expiry - self.quote_date).astype(int) for q in self.quotes])
        return days / basis


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        return list(reader), reader.fieldnames


def load_price_series(path, schema=None):
    """Read a ``date,close`` CSV into a sorted :class:`PriceSeries`.

    ``schema`` may rename the columns, e.g. ``{"date": "Date", "price": "Adj Close"}``.
    """
    schema = {"date": "date", "price": "close", **(schema or {})}
    rows, fields = _read_rows(path)
    for key in ("date", "price"):
        if schema[key] not in fields:
            raise ValueError(f"{path}: missing column {schema[key]!r}")
    try:
        dates = _dates([r[schema["date"]].strip() for r in rows])
        prices = np.array([float(r[schema["price"]]) for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: parse failure: {exc}") from exc
    if prices.size and np.any(prices <= 0):
        raise ValueError("non-positive price")
    order = np.argsort(dates, kind="stable")
    dates, prices = dates[order], prices[order]
    if np.any(np.diff(dates) == np.timedelta64(0, "D")):
        raise ValueError("duplicate dates")
    return PriceSeries(dates, prices)


def write_price_series(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "close"])
        for d, p in zip(series.dates, series.prices):
            w.writerow([str(d), repr(float(p))])


def load_rate_curve(path):
    """Read a ``date,rate`` CSV (annualised decimal rates)."""
    rows, fields = _read_rows(path)
    if "date" not in fields or "rate" not in fields:
        raise ValueError(f"{path}: expected columns date,rate")
    return RateCurve(_dates([r["date"] for r in rows]),
                     np.array([float(r["rate"]) for r in rows]))


def load_option_chain(path):
    """Read a ``quote_date,expiry,strike,kind,price`` CSV for one quote date."""
    rows, fields = _read_rows(path)
    need = ("quote_date", "expiry", "strike", "kind", "price")
    missing = [c for c in need if c not in fields]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    qd = {r["quote_date"] for r in rows}
    if len(qd) != 1:
        raise ValueError(f"{path}: expected a single quote date, found {len(qd)}")
    quotes = tuple(
        OptionQuote(np.datetime64(r["expiry"], "D"), float(r["strike"]),
                    r["kind"].strip().lower(), float(r["price"]))
        for r in rows
    )
    return OptionChain(np.datetime64(qd.pop(), "D"), quotes)


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------

def log_returns(series):
    """``ln(S_{k+1} / S_k)`` stamped with the later date."""
    if len(series) < 2:
        raise ValueError("need at least two prices for returns")
    return LogReturnSeries(series.dates[1:], np.diff(np.log(series.prices)))


def rolling_upturn_probability(returns, window):
    """Share of non-negative returns in each trailing window of observations."""
    r = returns.returns if isinstance(returns, LogReturnSeries) else np.asarray(returns)
    dates = returns.dates if isinstance(returns, LogReturnSeries) else np.arange(r.size)
    window = int(window)
    if window < 1 or window > r.size:
        raise ValueError(f"window {window} larger than series length {r.size}")
    up = np.concatenate(([0], np.cumsum(r >= 0)))
    n_up = up[window:] - up[:-window]
    return [
        WindowEstimate(dates[window - 1 + i], int(k) / window, int(k), window)
        for i, k in enumerate(n_up)
    ]


def sign_test_two_sided(n_up, n_total, p0):
    """Exact two-sided sign test ``min(1, 2 min(P(X <= k), P(X >= k)))``."""
    if not (isinstance(n_up, (int, np.integer)) and isinstance(n_total, (int, np.integer))):
        raise ValueError("counts must be integers")
    if not 0 <= n_up <= n_total:
        raise ValueError("need 0 <= n_up <= n_total")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    lower = binom.cdf(n_up, n_total, p0)
    upper = binom.sf(n_up - 1, n_total, p0)
    return float(min(1.0, 2.0 * min(lower, upper)))


def crr_jr_implied_p(mu, sigma, r, dt):
    """CRR and JR natural upturn probabilities.

    Returns
    -------
    p_crr, p_jr : float
    clamped : bool
        True when either value had to be pulled back into (0, 1).
    """
    if not sigma > 0 or not dt > 0:
        raise ValueError("sigma and dt must be positive")
    sq = math.sqrt(dt)
    p_crr = 0.5 + (mu - 0.5 * sigma * sigma) / (2.0 * sigma) * sq
    p_jr = 0.5 + abs((mu - r) / sigma) * sq
    eps = 1e-12
    out = [min(max(p, eps), 1.0 - eps) for p in (p_crr, p_jr)]
    clamped = out[0] != p_crr or out[1] != p_jr
    return out[0], out[1], clamped


def rolling_crr_jr(returns, window, rates, dt=1.0 / 252):
    """CRR/JR probabilities from trailing-window moment estimates.

    The window mean ``m`` and standard deviation ``s`` of per-period log
    returns give ``sigma = s / sqrt(dt)`` and ``mu = m / dt + sigma^2 / 2``.
    ``rates`` is an annualised rate per window end (or a scalar).
    """
    r = returns.returns if isinstance(returns, LogReturnSeries) else np.asarray(returns)
    window = int(window)
    if window < 2 or window > r.size:
        raise ValueError("window must be in [2, len(returns)]")
    view = np.lib.stride_tricks.sliding_window_view(r, window)
    m = view.mean(axis=1)
    s = view.std(axis=1, ddof=1)
    rates = np.broadcast_to(np.asarray(rates, dtype=np.float64), m.shape)
    sigma = s / math.sqrt(dt)
    mu = m / dt + 0.5 * sigma ** 2
    out = np.array([crr_jr_implied_p(a, b, c, dt)[:2] for a, b, c in zip(mu, sigma, rates)])
    return out[:, 0], out[:, 1]


def _period_keys(dates, period):
    d = _dates(dates)
    if period == "week":
        return (d - np.datetime64("1970-01-05")).astype(int) // 7
    if period == "month":
        return d.astype("datetime64[M]").astype(int)
    if period == "year":
        return d.astype("datetime64[Y]").astype(int)
    raise ValueError("period must be week, month or year")


def interval_sign_tests(dates, values, reference, period, min_count=None):
    """Sign test of ``values`` against ``reference`` on calendar intervals.

    Values equal to the reference are dropped (standard sign-test ties).
    Partial intervals at either end of the sample are dropped; an interval
    counts as partial when it holds fewer observations than
    ``min_count`` (default: 80% of the median interval size).

    Returns a list of ``(interval_key, n_above, n_nonzero, p_value)``.
    """
    v = np.asarray(values, dtype=np.float64)
    ref = np.broadcast_to(np.asarray(reference, dtype=np.float64), v.shape)
    keys = _period_keys(dates, period)
    uniq, start, counts = np.unique(keys, return_index=True, return_counts=True)
    if min_count is None:
        min_count = int(math.ceil(0.8 * np.median(counts)))
    out = []
    for i, (key, s, c) in enumerate(zip(uniq, start, counts)):
        edge = i == 0 or i == uniq.size - 1
        if edge and c < min_count:
            continue
        diff = v[s:s + c] - ref[s:s + c]
        diff = diff[diff != 0]
        if diff.size == 0:
            continue
        k = int(np.sum(diff > 0))
        out.append((int(key), k, int(diff.size), sign_test_two_sided(k, int(diff.size), 0.5)))
    return out
