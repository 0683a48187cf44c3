"""Binomial trees with natural-world upturn probabilities.

A step of length ``dt`` moves the log-price up or down by

    up   = (mu - (1-p)/p * sigma^2/2) dt + sigma sqrt((1-p)/p) sqrt(dt)
    down = (mu - p/(1-p) * sigma^2/2) dt - sigma sqrt(p/(1-p)) sqrt(dt)

so that, under the natural upturn probability ``p``, the log-increment has
mean ``(mu - sigma^2/2) dt`` exactly and variance ``sigma^2 dt`` up to
``O(dt^{3/2})`` (exactly when ``p = 1/2``).  Risk-neutral trees keep the
nodes and swap ``p`` for ``q``.
"""
from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import kernels

__all__ = [
    "ArbitrageError",
    "TimeGrid",
    "MarketParams",
    "UpturnModel",
    "OneStepMove",
    "OptionSpec",
    "Lattice",
    "PriceResult",
    "build_time_grid",
    "step_logs",
    "q_exact",
    "q_approx",
    "one_step_move",
    "step_moment_check",
    "delta_position",
    "build_tree",
    "price_backward_induction",
]

FORMAT_VERSION = 1
GENERAL_LEVEL_CAP = 26


class ArbitrageError(ValueError):
    """A risk-neutral step probability fell outside (0, 1)."""

    def __init__(self, message, step=None, feasible_dt=None):
        super().__init__(message)
        self.step = step
        self.feasible_dt = feasible_dt


# --------------------------------------------------------------------------
# grids and parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Trading instants ``0 = t_0 < t_1 < ... < t_n = T`` in years."""

    instants: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.instants, dtype=np.float64)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two instants")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid instants must be strictly increasing")
        object.__setattr__(self, "instants", t)

    @property
    def steps(self):
        h = self.uniform_step
        if h is not None:
            return np.full(self.n, h)
        return np.diff(self.instants)

    @property
    def uniform_step(self):
        """``T / n`` when every step equals it to rounding, else ``None``."""
        h = self.maturity / self.n
        if np.all(np.abs(np.diff(self.instants) - h) <= 1e-12 * h):
            return h
        return None

    @property
    def n(self):
        return self.instants.size - 1

    @property
    def maturity(self):
        return float(self.instants[-1])

    @property
    def is_uniform(self):
        return self.uniform_step is not None

    @classmethod
    def uniform(cls, n, T):
        if n < 1 or T <= 0:
            raise ValueError("uniform grid needs n >= 1 and T > 0")
        t = np.arange(n + 1, dtype=np.float64) * (T / n)
        t[-1] = T
        return cls(t)


def build_time_grid(n=None, T=None, instants=None):
    """Build a uniform grid from ``(n, T)`` or an explicit grid from ``instants``."""
    if instants is not None:
        return TimeGrid(np.asarray(instants, dtype=np.float64))
    if n is None or T is None:
        raise ValueError("give either instants or both n and T")
    return TimeGrid.uniform(int(n), float(T))


@dataclass(frozen=True)
class MarketParams:
    """Annualised drift ``mu``, volatility ``sigma`` and risk-free rate ``r``."""

    mu: float
    sigma: float
    r: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def theta(self):
        """Market price of risk ``(mu - r) / sigma``."""
        return (self.mu - self.r) / self.sigma


@dataclass(frozen=True)
class UpturnModel:
    """Upturn probability ``p(dt) = p0 + p1 sqrt(dt) + p2 dt``."""

    p0: float
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")

    def __call__(self, dt):
        dt = np.asarray(dt, dtype=np.float64)
        return self.p0 + self.p1 * np.sqrt(dt) + self.p2 * dt

    def on_grid(self, grid):
        p = self(grid.steps)
        bad = np.flatnonzero((p <= 0) | (p >= 1))
        if bad.size:
            k = int(bad[0])
            raise ValueError(f"upturn probability {p[k]!r} outside (0, 1) at step {k + 1}")
        return p


# --------------------------------------------------------------------------
# one step
# --------------------------------------------------------------------------

def step_logs(mu, sigma, p, dt):
    """Up and down log-moves of one step; works elementwise on arrays."""
    a = np.sqrt((1.0 - p) / p)
    b = np.sqrt(p / (1.0 - p))
    half = 0.5 * sigma * sigma
    sq = np.sqrt(dt)
    up = (mu - a * a * half) * dt + sigma * a * sq
    down = (mu - b * b * half) * dt - sigma * b * sq
    return up, down


def q_exact(up, down, r, dt):
    """Probability making ``exp(-r dt) S`` a martingale over one step."""
    eu, ed = np.exp(up), np.exp(down)
    return (np.exp(r * dt) - ed) / (eu - ed)


def q_approx(p, theta, dt):
    """First-order risk-neutral probability ``p - theta sqrt(p(1-p) dt)``."""
    return p - theta * np.sqrt(p * (1.0 - p) * dt)


def _approx_feasible_dt(p, theta):
    """Largest ``dt`` for which the first-order q stays inside (0, 1)."""
    if theta == 0:
        return math.inf
    if theta > 0:
        return p / (theta * theta * (1.0 - p))
    return (1.0 - p) / (theta * theta * p)


@dataclass(frozen=True)
class OneStepMove:
    """Nodes and probabilities of a single tree step."""

    up_log: float
    down_log: float
    M1: float
    M2: float
    p: float
    q_exact: float
    q_approx: float
    dt: float


def one_step_move(params, p, dt, step=None):
    """Build one step and both risk-neutral probabilities.

    Raises
    ------
    ArbitrageError
        If either risk-neutral probability leaves (0, 1).  The error carries
        the step index and the ``dt`` range where the first-order
        probability is feasible.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if not dt > 0:
        raise ValueError("dt must be positive")
    up, down = step_logs(params.mu, params.sigma, p, dt)
    drift = params.mu * dt
    qe = float(q_exact(up, down, params.r, dt))
    qa = float(q_approx(p, params.theta, dt))
    for name, q in (("exact", qe), ("approximate", qa)):
        if not 0.0 < q < 1.0:
            where = "" if step is None else f" at step {step}"
            lim = _approx_feasible_dt(p, params.theta)
            raise ArbitrageError(
                f"{name} risk-neutral probability {q!r} outside (0, 1){where}; "
                f"first-order probability feasible for dt < {lim:.6g}",
                step=step,
                feasible_dt=lim,
            )
    return OneStepMove(float(up), float(down), float(up - drift), float(down - drift),
                       float(p), qe, qa, float(dt))


def step_moment_check(move, params=None, p=None, dt=None):
    """Mean and variance of the log-increment under the natural law of ``move``.

    The mean is ``(mu - sigma^2/2) dt`` exactly.  The variance is
    ``sigma^2 dt + sigma^3 dt^{3/2} c + sigma^4 dt^2 c^2 / 4`` with
    ``c = (2p - 1) / sqrt(p (1-p))``, so it equals ``sigma^2 dt`` only at
    ``p = 1/2``.
    """
    p = move.p if p is None else p
    mean = p * move.up_log + (1.0 - p) * move.down_log
    var = p * (1.0 - p) * (move.up_log - move.down_log) ** 2
    return mean, var


def delta_position(f_up, f_down, S, params, p, dt, mode="exact"):
    """Stock units that replicate a one-step claim.

    ``mode="exact"`` divides by the spread of the two child prices;
    ``mode="approx"`` uses the leading-order form
    ``(f_up - f_down) sqrt(p(1-p)) / (S e^{mu dt} sigma sqrt(dt))``.
    """
    if S <= 0:
        raise ValueError("S must be positive")
    if mode == "approx":
        return (f_up - f_down) * math.sqrt(p * (1.0 - p)) / (
            S * math.exp(params.mu * dt) * params.sigma * math.sqrt(dt)
        )
    if mode != "exact":
        raise ValueError("mode must be 'exact' or 'approx'")
    up, down = step_logs(params.mu, params.sigma, p, dt)
    m1, m2 = up - params.mu * dt, down - params.mu * dt
    spread = math.exp(m1) - math.exp(m2)
    if spread == 0:
        raise ZeroDivisionError("degenerate step: up and down nodes coincide")
    return (f_up - f_down) / (S * math.exp(params.mu * dt) * spread)


# --------------------------------------------------------------------------
# options and trees
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OptionSpec:
    """European claim paying ``payoff(S_T)``; call and put are built in."""

    kind: str
    strike: float
    maturity: float
    payoff: object = None

    def __post_init__(self):
        if self.kind not in ("call", "put", "custom"):
            raise ValueError("kind must be call, put or custom")
        if self.kind == "custom" and self.payoff is None:
            raise ValueError("custom options need a payoff function")
        if not self.strike > 0 or not self.maturity > 0:
            raise ValueError("strike and maturity must be positive")

    def terminal(self, prices):
        prices = np.asarray(prices, dtype=np.float64)
        if self.kind == "call":
            return np.maximum(prices - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - prices, 0.0)
        return np.asarray(self.payoff(prices), dtype=np.float64) * np.ones_like(prices)


@dataclass
class Lattice:
    """Binomial price tree.

    Two storage schemes share this class.  Recombining trees keep per-step
    ``up_log``, ``down_log`` and ``prob`` arrays; node ``j`` of level ``k``
    (``j`` up-moves) sits at ``log S0 + D_k + j * A_k / k`` where ``D_k`` is
    the sum of down-moves and ``A_k`` the summed spreads.  With identical
    steps this is the exact tree; otherwise it is the approximate
    recombination used when every ``dt`` is of order ``T / n``.

    General trees keep one log-price array of length ``2**k`` per level and
    a matching per-node step probability; node ``i`` has children ``2i``
    (down) and ``2i + 1`` (up).
    """

    grid: TimeGrid
    s0: float
    measure: str
    layout: str
    rates: np.ndarray
    up_log: np.ndarray = None
    down_log: np.ndarray = None
    prob: np.ndarray = None
    log_levels: list = None
    prob_levels: list = None
    moves: list = field(default=None, repr=False)

    @property
    def n(self):
        return self.grid.n

    @property
    def recombining(self):
        return self.layout in ("recombining", "approx_recombining")

    # construction ---------------------------------------------------------

    @classmethod
    def from_moves(cls, grid, s0, up_log, down_log, prob, rates, measure,
                   layout="auto", moves=None, spacing_ratio=4.0,
                   level_cap=GENERAL_LEVEL_CAP):
        """Tree from per-step log-moves and step probabilities.

        ``layout="auto"`` picks the exact recombining tree when all steps are
        identical, a full ``2**n`` tree when ``n <= level_cap``, and the
        approximate recombining tree when ``max(dt) <= spacing_ratio * T/n``.
        """
        n = grid.n
        up = np.broadcast_to(np.asarray(up_log, dtype=np.float64), (n,)).copy()
        down = np.broadcast_to(np.asarray(down_log, dtype=np.float64), (n,)).copy()
        prob = np.broadcast_to(np.asarray(prob, dtype=np.float64), (n,)).copy()
        rates = np.broadcast_to(np.asarray(rates, dtype=np.float64), (n,)).copy()
        if np.any(up <= down):
            raise ValueError("up move must exceed down move at every step")
        same = bool(np.all(up == up[0]) and np.all(down == down[0]))
        spaced = grid.steps.max() <= spacing_ratio * grid.maturity / n
        if layout == "auto":
            if same:
                layout = "recombining"
            elif n <= level_cap:
                layout = "general"
            elif spaced:
                layout = "approx_recombining"
            else:
                raise ValueError(
                    "steps are neither identical nor of order T/n and the tree "
                    f"exceeds {level_cap} levels"
                )
        elif layout == "recombining":
            layout = "recombining" if same else "approx_recombining"
            if not same and not spaced:
                raise ValueError("grid spacing too uneven for a recombining tree")
        if layout == "general":
            if n > level_cap:
                raise ValueError(f"non-recombining trees are capped at {level_cap} levels")
            log_levels = [np.zeros(1)]
            prob_levels = []
            for k in range(n):
                prev = log_levels[-1]
                nxt = np.empty(2 * prev.size)
                nxt[0::2] = prev + down[k]
                nxt[1::2] = prev + up[k]
                log_levels.append(nxt)
                prob_levels.append(np.full(prev.size, prob[k]))
            return cls(grid, float(s0), measure, "general", rates, up, down, prob,
                       log_levels, prob_levels, moves)
        if layout not in ("recombining", "approx_recombining"):
            raise ValueError(f"unknown layout {layout!r}")
        return cls(grid, float(s0), measure, layout, rates, up, down, prob, moves=moves)

    @classmethod
    def from_levels(cls, grid, s0, log_levels, prob_levels, rates, measure):
        """General tree from explicit per-level log-prices (relative to ``s0``)."""
        n = grid.n
        if len(log_levels) != n + 1 or len(prob_levels) != n:
            raise ValueError("need n+1 price levels and n probability levels")
        if n > GENERAL_LEVEL_CAP:
            raise ValueError(f"non-recombining trees are capped at {GENERAL_LEVEL_CAP} levels")
        rates = np.broadcast_to(np.asarray(rates, dtype=np.float64), (n,)).copy()
        return cls(grid, float(s0), measure, "general", rates,
                   log_levels=[np.asarray(v, dtype=np.float64) for v in log_levels],
                   prob_levels=[np.asarray(v, dtype=np.float64) for v in prob_levels])

    # access ---------------------------------------------------------------

    def level_log(self, k):
        """Log-prices ``log(S / s0)`` at level ``k``."""
        if self.layout == "general":
            return self.log_levels[k]
        if k == 0:
            return np.zeros(1)
        base = self.down_log[:k].sum()
        j = np.arange(k + 1, dtype=np.float64)
        if self.layout == "recombining":
            return base + j * (self.up_log[0] - self.down_log[0])
        spread = (self.up_log[:k] - self.down_log[:k]).sum() / k
        return base + j * spread

    def level_prices(self, k):
        return self.s0 * np.exp(self.level_log(k))

    def terminal_prices(self):
        return self.level_prices(self.n)

    def discounts(self):
        return np.exp(-self.rates * self.grid.steps)

    # serialisation --------------------------------------------------------

    def to_dict(self):
        d = {
            "format_version": FORMAT_VERSION,
            "kind": "lattice",
            "s0": self.s0,
            "measure": self.measure,
            "layout": self.layout,
            "instants": self.grid.instants.tolist(),
            "rates": self.rates.tolist(),
            "levels": [self.level_prices(k).tolist() for k in range(self.n + 1)],
        }
        if self.layout == "general":
            d["prob_levels"] = [p.tolist() for p in self.prob_levels]
        else:
            d["up_log"] = self.up_log.tolist()
            d["down_log"] = self.down_log.tolist()
            d["prob"] = self.prob.tolist()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "lattice":
            raise ValueError("unsupported lattice document")
        grid = TimeGrid(np.asarray(d["instants"]))
        if d["layout"] == "general":
            s0 = d["s0"]
            logs = [np.log(np.asarray(v) / s0) for v in d["levels"]]
            return cls.from_levels(grid, s0, logs, d["prob_levels"], d["rates"], d["measure"])
        return cls(grid, d["s0"], d["measure"], d["layout"], np.asarray(d["rates"]),
                   np.asarray(d["up_log"]), np.asarray(d["down_log"]), np.asarray(d["prob"]))


def build_tree(grid, params, upturn, measure="natural", q_rule="exact", s0=1.0,
               layout="auto"):
    """Tree for constant ``(mu, sigma, r)`` and upturn model ``p(dt)``.

    Parameters
    ----------
    measure : {"natural", "risk_neutral"}
        Step probabilities are ``p`` or the risk-neutral ``q``.
    q_rule : {"exact", "approx"}
        Exact one-step martingale probability or its first-order form.
    """
    if isinstance(upturn, (int, float)):
        upturn = UpturnModel(float(upturn))
    if measure not in ("natural", "risk_neutral"):
        raise ValueError("measure must be 'natural' or 'risk_neutral'")
    if q_rule not in ("exact", "approx"):
        raise ValueError("q_rule must be 'exact' or 'approx'")
    steps = grid.steps
    p = upturn.on_grid(grid)
    moves = []
    cache = {}
    for k, (pk, dt) in enumerate(zip(p, steps)):
        key = (float(pk), float(dt))
        if key not in cache:
            cache[key] = one_step_move(params, key[0], key[1], step=k + 1)
        moves.append(cache[key])
    up = np.array([m.up_log for m in moves])
    down = np.array([m.down_log for m in moves])
    if measure == "natural":
        prob = p
    else:
        prob = np.array([m.q_exact if q_rule == "exact" else m.q_approx for m in moves])
    return Lattice.from_moves(grid, s0, up, down, prob, params.r,
                              measure if measure == "natural" else "risk_neutral",
                              layout=layout, moves=moves)


# --------------------------------------------------------------------------
# pricing
# --------------------------------------------------------------------------

@dataclass
class PriceResult:
    """Root value plus (optionally) value and delta ladders, root level first."""

    f0: float
    values: list = None
    deltas: list = None
    extra: dict = None

    def to_dict(self):
        d = {"format_version": FORMAT_VERSION, "kind": "price", "f0": self.f0}
        if self.values is not None:
            d["values"] = [np.asarray(v).tolist() for v in self.values]
            d["deltas"] = [np.asarray(v).tolist() for v in self.deltas]
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "price":
            raise ValueError("unsupported price document")
        vals = d.get("values")
        return cls(
            d["f0"],
            None if vals is None else [np.asarray(v) for v in vals],
            None if vals is None else [np.asarray(v) for v in d["deltas"]],
            d.get("extra"),
        )


def price_backward_induction(lattice, option, r=None, keep_levels=True):
    """European price by backward induction on a risk-neutral tree.

    ``r`` overrides the per-step rates stored on the lattice.  With
    ``keep_levels`` the result carries every value level and the hedge
    ratio ``(f_u - f_d) / (S_u - S_d)`` at every non-terminal node.
    """
    if lattice.measure != "risk_neutral":
        raise ValueError("backward induction needs a risk-neutral lattice")
    T = lattice.grid.maturity
    if abs(T - option.maturity) > 1e-12 * max(1.0, T):
        raise ValueError(f"lattice maturity {T} differs from option maturity {option.maturity}")
    rates = lattice.rates if r is None else np.full(lattice.n, float(r))
    disc = np.exp(-rates * lattice.grid.steps)
    terminal = option.terminal(lattice.terminal_prices())
    n = lattice.n

    if lattice.layout == "general":
        levels = kernels.rollback_general(terminal, lattice.prob_levels, disc)
        f0 = float(levels[0][0])
        if not keep_levels:
            return PriceResult(f0)
        deltas = []
        for k in range(n):
            s = lattice.level_prices(k + 1)
            v = levels[k + 1]
            deltas.append((v[1::2] - v[0::2]) / (s[1::2] - s[0::2]))
        return PriceResult(f0, levels, deltas)

    f0, store = kernels.rollback_recombining(terminal, lattice.prob, disc, keep_levels)
    f0 = float(f0)
    if not keep_levels:
        return PriceResult(f0)
    values = []
    for k in range(n + 1):
        off = kernels.level_offset(k)
        values.append(store[off:off + k + 1].copy())
    deltas = []
    for k in range(n):
        s = lattice.level_prices(k + 1)
        v = values[k + 1]
        deltas.append((v[1:] - v[:-1]) / (s[1:] - s[:-1]))
    return PriceResult(f0, values, deltas)
