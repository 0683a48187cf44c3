import sys
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pathbinomial.calibration import binomial_price_at_q

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_prices(path, dates, prices):
    with open(path, "w") as fh:
        fh.write("date,close\n")
        for d, p in zip(dates, prices):
            fh.write(f"{d},{float(p)!r}\n")
    return path


def business_days(n, start="2019-01-02"):
    return np.busday_offset(start, np.arange(n), roll="forward")


CSY_CONFIG = {"nu": 0.0016, "sigma": 0.002, "gamma": 0.29, "sigma_h": 8.8, "delta": 0.089,
              "sigma_g": 1800.0}


@pytest.fixture(scope="session")
def cli_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    rng = np.random.default_rng(8)
    days = business_days(400)
    idx = 100 * np.exp(np.cumsum(rng.normal(0.0004, 0.01, 400)))
    stock = 50 * np.exp(np.cumsum(rng.normal(0.0003, 0.015, 400)))
    write_prices(d / "index.csv", days, np.round(idx, 6))
    write_prices(d / "stock.csv", days, np.round(stock, 6))
    with open(d / "factors.csv", "w") as fh:
        fh.write("date,mkt_excess,smb,hml,rf\n")
        for day in days:
            fh.write(f"{day},{rng.normal(0, 0.01)!r},{rng.normal(0, 0.005)!r},"
                     f"{rng.normal(0, 0.005)!r},0.0001\n")
    with open(d / "chain.csv", "w") as fh:
        fh.write("quote_date,expiry,strike,kind,price\n")
        for days_out in (30, 91):
            for K in (95.0, 100.0, 105.0):
                p = binomial_price_at_q(0.53, 100.0, K, days_out / 365, 0.08, 0.2, 0.02)
                fh.write(f"2020-06-01,{np.datetime64('2020-06-01') + days_out},{K},call,{p!r}\n")
    return d


def cli_configs(d):
    """One working config per CLI command, reading files under ``d``."""
    chain = str(d / "chain.csv")
    synth = {"synthetic_steps": 200, "dt": 1.0}
    return {
        "ingest": {"input": str(d / "index.csv")},
        "estimate-p": {"input": str(d / "index.csv"), "window": 50, "crr_jr": True, "r": 0.02},
        "sign-test": {"input": str(d / "index.csv"), "window": 20, "period": "month"},
        "price": {"S0": 100, "K": 100, "mu": 0.08, "sigma": 0.2, "r": 0.02, "n": 50,
                  "keep_tree": True},
        "converge-p": {"p_grid": [0.3, 0.5], "threshold": 0.05},
        "converge-mu": {"mu_grid": [0.5, 1.0], "threshold": 0.05},
        "implied-q": {"chain": chain, "S0": 100, "mu": 0.08, "sigma": 0.2, "r": 0.02},
        "csy-fit": {"stock": str(d / "stock.csv"), "index": str(d / "index.csv"),
                    "r": 0.0001, "n_starts": 2},
        "csy-simulate": {"params": CSY_CONFIG, "n_steps": 30, "n_paths": 2, "seed": 4},
        "garch-fit": {"input": str(d / "index.csv"), "leverage": False, "n_starts": 2, "scale": 100.0},
        "alpha": {"stock": str(d / "stock.csv"), "model": "ff3", "factors": str(d / "factors.csv")},
        "csy-price": {"params": CSY_CONFIG, "intensity": synth, "option": {"strike": 100, "steps": 40},
                      "r": 8e-5, "seed": 1},
        "informed-price": {"params": CSY_CONFIG, "intensity": synth, "option": {"strike": 100, "steps": 40},
                           "r": 8e-5, "lam": 1e-3, "seed": 1},
        "dev": {"chain": chain, "S0": 100, "r": 0.02, "params": CSY_CONFIG, "intensity": synth, "seed": 2},
        "implied-lambda": {"chain": chain, "S0": 100, "r": 0.02, "params": CSY_CONFIG, "intensity": synth,
                           "seed": 2},
    }


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
