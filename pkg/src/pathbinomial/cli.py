"""Command-line front end: one subcommand per experiment, reproducible artifacts.

Every run resolves a configuration from built-in defaults, an optional YAML
file (``--config``), ``--set key=value`` overrides and ``--seed``, validates
it field by field, and writes its outputs plus ``config.json`` and
``manifest.json`` into the output directory.  Exit codes: 0 success,
2 validation error, 3 numerical failure (partial artifacts are kept).
"""
import argparse
from importlib import resources
import math
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .artifacts import (apply_overrides, atomic_write, canonical_json, csv_text, load_config,
                        write_manifest)
from .blackscholes import DomainError
from .calibration import (REFERENCE_DEV_BAND, REFERENCE_Q_BAND, band_annotation, dev_surface, fit_csy,
                          implied_lambda_surface, implied_p_surface, implied_q_surface)
from .convergence import required_n_vs_mu, required_n_vs_p
from .csy import (CSYParams, IntensitySeries, centralize, eta_series, intensity, price_csy,
                  simulate_continuum, stock_path, two_point_values)
from .factors import (GarchConvergenceError, fit_arma_gjr_garch, ff3_alpha_series, garch_residuals,
                      jensen_alpha_series, load_factor_table)
from .informed import AdmissibilityError, TraderSpec, price_informed
from .lattice import (ArbitrageError, MarketParams, OptionSpec, UpturnModel, build_time_grid,
                      build_tree, price_backward_induction)
from .marketdata import (interval_sign_tests, load_option_chain, load_price_series, log_returns,
                         rolling_crr_jr, rolling_upturn_probability, sign_test_two_sided)

__all__ = ["main", "run", "ConfigError", "fixture_path", "COMMANDS"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

REQUIRED = object()


class ConfigError(ValueError):
    """A configuration field is missing, unknown or malformed."""


def fixture_path(name):
    """Path of a bundled data fixture."""
    return Path(str(resources.files("pathbinomial") / "data" / name))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def _coerce(kind, value, field):
    if value is None:
        return None
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is list:
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return list(value)
        if kind is dict:
            if not isinstance(value, dict):
                raise TypeError
            return dict(value)
        if kind == "number_or_dict":
            if isinstance(value, dict):
                return dict(value)
            return _coerce(float, value, field)
        if kind == "grid":
            if isinstance(value, dict):
                return dict(value)
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return list(value)
    except (TypeError, ValueError):
        pass
    name = kind if isinstance(kind, str) else kind.__name__
    raise ConfigError(f"field {field!r}: expected {name}, got {value!r}")


def resolve(schema, raw, prefix=""):
    """Validate ``raw`` against ``{key: (type, default[, choices])}``."""
    raw = dict(raw or {})
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown field(s) {', '.join(prefix + k for k in unknown)}")
    out = {}
    for key, spec in schema.items():
        kind, default = spec[0], spec[1]
        field = prefix + key
        if key in raw:
            value = _coerce(kind, raw[key], field)
        elif default is REQUIRED:
            raise ConfigError(f"field {field!r} is required")
        else:
            value = default
        if len(spec) > 2 and value is not None and value not in spec[2]:
            raise ConfigError(f"field {field!r}: must be one of {list(spec[2])}, got {value!r}")
        out[key] = value
    return out


def _positive(cfg, *keys):
    for k in keys:
        if cfg[k] is not None and not cfg[k] > 0:
            raise ConfigError(f"field {k!r}: must be positive, got {cfg[k]!r}")


CSY_PARAM_SCHEMA = {
    "nu": (float, REQUIRED),
    "sigma": (float, REQUIRED),
    "gamma": (float, 0.0),
    "sigma_h": (float, 1.0),
    "delta": (float, 0.0),
    "sigma_g": (float, 1.0),
}

INTENSITY_SCHEMA = {
    "index": (str, None),
    "schema": (dict, {}),
    "index_mu": (float, None),
    "index_sigma": (float, None),
    "p_upturn": (float, None),
    "raw_sign": (bool, False),
    "dt": (float, 1.0),
    "synthetic_steps": (int, None),
}


def _csy_params(raw, prefix="params."):
    c = resolve(CSY_PARAM_SCHEMA, raw, prefix)
    _positive(c, "sigma_h", "sigma_g")
    return CSYParams.gaussian(c["nu"], c["sigma"], c["gamma"], c["sigma_h"], c["delta"], c["sigma_g"])


def _scores(path, schema, mu, sigma):
    """Dates and standard scores of an index price file."""
    ret = log_returns(load_price_series(path, schema))
    if (mu is None) != (sigma is None):
        raise ConfigError("fields 'index_mu' and 'index_sigma' go together")
    z = ret.returns if mu is None else centralize(ret.returns, mu, sigma, 1.0)
    return ret.dates, z


def _intensity(raw, seed, prefix="intensity."):
    c = resolve(INTENSITY_SCHEMA, raw, prefix)
    _positive(c, "dt")
    if (c["index"] is None) == (c["synthetic_steps"] is None):
        raise ConfigError(f"exactly one of {prefix}index and {prefix}synthetic_steps is required")
    if c["index"] is not None:
        dates, z = _scores(c["index"], c["schema"], c["index_mu"], c["index_sigma"])
        return dates, intensity(z, c["p_upturn"], c["dt"], c["raw_sign"])
    pu = 0.5 if c["p_upturn"] is None else c["p_upturn"]
    if not 0.0 < pu < 1.0:
        raise ConfigError(f"field {prefix}p_upturn: must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    up = rng.random(c["synthetic_steps"]) < pu
    a, b = (1.0, -1.0) if c["raw_sign"] else two_point_values(pu)
    return None, IntensitySeries(np.where(up, a, b), pu, c["dt"])


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

class _Outputs:
    def __init__(self, outdir):
        self.dir = Path(outdir)
        self.names = []

    def text(self, name, text):
        atomic_write(self.dir / name, text)
        self.names.append(name)

    def json(self, name, obj):
        self.text(name, canonical_json(obj))

    def csv(self, name, header, rows):
        self.text(name, csv_text(header, rows))


def _surface_outputs(out, stem, surface):
    out.text(f"{stem}.csv", surface.to_csv())
    out.text(f"{stem}.json", surface.to_json() + "\n")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_ingest(cfg, out):
    series = load_price_series(cfg["input"], cfg["schema"])
    ret = log_returns(series)
    out.csv("prices.csv", ["date", "close"], zip(series.dates, series.prices))
    out.csv("returns.csv", ["date", "log_return"], zip(ret.dates, ret.returns))


def estimate_rows(est):
    return [(e.window_end, e.p_hat, e.n_up, e.n_total) for e in est]


ESTIMATE_HEADER = ["window_end", "p_hat", "n_up", "n_total"]


def cmd_estimate_p(cfg, out):
    _positive(cfg, "window")
    ret = log_returns(load_price_series(cfg["input"], cfg["schema"]))
    est = rolling_upturn_probability(ret, cfg["window"])
    out.csv("p_hat.csv", ESTIMATE_HEADER, estimate_rows(est))
    if cfg["crr_jr"]:
        p_crr, p_jr = rolling_crr_jr(ret, cfg["window"], cfg["r"], cfg["dt"])
        out.csv("p_crr_jr.csv", ["window_end", "p_crr", "p_jr"],
                zip(ret.dates[cfg["window"] - 1:], p_crr, p_jr))


def cmd_sign_test(cfg, out):
    if cfg["input"] is None:
        if cfg["n_up"] is None or cfg["n_total"] is None:
            raise ConfigError("fields 'n_up' and 'n_total' are required without 'input'")
        p = sign_test_two_sided(cfg["n_up"], cfg["n_total"], cfg["p0"])
        out.json("sign_test.json", {"n_up": cfg["n_up"], "n_total": cfg["n_total"],
                                    "p0": cfg["p0"], "p_value": p})
        return
    ret = log_returns(load_price_series(cfg["input"], cfg["schema"]))
    w = cfg["window"]
    if cfg["estimator"] == "p_hat":
        est = rolling_upturn_probability(ret, w)
        dates = [e.window_end for e in est]
        values = [e.p_hat for e in est]
    else:
        p_crr, p_jr = rolling_crr_jr(ret, w, cfg["r"], cfg["dt"])
        dates = ret.dates[w - 1:]
        values = p_crr if cfg["estimator"] == "crr" else p_jr
    rows = interval_sign_tests(np.asarray(dates), values, cfg["reference"], cfg["period"])
    out.csv("sign_tests.csv", ["interval", "n_above", "n_nonzero", "p_value"], rows)


def cmd_price(cfg, out):
    _positive(cfg, "S0", "K", "T", "sigma", "n")
    p = cfg["p"]
    if isinstance(p, dict):
        pc = resolve({"p0": (float, REQUIRED), "p1": (float, 0.0), "p2": (float, 0.0)}, p, "p.")
        upturn = UpturnModel(pc["p0"], pc["p1"], pc["p2"])
    else:
        upturn = p
    params = MarketParams(cfg["mu"], cfg["sigma"], cfg["r"])
    grid = build_time_grid(n=cfg["n"], T=cfg["T"])
    lat = build_tree(grid, params, upturn, "risk_neutral", cfg["q_rule"], cfg["S0"], cfg["layout"])
    res = price_backward_induction(lat, OptionSpec(cfg["kind"], cfg["K"], cfg["T"]),
                                   keep_levels=cfg["keep_tree"])
    doc = {"price": res.f0, "layout": lat.layout, "n": cfg["n"],
           "up_log": lat.up_log[0] if lat.up_log is not None else None,
           "down_log": lat.down_log[0] if lat.down_log is not None else None,
           "q": lat.prob[0] if lat.prob is not None else None}
    if res.deltas:
        doc["delta"] = float(np.asarray(res.deltas[0])[0])
    out.json("price.json", doc)
    if cfg["keep_tree"]:
        out.text("lattice.json", lat.to_json() + "\n")
        out.text("result.json", res.to_json() + "\n")


def _grid(value, field):
    if isinstance(value, dict):
        g = resolve({"start": (float, REQUIRED), "stop": (float, REQUIRED), "num": (int, REQUIRED)},
                    value, field + ".")
        return np.linspace(g["start"], g["stop"], g["num"])
    arr = np.asarray([_coerce(float, v, field) for v in value])
    if arr.size == 0:
        raise ConfigError(f"field {field!r}: empty grid")
    return arr


def _report_rows(reports):
    return [(r.param, r.n_required, r.discrepancy, r.criterion, r.cap_hit) for r in reports]


REPORT_HEADER = ["param", "n_required", "discrepancy", "criterion", "cap_hit"]


def cmd_converge_p(cfg, out):
    grid = _grid(cfg["p_grid"], "p_grid")
    if np.any((grid <= 0) | (grid >= 1)):
        raise ConfigError("field 'p_grid': values must lie in (0, 1)")
    rep = required_n_vs_p(grid, MarketParams(cfg["mu"], cfg["sigma"], cfg["r"]), cfg["T"],
                          cfg["criterion"], cfg["threshold"], cfg["cap"])
    out.csv("required_n_vs_p.csv", REPORT_HEADER, _report_rows(rep))


def cmd_converge_mu(cfg, out):
    grid = _grid(cfg["mu_grid"], "mu_grid")
    rep = required_n_vs_mu(grid, cfg["sigma"], cfg["r"], cfg["p"], cfg["T"], cfg["criterion"],
                           cfg["threshold"], cfg["cap"], cfg["q_rule"])
    out.csv("required_n_vs_mu.csv", REPORT_HEADER, _report_rows(rep))


def cmd_implied_q(cfg, out):
    _positive(cfg, "S0", "sigma", "dt", "units_per_year", "year_basis")
    chain = load_option_chain(cfg["chain"])
    qs = implied_q_surface(chain, cfg["S0"], cfg["mu"], cfg["sigma"], cfg["r"], cfg["dt"],
                           cfg["year_basis"], cfg["nodes"], cfg["node_p"], cfg["units_per_year"])
    ps = implied_p_surface(qs, cfg["mu"], cfg["sigma"], cfg["r"], cfg["dt"])
    _surface_outputs(out, "q_surface", qs)
    _surface_outputs(out, "p_surface", ps)
    out.json("bands.json", {"q": band_annotation(qs.finite_values(), REFERENCE_Q_BAND),
                            "p": band_annotation(ps.finite_values(), (0.51, 0.63))})


def _aligned_returns(stock_file, index_file, schema):
    s = log_returns(load_price_series(stock_file, schema))
    i = log_returns(load_price_series(index_file, schema))
    common, si, ii = np.intersect1d(s.dates, i.dates, return_indices=True)
    if common.size < 10:
        raise ConfigError("stock and index files share fewer than 10 return dates")
    return common, s.returns[si], i.returns[ii]


def cmd_csy_fit(cfg, out):
    _positive(cfg, "dt", "n_starts")
    dates, y, zi = _aligned_returns(cfg["stock"], cfg["index"], cfg["schema"])
    if (cfg["index_mu"] is None) != (cfg["index_sigma"] is None):
        raise ConfigError("fields 'index_mu' and 'index_sigma' go together")
    z = zi if cfg["index_mu"] is None else centralize(zi, cfg["index_mu"], cfg["index_sigma"], 1.0)
    ser = intensity(z, cfg["p_upturn"], cfg["dt"], cfg["raw_sign"])
    bounds = None
    if cfg["bounds"] is not None:
        b = resolve({"sigma_h": (list, REQUIRED), "sigma_g": (list, REQUIRED)}, cfg["bounds"], "bounds.")
        bounds = (tuple(map(float, b["sigma_h"])), tuple(map(float, b["sigma_g"])))
    init = None
    if cfg["init"] is not None:
        b = resolve({"sigma_h": (float, REQUIRED), "sigma_g": (float, REQUIRED)}, cfg["init"], "init.")
        init = (b["sigma_h"], b["sigma_g"])
    fit = fit_csy(y, ser, cfg["r"], init, bounds, cfg["n_starts"], cfg["seed"])
    doc = fit.to_dict()
    doc["p_upturn"] = ser.p_upturn
    doc["n_obs"] = int(y.size)
    out.json("fit.json", doc)
    out.csv("residuals.csv", ["date", "residual"], zip(dates, fit.residuals))


def cmd_csy_simulate(cfg, out):
    params = _csy_params(cfg["params"])
    _positive(cfg, "S0", "dt", "n_steps", "n_paths", "T")
    if cfg["mode"] == "continuum":
        sim = simulate_continuum(params, cfg["T"], cfg["dt_fine"], cfg["seed"], cfg["n_paths"], cfg["S0"])
        rows = []
        for p in range(cfg["n_paths"]):
            for j, t in enumerate(sim["t"]):
                rows.append((p, t, sim["B"][p, j], sim["C"][p, j], sim["G"][p, j], sim["S"][p, j]))
        out.csv("paths.csv", ["path", "t", "B", "C", "G", "S"], rows)
        return
    pu = cfg["p_upturn"]
    if not 0.0 < pu < 1.0:
        raise ConfigError("field 'p_upturn': must lie in (0, 1)")
    a, b = two_point_values(pu)
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for p in range(cfg["n_paths"]):
        xi = np.where(rng.random(cfg["n_steps"]) < pu, a, b)
        S, _ = stock_path(params, xi, cfg["S0"], cfg["dt"])
        eta = eta_series(params, xi, cfg["dt"])
        xs = np.concatenate(([0.0], xi))
        for k in range(cfg["n_steps"] + 1):
            rows.append((p, k, k * cfg["dt"], xs[k], eta[k], S[k]))
    out.csv("paths.csv", ["path", "step", "t", "xi", "eta", "S"], rows)


def cmd_garch_fit(cfg, out):
    ret = log_returns(load_price_series(cfg["input"], cfg["schema"]))
    r = ret.returns * cfg["scale"]
    fit = fit_arma_gjr_garch(r, cfg["innovation"], cfg["leverage"], cfg["n_starts"], cfg["seed"],
                             cfg["maxiter"])
    out.json("fit.json", fit.to_dict())
    out.csv("residuals.csv", ["date", "residual", "sigma"],
            zip(ret.dates, garch_residuals(fit), fit.sigmas))


def cmd_alpha(cfg, out):
    s = log_returns(load_price_series(cfg["stock"], cfg["schema"]))
    if cfg["model"] == "jensen":
        if cfg["market"] is None:
            raise ConfigError("field 'market' is required for the jensen model")
        m = log_returns(load_price_series(cfg["market"], cfg["schema"]))
        dates, si, mi = np.intersect1d(s.dates, m.dates, return_indices=True)
        res = jensen_alpha_series(s.returns[si], m.returns[mi], cfg["rf"] / cfg["periods_per_year"],
                                  dates)
    else:
        if cfg["factors"] is None:
            raise ConfigError("field 'factors' is required for the ff3 model")
        tab = load_factor_table(cfg["factors"])
        dates, si, fi = np.intersect1d(s.dates, tab["date"], return_indices=True)
        sub = {k: v[fi] for k, v in tab.items() if k != "date"}
        res = ff3_alpha_series(s.returns[si], sub, dates)
    out.csv("alpha.csv", ["date", "alpha"], zip(dates, res.alpha))
    out.json("alpha.json", {"model": cfg["model"], "betas": res.betas, "intercept": res.intercept,
                            "n_obs": int(dates.size)})


def _option(raw):
    c = resolve({"kind": (str, "call", ("call", "put")), "strike": (float, REQUIRED),
                 "steps": (int, REQUIRED)}, raw, "option.")
    if c["steps"] < 1:
        raise ConfigError("field 'option.steps': must be at least 1")
    return c


def _csy_common(cfg):
    params = _csy_params(cfg["params"])
    _, ser = _intensity(cfg["intensity"], cfg["seed"])
    opt = _option(cfg["option"])
    option = OptionSpec(opt["kind"], opt["strike"], opt["steps"] * ser.dt)
    return params, ser, opt, option


def _price_doc(res, cfg, opt):
    doc = {"price": res.f0, "steps": opt["steps"], "eta_mode": cfg["eta_mode"],
           "q_rule": cfg["q_rule"]}
    doc.update(res.extra or {})
    return doc


def cmd_csy_price(cfg, out):
    params, ser, opt, option = _csy_common(cfg)
    res = price_csy(params, ser, option, cfg["r"], cfg["S0"], opt["steps"], cfg["eta_mode"],
                    cfg["q_rule"], cfg["convention"], keep_levels=False)
    out.json("price.json", _price_doc(res, cfg, opt))


def cmd_informed_price(cfg, out):
    params, ser, opt, option = _csy_common(cfg)
    res = price_informed(params, ser, TraderSpec(cfg["lam"]), cfg["r"], option, cfg["S0"],
                         opt["steps"], cfg["eta_mode"], cfg["q_rule"], cfg["convention"],
                         keep_levels=False)
    out.json("price.json", dict(_price_doc(res, cfg, opt), lam=cfg["lam"]))


def cmd_dev(cfg, out):
    params = _csy_params(cfg["params"])
    _, ser = _intensity(cfg["intensity"], cfg["seed"])
    chain = load_option_chain(cfg["chain"])
    steps_per_year = cfg["units_per_year"] / ser.dt
    r_model = cfg["r"] / cfg["units_per_year"]

    def pricer(quote, t):
        n = max(1, int(round(t * steps_per_year)))
        opt = OptionSpec(quote.kind, quote.strike, n * ser.dt)
        return price_csy(params, ser, opt, r_model, cfg["S0"], n, cfg["eta_mode"], cfg["q_rule"],
                         keep_levels=False).f0

    surf = dev_surface(pricer, chain, cfg["S0"], cfg["r"], cfg["year_basis"])
    _surface_outputs(out, "dev_surface", surf)
    out.json("bands.json", {"dev": band_annotation(surf.finite_values(), REFERENCE_DEV_BAND)})


def cmd_implied_lambda(cfg, out):
    params = _csy_params(cfg["params"])
    _, ser = _intensity(cfg["intensity"], cfg["seed"])
    chain = load_option_chain(cfg["chain"])
    surf = implied_lambda_surface(chain, cfg["S0"], params, ser, cfg["r"] / cfg["units_per_year"],
                                  cfg["units_per_year"] / ser.dt, cfg["year_basis"], cfg["q_rule"])
    _surface_outputs(out, "lambda_surface", surf)


PRICE_SCHEMA = {"input": (str, REQUIRED), "schema": (dict, {})}
CSY_PRICE_SCHEMA = {
    "params": (dict, REQUIRED),
    "intensity": (dict, REQUIRED),
    "option": (dict, REQUIRED),
    "S0": (float, 100.0),
    "r": (float, REQUIRED),
    "eta_mode": (str, "ladder", ("ladder", "path")),
    "q_rule": (str, "first_order", ("first_order", "exact")),
    "convention": (str, "previsible", ("previsible", "shifted")),
}
CRITERIA = ("ks", "quantile")

COMMANDS = {
    "ingest": (cmd_ingest, dict(PRICE_SCHEMA)),
    "estimate-p": (cmd_estimate_p, dict(PRICE_SCHEMA, window=(int, 252), crr_jr=(bool, False),
                                        r=(float, 0.0), dt=(float, 1.0 / 252))),
    "sign-test": (cmd_sign_test, {
        "n_up": (int, None), "n_total": (int, None), "p0": (float, 0.5),
        "input": (str, None), "schema": (dict, {}), "window": (int, 252),
        "estimator": (str, "p_hat", ("p_hat", "crr", "jr")), "period": (str, "month", ("week", "month", "year")),
        "reference": (float, 0.5), "r": (float, 0.0), "dt": (float, 1.0 / 252)}),
    "price": (cmd_price, {
        "S0": (float, REQUIRED), "K": (float, REQUIRED), "T": (float, 1.0),
        "kind": (str, "call", ("call", "put")), "mu": (float, REQUIRED), "sigma": (float, REQUIRED),
        "r": (float, 0.0), "p": ("number_or_dict", 0.5), "n": (int, 1),
        "q_rule": (str, "exact", ("exact", "approx")),
        "layout": (str, "auto", ("auto", "recombining", "approx_recombining", "general")),
        "keep_tree": (bool, False)}),
    "converge-p": (cmd_converge_p, {
        "p_grid": ("grid", {"start": 0.05, "stop": 0.95, "num": 19}),
        "mu": (float, 0.1), "sigma": (float, 0.2), "r": (float, 0.0), "T": (float, 1.0),
        "criterion": (str, "ks", CRITERIA), "threshold": (float, 1e-3), "cap": (int, 1_000_000)}),
    "converge-mu": (cmd_converge_mu, {
        "mu_grid": ("grid", [0.5, 1.0, 2.0, 5.0, 10.0, 20.0]),
        "sigma": (float, 1.0), "r": (float, 0.0), "p": (float, 0.5), "T": (float, 1.0),
        "criterion": (str, "ks", CRITERIA), "threshold": (float, 1e-3), "cap": (int, 1_000_000),
        "q_rule": (str, "exact", ("exact", "approx"))}),
    "implied-q": (cmd_implied_q, {
        "chain": (str, REQUIRED), "S0": (float, REQUIRED), "mu": (float, REQUIRED),
        "sigma": (float, REQUIRED), "r": (float, REQUIRED), "dt": (float, 1.0 / 252),
        "units_per_year": (float, 1.0), "year_basis": (float, 365.0),
        "nodes": (str, "fixed", ("fixed", "coupled")), "node_p": (float, 0.5)}),
    "csy-fit": (cmd_csy_fit, {
        "stock": (str, REQUIRED), "index": (str, REQUIRED), "schema": (dict, {}),
        "r": (float, REQUIRED), "dt": (float, 1.0), "p_upturn": (float, None),
        "raw_sign": (bool, False), "index_mu": (float, None), "index_sigma": (float, None),
        "init": (dict, None), "bounds": (dict, None), "n_starts": (int, 8)}),
    "csy-simulate": (cmd_csy_simulate, {
        "params": (dict, REQUIRED), "mode": (str, "discrete", ("discrete", "continuum")),
        "n_steps": (int, 252), "p_upturn": (float, 0.5), "dt": (float, 1.0), "S0": (float, 100.0),
        "n_paths": (int, 1), "T": (float, 1.0), "dt_fine": (float, 1e-3)}),
    "garch-fit": (cmd_garch_fit, dict(PRICE_SCHEMA, innovation=(str, "gaussian", ("gaussian", "student_t")),
                                      leverage=(bool, True), n_starts=(int, 8),
                                      maxiter=(int, 4000), scale=(float, 1.0))),
    "alpha": (cmd_alpha, {
        "stock": (str, REQUIRED), "market": (str, None), "factors": (str, None),
        "schema": (dict, {}), "model": (str, "jensen", ("jensen", "ff3")),
        "rf": (float, 0.0), "periods_per_year": (float, 252.0)}),
    "csy-price": (cmd_csy_price, dict(CSY_PRICE_SCHEMA)),
    "informed-price": (cmd_informed_price, dict(CSY_PRICE_SCHEMA, lam=(float, REQUIRED))),
    "dev": (cmd_dev, {
        "chain": (str, REQUIRED), "S0": (float, REQUIRED), "r": (float, REQUIRED),
        "params": (dict, REQUIRED), "intensity": (dict, REQUIRED),
        "units_per_year": (float, 252.0), "year_basis": (float, 365.0),
        "eta_mode": (str, "ladder", ("ladder", "path")), "q_rule": (str, "first_order", ("first_order", "exact"))}),
    "implied-lambda": (cmd_implied_lambda, {
        "chain": (str, REQUIRED), "S0": (float, REQUIRED), "r": (float, REQUIRED),
        "params": (dict, REQUIRED), "intensity": (dict, REQUIRED),
        "units_per_year": (float, 252.0), "year_basis": (float, 365.0),
        "q_rule": (str, "first_order", ("first_order", "exact"))}),
}

NUMERICAL_ERRORS = (ArbitrageError, AdmissibilityError, GarchConvergenceError, DomainError,
                    FloatingPointError, RuntimeError, np.linalg.LinAlgError)


def run(command, config, outdir):
    """Run one command; returns ``(exit_code, message)``."""
    if command not in COMMANDS:
        return EXIT_VALIDATION, f"unknown command {command!r}"
    handler, schema = COMMANDS[command]
    raw = dict(config)
    seed = raw.pop("seed", 0)
    try:
        seed = _coerce(int, seed, "seed")
        cfg = resolve(schema, raw)
    except ConfigError as exc:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        write_manifest(outdir, command, dict(config), seed, [], "invalid", str(exc))
        return EXIT_VALIDATION, str(exc)
    resolved = dict(cfg, seed=seed)
    out = _Outputs(outdir)
    out.dir.mkdir(parents=True, exist_ok=True)
    try:
        with np.errstate(over="ignore", under="ignore"):
            handler(dict(resolved), out)
    except NUMERICAL_ERRORS as exc:
        write_manifest(outdir, command, resolved, seed, out.names, "failed", str(exc))
        return EXIT_NUMERICAL, f"numerical failure: {exc}"
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        write_manifest(outdir, command, resolved, seed, out.names, "invalid", str(exc))
        return EXIT_VALIDATION, f"validation error: {exc}"
    write_manifest(outdir, command, resolved, seed, out.names)
    return EXIT_OK, "ok"


def build_parser():
    parser = argparse.ArgumentParser(prog="pathbinomial", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name][0].__name__.replace("cmd_", "").replace("_", "-"))
        p.add_argument("--config", "-c", help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (dotted keys nest)")
        p.add_argument("--seed", type=int, help="random seed (config key 'seed')")
        p.add_argument("--out", "-o", default=None, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {}
        config = apply_overrides(config, args.overrides)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        config["seed"] = args.seed
    outdir = args.out or f"pathbinomial-out/{args.command}"
    code, message = run(args.command, config, outdir)
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    print(f"{args.command}: {message} -> {outdir}", file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())
