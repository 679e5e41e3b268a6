"""Configuration-driven experiment runner.

    distdelay generate --config cfg.json --out run/
    distdelay estimate --config cfg.json --out run/
    distdelay sweep    --config cfg.json --out run/ [--paper-scale]
    distdelay validate --out run/

The config is one JSON object; every field is optional and missing fields
take the preset for the chosen model (desk scale by default, the published
setup with ``--paper-scale``). Recognized keys::

    model            "logistic" | "reactor" | "linear" | "package.module:Class"
    model_params     keyword overrides for the model dataclass
    kernel           true kernel: {"type": "folded_normal", "terms": [[w, mu, sigma], ...]}
                     | {"type": "point", "tau": t} | {"type": "erlang_mixture", "a": a, "c": [...]}
    truth            {"p": [...], "x0": [...]}
    days_per_month   month length in days (logistic time unit is the month)
    seed             RNG seed for the optional measurement noise
    data             sample_dt, steps_per_sample, n_samples, t0, horizon (null: from horizon_eps),
                     horizon_eps, newton_tol, noise_std (scalar or per channel), file
    estimate         M (list), window (null: all data), scale, opt_tol, hessian, max_iter, memory,
                     atol, rtol, workers, bounds {p_min, p_max, a_min, a_max, x_min, x_max, c_min, c_max},
                     guess {p, a, x0, c: "uniform" | "last"}, kernel_grid {t_max, n}
                     (a list for guess.a runs one fit per rate and keeps the lowest psi)
    validate         jacobian_tol, gradient_rtol, gradient_atol

``null`` bounds mean unbounded. Exit codes: 0 success, 2 validation
failure (bad config or a failed check), 1 any other error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import importlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .ddesim import DdeSimConfig, dde_convergence_order, simulate_dde
from .estimator import Bounds, EstimationProblem, kernel_error_report, objective, solve
from .ivp import IntegratorConfig, convergence_order
from .kernels import (
    ErlangMixture,
    PointDelay,
    kernel_from_dict,
    memory_horizon,
    tijms_weights,
    write_kernel_csv,
)
from .lct import AugmentedSystem
from .model import DelayModel, MeasurementSeries, check_jacobians
from .models import DAYS_PER_MONTH, LOGISTIC_KERNEL, MODELS, REACTOR_KERNEL, LinearModel, LogisticModel, ReactorModel
from .sensitivities import simulate_augmented

__all__ = ["ConfigError", "load_config", "resolve_config", "run_generate", "run_estimate",
           "run_validate", "build_problem", "solve_configured", "main"]

log = logging.getLogger("distdelay")

EXIT_OK, EXIT_ERROR, EXIT_INVALID = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


# ---------------------------------------------------------------- presets

def _logistic_preset(paper: bool, dpm: float, point: bool) -> dict:
    return {
        "model_params": {},
        "kernel": PointDelay(0.35).to_dict() if point else LOGISTIC_KERNEL.to_dict(),
        "truth": {"p": [4.0], "x0": [0.9]},
        "data": {"sample_dt": 1.0 / dpm, "steps_per_sample": 150, "n_samples": 730, "t0": 0.0,
                 "horizon": 24.0 if paper else None, "horizon_eps": 1e-12, "newton_tol": 1e-12,
                 "noise_std": 0.0, "file": None},
        "estimate": {
            "M": list(range(0, 51, 10)) if paper else [0, 20],
            "window": None if paper else 12.0,
            "scale": 1e5 if point else 1e6,
            "opt_tol": 1e-4 if point else 1e-3,
            "hessian": "bfgs" if paper else "gauss-newton",
            "max_iter": 500, "memory": 10, "atol": 1e-8, "rtol": 1e-8, "workers": 1,
            "bounds": {"p_min": [0.0], "p_max": [10.0], "a_min": 0.5, "a_max": None,
                       "x_min": [0.0], "x_max": [10.0], "c_min": 0.0, "c_max": None},
            "guess": {"p": [3.0], "a": 20.0, "x0": [0.7], "c": "uniform"},
            "kernel_grid": {"t_max": 2.0, "n": 401},
        },
    }


def _reactor_preset(paper: bool, point: bool) -> dict:
    m = ReactorModel()
    return {
        "model_params": {},
        "kernel": PointDelay(3.5).to_dict() if point else REACTOR_KERNEL.to_dict(),
        "truth": {"p": [m.kappa], "x0": [1.0] * 7 + [1.5 * m.beta]},
        "data": {"sample_dt": 0.01, "steps_per_sample": 10, "n_samples": 2500, "t0": 0.0,
                 "horizon": 25.0 if paper else None, "horizon_eps": 1e-12, "newton_tol": 1e-12,
                 "noise_std": 0.0, "file": None},
        "estimate": {
            "M": [70] if paper else [5],
            "window": None if paper else 5.0,
            "scale": 10.0, "opt_tol": 1e-5,
            "hessian": "bfgs" if paper else "gauss-newton",
            "max_iter": 500, "memory": 10, "atol": 1e-8, "rtol": 1e-8, "workers": 1,
            "bounds": {"p_min": [0.0], "p_max": [1e-4], "a_min": 7.5, "a_max": None,
                       "x_min": [0.0] * 7 + [None], "x_max": [None] * 8, "c_min": 0.0, "c_max": None},
            "guess": {"p": [4e-5], "a": 25.0, "x0": [10.0] * 7 + [m.beta], "c": "last"},
            "kernel_grid": {"t_max": 10.0, "n": 1001},
        },
    }


def _linear_preset(paper: bool, point: bool) -> dict:
    return {
        "model_params": {},
        "kernel": PointDelay(0.5).to_dict() if point else ErlangMixture(4.0, [0.5, 0.5]).to_dict(),
        "truth": {"p": [1.0], "x0": [1.0]},
        "data": {"sample_dt": 0.05, "steps_per_sample": 20, "n_samples": 100, "t0": 0.0,
                 "horizon": None, "horizon_eps": 1e-12, "newton_tol": 1e-12, "noise_std": 0.0,
                 "file": None},
        "estimate": {
            "M": [1], "window": None, "scale": 1.0, "opt_tol": 1e-6, "hessian": "gauss-newton",
            "max_iter": 500, "memory": 10, "atol": 1e-10, "rtol": 1e-10, "workers": 1,
            "bounds": {"p_min": [0.0], "p_max": [10.0], "a_min": 0.1, "a_max": None,
                       "x_min": [None], "x_max": [None], "c_min": 0.0, "c_max": None},
            "guess": {"p": [0.5], "a": 2.0, "x0": [0.5], "c": "uniform"},
            "kernel_grid": {"t_max": 5.0, "n": 501},
        },
    }


_VALIDATE_DEFAULTS = {"jacobian_tol": 1e-5, "gradient_rtol": 1e-4, "gradient_atol": 1e-8}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "kernel":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a JSON object")
    return cfg


def resolve_config(user: dict, paper_scale: bool = False, seed: int | None = None) -> dict:
    """Fill in presets and validate; raises :class:`ConfigError` with field paths."""
    model_name = user.get("model", "logistic")
    if not isinstance(model_name, str):
        raise ConfigError("model: must be a string")
    dpm = user.get("days_per_month", DAYS_PER_MONTH)
    if not (isinstance(dpm, (int, float)) and dpm > 0):
        raise ConfigError("days_per_month: must be a positive number")
    kernel_spec = user.get("kernel")
    point = isinstance(kernel_spec, dict) and kernel_spec.get("type") == "point"
    if model_name == "logistic":
        base = _logistic_preset(paper_scale, float(dpm), point)
    elif model_name == "reactor":
        base = _reactor_preset(paper_scale, point)
    elif model_name == "linear" or ":" in model_name:
        base = _linear_preset(paper_scale, point)
    else:
        raise ConfigError(f"model: unknown model {model_name!r} (logistic, reactor, linear or module:Class)")
    base.update({"model": model_name, "days_per_month": float(dpm), "seed": 0,
                 "paper_scale": bool(paper_scale), "validate": dict(_VALIDATE_DEFAULTS)})
    unknown = set(user) - set(base)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config key")
    for section in ("data", "estimate", "validate"):
        extra = set(user.get(section) or {}) - set(base[section])
        if extra:
            raise ConfigError(f"{section}.{sorted(extra)[0]}: unknown config key")
    cfg = _merge(base, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    model = make_configured_model(cfg)
    try:
        kernel = kernel_from_dict(cfg["kernel"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"kernel: {exc}") from exc
    if isinstance(kernel, ErlangMixture) and kernel.M < 0:
        raise ConfigError("kernel.c: empty")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed: must be a non-negative integer")
    for key, n in (("p", model.n_p), ("x0", model.n_x)):
        v = cfg["truth"].get(key)
        if not isinstance(v, list) or len(v) != n:
            raise ConfigError(f"truth.{key}: expected a list of {n} numbers")
    d = cfg["data"]
    if not (isinstance(d["sample_dt"], (int, float)) and d["sample_dt"] > 0):
        raise ConfigError("data.sample_dt: must be positive")
    if not (isinstance(d["steps_per_sample"], int) and d["steps_per_sample"] >= 1):
        raise ConfigError("data.steps_per_sample: must be a positive integer")
    if not (isinstance(d["n_samples"], int) and d["n_samples"] >= 1):
        raise ConfigError("data.n_samples: the sampling window must have positive duration")
    if d["horizon"] is not None and not (isinstance(d["horizon"], (int, float)) and d["horizon"] > 0):
        raise ConfigError("data.horizon: must be positive or null")
    noise = np.atleast_1d(np.asarray(d["noise_std"], dtype=float))
    if noise.size not in (1, model.n_y) or np.any(noise < 0):
        raise ConfigError(f"data.noise_std: expected a non-negative scalar or {model.n_y} values")
    e = cfg["estimate"]
    Ms = e["M"]
    if not isinstance(Ms, list) or not Ms or not all(isinstance(M, int) and M >= 0 for M in Ms):
        raise ConfigError("estimate.M: expected a non-empty list of non-negative integers")
    for key in ("scale", "opt_tol", "atol", "rtol"):
        if not (isinstance(e[key], (int, float)) and e[key] > 0):
            raise ConfigError(f"estimate.{key}: must be positive")
    if e["hessian"] not in ("bfgs", "gauss-newton"):
        raise ConfigError("estimate.hessian: must be 'bfgs' or 'gauss-newton'")
    if e["window"] is not None and not (isinstance(e["window"], (int, float)) and e["window"] > 0):
        raise ConfigError("estimate.window: must be positive or null")
    if not (isinstance(e["workers"], int) and e["workers"] >= 1):
        raise ConfigError("estimate.workers: must be a positive integer")
    b = e["bounds"]
    for key, n in (("p_min", model.n_p), ("p_max", model.n_p), ("x_min", model.n_x), ("x_max", model.n_x)):
        if not isinstance(b.get(key), list) or len(b[key]) != n:
            raise ConfigError(f"estimate.bounds.{key}: expected a list of {n} numbers or nulls")
    g = e["guess"]
    if len(g.get("p", [])) != model.n_p:
        raise ConfigError(f"estimate.guess.p: expected {model.n_p} values")
    if len(g.get("x0", [])) != model.n_x:
        raise ConfigError(f"estimate.guess.x0: expected {model.n_x} values")
    if g.get("c") not in ("uniform", "last") and not isinstance(g.get("c"), list):
        raise ConfigError("estimate.guess.c: 'uniform', 'last' or an explicit list")
    rates = g.get("a") if isinstance(g.get("a"), list) else [g.get("a")]
    if not rates or not all(isinstance(v, (int, float)) and v > 0 for v in rates):
        raise ConfigError("estimate.guess.a: a positive number or a nonempty list of them")
    for key, val in cfg["validate"].items():
        if not (isinstance(val, (int, float)) and val > 0):
            raise ConfigError(f"validate.{key}: must be positive")


def make_configured_model(cfg: dict) -> DelayModel:
    name, params = cfg["model"], cfg.get("model_params") or {}
    if ":" in name:
        mod, _, attr = name.partition(":")
        try:
            cls = getattr(importlib.import_module(mod), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"model: cannot import {name!r} ({exc})") from exc
    else:
        cls = MODELS[name]
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"model_params: {exc}") from exc


# ---------------------------------------------------------------- writers

def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


# ---------------------------------------------------------------- generate

def data_grid(cfg: dict):
    """Step size, number of steps and sample times of the data-generation run."""
    d = cfg["data"]
    dt = d["sample_dt"] / d["steps_per_sample"]
    n_steps = d["steps_per_sample"] * d["n_samples"]
    t0 = float(d["t0"])
    samples = t0 + d["sample_dt"] * np.arange(d["n_samples"] + 1)
    return dt, n_steps, samples


def data_horizon(cfg: dict, kernel, dt: float) -> float:
    """Memory horizon rounded up to a whole number of steps."""
    if isinstance(kernel, PointDelay):
        return max(int(round(kernel.tau / dt)), 1) * dt
    h = cfg["data"]["horizon"]
    if h is None:
        h = memory_horizon(kernel, cfg["data"]["horizon_eps"])
    return math.ceil(h / dt - 1e-9) * dt


def run_generate(cfg: dict, out: Path) -> dict:
    """Simulate the true system and write ``measurements.csv`` and ``truth.json``."""
    out.mkdir(parents=True, exist_ok=True)
    model = make_configured_model(cfg)
    kernel = kernel_from_dict(cfg["kernel"])
    dt, n_steps, samples = data_grid(cfg)
    horizon = data_horizon(cfg, kernel, dt)
    sim_cfg = DdeSimConfig(dt, horizon, tol=cfg["data"]["newton_tol"])
    t0 = float(cfg["data"]["t0"])
    tf = t0 + n_steps * dt
    res = simulate_dde(model, kernel, cfg["truth"]["x0"], cfg["truth"]["p"], t0, tf, sim_cfg,
                       sample_times=t0 + dt * cfg["data"]["steps_per_sample"] * np.arange(len(samples)))
    meas = res.measurements
    noise = np.broadcast_to(np.asarray(cfg["data"]["noise_std"], dtype=float), (model.n_y,))
    values = meas.values
    if np.any(noise > 0):
        rng = np.random.default_rng(cfg["seed"])
        values = values + rng.normal(size=values.shape) * noise
    names = _measurement_names(model)
    series = MeasurementSeries(meas.times, values, names)
    series.to_csv(out / "measurements.csv")
    idx = np.arange(len(samples)) * cfg["data"]["steps_per_sample"]
    _write_csv(out / "truth_states.csv", ["t", *model.state_names],
               ([t, *x] for t, x in zip(res.t[idx], res.x[idx])))
    grid = np.linspace(0.0, cfg["estimate"]["kernel_grid"]["t_max"], cfg["estimate"]["kernel_grid"]["n"])
    if not isinstance(kernel, PointDelay):
        write_kernel_csv(out / "kernel_true.csv", kernel, grid)
    meta = {
        "model": cfg["model"],
        "model_params": cfg["model_params"],
        "kernel": kernel.to_dict(),
        "kernel_mean": float(kernel.mean()),
        "p": list(cfg["truth"]["p"]),
        "x0": list(cfg["truth"]["x0"]),
        "param_names": list(model.param_names),
        "state_names": list(model.state_names),
        "measurement_names": list(names),
        "dt": dt,
        "n_steps": n_steps,
        "horizon": horizon,
        "n_hist": sim_cfg.n_hist,
        "newton_tol": sim_cfg.tol,
        "n_rows": len(series),
        "days_per_month": cfg["days_per_month"],
        "noise_std": noise.tolist(),
        "seed": cfg["seed"],
        "paper_scale": cfg["paper_scale"],
    }
    _write_json(out / "truth.json", meta)
    log.info("wrote %d measurement rows to %s", len(series), out / "measurements.csv")
    return meta


def _measurement_names(model: DelayModel) -> tuple:
    if isinstance(model, ReactorModel):
        return tuple(f"log_{n}" for n in model.state_names[:7])
    if model.n_y == model.n_x:
        return tuple(model.state_names)
    return tuple(f"y_{i + 1}" for i in range(model.n_y))


# ---------------------------------------------------------------- estimate

def _none_inf(v, sign):
    return sign * np.inf if v is None else float(v)


def _rate_guesses(cfg: dict) -> list[float]:
    a = cfg["estimate"]["guess"]["a"]
    return [float(v) for v in a] if isinstance(a, list) else [float(a)]


def build_problem(cfg: dict, data: MeasurementSeries, M: int, a_guess: float | None = None) -> EstimationProblem:
    """The estimation problem for one ``M`` from a resolved config.

    ``a_guess`` overrides the rate guess; by default the first configured one.
    """
    model = make_configured_model(cfg)
    e = cfg["estimate"]
    L = model.layout(M)
    b = e["bounds"]
    lo = np.empty(L.size)
    hi = np.empty(L.size)
    lo[L.p] = [_none_inf(v, -1) for v in b["p_min"]]
    hi[L.p] = [_none_inf(v, 1) for v in b["p_max"]]
    lo[L.c] = _none_inf(b["c_min"], -1)
    hi[L.c] = _none_inf(b["c_max"], 1)
    lo[L.a] = _none_inf(b["a_min"], -1)
    hi[L.a] = _none_inf(b["a_max"], 1)
    lo[L.x0] = [_none_inf(v, -1) for v in b["x_min"]]
    hi[L.x0] = [_none_inf(v, 1) for v in b["x_max"]]
    g = e["guess"]
    if g["c"] == "uniform":
        c = np.full(M + 1, 1.0 / (M + 1))
    elif g["c"] == "last":
        c = np.r_[np.full(M, 1e-8), 1.0]
    else:
        c = np.asarray(g["c"], dtype=float)
        if c.size != M + 1:
            raise ConfigError(f"estimate.guess.c: expected {M + 1} values for M = {M}")
    a0 = _rate_guesses(cfg)[0] if a_guess is None else a_guess
    theta0 = np.concatenate([g["p"], c, [a0], g["x0"]])
    if e["window"] is not None:
        data = data.window(data.t0 + e["window"])
    return EstimationProblem(model, M, data, Bounds(lo, hi), theta0, scale=e["scale"], opt_tol=e["opt_tol"],
                             integrator=IntegratorConfig(atol=e["atol"], rtol=e["rtol"]),
                             max_iter=e["max_iter"], memory=e["memory"], hessian=e["hessian"])


def solve_configured(cfg: dict, data: MeasurementSeries, M: int):
    """Fit one ``M``, once per rate guess; the lowest-psi result wins."""
    best, failure = None, None
    for a0 in _rate_guesses(cfg):
        try:
            res = solve(build_problem(cfg, data, M, a0))
        except Exception as exc:
            failure = exc
            continue
        if best is None or res.psi < best.psi:
            best = res
    if best is None:
        raise failure
    return best


def _solve_one(args):
    cfg, data, M = args
    try:
        return M, solve_configured(cfg, data, M), None
    except Exception as exc:  # recorded, the sweep continues
        return M, None, f"{type(exc).__name__}: {exc}"


def run_estimate(cfg: dict, out: Path) -> list[dict]:
    """Fit every ``M`` in the sweep; write per-M artifacts and ``summary.csv``."""
    data_file = cfg["data"]["file"]
    path = Path(data_file) if data_file else out / "measurements.csv"
    if not path.exists():
        raise FileNotFoundError(f"no measurement file at {path}; run 'generate' first")
    data = MeasurementSeries.from_csv(path)
    model = make_configured_model(cfg)
    true_kernel = kernel_from_dict(cfg["kernel"])
    truth_file = out / "truth.json"
    if truth_file.exists() and not data_file:
        true_kernel = kernel_from_dict(json.loads(truth_file.read_text())["kernel"])
    e = cfg["estimate"]
    grid = np.linspace(0.0, e["kernel_grid"]["t_max"], e["kernel_grid"]["n"])
    jobs = [(cfg, data, M) for M in e["M"]]
    if e["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=e["workers"]) as pool:
            outcomes = list(pool.map(_solve_one, jobs))
    else:
        outcomes = [_solve_one(j) for j in jobs]

    rows = []
    p_names = list(model.param_names)
    x_names = list(model.state_names)
    for M, res, error in outcomes:
        tag = f"M{M:03d}"
        if res is None:
            record = {"M": M, "converged": False, "message": error}
            _write_json(out / f"result_{tag}.json", record)
            rows.append(record)
            log.warning("M = %d failed: %s", M, error)
            continue
        report = kernel_error_report(res.mixture, true_kernel, grid)
        summary = res.summary()
        summary.pop("elapsed_s")  # wall time would break byte-identical reruns
        record = {**summary, "param_names": p_names, "state_names": x_names, "kernel_errors": report}
        _write_json(out / f"result_{tag}.json", record)
        _write_csv(out / f"iterations_{tag}.csv", ["iter", "psi", "pg_norm", "step", "alpha", "evals"],
                   ([h["iter"], h["psi"], h["pg_norm"], h["step"], h["alpha"], h["evals"]] for h in res.history))
        _write_csv(out / f"coefficients_{tag}.csv", ["m", "c"], enumerate(res.theta[res.layout.c]))
        est = res.mixture.pdf(grid)
        if isinstance(true_kernel, PointDelay):
            _write_csv(out / f"kernel_{tag}.csv", ["t", "pdf_estimated"], zip(grid, est))
        else:
            _write_csv(out / f"kernel_{tag}.csv", ["t", "pdf_estimated", "pdf_true", "abs_error"],
                       zip(grid, est, true_kernel.pdf(grid), np.abs(est - true_kernel.pdf(grid))))
        if res.trajectory is not None:
            xs = res.trajectory.y[:, :model.n_x]
            _write_csv(out / f"trajectory_{tag}.csv", ["t", *x_names],
                       ([t, *x] for t, x in zip(res.trajectory.t, xs)))
        rows.append(record)
        log.info("M = %d: psi = %.6g, %s", M, res.psi, res.message)

    header = (["M", "converged", "message", "iterations", "n_evals", "psi", "pg_norm", "a", "tau_hat"]
              + [f"p_{n}" for n in p_names] + [f"x0_{n}" for n in x_names]
              + ["kernel_max_abs_error", "kernel_l2_error", "kernel_mean_error"])
    table = []
    for r in rows:
        if "psi" not in r:
            table.append([r["M"], False, r["message"]] + [""] * (len(header) - 3))
            continue
        ke = r["kernel_errors"]
        table.append([r["M"], r["converged"], r["message"], r["iterations"], r["n_evals"], r["psi"],
                      r["pg_norm"], r["a"], r["tau_hat"], *r["p"], *r["x0"],
                      ke.get("max_abs_error", ""), ke.get("l2_error", ""), ke["mean_error"]])
    _write_csv(out / "summary.csv", header, table)
    _write_json(out / "summary.json", {"results": rows})
    return rows


# ---------------------------------------------------------------- validate

def _check(name, fn):
    try:
        passed, detail = fn()
    except Exception as exc:
        passed, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
    return {"name": name, "passed": bool(passed), "detail": detail}


def _jacobian_checks(tol):
    rng = np.random.default_rng(1)
    cases = [
        ("logistic", LogisticModel(), 0.3, rng.uniform(0.5, 1.5, 1), rng.uniform(0.5, 1.5, 1)),
        ("reactor", ReactorModel(), 0.0, np.r_[rng.uniform(0.5, 1.5, 7), 0.009], rng.uniform(0.5, 1.5, 6)),
        ("linear", LinearModel(), 0.0, rng.normal(size=1), rng.normal(size=1)),
    ]
    out = []
    for name, m, t, x, z in cases:
        def fn(m=m, t=t, x=x, z=z):
            rep = check_jacobians(m, t, x, z, m.default_p(), tol=tol)
            return rep.passed, {"errors": rep.errors, "failures": rep.failures}
        out.append(_check(f"jacobian_{name}", fn))
    return out


def _gradient_check(rtol, atol):
    m = LogisticModel()
    M = 3
    sys_, truth = AugmentedSystem.from_mixture(m, ErlangMixture(8.0, [0.1, 0.2, 0.3, 0.4]), [4.0], [0.9])
    times = np.arange(21) / DAYS_PER_MONTH
    tr = simulate_augmented(sys_, truth, times, IntegratorConfig(atol=1e-12, rtol=1e-12))
    data = MeasurementSeries(times, tr.y[:, :1])
    L = sys_.layout
    prob = EstimationProblem(m, M, data, Bounds.build(L, 0, 10, 0.5, np.inf, 0, 10),
                             truth, scale=1e3, integrator=IntegratorConfig(atol=1e-10, rtol=1e-10))
    th = np.r_[3.0, 0.25, 0.25, 0.25, 0.25, 12.0, 0.8]
    base = objective(prob, th)
    worst = 0.0
    ok = True
    for j in range(th.size):
        h = 1e-6 * max(1.0, abs(th[j]))
        e = np.zeros_like(th)
        e[j] = h
        fd = (objective(prob, th + e, False, base.trajectory.mesh).psi
              - objective(prob, th - e, False, base.trajectory.mesh).psi) / (2 * h)
        err = abs(base.grad[j] - fd)
        ok &= err <= rtol * abs(fd) + atol
        worst = max(worst, err / max(abs(fd), atol))
    return ok, {"max_relative_error": worst, "rtol": rtol, "atol": atol}


def _lct_equivalence():
    m = LogisticModel()
    mix = ErlangMixture(10.0, [0.2, 0.5, 0.3])
    sys_, th = AugmentedSystem.from_mixture(m, mix, [4.0], [0.9])
    ref = simulate_augmented(sys_, th, [0.0, 1.0], IntegratorConfig(atol=1e-11, rtol=1e-11)).y[-1, 0]
    errs = [abs(simulate_dde(m, mix, [0.9], [4.0], 0.0, 1.0, DdeSimConfig(dt, 5.0)).x[-1, 0] - ref)
            for dt in (0.01, 0.005)]
    ratio = errs[0] / errs[1]
    return 1.6 < ratio < 2.4, {"errors": errs, "ratio": ratio}


def _tijms_sweep():
    beta = LOGISTIC_KERNEL.cdf
    grid = np.linspace(0.0, 2.0, 20001)
    errs = []
    for dt in (0.2, 0.1, 0.05):
        M = int(math.ceil(2.0 / dt))
        errs.append(float(np.max(np.abs(tijms_weights(beta, dt, M).cdf(grid) - beta(grid)))))
    ok = all(b < a for a, b in zip(errs, errs[1:]))
    return ok, {"dt": [0.2, 0.1, 0.05], "max_cdf_errors": errs, "first_over_last": errs[0] / errs[-1]}


def _ivp_order():
    est = convergence_order(lambda t, y: -y, lambda t, y: -np.eye(1), [1.0], lambda t: np.exp(-t),
                            (0.0, 1.0), 0.1)
    return abs(est.order - 2.0) <= 0.2, {"order": est.order}


def _ddesim_order():
    est = dde_convergence_order(LogisticModel(), ErlangMixture(10.0, [0.3, 0.3, 0.4]), [0.9], [4.0],
                                0.0, 1.0, 0.01, 2.0)
    return 0.8 <= est.order <= 1.2, {"order": est.order, "differences": list(est.differences)}


def _kernel_normalization():
    from scipy import integrate as spi

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        M = int(rng.integers(0, 20))
        a = float(rng.uniform(0.5, 20))
        mix = ErlangMixture(a, rng.dirichlet(np.ones(M + 1)))
        mass = spi.quad(mix.pdf, 0, 40 * (M + 1) / a, limit=500, epsabs=1e-13, epsrel=1e-13)[0]
        worst = max(worst, abs(mass - 1.0))
    return worst <= 1e-8, {"max_mass_error": worst}


def run_validate(cfg: dict, out: Path) -> dict:
    """Run the invariant suites and write ``validation.json``."""
    out.mkdir(parents=True, exist_ok=True)
    v = cfg["validate"]
    checks = _jacobian_checks(v["jacobian_tol"])
    checks.append(_check("gradient_logistic", lambda: _gradient_check(v["gradient_rtol"], v["gradient_atol"])))
    checks.append(_check("kernel_normalization", _kernel_normalization))
    checks.append(_check("tijms_convergence", _tijms_sweep))
    checks.append(_check("lct_equivalence", _lct_equivalence))
    checks.append(_check("ivp_order", _ivp_order))
    checks.append(_check("ddesim_order", _ddesim_order))
    report = {"passed": all(c["passed"] for c in checks), "checks": checks}
    _write_json(out / "validation.json", report)
    for c in checks:
        log.info("%s %s", "PASS" if c["passed"] else "FAIL", c["name"])
    return report


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distdelay", description="Distributed-delay identification experiments.")
    sub = ap.add_subparsers(dest="verb", required=True)
    helps = {
        "generate": "simulate the true system and write measurements",
        "estimate": "fit the M sweep to existing measurements",
        "validate": "run the invariant checks",
        "sweep": "generate, then estimate",
    }
    for verb, text in helps.items():
        p = sub.add_parser(verb, help=text)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        p.add_argument("--paper-scale", action="store_true", help="use the full published setup")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed: must be non-negative")
        cfg = resolve_config(load_config(args.config), args.paper_scale, args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.verb in ("generate", "sweep"):
            run_generate(cfg, out)
        if args.verb in ("estimate", "sweep"):
            run_estimate(cfg, out)
        if args.verb == "validate":
            if not run_validate(cfg, out)["passed"]:
                print("validation failed; see validation.json", file=sys.stderr)
                return EXIT_INVALID
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
