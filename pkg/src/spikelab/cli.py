"""Batch command-line front end.

Subcommands: theory, simulate, nonuniversality, calibrate, test, reproduce,
verify.  Configuration is JSON validated against a published schema with
unknown keys rejected; every output embeds (directly or through its JSON
sidecar) the exact configuration and master seed that regenerate it.

Exit codes: 0 ok, 1 config error, 2 numerical failure, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np
import jsonschema

from .errors import ConfigError, SpikelabError
from .spectra import check_assumptions, make_covariance
from .spikes import (
    SignalModel,
    asymptotic_quantities,
    deform,
    delocalization_profile,
)
from .ensemble import (
    SpikeMCConfig,
    make_noise_law,
    mixture_signal,
    run_spike_mc,
    stream,
)
from .hetero import (
    CriticalValues,
    calibrate,
    default_grid,
    detect,
    ds_rs_stats,
    run_power_experiment,
    run_size_experiment,
    top_eigs,
)
from .verification import run_verification

# -- config schemas -------------------------------------------------------

_COVARIANCE_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"recipe": {"const": "identity"},
                        "dim": {"type": "integer", "minimum": 1}},
         "required": ["recipe", "dim"], "additionalProperties": False},
        {"properties": {"recipe": {"const": "diagonal"},
                        "dim": {"type": "integer", "minimum": 1},
                        "entries": {"type": "array", "items": {"type": "number"}}},
         "required": ["recipe", "dim", "entries"], "additionalProperties": False},
        {"properties": {"recipe": {"const": "toeplitz"},
                        "dim": {"type": "integer", "minimum": 1},
                        "rho": {"type": "number"}},
         "required": ["recipe", "dim", "rho"], "additionalProperties": False},
        {"properties": {"recipe": {"const": "haar"},
                        "dim": {"type": "integer", "minimum": 1},
                        "bounds": {"type": "array", "items": {"type": "number"},
                                   "minItems": 2, "maxItems": 2},
                        "seed": {"type": "integer"}},
         "required": ["recipe", "dim", "bounds", "seed"],
         "additionalProperties": False},
        {"properties": {"recipe": {"const": "dense"},
                        "dim": {"type": "integer", "minimum": 1},
                        "matrix": {"type": "array"}},
         "required": ["recipe", "dim", "matrix"], "additionalProperties": False},
    ],
}

_SIGNAL_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "localized"},
                        "strength_sq": {"type": "number", "exclusiveMinimum": 0},
                        "row": {"type": "integer", "minimum": 0},
                        "col": {"type": "integer", "minimum": 0}},
         "required": ["kind", "strength_sq"], "additionalProperties": False},
        {"properties": {"kind": {"const": "random-svd"},
                        "strengths": {"type": "array",
                                      "items": {"type": "number"}, "minItems": 1},
                        "seed": {"type": "integer"}},
         "required": ["kind", "strengths", "seed"], "additionalProperties": False},
        {"properties": {"kind": {"const": "mixture"},
                        "clusters": {"type": "integer", "minimum": 2, "maximum": 4},
                        "seed": {"type": "integer"},
                        "scale": {"type": "number"}},
         "required": ["kind", "clusters", "seed"], "additionalProperties": False},
        {"properties": {"kind": {"const": "mixture-explicit"},
                        "centers": {"type": "array"},
                        "assignment": {"type": "string"}},
         "required": ["kind", "centers"], "additionalProperties": False},
    ],
}

_NOISE_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"enum": ["gaussian", "uniform-sym", "three-point",
                                          "four-point", "shifted-exponential"]}},
         "required": ["kind"], "additionalProperties": False},
        {"properties": {"kind": {"const": "discrete"},
                        "atoms": {"type": "array", "items": {"type": "number"}},
                        "probs": {"type": "array", "items": {"type": "number"}}},
         "required": ["kind", "atoms", "probs"], "additionalProperties": False},
    ],
}

_CALIBRATION_SCHEMA = {
    "type": "object",
    "properties": {
        "k_star": {"type": "integer", "minimum": 2},
        "n_star": {"type": "integer", "minimum": 10},
        "reps": {"type": "integer", "minimum": 100},
        "quantile": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "master_seed": {"type": "integer"},
    },
    "required": ["k_star", "n_star", "reps"],
    "additionalProperties": False,
}

_COMMON = {
    "master_seed": {"type": "integer", "minimum": 0},
    "precision": {"type": "integer", "minimum": 1, "maximum": 17},
    "threads": {"type": "integer", "minimum": 1},
}

CONFIG_SCHEMAS = {
    "theory": {
        "type": "object",
        "properties": {
            "covariance": _COVARIANCE_SCHEMA,
            "signal": _SIGNAL_SCHEMA,
            "noise": _NOISE_SCHEMA,
            "samples": {"type": "integer", "minimum": 1},
            "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            **_COMMON,
        },
        "required": ["covariance", "signal", "samples"],
        "additionalProperties": False,
    },
    "simulate": {
        "type": "object",
        "properties": {
            "covariance": _COVARIANCE_SCHEMA,
            "signal": _SIGNAL_SCHEMA,
            "noise": _NOISE_SCHEMA,
            "samples": {"type": "integer", "minimum": 1},
            "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "reps": {"type": "integer", "minimum": 1},
            "model": {"enum": ["additive", "multiplicative"]},
            "couple_theta": {"type": "boolean"},
            "n_top": {"type": "integer", "minimum": 1},
            **_COMMON,
        },
        "required": ["covariance", "signal", "samples", "reps"],
        "additionalProperties": False,
    },
    "nonuniversality": {
        "type": "object",
        "properties": {
            "dim": {"type": "integer", "minimum": 1},
            "samples": {"type": "integer", "minimum": 1},
            "strength_sq": {"type": "number", "exclusiveMinimum": 0},
            "laws": {"type": "array", "items": {"type": "string"}, "minItems": 2},
            "reps": {"type": "integer", "minimum": 2},
            **_COMMON,
        },
        "additionalProperties": False,
    },
    "calibrate": _CALIBRATION_SCHEMA,
    "test": {
        "type": "object",
        "properties": {
            "k_star": {"type": "integer", "minimum": 2},
            "critical_values": {
                "type": "object",
                "properties": {"cv_ds": {"type": "number"},
                               "cv_rs": {"type": "number"}},
                "required": ["cv_ds", "cv_rs"],
                "additionalProperties": False,
            },
            "calibration": _CALIBRATION_SCHEMA,
            "data_csv": {"type": "string"},
            "generate": {
                "type": "object",
                "properties": {
                    "covariance": _COVARIANCE_SCHEMA,
                    "noise": _NOISE_SCHEMA,
                    "samples": {"type": "integer", "minimum": 1},
                    "clusters": {"type": "integer", "minimum": 0, "maximum": 4},
                    "center_scale": {"type": "number"},
                },
                "required": ["covariance", "samples"],
                "additionalProperties": False,
            },
            "center": {"type": "boolean"},
            **_COMMON,
        },
        "required": ["k_star"],
        "additionalProperties": False,
    },
    "reproduce": {
        "type": "object",
        "properties": {
            "target": {"enum": ["table1", "table2", "table3", "table4",
                                "figure1", "figure2"]},
            "scale": {"type": "number", "exclusiveMinimum": 0},
            "calibration": _CALIBRATION_SCHEMA,
            **_COMMON,
        },
        "required": ["target"],
        "additionalProperties": False,
    },
    "verify": {
        "type": "object",
        "properties": {
            "samples": {"type": "integer", "minimum": 50},
            "seeds": {"type": "integer", "minimum": 2},
            **_COMMON,
        },
        "additionalProperties": False,
    },
}

_BASE_REPS = {"table1": 10000, "table2": 10000, "table3": 10000,
              "table4": 10000, "figure1": 5000, "figure2": 5000}
_DEFAULT_CALIBRATION = {"k_star": 4, "n_star": 100, "reps": 30000,
                        "quantile": 0.95, "master_seed": 0}


class VerificationFailure(SpikelabError):
    pass


def load_config(path: str | None, command: str, overrides: dict) -> dict:
    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"malformed JSON in {path}: line {exc.lineno} column {exc.colno}: "
                f"{exc.msg}"
            ) from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {loc}: {exc.message}") from exc
    return cfg


def build_covariance(spec: dict):
    params = {k: v for k, v in spec.items() if k not in ("recipe", "dim", "seed")}
    return make_covariance(spec["recipe"], spec["dim"], seed=spec.get("seed"),
                           **params)


def build_signal(spec: dict, m_dim: int, n_dim: int) -> SignalModel:
    kind = spec["kind"]
    if kind == "localized":
        return SignalModel.localized(math.sqrt(spec["strength_sq"]), m_dim, n_dim,
                                     row=spec.get("row", 0), col=spec.get("col", 0))
    if kind == "random-svd":
        rng = stream(spec["seed"], 0)
        k = len(spec["strengths"])
        left = np.linalg.qr(rng.standard_normal((m_dim, k)))[0]
        right = np.linalg.qr(rng.standard_normal((n_dim, k)))[0]
        return SignalModel.from_factors(left, spec["strengths"], right)
    if kind == "mixture":
        from .hetero import _draw_centers
        rng = stream(spec["seed"], 0)
        centers = _draw_centers(spec["clusters"], m_dim, rng,
                                spec.get("scale", 1.0)) * math.sqrt(n_dim)
        sig, _counts = mixture_signal(centers, "equal", n_dim)
        return sig
    if kind == "mixture-explicit":
        centers = np.asarray(spec["centers"], dtype=float)
        sig, _counts = mixture_signal(centers, spec.get("assignment", "equal"),
                                      n_dim)
        return sig
    raise ConfigError(f"unknown signal kind {kind!r}")


def build_noise(spec: dict | None):
    if spec is None:
        return make_noise_law("gaussian")
    return make_noise_law(spec["kind"], atoms=spec.get("atoms"),
                          probs=spec.get("probs"))


class OutputSession:
    """Tracks files written by one command; removes partial outputs on failure."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.paths: list[str] = []

    def path(self, name: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        p = os.path.join(self.out_dir, name)
        self.paths.append(p)
        return p

    def write_json(self, name: str, payload: dict) -> str:
        p = self.path(name)
        with open(p, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p

    def cleanup(self):
        for p in self.paths:
            try:
                os.remove(p)
            except OSError:
                pass


def _fmt(x, sig: int) -> str:
    return format(float(x), f".{sig}g")


def _jsonable(x, sig=None):
    if isinstance(x, dict):
        return {k: _jsonable(v, sig) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v, sig) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist(), sig)
    if isinstance(x, (np.floating, float)):
        return float(_fmt(x, sig)) if sig else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _meta(cfg: dict, t0: float) -> dict:
    from . import __version__
    return {"config": cfg, "version": __version__,
            "wall_time_s": round(time.time() - t0, 3)}


# -- subcommand handlers --------------------------------------------------


def cmd_theory(args) -> int:
    cfg = load_config(args.config, "theory",
                      {"master_seed": args.seed, "threads": args.threads})
    t0 = time.time()
    sigma = build_covariance(cfg["covariance"])
    n_dim = cfg["samples"]
    signal = build_signal(cfg["signal"], sigma.dim, n_dim)
    law = build_noise(cfg.get("noise"))
    tau = cfg.get("tau", 0.01)
    sig_digits = cfg.get("precision", 10)

    pop = deform(sigma, signal, tau)
    assumptions = check_assumptions(sigma, n_dim, tau)
    report = {
        "phi": pop.phi,
        "edge": {
            "w_plus": pop.edge.w_plus,
            "lambda_plus": pop.edge.lambda_plus,
            "f_second_at_w_plus": pop.edge.f_second_at_w_plus,
            "sigma_tw": pop.edge.sigma_tw,
        },
        "threshold": pop.threshold,
        "sigma_tilde": pop.sigma_tilde,
        "K0": pop.K0,
        "warnings": list(pop.warnings),
        "assumptions": {
            "all_ok": assumptions.all_ok,
            "aspect_ratio": vars(assumptions.aspect_ratio),
            "norm_bound": vars(assumptions.norm_bound),
            "low_mass": vars(assumptions.low_mass),
            "edge_regularity": vars(assumptions.edge_regularity),
        },
        "noise": {"kind": law.kind, "kappa3": law.kappa3, "kappa4": law.kappa4},
    }
    if pop.K0 >= 1:
        theory = asymptotic_quantities(sigma, signal, pop, law, n_dim)
        profile = delocalization_profile(theory)
        report.update({
            "theta": theory.theta,
            "theta_prime": theory.theta_prime,
            "spike_bias": theory.spike_bias,
            "gauss_cov": theory.gauss_cov,
            "gauss_cov_base": theory.gauss_cov_base,
            "gauss_cov_kurtosis": theory.gauss_cov_kurtosis,
            "cross_cov": theory.cross_cov,
            "delocalization": {
                "sqrt_sigma_psi_sup": profile[:, 0],
                "s_top_psi_sup": profile[:, 1],
            },
        })
    session = OutputSession(args.out)
    try:
        payload = {"report": _jsonable(report, sig_digits), "meta": _meta(cfg, t0)}
        p = session.write_json("theory_report.json", payload)
    except Exception:
        session.cleanup()
        raise
    print(p)
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, "simulate",
                      {"master_seed": args.seed, "reps": args.reps,
                       "threads": args.threads})
    t0 = time.time()
    sigma = build_covariance(cfg["covariance"])
    n_dim = cfg["samples"]
    signal = build_signal(cfg["signal"], sigma.dim, n_dim)
    law = build_noise(cfg.get("noise"))
    mc = SpikeMCConfig(
        sigma=sigma, signal=signal, law=law, reps=cfg["reps"],
        master_seed=cfg.get("master_seed", 0),
        model=cfg.get("model", "additive"),
        couple_theta=cfg.get("couple_theta", False),
        n_top=cfg.get("n_top"), tau=cfg.get("tau", 0.01),
        workers=cfg.get("threads"),
    )
    samples = run_spike_mc(mc)
    session = OutputSession(args.out)
    try:
        csv_path = session.path("spike_samples.csv")
        samples.to_csv(csv_path, precision=cfg.get("precision", 10))
        meta = _meta(cfg, t0)
        meta["theta"] = _jsonable(samples.theory.theta) if samples.theory else None
        meta["K0"] = int(samples.fluctuations.shape[1])
        session.write_json("spike_samples.meta.json", meta)
    except Exception:
        session.cleanup()
        raise
    print(csv_path)
    return 0


def _freedman_diaconis_edges(values: np.ndarray) -> np.ndarray:
    q75, q25 = np.percentile(values, [75, 25])
    span = float(np.ptp(values))
    width = 2.0 * (q75 - q25) / len(values) ** (1.0 / 3.0)
    if width <= 0:
        width = max(span, 1.0) / 10.0
    nbins = max(int(math.ceil(span / width)), 1)
    return np.linspace(values.min(), values.max(), nbins + 1)


def _ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    from scipy.stats import ks_2samp
    return float(ks_2samp(a, b).statistic)


def cmd_nonuniversality(args) -> int:
    cfg = load_config(args.config, "nonuniversality",
                      {"master_seed": args.seed, "reps": args.reps,
                       "threads": args.threads})
    t0 = time.time()
    m_dim = cfg.get("dim", 200)
    n_dim = cfg.get("samples", 400)
    laws = cfg.get("laws", ["gaussian", "three-point", "four-point"])
    reps = cfg.get("reps", 2000)
    seed = cfg.get("master_seed", 0)
    sig_digits = cfg.get("precision", 10)

    sigma = build_covariance({"recipe": "identity", "dim": m_dim})
    signal = SignalModel.localized(math.sqrt(cfg.get("strength_sq", 5.25)),
                                  m_dim, n_dim)
    results = {}
    for li, law_kind in enumerate(laws):
        for mi, model in enumerate(("additive", "multiplicative")):
            mc = SpikeMCConfig(sigma=sigma, signal=signal,
                               law=make_noise_law(law_kind), reps=reps,
                               master_seed=seed + 1000 * li + 100 * mi,
                               model=model, workers=cfg.get("threads"))
            results[(law_kind, model)] = run_spike_mc(mc).lambdas[:, 0]

    session = OutputSession(args.out)
    try:
        hist_path = session.path("nonuniversality_hist.csv")
        with open(hist_path, "w") as fh:
            fh.write("law,model,bin_left,bin_right,count\n")
            for (law_kind, model), lam in sorted(results.items()):
                edges = _freedman_diaconis_edges(lam)
                counts, edges = np.histogram(lam, bins=edges)
                for i, c in enumerate(counts):
                    fh.write(f"{law_kind},{model},{_fmt(edges[i], sig_digits)},"
                             f"{_fmt(edges[i + 1], sig_digits)},{int(c)}\n")
        ks = {}
        for model in ("additive", "multiplicative"):
            pair_ks = {}
            for i, la in enumerate(laws):
                for lb in laws[i + 1:]:
                    pair_ks[f"{la}|{lb}"] = _ks_distance(
                        results[(la, model)], results[(lb, model)]
                    )
            ks[model] = pair_ks
        session.write_json("nonuniversality_ks.json",
                           {"ks": _jsonable(ks, sig_digits),
                            "meta": _meta(cfg, t0)})
    except Exception:
        session.cleanup()
        raise
    print(hist_path)
    return 0


def cmd_calibrate(args) -> int:
    overrides = {"master_seed": args.seed, "reps": args.reps,
                 "k_star": args.kstar, "n_star": args.nstar,
                 "quantile": args.quantile, "threads": args.threads}
    cfg = load_config(args.config, "calibrate", overrides)
    t0 = time.time()
    cv = calibrate(cfg["k_star"], cfg["n_star"], cfg["reps"],
                   cfg.get("quantile", 0.95), cfg.get("master_seed", 0),
                   workers=cfg.get("threads"))
    session = OutputSession(args.out)
    try:
        p = session.write_json("critical_values.json",
                               {"critical_values": _jsonable(vars(cv)),
                                "meta": _meta(cfg, t0)})
    except Exception:
        session.cleanup()
        raise
    print(p)
    print(f"cv_DS={cv.cv_ds:.6g} cv_RS={cv.cv_rs:.6g}")
    return 0


def _critical_values_from_cfg(cfg: dict, threads=None) -> CriticalValues:
    if "critical_values" in cfg:
        cvs = cfg["critical_values"]
        return CriticalValues(k_star=cfg["k_star"], n_star=0, reps=0,
                              quantile=0.95, cv_ds=cvs["cv_ds"],
                              cv_rs=cvs["cv_rs"], master_seed=0)
    cal = {**_DEFAULT_CALIBRATION, **cfg.get("calibration", {})}
    k_star = cfg.get("k_star", cal["k_star"])
    return calibrate(k_star, cal["n_star"], cal["reps"],
                     cal["quantile"], cal["master_seed"], workers=threads)


def cmd_test(args) -> int:
    cfg = load_config(args.config, "test",
                      {"master_seed": args.seed, "threads": args.threads})
    t0 = time.time()
    cv = _critical_values_from_cfg(cfg, cfg.get("threads"))
    if "data_csv" in cfg:
        data = np.loadtxt(cfg["data_csv"], delimiter=",", ndmin=2)
    elif "generate" in cfg:
        gen = cfg["generate"]
        sigma = build_covariance(gen["covariance"])
        law = build_noise(gen.get("noise"))
        n_dim = gen["samples"]
        rng = stream(cfg.get("master_seed", 0), 0)
        data = sigma.sqrt_matmat(law.sample(rng, (sigma.dim, n_dim)))
        if gen.get("clusters", 0) >= 2:
            from .hetero import _draw_centers
            from .ensemble import equal_split_labels
            centers = _draw_centers(gen["clusters"], sigma.dim, rng,
                                    gen.get("center_scale", 1.0))
            data = data + centers[:, equal_split_labels(n_dim, gen["clusters"])]
    else:
        raise ConfigError("test needs either data_csv or generate")
    result = detect(data, cfg["k_star"], cv, center=cfg.get("center", False))
    session = OutputSession(args.out)
    try:
        p = session.write_json("detection.json", {
            "decision": _jsonable(vars(result)),
            "critical_values": _jsonable(vars(cv)),
            "meta": _meta(cfg, t0),
        })
    except Exception:
        session.cleanup()
        raise
    print(p)
    print(f"DS={result.ds:.6g} (reject={result.reject_ds}) "
          f"RS={result.rs:.6g} (reject={result.reject_rs})")
    return 0


def _write_table(session, name, report, cfg, t0, sig_digits):
    header, rows = report.to_rows()
    csv_path = session.path(f"{name}.csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                x if isinstance(x, str) else _fmt(x, sig_digits) for x in row
            ) + "\n")
    session.write_json(f"{name}.meta.json", {
        "meta": _meta(cfg, t0),
        "critical_values": _jsonable(vars(report.cv)),
        "reps": report.reps,
        "master_seed": report.master_seed,
        "cells": [c.label for c in report.cells],
    })
    return csv_path


def cmd_reproduce(args) -> int:
    cfg = load_config(args.config, "reproduce",
                      {"master_seed": args.seed, "threads": args.threads,
                       "scale": args.scale,
                       "target": _target_from_flags(args)})
    t0 = time.time()
    target = cfg["target"]
    scale = cfg.get("scale", 1.0)
    seed = cfg.get("master_seed", 0)
    threads = cfg.get("threads")
    sig_digits = cfg.get("precision", 10)
    reps = max(int(round(_BASE_REPS[target] * scale)), 1)
    session = OutputSession(args.out)
    try:
        if target.startswith("table"):
            cv = _critical_values_from_cfg(cfg, threads)
            grid = default_grid()
            if target == "table1":
                report = run_size_experiment(grid, reps, cv, seed, threads)
            else:
                clusters = {"table2": 2, "table3": 3, "table4": 4}[target]
                report = run_power_experiment(clusters, grid, reps, cv, seed,
                                              threads)
            path = _write_table(session, target, report, cfg, t0, sig_digits)
        elif target == "figure1":
            args.reps = reps
            args.config = None
            args.seed = seed
            return cmd_nonuniversality(args)
        else:  # figure2
            path = _figure2(session, reps, seed, cfg, t0, sig_digits)
    except Exception:
        session.cleanup()
        raise
    print(path)
    return 0


def _figure2(session, reps, seed, cfg, t0, sig_digits):
    """Null/alternative DS and RS samples for M in {100, 200, 400}, N = 2M."""
    k_star = 4
    rows = []
    for mi, m_dim in enumerate((100, 200, 400)):
        n_dim = 2 * m_dim
        for hi, hypothesis in enumerate(("null", "alt")):
            def one(rep, _m=m_dim, _n=n_dim, _h=hypothesis, _mi=mi, _hi=hi):
                rng = stream(seed, _mi, _hi, rep)
                data = rng.standard_normal((_m, _n))
                if _h == "alt":
                    c1 = np.zeros(_m)
                    c1[0] = 1.5
                    from .ensemble import equal_split_labels
                    centers = np.column_stack([c1, -c1])
                    data = data + centers[:, equal_split_labels(_n, 2)]
                eigs = top_eigs(data / math.sqrt(_n), 2 * k_star - 1)
                return ds_rs_stats(eigs, k_star)
            from .ensemble import parallel_map
            stats = parallel_map(one, range(reps), cfg.get("threads"))
            for stat_idx, stat_name in ((0, "DS"), (1, "RS")):
                vals = np.array([s[stat_idx] for s in stats])
                edges = _freedman_diaconis_edges(vals)
                counts, edges = np.histogram(vals, bins=edges)
                for i, c in enumerate(counts):
                    rows.append((m_dim, hypothesis, stat_name,
                                 _fmt(edges[i], sig_digits),
                                 _fmt(edges[i + 1], sig_digits), int(c)))
    csv_path = session.path("figure2_hist.csv")
    with open(csv_path, "w") as fh:
        fh.write("dim,hypothesis,statistic,bin_left,bin_right,count\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
    session.write_json("figure2.meta.json", {"meta": _meta(cfg, t0),
                                             "reps": reps,
                                             "master_seed": seed})
    return csv_path


def _target_from_flags(args) -> str | None:
    if getattr(args, "table", None) is not None:
        return f"table{args.table}"
    if getattr(args, "figure", None) is not None:
        return f"figure{args.figure}"
    return None


def cmd_verify(args) -> int:
    cfg = load_config(args.config, "verify",
                      {"master_seed": args.seed, "threads": args.threads,
                       "samples": args.n, "seeds": args.seeds})
    t0 = time.time()
    report = run_verification(
        n_small=cfg.get("samples", 200), seeds=cfg.get("seeds", 50),
        master_seed=cfg.get("master_seed", 0), workers=cfg.get("threads"),
    )
    session = OutputSession(args.out)
    payload = report.to_jsonable()
    payload["meta"] = _meta(cfg, t0)
    p = session.write_json("verification.json", payload)
    print(p)
    for name, chk in report.checks.items():
        print(f"{'PASS' if chk['passed'] else 'FAIL'} {name}")
    if not report.all_passed:
        raise VerificationFailure("one or more verification checks failed")
    return 0


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikelab",
        description="Spectral theory and Monte-Carlo validation for spiked "
                    "signal-plus-noise matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--reps", type=int, help="replications (overrides config)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads")

    p = sub.add_parser("theory", help="deterministic spike theory report")
    common(p)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="seeded spike Monte Carlo to CSV")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("nonuniversality",
                       help="additive vs multiplicative spike histograms per law")
    common(p)
    p.set_defaults(func=cmd_nonuniversality)

    p = sub.add_parser("calibrate", help="critical values via null Monte Carlo")
    common(p)
    p.add_argument("--kstar", type=int, help="cluster-count bound K*")
    p.add_argument("--nstar", type=int, help="null ensemble dimension")
    p.add_argument("--quantile", type=float, help="quantile level (default 0.95)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("test", help="run the heterogeneity test on data")
    common(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("reproduce", help="regenerate published tables/figures")
    common(p)
    p.add_argument("--table", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--figure", type=int, choices=(1, 2))
    p.add_argument("--scale", type=float,
                   help="replication scale factor (1.0 = published count)")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("verify", help="run the local-law verification battery")
    common(p)
    p.add_argument("--n", type=int, help="small size N (protocol compares N, 4N)")
    p.add_argument("--seeds", type=int, help="seeds per size")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 3
    except SpikelabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
