"""Fit, certify and verify pipelines over sweep points."""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .certificate import certify, critical_dimension_report
from .experiments import make_model, point_seed
from .io import SCHEMA_VERSION, read_data_csv, write_csv, write_json
from .model import LogDensityModel, LogisticModel
from .oracle import PosteriorOracle, concentration_frequency, empirical_tv, numeric_kl
from .penalty import PenaltySpec
from .solver import fisher_residual, fit_pmle, population_fit

__all__ = [
    "STAGES",
    "build_penalty_from_config",
    "build_model_from_config",
    "sweep_points",
    "run_point",
    "run_pipeline",
    "verdicts",
    "summary_rows",
    "emit_phase_diagram",
    "write_outputs",
    "exit_code",
    "PHASE_HEADER",
]

STAGES = ("fit", "certify", "verify")
PHASE_HEADER = ["n", "p", "p_eff", "critical_ratio", "classification", "empirical_tv", "certificate_bound"]
SUMMARY_BASE = [
    "index", "seed", "n", "p", "status", "p_eff", "r", "tau3", "omega", "classification",
    "tv_bound_borel", "tv_bound_symmetric", "kl_bound", "mean_bound", "empirical_tv",
    "empirical_tv_symmetric", "concentration_mass", "numeric_kl", "mean_mode_distance", "fisher_residual",
]


def build_penalty_from_config(block: dict, p: int):
    kind = block["kind"]
    if kind == "none":
        return None
    if kind == "ridge":
        value = block["value"]
        arr = np.full(p, float(value)) if not isinstance(value, list) else np.asarray(value, dtype=float)
        if arr.size != p:
            raise ValueError("penalty.value list length differs from p")
        return arr
    if kind == "smooth":
        return PenaltySpec.smooth(block["s"], block["w"], p)
    if kind == "truncation":
        return PenaltySpec.truncation(min(int(block["m"]), p), p)
    spec = PenaltySpec.explicit(block["g2"])
    if spec.p != p:
        raise ValueError("penalty.g2 length differs from p")
    return spec


def build_model_from_config(block: dict, n: int, p: int, seed: int):
    if block["data"]:
        data = read_data_csv(block["data"], block["kind"])
        if block["kind"] == "logistic":
            return LogisticModel(data["design"], data["labels"])
        return LogDensityModel(block["basis"], p, data["samples"])
    options: dict = {}
    if block["kind"] == "logistic":
        options = {"distribution": block["design"], "intercept": bool(block["intercept"])}
    elif block["kind"] == "logdensity":
        options = {"basis": block["basis"]}
    truth = block["truth"]
    if truth is not None and len(truth) != p:
        raise ValueError("model.truth length differs from p")
    return make_model(block["kind"], n, p, seed, truth, **options)


def sweep_points(cfg: dict) -> list[dict]:
    """Sweep grid in (n, p, replicate) order with per-point seeds."""
    ns = cfg["sweep"]["n"] or [cfg["model"]["n"]]
    ps = cfg["sweep"]["p"] or [cfg["model"]["p"]]
    points = []
    for n in ns:
        for p in ps:
            for rep in range(int(cfg["sweep"]["replicates"])):
                idx = len(points)
                points.append({"index": idx, "n": int(n), "p": int(p), "replicate": rep,
                               "seed": point_seed(cfg["seed"], idx)})
    return points


def verdicts(cert, oracle, fit) -> tuple[list[dict], dict]:
    """Compare the certificate with the oracle; returns (verdicts, measured values)."""
    out: list[dict] = []
    measured: dict = {}

    def add(name, bound, value, error):
        valid = None if bound is None or not math.isfinite(bound) else bool(value <= bound)
        out.append({"quantity": name, "certificate_bound": bound, "oracle_value": value, "oracle_error": error,
                    "margin": None if valid is None else bound - value, "valid": valid})

    mode = fit.mode_reduced
    if oracle.mode == "quadrature":
        tv, tv_s = empirical_tv(oracle, mode, fit.DG2)
        measured.update(empirical_tv=tv.value, empirical_tv_symmetric=tv_s.value)
        applies = cert.gaussian_valid or cert.condition("omega p <= 2/3").satisfied
        add("tv_borel", cert.tv_bound_borel if applies else None, tv.value, tv.error)
        add("tv_symmetric", cert.tv_bound_symmetric if applies else None, tv_s.value, tv_s.error)
        kl = numeric_kl(oracle, mode, fit.DG2, "forward")
        measured["numeric_kl"] = kl.value
        add("kl_forward", cert.kl_bound, kl.value, kl.error)
    conc = concentration_frequency(oracle, cert.ellipsoid())
    measured["concentration_mass"] = conc.value
    add("concentration", cert.concentration_bound if cert.concentration_valid else None, conc.value, conc.error)
    mean = oracle.mean()
    d = mean.value - mode
    dist = math.sqrt(max(float(d @ cert.D2 @ d), 0.0))
    measured["mean_mode_distance"] = dist
    add("mean_shift", cert.mean_shift_bound(), dist, mean.error)
    return out, measured


def run_point(cfg: dict, point: dict, stage: str = "verify") -> dict:
    """One sweep point; failures are recorded, never raised."""
    rec: dict = {"index": point["index"], "seed": point["seed"], "n": point["n"], "p": point["p"],
                 "replicate": point["replicate"]}
    try:
        model = build_model_from_config(cfg["model"], point["n"], point["p"], point["seed"])
        rec["n"], rec["p"] = int(model.n), int(model.dim)
        penalty = build_penalty_from_config(cfg["penalty"], model.dim)
        fit = fit_pmle(model, penalty)
        if model.has_truth:
            try:
                pop = population_fit(model, penalty)
                fit.population_counterpart = pop
                score = model.score()
                rec["fisher_residual"] = fisher_residual(fit, pop, score, model)
            except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
                rec["population_error"] = str(exc)
        rec["fit"] = {k: v for k, v in fit.to_dict().items() if k not in ("D2", "DG2")}
        rec["status"] = "ok"
        if stage == "fit":
            return rec
        cc = cfg["certificate"]
        cert = certify(fit, model, x=cc["x"], nu=cc["nu"], route=cc["route"], omega_source=cc["omega_source"],
                       mean_constant=cc["mean_constant"])
        rec["certificate"] = cert.to_dict()
        rec["critical_dimension"] = critical_dimension_report(cert)
        if not cert.all_conditions_hold:
            rec["status"] = "conditions-unmet"
        if stage == "certify":
            return rec
        vc = cfg["verification"]
        if vc["oracle"] != "none" and fit.retained.size <= (3 if vc["oracle"] == "quadrature" else 20):
            oracle = PosteriorOracle(fit, model, penalty, mode=vc["oracle"], step=vc["step"],
                                     half_width=vc["half_width"], n_draws=vc["n_draws"],
                                     inflation=vc["inflation"], seed=point["seed"])
            rec["oracle"] = dict(oracle.diagnostics)
            rec["verdicts"], measured = verdicts(cert, oracle, fit)
            rec.update(measured)
            if any(v["valid"] is False for v in rec["verdicts"]):
                rec["status"] = "violation"
        else:
            rec["verdicts"] = []
            rec["oracle"] = {"skipped": "oracle disabled or dimension too large"}
    except Exception as exc:  # recorded per point; the sweep continues
        rec["status"] = "error"
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def run_pipeline(cfg: dict, stage: str = "verify", threads: int | None = None) -> dict:
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    points = sweep_points(cfg)
    k = int(threads or cfg["threads"])
    if k > 1:
        with ThreadPoolExecutor(max_workers=k) as pool:
            results = list(pool.map(lambda pt: run_point(cfg, pt, stage), points))
    else:
        results = [run_point(cfg, pt, stage) for pt in points]
    counts: dict = {}
    for r in results:
        counts[r["status"]] = counts.get(r["status"], 0) + 1
    return {
        "schema_version": SCHEMA_VERSION,
        "stage": stage,
        "config": cfg,
        "points": results,
        "status_counts": counts,
    }


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def summary_rows(report: dict) -> tuple[list[str], list[dict]]:
    rows = []
    margin_cols: list[str] = []
    for rec in report["points"]:
        row = {k: rec.get(k) for k in ("index", "seed", "n", "p", "status", "empirical_tv",
                                        "empirical_tv_symmetric", "concentration_mass", "numeric_kl",
                                        "mean_mode_distance", "fisher_residual")}
        cert = rec.get("certificate")
        if cert:
            for k in ("p_eff", "r", "tau3", "omega", "classification", "tv_bound_borel", "tv_bound_symmetric",
                      "kl_bound", "mean_bound"):
                row[k] = cert[k]
            for c in cert["conditions"]:
                col = "margin_" + _slug(c["name"])
                if col not in margin_cols:
                    margin_cols.append(col)
                row[col] = c["margin"]
        rows.append(row)
    return SUMMARY_BASE + margin_cols, rows


def emit_phase_diagram(report: dict, path) -> list[dict]:
    """Phase-diagram CSV in sweep order; header only when nothing was certified."""
    rows = []
    for rec in report["points"]:
        cert = rec.get("certificate")
        if not cert:
            continue
        rows.append({"n": rec["n"], "p": rec["p"], "p_eff": cert["p_eff"], "critical_ratio": cert["critical_ratio"],
                     "classification": cert["classification"], "empirical_tv": rec.get("empirical_tv"),
                     "certificate_bound": cert["tv_bound_borel"]})
    write_csv(path, PHASE_HEADER, rows)
    return rows


def write_outputs(report: dict, out_dir, cfg: dict) -> dict:
    out = Path(out_dir)
    paths = {
        "report": out / cfg["output"]["report"],
        "summary": out / cfg["output"]["summary"],
        "phase": out / cfg["output"]["phase"],
    }
    write_json(paths["report"], report)
    header, rows = summary_rows(report)
    write_csv(paths["summary"], header, rows)
    emit_phase_diagram(report, paths["phase"])
    return {k: str(v) for k, v in paths.items()}


def exit_code(report: dict) -> int:
    statuses = {r["status"] for r in report["points"]}
    if "error" in statuses:
        return 2
    if statuses - {"ok"}:
        return 1
    return 0
