"""Command-line interface: ``laplacecert <subcommand> [--config ...]``.

Exit codes: 0 when every point is certified and verified, 1 when some
certificate condition fails or an oracle contradicts a bound, 2 on
configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .certificate import certify
from .experiments import point_seed
from .gausscmp import (
    GaussPair,
    bg_tv_bound,
    elliptic_comparison,
    gauss_kl,
    inexact_laplace_bound,
    pinsker_tv,
    tv_gauss_1d,
)
from .io import ConfigError, dumps, load_config, write_json
from .penalty import tune_window
from .solver import fit_pmle
from .tails import (
    QFSpec,
    bernoulli_sum_bound,
    bernoulli_vector_bound,
    chi2_survival,
    exp_tail_qf,
    gauss_qf_tail,
    mc_exceedance,
)

__all__ = ["main", "build_parser", "run_tails", "run_compare", "run_tune"]

EXIT_OK, EXIT_SOFT, EXIT_ERROR = 0, 1, 2
LAPLACE_NOISE_MAX_G = 1.78


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=_positive_int, help="worker threads for sweep points")

    parser = argparse.ArgumentParser(prog="laplacecert", description="Laplace approximation certificates.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="penalized MLE fits")
    sub.add_parser("certify", parents=[common], help="fits and certificates")
    verify = sub.add_parser("verify", parents=[common], help="certificates checked against the posterior oracle")
    verify.add_argument("--artifact", help="report JSON from an earlier fit or certify run")
    sub.add_parser("sweep", parents=[common], help="verify over the sweep grid and write the phase diagram")

    tails = sub.add_parser("tails", parents=[common], help="tail bounds against exact values and Monte Carlo")
    tails.add_argument("--family", choices=["chi2", "gauss-qf", "exp-qf", "bernoulli-sum", "bernoulli-vector"])
    tails.add_argument("--x", type=float, action="append", help="confidence level (repeatable)")
    tails.add_argument("--p", type=_positive_int, help="dimension for chi2 and bernoulli-vector")
    tails.add_argument("--g", type=float, help="exponential moment range for exp-qf")
    tails.add_argument("--eigenvalues", type=float, nargs="+", help="spectrum of B for gauss-qf and exp-qf")
    tails.add_argument("--n-mc", type=_positive_int, help="Monte-Carlo draws per x")

    compare = sub.add_parser("compare", parents=[common], help="Gaussian comparison bounds")
    compare.add_argument("--pair", help="JSON with mean1, prec1, mean2, prec2 and optional Q, constant")
    compare.add_argument("--certificate", action="store_true",
                         help="certify the configured model and compare its Laplace Gaussian with mean2/prec2")

    tune = sub.add_parser("tune", parents=[common], help="smoothness-prior window for a given n")
    tune.add_argument("--n", type=float)
    tune.add_argument("--s", type=float)
    tune.add_argument("--s0", type=float)
    tune.add_argument("--C0", type=float)
    return parser


def _config(args, extra: dict | None = None, raw: dict | None = None) -> dict:
    overrides = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["output.dir"] = args.out
    return load_config(args.config, overrides, raw=raw)


def _emit(obj, out_dir: str, name: str) -> str:
    path = Path(out_dir) / name
    write_json(path, obj)
    return str(path)


# ---------------------------------------------------------------------------
# pipeline subcommands
# ---------------------------------------------------------------------------


def _artifact_config(path: str, args, extra: dict) -> tuple[dict, dict]:
    try:
        artifact = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read artifact {path}: {exc}") from exc
    if not isinstance(artifact, dict) or "config" not in artifact or "points" not in artifact:
        raise ConfigError("artifact must be a report JSON with 'config' and 'points'")
    if not isinstance(artifact["config"], dict):
        raise ConfigError("artifact 'config' must be an object")
    args.config = None
    cfg = _config(args, extra, raw=artifact["config"])
    return cfg, artifact


def _check_artifact(report: dict, artifact: dict) -> None:
    """Mark points whose refit differs from the artifact's stored fit."""
    stored = {p["index"]: p for p in artifact["points"]}
    for rec in report["points"]:
        old = stored.get(rec["index"], {}).get("fit")
        new = rec.get("fit")
        if not old or not new:
            continue
        same = np.allclose(np.asarray(old["upsilon_hat"], dtype=float), np.asarray(new["upsilon_hat"], dtype=float),
                           rtol=1e-10, atol=1e-12)
        rec["artifact_fit_matches"] = bool(same)
        if not same and rec["status"] != "error":
            rec["status"] = "error"
            rec["error"] = "refit does not reproduce the artifact's fit"


def run_stage(args, stage: str) -> int:
    artifact = None
    if getattr(args, "artifact", None):
        cfg, artifact = _artifact_config(args.artifact, args, {})
    else:
        cfg = _config(args)
    report = pipeline.run_pipeline(cfg, stage="verify" if stage == "sweep" else stage)
    if artifact is not None:
        _check_artifact(report, artifact)
    paths = pipeline.write_outputs(report, cfg["output"]["dir"], cfg)
    code = pipeline.exit_code(report)
    print(json.dumps({"status_counts": report["status_counts"], "outputs": paths, "exit_code": code},
                     sort_keys=True))
    for rec in report["points"]:
        if rec["status"] == "error":
            print(f"point {rec['index']}: {rec['error']}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# tails
# ---------------------------------------------------------------------------


def _qf_draw(eigenvalues: np.ndarray, noise: str):
    lam = np.asarray(eigenvalues, dtype=float)

    def draw(rng, size):
        if noise == "laplace":
            xi = rng.laplace(0.0, 0.5, size=(size, lam.size))
        else:
            xi = rng.standard_normal((size, lam.size))
        return (xi * xi) @ lam

    return draw


def run_tails(cfg: dict) -> list[dict]:
    """One row per x: bound, exact value when known, one-sided MC check."""
    tc = cfg["tails"]
    family = tc["family"]
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0x7A11]))
    rows = []
    for i, x in enumerate(tc["x"]):
        seed = point_seed(cfg["seed"], i)
        exact = None
        skipped = None
        if family in ("chi2", "gauss-qf"):
            spec = QFSpec.chi2(int(tc["p"])) if family == "chi2" else QFSpec.from_eigenvalues(tc["eigenvalues"])
            tb = gauss_qf_tail(spec, x)
            if family == "chi2":
                exact = chi2_survival(spec.p, tb.threshold)
            draw = _qf_draw(np.asarray(spec.eigenvalues, dtype=float), "gauss")
        elif family == "exp-qf":
            g = math.inf if tc["g"] is None else float(tc["g"])
            eig = tc["eigenvalues"] if tc["eigenvalues"] is not None else [1.0] * int(tc["p"])
            spec = QFSpec.from_eigenvalues(eig, g=g)
            tb = exp_tail_qf(spec, x)
            draw = _qf_draw(np.asarray(spec.eigenvalues, dtype=float), "laplace" if g <= LAPLACE_NOISE_MAX_G else "gauss")
        elif family == "bernoulli-sum":
            n = int(tc["n"])
            w = np.asarray(tc["weights"], dtype=float) if tc["weights"] is not None else rng.uniform(-1, 1, n)
            th = np.asarray(tc["theta"], dtype=float) if tc["theta"] is not None else rng.uniform(0.05, 0.95, w.size)
            tb = bernoulli_sum_bound(w, th, x)
            mean = float(w @ th)

            def draw(r, size, w=w, th=th, mean=mean):
                return np.abs((r.random((size, th.size)) < th) @ w - mean)
        else:
            n, p = int(tc["n"]), int(tc["p"])
            Psi = rng.uniform(-1, 1, (p, n))
            th = np.asarray(tc["theta"], dtype=float) if tc["theta"] is not None else rng.uniform(0.05, 0.95, n)
            H2 = (Psi * (th * (1 - th))[None, :]) @ Psi.T
            tb = bernoulli_vector_bound(Psi, th, H2, x)
            w_, U = np.linalg.eigh(H2)
            H_inv = (U / np.sqrt(w_)) @ U.T
            A = H_inv @ Psi

            def draw(r, size, A=A, th=th):
                Y = (r.random((size, th.size)) < th) - th
                return np.linalg.norm(Y @ A.T, axis=1)
        if not tb.guard_ok:
            skipped = "guard fails; bound not asserted"
        width = int(tc["n"]) if family.startswith("bernoulli") else len(tc["eigenvalues"] or [0] * int(tc["p"]))
        mc = mc_exceedance(draw, tb.threshold, int(tc["n_mc"]), seed, chunk=max(1000, min(200_000, 4_000_000 // width)))
        sound = exact is None or exact <= tb.probability_bound
        valid = None if skipped else bool(mc.ci_high <= tb.probability_bound and sound)
        rows.append({
            "family": family, "x": float(x), "threshold": tb.threshold, "bound": tb.probability_bound,
            "regime": tb.regime, "exact": exact, "mc_estimate": mc.estimate, "ci_upper": mc.ci_high,
            "ci_lower": mc.ci_low, "n_mc": mc.total, "guard_ok": tb.guard_ok, "valid": valid, "skipped": skipped,
        })
    return rows


# ---------------------------------------------------------------------------
# compare and tune
# ---------------------------------------------------------------------------


def _pair_block(cfg: dict, pair_path: str | None) -> dict:
    block = dict(cfg["compare"])
    if pair_path:
        try:
            given = json.loads(Path(pair_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read pair file {pair_path}: {exc}") from exc
        for key, value in given.items():
            if key not in block:
                raise ConfigError(f"unknown pair key '{key}'")
            block[key] = value
    return block


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = np.diag(arr)
    return arr


def run_compare(cfg: dict, pair_path: str | None = None, with_certificate: bool = False) -> dict:
    block = _pair_block(cfg, pair_path)
    C = float(block["constant"])
    cert = None
    if with_certificate:
        point = pipeline.sweep_points(cfg)[0]
        model = pipeline.build_model_from_config(cfg["model"], point["n"], point["p"], point["seed"])
        penalty = pipeline.build_penalty_from_config(cfg["penalty"], model.dim)
        fit = fit_pmle(model, penalty)
        cc = cfg["certificate"]
        cert = certify(fit, model, x=cc["x"], nu=cc["nu"], route=cc["route"], omega_source=cc["omega_source"],
                       mean_constant=cc["mean_constant"])
        block["mean1"], block["prec1"] = fit.mode_reduced, fit.DG2
    for key in ("mean1", "prec1", "mean2", "prec2"):
        if block[key] is None:
            raise ConfigError(f"configuration key 'compare.{key}' is required")
    pair = GaussPair(np.atleast_1d(np.asarray(block["mean1"], dtype=float)), _as_matrix(block["prec1"], "prec1"),
                     np.atleast_1d(np.asarray(block["mean2"], dtype=float)), _as_matrix(block["prec2"], "prec2"))
    Q = np.eye(pair.dim) if block["Q"] is None else np.atleast_2d(np.asarray(block["Q"], dtype=float))
    S1, S2 = Q @ pair.cov1() @ Q.T, Q @ pair.cov2() @ Q.T
    out = {
        "dim": pair.dim,
        "kl_1_2": gauss_kl(pair, "1||2"),
        "kl_2_1": gauss_kl(pair, "2||1"),
        "pinsker_tv": pinsker_tv(pair),
        "bg": bg_tv_bound(pair),
        "elliptic": elliptic_comparison(S1, S2, a=Q @ (pair.mean1 - pair.mean2), C=C),
    }
    if pair.dim == 1:
        out["exact_tv"] = tv_gauss_1d(float(pair.mean1[0]), float(math.sqrt(pair.cov1()[0, 0])),
                                      float(pair.mean2[0]), float(math.sqrt(pair.cov2()[0, 0])))
    if cert is not None:
        out["certificate"] = cert.to_dict()
        out["inexact_laplace"] = inexact_laplace_bound(cert, pair, Q=Q, C=C)
    return out


def run_tune(cfg: dict) -> dict:
    tc = cfg["tune"]
    for key in ("n", "s", "s0"):
        if tc[key] is None:
            raise ConfigError(f"configuration key 'tune.{key}' is required")
    w, m0 = tune_window(tc["n"], tc["s"], tc["s0"], tc["C0"])
    return {"n": tc["n"], "s": tc["s"], "s0": tc["s0"], "C0": tc["C0"], "w": w, "m0": m0}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _dispatch(args) -> int:
    if args.command in ("fit", "certify", "verify", "sweep"):
        return run_stage(args, args.command)
    if args.command == "tails":
        extra = {f"tails.{k}": v for k, v in (("family", args.family), ("x", args.x), ("p", args.p),
                                               ("g", args.g), ("eigenvalues", args.eigenvalues),
                                               ("n_mc", args.n_mc)) if v is not None}
        cfg = _config(args, extra)
        rows = run_tails(cfg)
        path = _emit({"schema_version": 1, "rows": rows}, cfg["output"]["dir"], "tails.json")
        for row in rows:
            print(json.dumps({k: row[k] for k in ("family", "x", "threshold", "bound", "mc_estimate",
                                                  "ci_upper", "valid")}, sort_keys=True))
        print(f"wrote {path}", file=sys.stderr)
        return EXIT_SOFT if any(r["valid"] is False for r in rows) else EXIT_OK
    if args.command == "compare":
        cfg = _config(args)
        result = run_compare(cfg, args.pair, args.certificate)
        _emit(result, cfg["output"]["dir"], "compare.json")
        sys.stdout.write(dumps(result))
        return EXIT_OK
    extra = {f"tune.{k}": v for k, v in (("n", args.n), ("s", args.s), ("s0", args.s0), ("C0", args.C0))
             if v is not None}
    cfg = _config(args, extra)
    result = run_tune(cfg)
    sys.stdout.write(dumps(result))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
