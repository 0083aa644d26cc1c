"""Acceptance suite: one PASS/FAIL line per criterion, printed even under output capture."""

import math
import time

import numpy as np
import pytest
from scipy.optimize import bisect
from scipy.special import expit

from laplacecert import pipeline
from laplacecert.cli import main
from laplacecert.experiments import make_logistic, point_seed
from laplacecert.gausscmp import GaussPair, bg_tv_bound, elliptic_comparison, pinsker_tv, tv_gauss_1d
from laplacecert.io import validate_config
from laplacecert.model import LogisticModel, phi_derivatives
from laplacecert.oracle import PosteriorOracle
from laplacecert.penalty import PenaltySpec, effective_dims
from laplacecert.solver import fisher_residual, fit_pmle, population_fit
from laplacecert.tails import (
    QFSpec,
    _z,
    bernoulli_sum_bound,
    chi2_survival,
    critical_x,
    exp_tail_qf,
    gauss_qf_moments,
    mc_exceedance,
)


@pytest.fixture
def verdict(capsys):
    def record(number: int, title: str, ok: bool, detail: str, started: float):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail} "
                  f"[{time.perf_counter() - started:.1f} s]")
        assert ok, detail

    return record


def random_spd(rng, p, lo=0.5, hi=2.0):
    U, _ = np.linalg.qr(rng.standard_normal((p, p)))
    return (U * rng.uniform(lo, hi, p)) @ U.T


def test_criterion_01_chi_square_tails(verdict):
    t0 = time.perf_counter()
    worst = -math.inf
    bad = 0
    for p in (1, 2, 5, 20):
        for x in (0.5, 1.0, 2.0, 4.0):
            exact = chi2_survival(p, p + 2 * math.sqrt(p * x) + 2 * x)
            worst = max(worst, exact / math.exp(-x))
            bad += exact > math.exp(-x)
    verdict(1, "chi-square tail soundness", bad == 0, f"16 cells, {bad} violations, max ratio {worst:.3f}", t0)


def test_criterion_02_gaussian_qf_moments(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    N = 10_000_000
    worst = 0.0
    for _ in range(20):
        p = int(rng.integers(1, 7))
        A = rng.standard_normal((p, p))
        lam = np.linalg.eigvalsh(0.5 * (A + A.T))
        total = np.zeros(N)
        for val in lam:
            total += val * rng.standard_normal(N) ** 2
        mean = total.mean()
        c = total - mean
        c2 = c * c
        samples = (total, c2, c2 * c, c2 * c2)
        for sample, ref in zip(samples, gauss_qf_moments(np.diag(lam))):
            z = abs(sample.mean() - ref) / math.sqrt(np.var(sample) / N)
            worst = max(worst, z)
    verdict(2, "Gaussian quadratic-form moments", worst <= 4.0, f"20 spectra, max |z| = {worst:.2f} (limit 4)", t0)


def test_criterion_03_bernoulli_bound(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 100
    bad = 0
    worst = 0.0
    for k in range(10):
        w = rng.uniform(-1, 1, n)
        th = rng.uniform(0.05, 0.95, n)
        mean = float(w @ th)
        for x in (1.0, 2.0, 4.0):
            tb = bernoulli_sum_bound(w, th, x)
            res = mc_exceedance(lambda r, m: np.abs((r.random((m, n)) < th) @ w - mean), tb.threshold,
                                200_000, seed=point_seed(3, 10 * k + int(x)), chunk=50_000)
            bad += res.estimate > tb.probability_bound
            worst = max(worst, res.ci_high / tb.probability_bound)
    verdict(3, "Bernoulli bound soundness", bad == 0,
            f"30 cases, {bad} violations, max 99% upper / bound = {worst:.3f}", t0)


def test_criterion_04_regime_switch(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    specs = 0
    bad = 0
    max_jump = 0.0
    while specs < 50:
        lam = rng.uniform(0.05, 1.0, int(rng.integers(1, 8)))
        lam[0] = 1.0
        spec = QFSpec.from_eigenvalues(lam, g=float(rng.uniform(1.5, 50.0)))
        xc, status = critical_x(spec.p, spec.v, spec.g)
        if status != "root":
            continue
        specs += 1
        for frac in (0.1, 0.5, 0.999):
            x = frac * xc
            bad += exp_tail_qf(spec, x).extras["z_c"] != _z(spec.p, spec.v, x)
        jump = exp_tail_qf(spec, xc).extras["jump"]
        right_limit = exp_tail_qf(spec, xc * (1 + 1e-12)).extras["z_c"] - _z(spec.p, spec.v, xc)
        max_jump = max(max_jump, jump)
        bad += jump > 1.0 or abs(right_limit - jump) > 1e-9
    verdict(4, "exponential-tail regime switch", bad == 0,
            f"50 specs, {bad} violations, max jump {max_jump:.4f}", t0)


ACCEPT_INSTANCES = [
    ({"kind": "logistic", "p": 1}, [2000, 3000, 5000], 4, None, None),
    ({"kind": "logistic", "p": 2}, [5000], 3, None, 0.25),
    ({"kind": "logdensity", "p": 1}, [3000, 5000], 3, None, None),
    ({"kind": "logdensity", "p": 2}, [5000], 3, {"kind": "ridge", "value": 2500.0}, 0.25),
]
REQUIRED = {"tv_borel", "tv_symmetric", "kl_forward", "concentration", "mean_shift"}


def test_criterion_05_certificate_dominance(verdict):
    t0 = time.perf_counter()
    held = 0
    violations = []
    for block, ns, reps, penalty, step in ACCEPT_INSTANCES:
        raw = {"seed": 5, "model": block, "sweep": {"n": ns, "replicates": reps},
               "verification": {"step": step}}
        if penalty:
            raw["penalty"] = penalty
        report = pipeline.run_pipeline(validate_config(raw))
        for rec in report["points"]:
            cert = rec.get("certificate")
            if not cert or not all(c["satisfied"] for c in cert["conditions"]):
                continue
            checked = {v["quantity"]: v for v in rec["verdicts"] if v["valid"] is not None}
            if not REQUIRED <= set(checked):
                continue
            held += 1
            violations += [(block["kind"], block["p"], rec["n"], q) for q, v in checked.items() if not v["valid"]]
    ok = held >= 20 and not violations
    verdict(5, "certificate dominance", ok, f"{held} instances with all conditions, {len(violations)} violations "
            f"{violations[:3]}", t0)


def test_criterion_06_effective_dimension_sandwich(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    done = 0
    bad = 0
    while done < 30:
        p = int(rng.integers(10, 60))
        n = float(rng.uniform(50, 500))
        F = n * random_spd(rng, p, 0.5, 2.0)
        s = float(rng.uniform(0.75, 3.0))
        m_target = rng.uniform(2, p / 2)
        spec = PenaltySpec.smooth(s, m_target ** (2 * s) / n, p)
        rep = effective_dims(F, F, spec, n)
        if not rep.m_defined or not math.isfinite(rep.C_F):
            continue
        done += 1
        ratio = rep.p_laplace / rep.m_index
        bad += not (1 / (rep.C_F + 1) <= ratio <= 1 + rep.C_F * rep.C_g)
    verdict(6, "effective-dimension sandwich", bad == 0, f"30 instances, {bad} violations", t0)


def test_criterion_07_logistic_domination(verdict):
    t0 = time.perf_counter()
    grid = np.linspace(-30, 30, 100_000)
    d2 = phi_derivatives(grid, 2)
    bad = int(np.count_nonzero(np.abs(phi_derivatives(grid, 3)) > d2)
              + np.count_nonzero(np.abs(phi_derivatives(grid, 4)) > d2))
    verdict(7, "logistic derivative domination", bad == 0, f"100000 points, {bad} violations", t0)


def test_criterion_08_solver(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst_root = worst_grad = worst_start = 0.0
    for k in range(30):
        n = int(rng.integers(1, 400))
        X = rng.uniform(-2, 2, (n, 1))
        y = (rng.random(n) < 0.5).astype(float)
        ridge = float(rng.uniform(0.1, 5))
        model = LogisticModel(X, y)
        fit = fit_pmle(model, np.full(1, ridge))
        score = lambda t: float(X[:, 0] @ (y - expit(X[:, 0] * t)) - ridge * t)
        root = bisect(score, -50.0, 50.0, xtol=1e-14)
        worst_root = max(worst_root, abs(fit.upsilon_hat[0] - root))
        worst_grad = max(worst_grad, fit.grad_norm)
    for k in range(20):
        p = int(rng.integers(1, 6))
        model = make_logistic(int(rng.integers(50, 3000)), p, seed=point_seed(8, k))
        g2 = np.full(p, float(rng.uniform(0.1, 10)))
        fit = fit_pmle(model, g2)
        other = fit_pmle(model, g2, start=rng.normal(0, 2, p))
        worst_grad = max(worst_grad, fit.grad_norm, other.grad_norm)
        worst_start = max(worst_start, float(np.linalg.norm(other.upsilon_hat - fit.upsilon_hat)))
    ok = worst_root <= 1e-9 and worst_grad <= 1e-8 and worst_start <= 1e-8
    verdict(8, "solver correctness", ok, f"root error {worst_root:.1e}, max gradient {worst_grad:.1e}, "
            f"start-point gap {worst_start:.1e}", t0)


def _slope(ns, values):
    return float(np.polyfit(np.log(ns), np.log([np.mean(v) for v in values]), 1)[0])


def test_criterion_09_scaling(verdict):
    t0 = time.perf_counter()
    ns = (250, 1000, 4000)
    seeds = 200
    mean_mode = []
    fisher = []
    g2 = np.ones(2)
    for n in ns:
        mm, fr = [], []
        for s in range(seeds):
            model = make_logistic(n, 2, seed=point_seed(9, 10 ** 6 * n + s))
            fit = fit_pmle(model, g2)
            oracle = PosteriorOracle(fit, model, g2, step=0.25, half_width=8.0)
            d = oracle.mean().value - fit.mode_reduced
            mm.append(math.sqrt(float(d @ fit.D2 @ d)))
            fr.append(fisher_residual(fit, population_fit(model, g2), model.score(), model))
        mean_mode.append(np.array(mm))
        fisher.append(np.array(fr))
    slope_mm, slope_fr = _slope(ns, mean_mode), _slope(ns, fisher)
    rng = np.random.default_rng(9)
    boot_mm, boot_fr = [], []
    for _ in range(1000):
        idx = [rng.integers(0, seeds, seeds) for _ in ns]
        boot_mm.append(_slope(ns, [v[i] for v, i in zip(mean_mode, idx)]))
        boot_fr.append(_slope(ns, [v[i] for v, i in zip(fisher, idx)]))
    ci_mm = np.percentile(boot_mm, [2.5, 97.5])
    ci_fr = np.percentile(boot_fr, [2.5, 97.5])
    ok = abs(slope_mm + 0.5) <= 0.2 and abs(slope_fr + 0.5) <= 0.15
    verdict(9, "scaling checks", ok,
            f"mean-mode slope {slope_mm:.3f} (95% CI {ci_mm[0]:.3f}..{ci_mm[1]:.3f}, band -0.5+-0.2); "
            f"Fisher residual slope {slope_fr:.3f} (95% CI {ci_fr[0]:.3f}..{ci_fr[1]:.3f}, band -0.5+-0.15)", t0)


def test_criterion_10_gaussian_comparison(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    bad = 0
    in_guard = 0
    for _ in range(100):
        m1, m2 = rng.normal(0, 1, 2)
        s1, s2 = rng.uniform(0.3, 3, 2)
        pair = GaussPair.scalar(m1, s1, m2, s2)
        exact = tv_gauss_1d(m1, s1, m2, s2)
        bad += exact > pinsker_tv(pair) + 1e-12
        bg = bg_tv_bound(pair)
        if bg.applicable:
            in_guard += 1
            bad += exact > bg.value + 1e-12
    for _ in range(100):
        p = int(rng.integers(1, 11))
        bad += not elliptic_comparison(random_spd(rng, p), random_spd(rng, p, 0.1, 5.0)).weilandt_hoffman_ok
    verdict(10, "Gaussian comparison", bad == 0,
            f"100 scalar pairs ({in_guard} in the B_G guard), 100 matrix pairs, {bad} violations", t0)


def test_criterion_11_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"seed": 11, "model": {"kind": "logistic", "p": 1}, "sweep": {"n": [300, 1000], '
                   '"replicates": 2}}')
    out = tmp_path / "out"
    blobs = []
    for _ in range(2):
        main(["sweep", "--config", str(cfg), "--out", str(out)])
        blobs.append((out / "report.json").read_bytes())
    verdict(11, "determinism", blobs[0] == blobs[1], f"two runs, {len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}",
            t0)
