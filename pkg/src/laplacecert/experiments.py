"""Synthetic instances and per-point seeding for experiments."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .model import LogDensityModel, LogisticModel, QuadraticModel, bernoulli_sampler, logdensity_sampler

__all__ = [
    "point_seed",
    "default_truth",
    "logistic_design",
    "make_logistic",
    "make_logdensity",
    "make_quadratic",
    "make_model",
]


def point_seed(master_seed: int, index: int) -> int:
    """Seed of sweep point ``index``, a fixed function of ``(master_seed, index)``."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


def default_truth(kind: str, p: int) -> np.ndarray:
    j = np.arange(1, p + 1, dtype=float)
    if kind == "logistic":
        return 0.5 * (-1.0) ** (j + 1) / j
    if kind == "logdensity":
        return 0.5 * (-1.0) ** (j + 1) / j ** 2
    return np.ones(p) / j


def logistic_design(n: int, p: int, rng: np.random.Generator, distribution: str = "uniform",
                    intercept: bool = False) -> np.ndarray:
    if distribution == "uniform":
        X = rng.uniform(-1.0, 1.0, size=(n, p))
    elif distribution == "gaussian":
        X = rng.standard_normal((n, p))
    else:
        raise ValueError(f"unknown design distribution {distribution!r}")
    if intercept:
        X[:, 0] = 1.0
    return X


def make_logistic(n: int, p: int, seed: int, truth=None, distribution: str = "uniform",
                  intercept: bool = False) -> LogisticModel:
    """Design and labels from two child streams of ``seed``."""
    design_ss, label_ss = np.random.SeedSequence(seed).spawn(2)
    X = logistic_design(n, p, np.random.default_rng(design_ss), distribution, intercept)
    v_star = default_truth("logistic", p) if truth is None else np.asarray(truth, dtype=float)
    theta = expit(X @ v_star)
    y = bernoulli_sampler(theta, label_ss)
    return LogisticModel(X, y, theta_star=theta, upsilon_star=v_star)


def make_logdensity(n: int, p: int, seed: int, truth=None, basis: str = "cosine") -> LogDensityModel:
    v_star = default_truth("logdensity", p) if truth is None else np.asarray(truth, dtype=float)
    x = logdensity_sampler(v_star, n, seed, basis=basis)
    return LogDensityModel(basis, p, x, upsilon_star=v_star)


def make_quadratic(n: int, p: int, seed: int, truth=None) -> QuadraticModel:
    """Gaussian sequence model ``L(v) = <S, v> - n ||v||^2/2`` with ``S ~ N(n v*, n I)``."""
    v_star = default_truth("quadratic", p) if truth is None else np.asarray(truth, dtype=float)
    rng = np.random.default_rng(seed)
    S = n * v_star + np.sqrt(n) * rng.standard_normal(p)
    return QuadraticModel(n * np.eye(p), S, n=n, b_expected=n * v_star, V2=n * np.eye(p))


def make_model(kind: str, n: int, p: int, seed: int, truth=None, **options):
    if kind == "logistic":
        return make_logistic(n, p, seed, truth, **options)
    if kind == "logdensity":
        return make_logdensity(n, p, seed, truth, **options)
    if kind == "quadratic":
        return make_quadratic(n, p, seed, truth)
    raise ValueError(f"unknown model kind {kind!r}")
