"""Deviation bounds for quadratic forms and weighted Bernoulli sums.

Each bound returns a :class:`TailBound` carrying the threshold, the nominal
probability and the regime it was derived in.  :func:`mc_exceedance` is the
Monte-Carlo falsification harness used to check that a bound is never
violated (one-sided, Wilson 99% upper limit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

__all__ = [
    "QFSpec",
    "TailBound",
    "MGFValue",
    "MCResult",
    "gauss_qf_moments",
    "gauss_qf_mgf",
    "gauss_qf_tail",
    "subgauss_qf_tail",
    "exp_tail_qf",
    "critical_x",
    "exp_tail_guard",
    "qf_excess_risk",
    "bernoulli_sum_bound",
    "bernoulli_vector_bound",
    "chi2_survival",
    "wilson_interval",
    "mc_exceedance",
]

BISECT_LO = 1e-8
BISECT_HI = 1e8


@dataclass(frozen=True)
class QFSpec:
    """Quadratic form ``<B xi, xi>`` with moment envelope ``VV^2``.

    Only the spectrum of ``W = VV B VV`` enters the bounds.  ``g`` is the range
    of the exponential-moment condition (``inf`` for sub-Gaussian noise).
    """

    eigenvalues: np.ndarray
    g: float = math.inf

    @classmethod
    def from_matrix(cls, B, V2=None, g: float = math.inf) -> "QFSpec":
        B = np.atleast_2d(np.asarray(B, dtype=float))
        B = 0.5 * (B + B.T)
        if V2 is None:
            W = B
        else:
            V2 = np.atleast_2d(np.asarray(V2, dtype=float))
            w, U = np.linalg.eigh(0.5 * (V2 + V2.T))
            if w[0] <= 0:
                raise ValueError("V^2 must be positive definite")
            root = (U * np.sqrt(w)) @ U.T
            W = root @ B @ root
        return cls(np.sort(np.linalg.eigvalsh(0.5 * (W + W.T)))[::-1], float(g))

    @classmethod
    def from_eigenvalues(cls, eigenvalues, g: float = math.inf) -> "QFSpec":
        return cls(np.sort(np.asarray(eigenvalues, dtype=float))[::-1], float(g))

    @classmethod
    def chi2(cls, p: int) -> "QFSpec":
        return cls(np.ones(int(p)))

    @property
    def p(self) -> float:
        return float(self.eigenvalues.sum())

    @property
    def v(self) -> float:
        return float(math.sqrt((self.eigenvalues ** 2).sum()))

    @property
    def lam(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    @property
    def psd(self) -> bool:
        return bool(self.eigenvalues[-1] >= -1e-12 * max(self.lam, 1.0))


@dataclass(frozen=True)
class TailBound:
    """``P(statistic >= threshold) <= probability_bound``."""

    threshold: float
    confidence_x: float
    regime: str
    probability_bound: float
    multiplier: float
    statistic: str
    extras: dict = field(default_factory=dict)
    guard_ok: bool = True

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "x": self.confidence_x,
            "regime": self.regime,
            "bound": self.probability_bound,
            "multiplier": self.multiplier,
            "statistic": self.statistic,
            "guard_ok": self.guard_ok,
            "extras": dict(self.extras),
        }


# ---------------------------------------------------------------------------
# Gaussian quadratic forms
# ---------------------------------------------------------------------------


def gauss_qf_moments(B) -> tuple[float, float, float, float]:
    """Mean, variance, third and fourth central moments of ``<B g, g>``, ``g ~ N(0, I)``."""
    lam = np.linalg.eigvalsh(0.5 * (np.atleast_2d(B) + np.atleast_2d(B).T))
    t1, t2, t3, t4 = (float((lam ** k).sum()) for k in (1, 2, 3, 4))
    return t1, 2.0 * t2, 8.0 * t3, 48.0 * t4 + 12.0 * t2 ** 2


@dataclass(frozen=True)
class MGFValue:
    exact: float
    bound: float


def gauss_qf_mgf(B, mu: float, A=None) -> MGFValue:
    """``log E exp{mu (<B g, g> - tr B)/2 + <A, g>}`` and its quadratic majorant.

    The majorant is ``mu^2 v^2 / (4 (1 - mu lambda_+))`` plus the exact linear
    term ``||(I - mu B)^{-1/2} A||^2 / 2`` when ``A`` is given.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    lam, U = np.linalg.eigh(0.5 * (B + B.T))
    lam_plus = max(float(lam.max()), 0.0)
    if mu * lam_plus >= 1.0:
        raise ValueError("mu * lambda_max(B) must be < 1")
    one = 1.0 - mu * lam
    exact = float(-0.5 * np.log(one).sum() - 0.5 * mu * lam.sum())
    bound = float(mu ** 2 * (lam ** 2).sum() / (4.0 * (1.0 - mu * lam_plus)))
    if A is not None:
        a = U.T @ np.atleast_1d(np.asarray(A, dtype=float))
        lin = float(0.5 * (a ** 2 / one).sum())
        exact += lin
        bound += lin
    return MGFValue(exact, bound)


def gauss_qf_tail(spec: QFSpec, x: float, regime: str = "Gaussian") -> TailBound:
    """``P(<B g, g> >= p + 2 v sqrt(x) + 2 lambda x) <= e^{-x}`` and companions."""
    if x < 0:
        raise ValueError("x must be >= 0")
    p, v, lam = spec.p, spec.v, spec.lam
    upper = p + 2.0 * v * math.sqrt(x) + 2.0 * lam * x
    extras = {
        "two_sided_deviation": 2.0 * v * math.sqrt(x) + 2.0 * lam * x,
        "two_sided_bound": min(1.0, 2.0 * math.exp(-x)),
        "lower_threshold": p - 2.0 * v * math.sqrt(x),
        "p": p,
        "v": v,
        "lambda": lam,
    }
    if spec.psd:
        extras["norm_threshold"] = math.sqrt(upper)
        extras["norm_threshold_simple"] = math.sqrt(p) + math.sqrt(2.0 * lam * x)
    return TailBound(upper, float(x), regime, math.exp(-x), 1.0, "quadratic_form", extras)


def subgauss_qf_tail(spec: QFSpec, x: float) -> TailBound:
    """Sub-Gaussian noise: the Gaussian thresholds carry over unchanged."""
    return gauss_qf_tail(spec, x, regime="Subgaussian")


def _mu(x: float, v: float) -> float:
    return 1.0 / (1.0 + v / (2.0 * math.sqrt(x)))


def _z(p: float, v: float, x: float) -> float:
    return math.sqrt(p + 2.0 * v * math.sqrt(x) + 2.0 * x)


def _critical_gap(x: float, p: float, v: float, g: float) -> float:
    """``(g - sqrt(p mu))/mu - z(W, x) - 1``, written so that ``gap <= 0`` means jump ``<= 1``."""
    mu = _mu(x, v)
    return ((g - math.sqrt(p * mu)) / mu - _z(p, v, x)) - 1.0


def critical_x(p: float, v: float, g: float) -> tuple[float, str]:
    """Root ``x_c`` of the regime-switch equation for a normalised ``||W|| = 1``.

    Returns ``(x_c, status)`` with status ``"root"``, ``"exponential-regime-everywhere"``
    (root below the bracket) or ``"gaussian-regime-everywhere"`` (above it).
    The returned point always satisfies ``gap(x_c) <= 0`` so the jump of
    ``z_c`` at ``x_c`` never exceeds one in floating point.
    """
    if math.isinf(g):
        return math.inf, "gaussian-regime-everywhere"
    lo, hi = BISECT_LO, BISECT_HI
    if _critical_gap(lo, p, v, g) <= 0:
        return lo, "exponential-regime-everywhere"
    if _critical_gap(hi, p, v, g) > 0:
        return math.inf, "gaussian-regime-everywhere"
    while hi / lo - 1.0 > 1e-13:
        mid = math.sqrt(lo * hi)
        if _critical_gap(mid, p, v, g) > 0:
            lo = mid
        else:
            hi = mid
    return hi, "root"


def exp_tail_guard(p: float, x: float) -> float:
    """Smallest ``g`` with ``g >= sqrt(x)/2 + (p x / 4)^{1/4}``."""
    return math.sqrt(x) / 2.0 + (p * x / 4.0) ** 0.25


def exp_tail_qf(spec: QFSpec, x: float) -> TailBound:
    """Quadratic-form bound under an exponential moment condition of range ``g``.

    The spectrum is normalised to ``||W|| = 1`` internally; the returned
    threshold refers to the original ``<B xi, xi>`` (a factor ``lambda``).
    """
    if x <= 0:
        raise ValueError("x must be > 0")
    if math.isinf(spec.g):
        return subgauss_qf_tail(spec, x)
    if not spec.g > 0:
        raise ValueError("g must be > 0")
    lam = spec.lam
    p, v, g = spec.p / lam, spec.v / lam, spec.g
    xc, status = critical_x(p, v, g)
    extras: dict = {"x_c": xc, "status": status, "lambda": lam, "p_normalised": p, "v_normalised": v}
    if math.isfinite(xc):
        mu_c = _mu(xc, v)
        g_c = g - math.sqrt(p * mu_c)
        extras.update(mu_c=mu_c, g_c=g_c, jump=g_c / mu_c - _z(p, v, xc))
    else:
        g_c = math.inf
    guard_ok = bool(g_c >= 1.0)
    extras["g_c_at_least_one"] = guard_ok
    if x <= xc:
        zc = _z(p, v, x)
        regime = "ExpTail-Gaussian-regime"
    else:
        zc = g_c / mu_c + 2.0 * (x - xc) / g_c
        regime = "ExpTail-Exponential-regime"
    prob = 2.0 * math.exp(-x) + (math.exp(-xc) if x < xc else 0.0)
    extras["z_c"] = zc
    extras["norm_threshold"] = math.sqrt(lam) * zc
    g_min = exp_tail_guard(p, x)
    extras["simple_guard"] = {"g_required": g_min, "holds": bool(g >= g_min)}
    if g >= g_min:
        extras["simple_norm_threshold"] = math.sqrt(lam) * (math.sqrt(p) + math.sqrt(2.0 * x))
    return TailBound(lam * zc * zc, float(x), regime, min(prob, 3.0 * math.exp(-x)), 3.0,
                     "quadratic_form", extras, guard_ok)


def qf_excess_risk(spec: QFSpec, z: float) -> tuple[float, float, float]:
    """Bounds on ``P(eta >= z)``, ``E eta 1(eta >= z)`` and ``E eta^2 1(eta >= z)``, ``eta = ||B^{1/2} g||``."""
    if not spec.psd:
        raise ValueError("B must be positive semidefinite")
    root_p = math.sqrt(spec.p)
    if not z > root_p + 1.0:
        raise ValueError("z must exceed sqrt(p) + 1")
    tail = math.exp(-((z - root_p) ** 2) / (2.0 * spec.lam))
    return tail, tail, 2.0 * z / (z - root_p) * tail


# ---------------------------------------------------------------------------
# Bernoulli sums
# ---------------------------------------------------------------------------


def bernoulli_sum_bound(weights, theta_star, x: float) -> TailBound:
    """``P(|S - E S| >= 2 V_x sqrt(x)) <= 2 e^{-x}`` for ``S = sum w_i Y_i``."""
    w = np.asarray(weights, dtype=float).ravel()
    th = np.asarray(theta_star, dtype=float).ravel()
    if np.any((th <= 0) | (th >= 1)):
        raise ValueError("theta_star must lie in (0, 1)")
    V = math.sqrt(float((th * (1 - th) * w ** 2).sum()))
    w_star = float(np.max(np.abs(w)))
    need = 1.5 * math.sqrt(x) * w_star
    guard = V >= need
    Vx = V if guard else need
    return TailBound(
        2.0 * Vx * math.sqrt(x), float(x), "Subgaussian", min(1.0, 2.0 * math.exp(-x)), 2.0,
        "abs_centered_sum", {"V": V, "V_x": Vx, "w_star": w_star, "guard_required": need}, guard,
    )


def bernoulli_vector_bound(Psi, theta_star, H2, x: float) -> TailBound:
    """``P(||H^{-1} Psi (Y - E Y)|| >= sqrt(p) + sqrt(2x)) <= 3 e^{-x}`` under the ``1/w*`` guard.

    ``Psi`` has one column per observation (``p x n``), ``H2`` must dominate
    ``Var(Psi Y)``.
    """
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    th = np.asarray(theta_star, dtype=float).ravel()
    if Psi.shape[1] != th.size:
        raise ValueError("Psi must have one column per observation")
    V2 = (Psi * (th * (1 - th))[None, :]) @ Psi.T
    H2 = np.atleast_2d(np.asarray(H2, dtype=float))
    if np.linalg.eigvalsh(H2 - V2)[0] < -1e-10 * max(1.0, np.abs(H2).max()):
        raise ValueError("H^2 must dominate Var(Psi Y)")
    w, U = np.linalg.eigh(0.5 * (H2 + H2.T))
    H_inv = (U / np.sqrt(w)) @ U.T
    p_eff = float(np.trace(H_inv @ V2 @ H_inv))
    w_star = float(np.max(np.linalg.norm(H_inv @ Psi, axis=0)))
    required = exp_tail_guard(p_eff, x)
    guard = (1.0 / w_star) >= required
    return TailBound(
        math.sqrt(p_eff) + math.sqrt(2.0 * x), float(x), "ExpTail-Gaussian-regime",
        min(1.0, 3.0 * math.exp(-x)), 3.0, "norm",
        {"p": p_eff, "w_star": w_star, "inverse_w_star": 1.0 / w_star, "guard_required": required}, guard,
    )


# ---------------------------------------------------------------------------
# oracles and Monte-Carlo harness
# ---------------------------------------------------------------------------


def chi2_survival(p: float, t: float) -> float:
    """``P(chi^2_p >= t)`` via the regularised upper incomplete gamma function."""
    if t <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * p, 0.5 * t))


def wilson_interval(count: int, total: int, level: float = 0.99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        return 0.0, 1.0
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    phat = count / total
    denom = 1.0 + z * z / total
    centre = (phat + z * z / (2 * total)) / denom
    half = z * math.sqrt(phat * (1 - phat) / total + z * z / (4 * total * total)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class MCResult:
    estimate: float
    count: int
    total: int
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mc_exceedance(
    draw: Callable[[np.random.Generator, int], np.ndarray],
    threshold: float,
    total: int,
    seed: int,
    chunk: int = 200_000,
    level: float = 0.99,
) -> MCResult:
    """Frequency of ``draw(...) >= threshold`` over ``total`` seeded draws.

    Chunks get independent child streams of one ``SeedSequence`` and are merged
    in index order, so the count does not depend on how the work is split.
    """
    n_chunks = max(1, math.ceil(total / chunk))
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    count = 0
    done = 0
    for child in children:
        size = min(chunk, total - done)
        rng = np.random.default_rng(child)
        count += int(np.count_nonzero(np.asarray(draw(rng, size)) >= threshold))
        done += size
    lo, hi = wilson_interval(count, total, level)
    return MCResult(count / total, count, total, lo, hi)
