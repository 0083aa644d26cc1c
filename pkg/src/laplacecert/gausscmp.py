"""Distances between Gaussian measures and their use with inexact Laplace centres.

Conventions: a :class:`GaussPair` holds the Laplace Gaussian
``N(mean1, prec1^{-1})`` (mode and ``D_G^2``) and a proxy
``N(mean2, prec2^{-1})`` (centre ``x`` and ``H^2``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "GaussPair",
    "gauss_kl",
    "pinsker_tv",
    "bg_tv_bound",
    "BGBound",
    "tv_gauss_1d",
    "EllipticComparison",
    "elliptic_comparison",
    "trace_norm",
    "radial_cdf",
    "RadialCDF",
    "InexactBound",
    "inexact_laplace_bound",
    "mean_centred_bound",
    "BvMReport",
    "bvm_comparison",
]


def _sym(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 0.5 * (M + M.T)


def _spd_eig(M, name: str):
    w, U = np.linalg.eigh(_sym(M))
    if w[0] <= 0:
        raise np.linalg.LinAlgError(f"{name} must be symmetric positive definite")
    return w, U


def _root(M, power: float) -> np.ndarray:
    w, U = np.linalg.eigh(_sym(M))
    return (U * w ** power) @ U.T


@dataclass(frozen=True)
class GaussPair:
    mean1: np.ndarray
    prec1: np.ndarray
    mean2: np.ndarray
    prec2: np.ndarray

    def __post_init__(self):
        for name in ("mean1", "mean2"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("prec1", "prec2"):
            M = _sym(getattr(self, name))
            _spd_eig(M, name)
            object.__setattr__(self, name, M)
        p = self.mean1.size
        if self.mean2.size != p or self.prec1.shape != (p, p) or self.prec2.shape != (p, p):
            raise ValueError("GaussPair dimensions disagree")

    @classmethod
    def scalar(cls, m1: float, s1: float, m2: float, s2: float) -> "GaussPair":
        """Pair of 1-D Gaussians given means and standard deviations."""
        return cls([m1], [[1.0 / s1 ** 2]], [m2], [[1.0 / s2 ** 2]])

    @property
    def dim(self) -> int:
        return self.mean1.size

    @property
    def B_G(self) -> np.ndarray:
        """``H^{-1} D_G^2 H^{-1} - I``."""
        Hm = _root(self.prec2, -0.5)
        return _sym(Hm @ self.prec1 @ Hm) - np.eye(self.dim)

    def cov1(self) -> np.ndarray:
        return np.linalg.inv(self.prec1)

    def cov2(self) -> np.ndarray:
        return np.linalg.inv(self.prec2)


def _kl(m_a, P_a, m_b, P_b) -> float:
    """``KL(N(m_a, P_a^{-1}) || N(m_b, P_b^{-1}))``."""
    S_a = np.linalg.inv(P_a)
    M = P_b @ S_a
    d = m_b - m_a
    _, logdet = np.linalg.slogdet(M)
    val = 0.5 * (np.trace(M) - m_a.size + d @ P_b @ d - logdet)
    return max(float(val), 0.0)


def gauss_kl(pair: GaussPair, direction: str = "1||2") -> float:
    """Exact Gaussian KL divergence, always non-negative.

    ``"1||2"`` is ``KL(N(mean1, prec1^{-1}) || N(mean2, prec2^{-1}))``;
    ``"2||1"`` swaps the arguments.  The latter equals
    ``(||D_G (x - x*)||^2 + tr(H^{-2} D_G^2 - I) - log det(H^{-2} D_G^2)) / 2``.
    """
    if direction == "1||2":
        return _kl(pair.mean1, pair.prec1, pair.mean2, pair.prec2)
    if direction == "2||1":
        return _kl(pair.mean2, pair.prec2, pair.mean1, pair.prec1)
    raise ValueError("direction must be '1||2' or '2||1'")


def pinsker_tv(pair: GaussPair) -> float:
    """``min(1, sqrt(KL/2))`` with the smaller of the two KL orderings."""
    kl = min(gauss_kl(pair, "1||2"), gauss_kl(pair, "2||1"))
    return min(1.0, math.sqrt(kl / 2.0))


@dataclass(frozen=True)
class BGBound:
    value: float
    applicable: bool
    norm_BG: float

    def to_dict(self) -> dict:
        return {"value": self.value, "applicable": self.applicable, "norm_B_G": self.norm_BG}


def bg_tv_bound(pair: GaussPair) -> BGBound:
    """``(||D_G (x - x*)|| + sqrt(tr B_G^2)) / 2``, applicable when ``||B_G|| <= 2/3``."""
    B = pair.B_G
    norm = float(np.max(np.abs(np.linalg.eigvalsh(B)))) if B.size else 0.0
    d = pair.mean2 - pair.mean1
    shift = math.sqrt(max(float(d @ pair.prec1 @ d), 0.0))
    value = 0.5 * (shift + math.sqrt(float(np.sum(B * B))))
    return BGBound(min(value, 1.0), norm <= 2.0 / 3.0, norm)


def tv_gauss_1d(m1: float, s1: float, m2: float, s2: float) -> float:
    """Exact TV distance between ``N(m1, s1^2)`` and ``N(m2, s2^2)``.

    The log-density difference is a quadratic; between its roots the
    difference of the two CDFs gives the mass on which one density dominates.
    """
    if s1 <= 0 or s2 <= 0:
        raise ValueError("standard deviations must be positive")
    # log f1 - log f2 = a x^2 + b x + c
    a = 0.5 / s2 ** 2 - 0.5 / s1 ** 2
    b = m1 / s1 ** 2 - m2 / s2 ** 2
    c = 0.5 * m2 ** 2 / s2 ** 2 - 0.5 * m1 ** 2 / s1 ** 2 + math.log(s2 / s1)
    if abs(a) < 1e-15 * (1.0 / s1 ** 2 + 1.0 / s2 ** 2):
        if b == 0:
            return 0.0
        roots = [-c / b]
    else:
        disc = b * b - 4 * a * c
        if disc <= 0:
            roots = []
        else:
            sq = math.sqrt(disc)
            q = -0.5 * (b + math.copysign(sq, b))
            roots = sorted({q / a, c / q} if q != 0 else {0.0})
    F1 = lambda x: special.ndtr((x - m1) / s1)
    F2 = lambda x: special.ndtr((x - m2) / s2)
    edges = [-math.inf, *roots, math.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        p1 = (F1(hi) if math.isfinite(hi) else 1.0) - (F1(lo) if math.isfinite(lo) else 0.0)
        p2 = (F2(hi) if math.isfinite(hi) else 1.0) - (F2(lo) if math.isfinite(lo) else 0.0)
        total += abs(p1 - p2)
    return min(1.0, 0.5 * total)


# ---------------------------------------------------------------------------
# elliptic sets
# ---------------------------------------------------------------------------


def trace_norm(M) -> float:
    """``||M||_1 = sum |lambda_j(M)|`` for symmetric ``M``."""
    return float(np.abs(np.linalg.eigvalsh(_sym(M))).sum())


@dataclass(frozen=True)
class EllipticComparison:
    d: float
    bound: float
    constant: float
    guard1: bool
    guard2: bool
    eig_l1: float
    trace_norm_diff: float

    @property
    def guard_ok(self) -> bool:
        return self.guard1 and self.guard2

    @property
    def weilandt_hoffman_ok(self) -> bool:
        return self.eig_l1 <= self.trace_norm_diff * (1 + 1e-12) + 1e-14

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "bound": self.bound,
            "constant": self.constant,
            "modulo_absolute_constant": True,
            "frobenius_guard": [self.guard1, self.guard2],
            "eig_l1": self.eig_l1,
            "trace_norm_diff": self.trace_norm_diff,
        }


def _frobenius_guard(S: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(S)
    return bool(3.0 * float(np.max(np.abs(w))) ** 2 <= float((w ** 2).sum()) * (1 + 1e-12))


def elliptic_comparison(Sigma1, Sigma2, a=None, C: float = 1.0) -> EllipticComparison:
    """``d = (1/||S1||_Fr + 1/||S2||_Fr)(||lambda1 - lambda2||_1 + ||a||^2)``."""
    S1, S2 = _sym(Sigma1), _sym(Sigma2)
    if S1.shape != S2.shape:
        raise ValueError("covariances must have the same shape")
    a = np.zeros(S1.shape[0]) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
    l1 = np.sort(np.linalg.eigvalsh(S1))[::-1]
    l2 = np.sort(np.linalg.eigvalsh(S2))[::-1]
    eig_l1 = float(np.abs(l1 - l2).sum())
    f1, f2 = float(np.linalg.norm(S1)), float(np.linalg.norm(S2))
    if f1 == 0 or f2 == 0:
        raise ValueError("covariances must be non-zero")
    d = (1.0 / f1 + 1.0 / f2) * (eig_l1 + float(a @ a))
    return EllipticComparison(d, C * d, C, _frobenius_guard(S1), _frobenius_guard(S2), eig_l1,
                              trace_norm(S1 - S2))


@dataclass
class RadialCDF:
    """``r -> P(||gamma + a|| <= r)`` for ``gamma ~ N(0, Sigma)``."""

    method: str
    evaluate: object
    n_draws: int = 0
    standard_error: float = 0.0
    extras: dict = field(default_factory=dict)

    def __call__(self, r):
        return self.evaluate(np.asarray(r, dtype=float))


def radial_cdf(Sigma, a=None, seed: int = 0, n_draws: int = 1_000_000, nodes: int = 256) -> RadialCDF:
    """Closed form for ``q = 1``, one-dimensional quadrature for ``q = 2``, Monte Carlo above."""
    S = _sym(Sigma)
    q = S.shape[0]
    a = np.zeros(q) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
    lam, U = np.linalg.eigh(S)
    lam = np.clip(lam, 0.0, None)
    b = U.T @ a
    if q == 1:
        s = math.sqrt(lam[0])

        def cdf1(r):
            r = np.clip(r, 0.0, None)
            if s == 0:
                return (np.abs(b[0]) <= r).astype(float)
            return special.ndtr((r - b[0]) / s) - special.ndtr((-r - b[0]) / s)

        return RadialCDF("closed-form", cdf1)
    if q == 2 and lam[0] > 0:
        s1, s2 = math.sqrt(lam[1]), math.sqrt(lam[0])
        t, wt = np.polynomial.legendre.leggauss(nodes)
        theta = 0.5 * math.pi * t
        wt = 0.5 * math.pi * wt

        def cdf2(r):
            r = np.atleast_1d(np.clip(r, 0.0, None))
            y1 = r[:, None] * np.sin(theta)[None, :]
            half = r[:, None] * np.cos(theta)[None, :]
            dens = np.exp(-0.5 * ((y1 - b[1]) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
            inner = special.ndtr((half - b[0]) / s2) - special.ndtr((-half - b[0]) / s2)
            vals = (dens * inner * half * wt[None, :]).sum(axis=1)
            return np.clip(vals, 0.0, 1.0)

        return RadialCDF("quadrature", cdf2)
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((n_draws, q)) * np.sqrt(lam)[None, :] + b[None, :]
    norms = np.sort(np.linalg.norm(draws, axis=1))

    def cdf_mc(r):
        return np.searchsorted(norms, r, side="right") / n_draws

    return RadialCDF("monte-carlo", cdf_mc, n_draws, 0.5 / math.sqrt(n_draws), {"seed": seed})


# ---------------------------------------------------------------------------
# composition with a Laplace certificate
# ---------------------------------------------------------------------------


@dataclass
class InexactBound:
    borel: float
    borel_gauss_term: float
    pinsker: float
    bg: BGBound
    elliptic: float | None
    elliptic_guard: bool
    elliptic_constant: float
    laplace_term: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "borel": self.borel,
            "borel_gauss_term": self.borel_gauss_term,
            "pinsker": self.pinsker,
            "bg": self.bg.to_dict(),
            "elliptic": self.elliptic,
            "elliptic_guard": self.elliptic_guard,
            "elliptic_constant": self.elliptic_constant,
            "modulo_absolute_constant": True,
            "laplace_term": self.laplace_term,
            "notes": list(self.notes),
        }


def _laplace_term(cert) -> float:
    return float(cert.tv_bound_borel)


def inexact_laplace_bound(cert, pair: GaussPair, Q=None, C: float = 1.0) -> InexactBound:
    """TV between the posterior and ``N(mean2, prec2^{-1})``.

    ``cert`` is the certificate at the mode ``pair.mean1`` with
    ``pair.prec1 = D_G^2``.  The Borel form adds the Gaussian-to-Gaussian
    distance (Pinsker or the ``B_G`` bound, whichever is smaller); the
    elliptic form replaces it by ``C/||Q D_G^{-2} Q^T||_Fr`` times
    ``||Q (D_G^{-2} - H^{-2}) Q^T||_1 + ||Q (x - x*)||^2``.
    """
    lap = _laplace_term(cert)
    pins = pinsker_tv(pair)
    bg = bg_tv_bound(pair)
    gauss = min(pins, bg.value) if bg.applicable else pins
    notes = []
    p = pair.dim
    Q = np.eye(p) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    S1 = _sym(Q @ pair.cov1() @ Q.T)
    guard = _frobenius_guard(S1)
    fr = float(np.linalg.norm(S1))
    shift = Q @ (pair.mean2 - pair.mean1)
    elliptic = None
    if fr > 0:
        elliptic = min(1.0, lap + C / fr * (trace_norm(Q @ (pair.cov1() - pair.cov2()) @ Q.T) + float(shift @ shift)))
    if not guard:
        notes.append("Frobenius guard 3||Q D_G^-2 Q^T||^2 <= ||Q D_G^-2 Q^T||_Fr^2 fails; elliptic form not asserted")
    return InexactBound(min(1.0, lap + gauss), gauss, pins, bg, elliptic, guard, C, lap, notes)


def mean_centred_bound(cert, mean_shift_norm: float, Q, DG2, C: float = 1.0) -> float:
    """Elliptic-set bound for a posterior-mean centre: ``laplace term + C ||Q(mean - mode)||^2 / ||Q D_G^{-2} Q^T||_Fr``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    fr = float(np.linalg.norm(Q @ np.linalg.inv(_sym(DG2)) @ Q.T))
    return min(1.0, _laplace_term(cert) + C * mean_shift_norm ** 2 / fr)


@dataclass
class BvMReport:
    available: bool
    laplace_term: float | None = None
    bias_term: float | None = None
    penalization_term: float | None = None
    light_bias: float | None = None
    light_penalization: float | None = None
    total: float | None = None
    classification: str = "unavailable"
    threshold: float = 0.1
    constant: float = 1.0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["notes"] = list(self.notes)
        out["modulo_absolute_constant"] = True
        return out


def bvm_comparison(cert, fit_unpenalized, fit_penalized, Q=None, truth=None, C: float = 1.0,
                   threshold: float = 0.1) -> BvMReport:
    """Prior impact on the posterior relative to the classical ``N(v~, D~^{-2})``.

    Terms: Laplace error of the certificate, ``C ||Q(v~ - v~_G)||^2/||Q D~^{-2} Q^T||_Fr``
    and ``C ||D~_G^{-1} G^2 D~_G^{-1}|| tr(Q D~^{-2} Q^T)/||Q D~^{-2} Q^T||_Fr``.  For
    ``Q = D~`` the light-penalty indicators ``||G v*||^2/sqrt(p)`` and
    ``||D_G^{-1} G^2 D_G^{-1}||^2 sqrt(p)`` decide the classification.
    """
    if fit_unpenalized is None:
        return BvMReport(False, notes=["unpenalized fit unavailable"])
    if fit_unpenalized.retained.size != fit_penalized.retained.size:
        return BvMReport(False, notes=["penalized and unpenalized fits live on different coordinates"])
    D2t = _sym(fit_unpenalized.D2)
    try:
        np.linalg.cholesky(D2t)
    except np.linalg.LinAlgError:
        return BvMReport(False, notes=["unpenalized Hessian singular; comparison unavailable"])
    p = D2t.shape[0]
    G2 = _sym(fit_penalized.G2)
    DG2 = _sym(fit_penalized.DG2)
    Q = _root(D2t, 0.5) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    S = _sym(Q @ np.linalg.inv(D2t) @ Q.T)
    fr = float(np.linalg.norm(S))
    diff = Q @ (fit_unpenalized.mode_reduced - fit_penalized.mode_reduced)
    DGm = _root(DG2, -0.5)
    prior_norm = float(np.max(np.abs(np.linalg.eigvalsh(_sym(DGm @ G2 @ DGm))))) if p else 0.0
    bias = C * float(diff @ diff) / fr
    pen = C * prior_norm * float(np.trace(S)) / fr
    lap = _laplace_term(cert)
    ref = fit_unpenalized.mode_reduced if truth is None else np.asarray(truth, dtype=float)[fit_penalized.retained]
    light_bias = float(ref @ G2 @ ref) / math.sqrt(p)
    light_pen = prior_norm ** 2 * math.sqrt(p)
    notes = [] if truth is not None else ["light-bias term uses the unpenalized MLE in place of the truth"]
    cls = "classical-BvM-valid" if max(light_bias, light_pen) <= threshold else "prior-dominated"
    return BvMReport(True, lap, bias, pen, light_bias, light_pen, min(1.0, lap + bias + pen), cls,
                     threshold, C, notes)
