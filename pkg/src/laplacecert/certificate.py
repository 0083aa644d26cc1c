"""Finite-sample Laplace-approximation certificates.

:func:`certify` turns a penalized fit and a model into a
:class:`LaplaceCertificate`: effective dimension, concentration radius,
error terms for total variation, KL and the posterior mean, together with a
list of the conditions each bound needs and how much room each one has.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ConcaveModel, LogDensityModel, LogisticModel, QuadraticModel, SmoothnessConstants, empirical_omega
from .solver import FitResult

__all__ = [
    "PreconditionError",
    "Condition",
    "LaplaceCertificate",
    "certify",
    "concentration_radius",
    "Ellipsoid",
    "diamond2",
    "diamond3",
    "diamond4",
    "tv_from_diamond",
    "kl_bounds",
    "KLBounds",
    "estimate_C_ell",
    "posterior_mean_bound",
    "classify_dimension",
    "critical_dimension_report",
    "restrict_model",
]

CLASSES = ("concentration-valid", "gaussian-approx-valid", "gap-region", "invalid")


class PreconditionError(ValueError):
    """A bound was requested outside the range where it is stated."""


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float
    satisfied: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @classmethod
    def leq(cls, name: str, lhs: float, rhs: float) -> "Condition":
        return cls(name, float(lhs), float(rhs), bool(lhs <= rhs))

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "satisfied": self.satisfied,
                "margin": self.margin}


# ---------------------------------------------------------------------------
# error terms
# ---------------------------------------------------------------------------


def diamond2(omega: float, p: float) -> float:
    return 0.75 * omega * p / (1.0 - omega)


def diamond3(tau3: float, p: float, omega: float) -> float:
    return tau3 * (p + 1.0) ** 1.5 / (4.0 * (1.0 - omega) ** 1.5)


def diamond4(tau3: float, tau4: float, p: float, omega: float) -> float:
    return (tau3 ** 2 * (p + 2.0) ** 3 + 2.0 * tau4 * (p + 1.0) ** 2) / (16.0 * (1.0 - omega) ** 2)


def tv_from_diamond(diamond: float | None, x: float) -> tuple[float, float]:
    """``(min(1, 2(d + e^{-x})/(1 - d - e^{-x})), min(1, 4(d + e^{-x})))``; ``(1, 1)`` when ``d`` is missing."""
    if diamond is None or not math.isfinite(diamond):
        return 1.0, 1.0
    s = diamond + math.exp(-x)
    denom = 1.0 - s
    sharp = min(1.0, 2.0 * s / denom) if denom > 0 else 1.0
    return sharp, min(1.0, 4.0 * s)


@dataclass(frozen=True)
class Ellipsoid:
    """``{v : ||D (v - center)|| <= radius}`` with ``D^2 = metric``."""

    center: np.ndarray
    metric: np.ndarray
    radius: float

    def contains(self, points) -> np.ndarray:
        P = np.atleast_2d(points) - self.center
        return np.einsum("ij,jk,ik->i", P, self.metric, P) <= self.radius ** 2

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "metric": self.metric.tolist(), "radius": self.radius}


def concentration_radius(p_eff: float, x: float, nu: float = 2.0 / 3.0, center=None, metric=None,
                         omega: float | None = None):
    """``r = 2 sqrt(p) + sqrt(2x)`` and the local set of radius ``r / nu``.

    Returns ``(r, description)``; the description holds the ellipsoid when a
    centre and metric are supplied and the status of ``omega <= 1/3``.
    """
    if p_eff < 0 or x < 0 or not (0 < nu <= 1):
        raise ValueError("need p_eff >= 0, x >= 0 and 0 < nu <= 1")
    r = 2.0 * math.sqrt(p_eff) + math.sqrt(2.0 * x)
    desc: dict = {"r": r, "local_radius": r / nu, "nu": nu, "mass_bound": math.exp(-x)}
    if center is not None and metric is not None:
        desc["ellipsoid"] = Ellipsoid(np.atleast_1d(np.asarray(center, dtype=float)),
                                      np.atleast_2d(np.asarray(metric, dtype=float)), r / nu)
    if omega is not None:
        desc["omega_condition"] = Condition.leq("omega <= 1/3", omega, 1.0 / 3.0)
    return r, desc


def classify_dimension(p_eff: float, n: float, tau3: float, x: float, nu: float = 2.0 / 3.0) -> dict:
    """Critical-dimension classification from the two radius conditions."""
    r = 2.0 * math.sqrt(p_eff) + math.sqrt(2.0 * x)
    conc = Condition.leq("tau3 r / nu <= 3/4", tau3 * r / nu, 0.75)
    gauss = Condition.leq("tau3 r p / nu <= 2", tau3 * r * p_eff / nu, 2.0)
    if p_eff >= n or not conc.satisfied:
        label = "invalid"
    elif gauss.satisfied:
        label = "gaussian-approx-valid"
    elif p_eff >= n ** (1.0 / 3.0):
        label = "gap-region"
    else:
        label = "concentration-valid"
    return {
        "n": n,
        "p_eff": p_eff,
        "p_over_n": p_eff / n,
        "p_cubed_over_n": p_eff ** 3 / n,
        "classification": label,
        "conditions": [conc.to_dict(), gauss.to_dict()],
    }


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------


@dataclass
class LaplaceCertificate:
    x: float
    nu: float
    n: int
    p_eff: float
    r: float
    omega: float
    omega_source: str
    tau3: float
    tau4: float | None
    diamond2: float | None
    diamond3: float | None
    diamond4: float | None
    tv_bound_borel: float
    tv_bound_borel_simple: float
    tv_bound_symmetric: float
    tv_bound_symmetric_simple: float
    kl_bound: float
    kl_bound_simple: float
    concentration_bound: float
    critical_ratio: float
    classification: str
    conditions: list
    sound: bool
    mode: np.ndarray
    D2: np.ndarray
    DG2: np.ndarray
    retained: np.ndarray
    smoothness: SmoothnessConstants | None
    mean_constant: float = 1.0
    sensitivity: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def condition(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def concentration_valid(self) -> bool:
        return self.condition("tau3 r / nu <= 3/4").satisfied

    @property
    def gaussian_valid(self) -> bool:
        return self.concentration_valid and self.condition("tau3 r p / nu <= 2").satisfied

    @property
    def all_conditions_hold(self) -> bool:
        return self.sound and all(c.satisfied for c in self.conditions)

    @property
    def local_radius(self) -> float:
        return self.r / self.nu

    def ellipsoid(self, radius: float | None = None) -> Ellipsoid:
        return Ellipsoid(self.mode[self.retained], self.D2, self.local_radius if radius is None else radius)

    def mean_shift_bound(self, Q=None, C: float | None = None) -> float:
        return posterior_mean_bound(self, Q, C)

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "nu": self.nu,
            "n": self.n,
            "p_eff": self.p_eff,
            "r": self.r,
            "local_radius": self.local_radius,
            "omega": self.omega,
            "omega_source": self.omega_source,
            "tau3": self.tau3,
            "tau4": self.tau4,
            "diamond2": self.diamond2,
            "diamond3": self.diamond3,
            "diamond4": self.diamond4,
            "tv_bound_borel": self.tv_bound_borel,
            "tv_bound_borel_simple": self.tv_bound_borel_simple,
            "tv_bound_symmetric": self.tv_bound_symmetric,
            "tv_bound_symmetric_simple": self.tv_bound_symmetric_simple,
            "tv_vacuous": self.tv_bound_borel >= 1.0,
            "kl_bound": self.kl_bound,
            "kl_bound_simple": self.kl_bound_simple,
            "mean_bound": self.mean_shift_bound(),
            "mean_constant": self.mean_constant,
            "mean_bound_modulo_absolute_constant": True,
            "concentration_bound": self.concentration_bound,
            "critical_ratio": self.critical_ratio,
            "classification": self.classification,
            "sound": self.sound,
            "conditions": [c.to_dict() for c in self.conditions],
            "mode": self.mode.tolist(),
            "retained": self.retained.tolist(),
            "smoothness": None if self.smoothness is None else self.smoothness.to_dict(),
            "sensitivity": dict(self.sensitivity),
            "notes": list(self.notes),
        }


def restrict_model(model: ConcaveModel, keep: np.ndarray) -> ConcaveModel:
    """The model on the coordinates ``keep`` with the rest pinned at zero."""
    keep = np.asarray(keep, dtype=int)
    if keep.size == model.dim and np.array_equal(keep, np.arange(model.dim)):
        return model
    if isinstance(model, LogisticModel):
        return LogisticModel(model.X[:, keep], model.y, theta_star=model.theta_star)
    if isinstance(model, QuadraticModel):
        bexp = None if model.b_expected is None else model.b_expected[keep]
        V2 = None if model._V2 is None else model._V2[np.ix_(keep, keep)]
        return QuadraticModel(model.A[np.ix_(keep, keep)], model.b[keep], model.n, bexp, V2)
    if isinstance(model, LogDensityModel):
        if not np.array_equal(keep, np.arange(keep.size)):
            raise ValueError("log-density models can only be truncated to a leading block of the basis")
        if model.upsilon_star is not None and np.any(model.upsilon_star[keep.size:] != 0):
            # the truth lives outside the retained block: keep the data, drop the truth
            return LogDensityModel(model.basis, keep.size, model.samples, None, panels=model.panels)
        star = None if model.upsilon_star is None else model.upsilon_star[keep]
        return LogDensityModel(model.basis, keep.size, model.samples, star, panels=model.panels)
    raise TypeError(f"cannot restrict model of type {type(model).__name__}")


def _p_eff(D2: np.ndarray, DG2: np.ndarray) -> float:
    return float(np.trace(np.linalg.solve(DG2, D2)))


def certify(
    fit: FitResult,
    model: ConcaveModel,
    x: float = 3.0,
    nu: float = 2.0 / 3.0,
    route: str = "auto",
    omega_source: str = "analytic",
    mean_constant: float = 1.0,
    smoothness: SmoothnessConstants | None = None,
    population=None,
) -> LaplaceCertificate:
    """Assemble the certificate at the penalized mode of ``fit``.

    ``route`` selects how ``tau3``/``tau4`` are obtained (see
    ``ConcaveModel.smoothness``).  ``omega_source="empirical"`` replaces
    ``omega = tau3 r/(3 nu)`` by a sampled estimate; such certificates are
    never marked sound.  ``population`` (the population counterpart of the
    mode) adds a sensitivity entry evaluated there.
    """
    if x < 0 or not (0 < nu <= 1):
        raise ValueError("need x >= 0 and 0 < nu <= 1")
    notes: list[str] = []
    D2, DG2 = fit.D2, fit.DG2
    p_eff = _p_eff(D2, DG2)
    p_ambient = D2.shape[0]
    if p_eff > p_ambient + 1e-9:
        raise FloatingPointError("effective dimension exceeds the ambient dimension")
    r = 2.0 * math.sqrt(max(p_eff, 0.0)) + math.sqrt(2.0 * x)
    work = restrict_model(model, fit.retained)
    v = fit.mode_reduced
    if smoothness is None:
        try:
            smoothness = work.smoothness(v, r, nu, route)
        except np.linalg.LinAlgError as exc:
            notes.append(f"smoothness unavailable: {exc}")
            smoothness = None
    if smoothness is None:
        tau3, tau4, certified = math.inf, None, False
    else:
        tau3, tau4, certified = smoothness.tau3, smoothness.tau4, smoothness.certified
    omega_analytic = tau3 * r / (3.0 * nu)
    if omega_source == "analytic":
        omega = omega_analytic
    elif omega_source == "empirical":
        omega = empirical_omega(work, v, r, nu=nu)
        notes.append(f"omega from sampled remainders (analytic value {omega_analytic:.6g})")
    else:
        raise ValueError("omega_source must be 'analytic' or 'empirical'")
    if fit.curvature_shift is not None:
        notes.append("tau3 measured in the unshifted likelihood metric")

    conc = Condition.leq("tau3 r / nu <= 3/4", tau3 * r / nu, 0.75)
    gauss = Condition.leq("tau3 r p / nu <= 2", tau3 * r * p_eff / nu, 2.0)
    om_p = Condition.leq("omega p <= 2/3", omega * p_eff, 2.0 / 3.0)
    om_c = Condition.leq("omega <= 1/3", omega, 1.0 / 3.0)
    conditions = [conc, gauss, om_p, om_c]
    if smoothness is not None:
        for g in smoothness.guards:
            if smoothness.source == "analytic":
                conditions.append(Condition(g["name"], g["lhs"], g["rhs"], g["satisfied"]))
    conditions.append(Condition("fit converged", 0.0 if fit.converged else 1.0, 0.0, fit.converged))

    d2 = diamond2(omega, p_eff) if (om_p.satisfied and omega < 1) else None
    d3 = diamond3(tau3, p_eff, omega) if (conc.satisfied and gauss.satisfied) else None
    d4 = None
    if d3 is not None and tau4 is not None and math.isfinite(tau4):
        d4 = diamond4(tau3, tau4, p_eff, omega)
    borel_candidates = [d for d in (d2, d3) if d is not None]
    d_borel = min(borel_candidates) if borel_candidates else None
    d_sym = min([d for d in (d_borel, d4) if d is not None], default=None)
    tv_b, tv_b4 = tv_from_diamond(d_borel, x)
    tv_s, tv_s4 = tv_from_diamond(d_sym, x)
    ex = math.exp(-x)
    if d3 is not None and om_p.satisfied:
        kl = 4.0 * d3 + 4.0 * ex
        kl_simple = 2.0 * tau3 * (p_eff + 1.0) ** 1.5 + 4.0 * ex
    else:
        kl = kl_simple = math.inf
    n = getattr(work, "n", 1)
    cls = classify_dimension(p_eff, n, tau3, x, nu)["classification"] if math.isfinite(tau3) else "invalid"
    sound = bool(certified and omega_source == "analytic" and fit.converged)
    cert = LaplaceCertificate(
        x=float(x), nu=float(nu), n=int(n), p_eff=p_eff, r=r, omega=float(omega), omega_source=omega_source,
        tau3=float(tau3), tau4=None if tau4 is None else float(tau4), diamond2=d2, diamond3=d3, diamond4=d4,
        tv_bound_borel=tv_b, tv_bound_borel_simple=tv_b4, tv_bound_symmetric=tv_s,
        tv_bound_symmetric_simple=tv_s4, kl_bound=kl, kl_bound_simple=kl_simple, concentration_bound=ex,
        critical_ratio=p_eff ** 3 / n, classification=cls, conditions=conditions, sound=sound,
        mode=fit.upsilon_hat.copy(), D2=D2.copy(), DG2=DG2.copy(), retained=fit.retained.copy(),
        smoothness=smoothness, mean_constant=mean_constant, notes=notes,
    )
    pop = population if population is not None else fit.population_counterpart
    if pop is not None and smoothness is not None:
        cert.sensitivity = _sensitivity(work, fit, np.asarray(pop, dtype=float)[fit.retained], x, nu, route)
    return cert


def _sensitivity(work, fit, pop, x, nu, route) -> dict:
    try:
        D2p = work.hessian(pop)
        if fit.curvature_shift is not None:
            D2p = D2p + fit.curvature_shift
        p_pop = _p_eff(D2p, D2p + fit.G2)
        r_pop = 2.0 * math.sqrt(p_pop) + math.sqrt(2.0 * x)
        sm = work.smoothness(pop, r_pop, nu, route)
        om = sm.tau3 * r_pop / (3.0 * nu)
        return {"evaluated_at": "population", "p_eff": p_pop, "tau3": sm.tau3,
                "diamond3": diamond3(sm.tau3, p_pop, om) if om < 1 else None}
    except (np.linalg.LinAlgError, ValueError) as exc:
        return {"evaluated_at": "population", "error": str(exc)}


# ---------------------------------------------------------------------------
# KL and posterior mean
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KLBounds:
    forward: float
    forward_simple: float
    reverse: float | None
    C_ell: float | None
    reverse_conditional: bool = True

    def __iter__(self):
        return iter((self.forward, self.reverse))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _root(M, power):
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return (U * w ** power) @ U.T


def estimate_C_ell(cert: LaplaceCertificate, model: ConcaveModel, step: float | None = None,
                   half_width: float = 12.0) -> float:
    """Gaussian-normalised integral of the likelihood Bregman remainder (``p <= 2``).

    ``int |l(x*; u)| exp(rho ||D u||^2/2) N(0, D_G^{-2})(du)`` with
    ``rho = 2x/r^2``, on a tensor grid in ``z = D_G u``.
    """
    work = restrict_model(model, cert.retained)
    p = cert.D2.shape[0]
    if p > 2:
        raise PreconditionError("C_ell quadrature is limited to p <= 2")
    step = step or (0.05 if p == 1 else 0.2)
    axis = np.arange(-half_width, half_width + step / 2, step)
    Z = np.stack(np.meshgrid(*([axis] * p), indexing="ij"), axis=-1).reshape(-1, p)
    R = _root(cert.DG2, -0.5)
    U = Z @ R
    v = cert.mode[cert.retained]
    base = work.loglik(v)
    grad = work.grad(v)
    rem = work.loglik_many(v[None, :] + U) - base - U @ grad
    rho = 2.0 * cert.x / cert.r ** 2
    quad = np.einsum("ij,jk,ik->i", U, cert.D2, U)
    logw = -0.5 * (Z * Z).sum(axis=1) + 0.5 * rho * quad
    vals = np.abs(rem) * np.exp(logw) * step ** p / (2 * math.pi) ** (p / 2)
    return float(vals.sum())


def kl_bounds(cert: LaplaceCertificate, model: ConcaveModel | None = None, fit: FitResult | None = None,
              C_ell: float | None = None) -> KLBounds:
    """Forward bound ``KL(posterior, Laplace)`` and, given ``C_ell``, the reverse one.

    When ``C_ell`` is omitted and a model with ``p <= 2`` is supplied it is
    estimated by quadrature (the reverse bound is then conditional on that
    estimate).
    """
    forward, simple = cert.kl_bound, cert.kl_bound_simple
    if C_ell is None and model is not None and cert.D2.shape[0] <= 2 and math.isfinite(forward):
        C_ell = estimate_C_ell(cert, model)
    reverse = None
    if C_ell is not None and math.isfinite(forward):
        reverse = cert.tau3 * (cert.p_eff + 1.0) ** 1.5 + (2.0 + C_ell) * math.exp(-cert.x)
    return KLBounds(forward, simple, reverse, C_ell)


def posterior_mean_bound(cert: LaplaceCertificate, Q=None, C: float | None = None) -> float:
    """``2.4 tau3 ||Q D_G^{-2} Q^T||^{1/2} (p+1)^{3/2} + C e^{-x}``, requires ``Q^T Q <= D^2``.

    ``Q`` defaults to ``D``.  ``C`` stands in for an unspecified absolute
    constant (default: the certificate's ``mean_constant``).  The bound is
    ``inf`` when the Gaussian-approximation conditions fail.
    """
    C = cert.mean_constant if C is None else C
    D2 = cert.D2
    Q = _root(D2, 0.5) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != D2.shape[0]:
        raise ValueError("Q has the wrong number of columns")
    gap = np.linalg.eigvalsh(D2 - Q.T @ Q)[0]
    if gap < -1e-10 * max(1.0, float(np.abs(D2).max())):
        raise PreconditionError("Q^T Q <= D^2 is violated")
    if not cert.gaussian_valid:
        return math.inf
    S = Q @ np.linalg.solve(cert.DG2, Q.T)
    scale = math.sqrt(max(float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1]), 0.0))
    return 2.4 * cert.tau3 * scale * (cert.p_eff + 1.0) ** 1.5 + C * math.exp(-cert.x)


def critical_dimension_report(cert: LaplaceCertificate, n: float | None = None) -> dict:
    n = cert.n if n is None else n
    if not math.isfinite(cert.tau3):
        return {"n": n, "p_eff": cert.p_eff, "p_over_n": cert.p_eff / n, "p_cubed_over_n": cert.p_eff ** 3 / n,
                "classification": "invalid", "conditions": []}
    return classify_dimension(cert.p_eff, n, cert.tau3, cert.x, cert.nu)
