"""Concave log-likelihood models.

Every model exposes the data log-likelihood ``L``, its gradient and the
positive curvature ``D^2(v) = -grad^2 E L(v)``.  In the models shipped here
the curvature is data independent (the stochastic part of ``L`` is linear),
which is what makes ``D^2`` computable at any point without knowing the
truth.  When a synthetic truth is attached the expected log-likelihood, the
score ``grad zeta = grad L - grad E L`` and its variance ``V^2`` are
available as well.

Smoothness constants (``tau3``, ``tau4``) can be obtained along several
routes, see :class:`SmoothnessConstants`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import qmc

from . import _kernels

__all__ = [
    "SmoothnessConstants",
    "DesignConstants",
    "LogDensityConstants",
    "ConcaveModel",
    "QuadraticModel",
    "LogisticModel",
    "LogDensityModel",
    "phi_derivatives",
    "logistic_loglik",
    "design_constants",
    "logistic_smoothness",
    "empirical_omega",
    "logdensity_cumulant",
    "logdensity_constants",
    "bernoulli_sampler",
    "logdensity_sampler",
    "sphere_directions",
]

SQRT_E = math.sqrt(math.e)


# ---------------------------------------------------------------------------
# logistic link
# ---------------------------------------------------------------------------


def phi_derivatives(v, k: int):
    """k-th derivative of ``phi(v) = log(1 + e^v)`` for ``k = 0..4``.

    All forms are written through ``sigma = expit(v)`` and ``sigma(1 - sigma)
    = expit(v) expit(-v)`` so nothing overflows; for ``|v| > 700`` the
    exponentials underflow to the exact asymptotes.
    """
    if k not in (0, 1, 2, 3, 4):
        raise ValueError("k must be one of 0..4")
    v = np.asarray(v, dtype=float)
    if k == 0:
        out = np.logaddexp(0.0, v)
    elif k == 1:
        out = expit(v)
    else:
        s = expit(v)
        w = s * expit(-v)
        if k == 2:
            out = w
        elif k == 3:
            out = w * (1.0 - 2.0 * s)
        else:
            out = w * (1.0 - 6.0 * w)
    return float(out) if out.ndim == 0 else out


def _softplus_remainder(eta: np.ndarray, a: np.ndarray, order: int) -> np.ndarray:
    """``phi(eta + a) - sum_{k<order} phi^{(k)}(eta) a^k / k!`` elementwise.

    Uses a Taylor series for small ``|a|`` to avoid cancellation.
    """
    direct = np.logaddexp(0.0, eta + a) - np.logaddexp(0.0, eta)
    terms = [phi_derivatives(eta, k) for k in (1, 2, 3, 4)]
    facts = [1.0, 2.0, 6.0, 24.0]
    for k in range(1, order):
        direct = direct - terms[k - 1] * a ** k / facts[k - 1]
    small = np.abs(a) < 1e-2
    if np.any(small):
        # series of the remainder: sum_{k>=order} phi^{(k)} a^k / k!, truncated at k = 7
        s = expit(eta[small])
        aa = a[small]
        derivs = _logistic_higher(s)
        approx = np.zeros_like(aa)
        fact = 1.0
        for k in range(1, 8):
            fact *= k
            if k >= order:
                approx += derivs[k] * aa ** k / fact
        direct[small] = approx
    return direct


def _logistic_higher(s: np.ndarray) -> dict:
    """Derivatives 1..7 of softplus expressed as polynomials in ``s = sigma``."""
    # d/dv s = s(1-s); derivatives generated by the recursion P_{k+1} = P_k'(s) s (1-s)
    polys = {1: np.poly1d([1.0, 0.0])}
    ds = np.poly1d([-1.0, 1.0, 0.0])  # s - s^2
    for k in range(1, 7):
        polys[k + 1] = polys[k].deriv() * ds
    return {k: polys[k](s) for k in polys}


def logistic_loglik(model: "LogisticModel", upsilon) -> float:
    """``sum_i Y_i <Psi_i, v> - log(1 + e^{<Psi_i, v>})``."""
    return model.loglik(upsilon)


# ---------------------------------------------------------------------------
# smoothness bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothnessConstants:
    """Third and fourth order Taylor-remainder constants at one point.

    ``tau3`` and ``tau4`` are the constants of the bounds
    ``|delta_3| <= tau3/6 ||D u||^3`` and ``|delta_4| <= tau4/24 ||D u||^4``
    on the local set ``{||D u|| <= radius}``.  ``source`` is one of

    * ``"exact"``: quadratic model, all remainders vanish;
    * ``"analytic"``: ``tau3 = c3/sqrt(n)``, ``tau4 = c4/n`` from design constants,
      valid only when the guard inequalities hold;
    * ``"direct"``: a bound proved from the Hessian-variability inequality on the
      local set (no guard needed);
    * ``"grid-estimated"``: a sampled supremum, reported but never certified.
    """

    tau3: float
    tau4: float | None
    radius: float
    n: int
    source: str
    certified: bool
    c3: float | None = None
    c4: float | None = None
    guards: tuple = ()
    alternatives: dict = field(default_factory=dict)
    notes: tuple = ()
    tau3_fn: Callable[[float], float] | None = field(default=None, compare=False, repr=False)
    tau4_fn: Callable[[float], float] | None = field(default=None, compare=False, repr=False)

    def omega_bound(self) -> float:
        """``omega <= tau3 * radius / 3``."""
        return self.tau3 * self.radius / 3.0

    def to_dict(self) -> dict:
        return {
            "tau3": self.tau3,
            "tau4": self.tau4,
            "c3": self.c3,
            "c4": self.c4,
            "radius": self.radius,
            "n": self.n,
            "source": self.source,
            "certified": self.certified,
            "guards": [dict(g) for g in self.guards],
            "alternatives": dict(self.alternatives),
            "notes": list(self.notes),
        }


def _guard(name: str, lhs: float, rhs: float) -> dict:
    return {"name": name, "lhs": float(lhs), "rhs": float(rhs), "satisfied": bool(lhs <= rhs)}


def sphere_directions(p: int, count: int, seed: int = 0) -> np.ndarray:
    """Unit directions: the ``2p`` coordinate directions plus scrambled Sobol points."""
    eye = np.eye(p)
    base = [eye, -eye]
    if p == 1:
        return np.vstack(base)
    extra = max(count - 2 * p, 0)
    if extra:
        m = int(math.ceil(math.log2(max(extra, 2))))
        pts = qmc.Sobol(d=p, scramble=True, seed=seed).random_base2(m)[:extra]
        g = np.sqrt(2.0) * _erfinv(2.0 * np.clip(pts, 1e-12, 1 - 1e-12) - 1.0)
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        base.append(g)
    return np.vstack(base)


def _erfinv(x):
    from scipy.special import erfinv

    return erfinv(x)


def _inv_sqrt(mat: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (mat + mat.T))
    if w[0] <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return (U / np.sqrt(w)) @ U.T


# ---------------------------------------------------------------------------
# model base class
# ---------------------------------------------------------------------------


class ConcaveModel:
    """Interface shared by all models.  Subclasses fill in the numerics."""

    kind = "abstract"
    n: int
    dim: int

    # data side -----------------------------------------------------------
    def loglik(self, upsilon) -> float:
        raise NotImplementedError

    def grad(self, upsilon) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, upsilon) -> np.ndarray:
        """``D^2(v)``, the negative Hessian of the expected log-likelihood."""
        raise NotImplementedError

    def loglik_many(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.array([self.loglik(u) for u in points])

    # truth side ----------------------------------------------------------
    @property
    def has_truth(self) -> bool:
        return False

    def expected_loglik(self, upsilon) -> float:
        raise NotImplementedError("model has no synthetic truth attached")

    def expected_grad(self, upsilon) -> np.ndarray:
        raise NotImplementedError("model has no synthetic truth attached")

    def variance_matrix(self) -> np.ndarray:
        raise NotImplementedError("model has no synthetic truth attached")

    def score(self) -> np.ndarray:
        """``grad zeta = grad L - grad E L`` (constant in ``v``)."""
        raise NotImplementedError("model has no synthetic truth attached")

    def truth_point(self) -> np.ndarray | None:
        return None

    # smoothness ----------------------------------------------------------
    def delta3(self, upsilon, steps: np.ndarray) -> np.ndarray:
        """Third-order Taylor remainder of ``L`` at ``v`` for each row of ``steps``."""
        raise NotImplementedError

    def third_directional(self, points: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """``<grad^3 L(point), d^{x3}>`` for each row of ``points``."""
        raise NotImplementedError

    def fourth_directional(self, points: np.ndarray, direction: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def smoothness(self, upsilon, r: float, nu: float = 2.0 / 3.0, route: str = "auto") -> SmoothnessConstants:
        raise NotImplementedError

    def grid_smoothness(
        self, upsilon, radius: float, n_dirs: int = 256, n_steps: int = 65, seed: int = 0
    ) -> tuple[float, float]:
        """Sampled sup of the normalised third/fourth directional derivatives.

        Directions ``d`` are normalised to ``||D d|| = 1`` and the derivative is
        taken at ``v + s d`` for ``s`` on a grid of ``[-radius, radius]``.
        """
        v = np.asarray(upsilon, dtype=float)
        D2 = self.hessian(v)
        root_inv = _inv_sqrt(D2)
        dirs = sphere_directions(self.dim, n_dirs, seed) @ root_inv
        steps = np.linspace(-radius, radius, n_steps)
        t3 = t4 = 0.0
        for d in dirs:
            pts = v[None, :] + steps[:, None] * d[None, :]
            t3 = max(t3, float(np.max(np.abs(self.third_directional(pts, d)))))
            t4 = max(t4, float(np.max(np.abs(self.fourth_directional(pts, d)))))
        return t3, t4

    def describe(self) -> dict:
        return {"kind": self.kind, "n": self.n, "p": self.dim}


# ---------------------------------------------------------------------------
# quadratic (Gaussian) model
# ---------------------------------------------------------------------------


class QuadraticModel(ConcaveModel):
    """``L(v) = <b, v> - v^T A v / 2``; all higher remainders vanish."""

    kind = "quadratic"

    def __init__(self, A, b, n: int = 1, b_expected=None, V2=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.dim = self.A.shape[0]
        self.n = int(n)
        self.b_expected = None if b_expected is None else np.atleast_1d(np.asarray(b_expected, dtype=float))
        self._V2 = None if V2 is None else np.asarray(V2, dtype=float)

    def loglik(self, upsilon) -> float:
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        return float(self.b @ v - 0.5 * v @ self.A @ v)

    def loglik_many(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        return P @ self.b - 0.5 * np.einsum("ij,jk,ik->i", P, self.A, P)

    def grad(self, upsilon):
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        return self.b - self.A @ v

    def hessian(self, upsilon):
        return self.A.copy()

    @property
    def has_truth(self) -> bool:
        return self.b_expected is not None

    def expected_loglik(self, upsilon):
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        return float(self.b_expected @ v - 0.5 * v @ self.A @ v)

    def expected_grad(self, upsilon):
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        return self.b_expected - self.A @ v

    def variance_matrix(self):
        return self.A.copy() if self._V2 is None else self._V2.copy()

    def score(self):
        return self.b - self.b_expected

    def truth_point(self):
        if self.b_expected is None:
            return None
        return np.linalg.solve(self.A, self.b_expected)

    def delta3(self, upsilon, steps):
        return np.zeros(np.atleast_2d(steps).shape[0])

    def third_directional(self, points, direction):
        return np.zeros(np.atleast_2d(points).shape[0])

    def fourth_directional(self, points, direction):
        return np.zeros(np.atleast_2d(points).shape[0])

    def smoothness(self, upsilon, r, nu=2.0 / 3.0, route="auto"):
        return SmoothnessConstants(
            tau3=0.0, tau4=0.0, radius=r / nu, n=self.n, source="exact", certified=True, c3=0.0, c4=0.0,
            alternatives={"exact": 0.0},
        )


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------


class LogisticModel(ConcaveModel):
    """Logistic regression with design rows ``Psi_i`` and binary labels."""

    kind = "logistic"

    def __init__(self, design, labels, theta_star=None, upsilon_star=None):
        X = np.asarray(design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(labels, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError("design rows and labels differ in length")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be binary")
        self.X = np.ascontiguousarray(X)
        self.y = np.ascontiguousarray(y)
        self.n, self.dim = X.shape
        self.upsilon_star = None if upsilon_star is None else np.asarray(upsilon_star, dtype=float)
        if theta_star is None and self.upsilon_star is not None:
            theta_star = expit(self.X @ self.upsilon_star)
        if theta_star is not None:
            theta_star = np.asarray(theta_star, dtype=float).ravel()
            if theta_star.size != self.n or np.any((theta_star <= 0) | (theta_star >= 1)):
                raise ValueError("theta_star must lie in (0, 1) and match n")
        self.theta_star = theta_star

    # data side -----------------------------------------------------------
    def _eta(self, upsilon):
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        if v.size != self.dim:
            raise ValueError(f"expected a vector of length {self.dim}")
        return self.X @ v

    def loglik(self, upsilon) -> float:
        eta = self._eta(upsilon)
        return float(self.y @ eta - np.logaddexp(0.0, eta).sum())

    def loglik_many(self, points):
        return _kernels.logistic_loglik_many(self.X, self.y, np.atleast_2d(points))

    def grad(self, upsilon):
        eta = self._eta(upsilon)
        return self.X.T @ (self.y - expit(eta))

    def weights(self, upsilon) -> np.ndarray:
        return phi_derivatives(self._eta(upsilon), 2)

    def hessian(self, upsilon):
        w = self.weights(upsilon)
        return (self.X * w[:, None]).T @ self.X

    # truth side ----------------------------------------------------------
    @property
    def has_truth(self) -> bool:
        return self.theta_star is not None

    def expected_loglik(self, upsilon):
        self._need_truth()
        eta = self._eta(upsilon)
        return float(self.theta_star @ eta - np.logaddexp(0.0, eta).sum())

    def expected_grad(self, upsilon):
        self._need_truth()
        return self.X.T @ (self.theta_star - expit(self._eta(upsilon)))

    def variance_matrix(self):
        self._need_truth()
        w = self.theta_star * (1.0 - self.theta_star)
        return (self.X * w[:, None]).T @ self.X

    def score(self):
        self._need_truth()
        return self.X.T @ (self.y - self.theta_star)

    def truth_point(self):
        return self.upsilon_star

    def _need_truth(self):
        if self.theta_star is None:
            raise ValueError("model has no synthetic truth attached")

    # smoothness ----------------------------------------------------------
    def delta3(self, upsilon, steps):
        eta = self._eta(upsilon)
        A = np.atleast_2d(steps) @ self.X.T
        rem = _softplus_remainder(np.broadcast_to(eta, A.shape).copy(), A, 3)
        return -rem.sum(axis=1)

    def third_directional(self, points, direction):
        P = np.atleast_2d(points)
        a = self.X @ np.asarray(direction, dtype=float)
        return -(phi_derivatives(P @ self.X.T, 3) * a ** 3).sum(axis=1)

    def fourth_directional(self, points, direction):
        P = np.atleast_2d(points)
        a = self.X @ np.asarray(direction, dtype=float)
        return -(phi_derivatives(P @ self.X.T, 4) * a ** 4).sum(axis=1)

    def direct_tau(self, upsilon, radius: float) -> tuple[float, float]:
        """Certified ``tau3``, ``tau4`` on ``{||D u|| <= radius}`` without guards.

        With ``a_i = D^{-1} Psi_i`` and ``b_i = ||a_i|| radius`` the variability
        bound ``phi''(t + s) <= e^{|s|} phi''(t)`` and
        ``|phi'''|, |phi''''| <= phi''`` give
        ``|<grad^3 L, u^3>| <= ||D u||^2 max_t t^T M_3 t`` with
        ``M_3 = D^{-1} sum_i phi''_i e^{b_i} ||a_i|| Psi_i Psi_i^T D^{-1}``,
        and the same with ``||a_i||^2`` for the fourth derivative.
        """
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        w = self.weights(v)
        D2 = (self.X * w[:, None]).T @ self.X
        root_inv = _inv_sqrt(D2)
        A = self.X @ root_inv  # rows a_i^T (root_inv symmetric)
        norms = np.linalg.norm(A, axis=1)
        grow = w * np.exp(norms * radius)
        M3 = (A * (grow * norms)[:, None]).T @ A
        M4 = (A * (grow * norms ** 2)[:, None]).T @ A
        return float(np.linalg.eigvalsh(M3)[-1]), float(np.linalg.eigvalsh(M4)[-1])

    def smoothness(self, upsilon, r, nu=2.0 / 3.0, route="auto"):
        radius = r / nu
        analytic = logistic_smoothness(self, upsilon, r, nu)
        t3d, t4d = self.direct_tau(upsilon, radius)
        alternatives = {"analytic": analytic.tau3 if analytic.certified else None, "direct": t3d}
        if route == "grid":
            t3g, t4g = self.grid_smoothness(upsilon, radius)
            alternatives["grid-estimated"] = t3g
            return SmoothnessConstants(
                tau3=t3g, tau4=t4g, radius=radius, n=self.n, source="grid-estimated", certified=False,
                guards=analytic.guards, alternatives=alternatives,
            )
        if route == "analytic":
            return analytic
        if route not in ("auto", "direct"):
            raise ValueError(f"unknown smoothness route {route!r}")
        use_analytic = route == "auto" and analytic.certified and analytic.tau3 <= t3d
        if use_analytic:
            return SmoothnessConstants(
                tau3=analytic.tau3, tau4=min(analytic.tau4, t4d), radius=radius, n=self.n,
                source="analytic", certified=True, c3=analytic.c3, c4=analytic.c4,
                guards=analytic.guards, alternatives=alternatives,
            )
        return SmoothnessConstants(
            tau3=t3d, tau4=t4d, radius=radius, n=self.n, source="direct", certified=True,
            c3=t3d * math.sqrt(self.n), c4=t4d * self.n, guards=analytic.guards,
            alternatives=alternatives,
            tau3_fn=lambda R, _v=np.array(upsilon, dtype=float): self.direct_tau(_v, R)[0],
            tau4_fn=lambda R, _v=np.array(upsilon, dtype=float): self.direct_tau(_v, R)[1],
        )


@dataclass(frozen=True)
class DesignConstants:
    C_n: float
    C_psi: float
    C_psi_lower: float
    C_psi_simple: float

    def to_dict(self) -> dict:
        return {"C_n": self.C_n, "C_psi": self.C_psi, "C_psi_lower": self.C_psi_lower, "C_psi_simple": self.C_psi_simple}


def design_constants(model: LogisticModel, upsilon, n_probe: int = 512, seed: int = 0) -> DesignConstants:
    """Constants of the design condition at ``v``.

    ``C_n = sqrt(n) max_i ||D^{-1} Psi_i||`` is tight for part (i).  For part
    (ii) the exact constant is ``C_psi^2 = n max_{|t|=1} sum_i w_i <a_i, t>^4``
    with ``a_i = D^{-1} Psi_i``.  Two certified upper bounds are combined:
    ``C_n`` itself and ``lambda_max`` of ``sum_i w_i vec(a_i a_i^T) vec(a_i a_i^T)^T``;
    a sampled lower bound over directions brackets the true value.
    """
    v = np.atleast_1d(np.asarray(upsilon, dtype=float))
    w = model.weights(v)
    D2 = (model.X * w[:, None]).T @ model.X
    try:
        np.linalg.cholesky(D2)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("D^2(v) is singular; add a ridge or more observations") from exc
    if np.linalg.eigvalsh(D2)[0] <= 1e-12 * max(1.0, np.trace(D2)):
        raise np.linalg.LinAlgError("D^2(v) is numerically singular; add a ridge or more observations")
    n = model.n
    root_inv = _inv_sqrt(D2)
    A = model.X @ root_inv
    norms = np.linalg.norm(A, axis=1)
    c_n = math.sqrt(n) * float(norms.max())
    p = model.dim
    outer = np.einsum("ij,ik->ijk", A, A).reshape(model.n, p * p)
    M = (outer * w[:, None]).T @ outer
    quartic_upper = float(np.linalg.eigvalsh(M)[-1])
    c_psi_tensor = math.sqrt(n * quartic_upper)
    dirs = sphere_directions(p, n_probe, seed)
    proj = A @ dirs.T
    quartic_lower = float(np.max((w[:, None] * proj ** 4).sum(axis=0)))
    return DesignConstants(
        C_n=c_n, C_psi=min(c_n, c_psi_tensor), C_psi_lower=math.sqrt(n * quartic_lower), C_psi_simple=c_n
    )


def logistic_smoothness(model: LogisticModel, upsilon, r: float, nu: float = 2.0 / 3.0) -> SmoothnessConstants:
    """Analytic constants ``c3 = sqrt(e) C_psi``, ``c4 = sqrt(e) C_psi^2`` with their guards."""
    dc = design_constants(model, upsilon)
    n = model.n
    rn = r / math.sqrt(n)
    guards = (
        _guard("C_n guard", dc.C_n * rn / nu, 0.5),
        _guard("C_psi guard", SQRT_E * dc.C_psi * rn / nu, 1.0 / 3.0),
    )
    valid = all(g["satisfied"] for g in guards)
    c3 = SQRT_E * dc.C_psi
    c4 = SQRT_E * dc.C_psi ** 2
    return SmoothnessConstants(
        tau3=c3 / math.sqrt(n), tau4=c4 / n, radius=r / nu, n=n, source="analytic", certified=valid,
        c3=c3, c4=c4, guards=guards, alternatives={"design": dc.to_dict()},
    )


def empirical_omega(model: ConcaveModel, upsilon, r: float, n_dirs: int = 256, nu: float = 2.0 / 3.0,
                    n_radii: int = 16, seed: int = 0) -> float:
    """Sampled ``omega = sup 2 |delta_3(v, u)| / ||D u||^2`` over ``||D u|| <= r / nu``."""
    v = np.atleast_1d(np.asarray(upsilon, dtype=float))
    D2 = model.hessian(v)
    root_inv = _inv_sqrt(D2)
    dirs = sphere_directions(model.dim, n_dirs, seed) @ root_inv  # ||D d|| = 1
    radius = r / nu
    radii = radius * np.arange(1, n_radii + 1) / n_radii
    steps = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, model.dim)
    d3 = model.delta3(v, steps)
    norms2 = np.repeat(radii ** 2, dirs.shape[0])
    return float(np.max(2.0 * np.abs(d3) / norms2))


def bernoulli_sampler(theta_star, seed) -> np.ndarray:
    """Independent ``Bernoulli(theta_i)`` labels from a seeded PCG64 stream."""
    theta = np.asarray(theta_star, dtype=float)
    if np.any((theta < 0) | (theta > 1)) or not np.all(np.isfinite(theta)):
        raise ValueError("probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    return (rng.random(theta.shape) < theta).astype(float)


# ---------------------------------------------------------------------------
# log-density estimation
# ---------------------------------------------------------------------------


def _basis_values(basis: str, p: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    j = np.arange(1, p + 1, dtype=float)
    if basis == "cosine":
        return math.sqrt(2.0) * np.cos(np.pi * x[:, None] * j[None, :])
    if basis == "monomial":
        return x[:, None] ** j[None, :]
    raise ValueError(f"unknown basis {basis!r}; choose 'cosine' or 'monomial'")


def _gauss_legendre_nodes(panels: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    t, wt = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    w = (half[:, None] * wt[None, :]).ravel()
    return x, w


class LogDensityModel(ConcaveModel):
    """Exponential family ``p_v(x) = exp(<Psi(x), v> - phi(v))`` on ``[0, 1]``.

    The base measure is Uniform[0, 1]; ``phi`` is evaluated by composite
    Gauss-Legendre quadrature, refined by doubling the panel count until the
    cumulant moves by less than ``quad_tol`` at the probe points.
    """

    kind = "logdensity"

    def __init__(self, basis: str, p: int, samples, upsilon_star=None, panels: int = 8,
                 quad_tol: float = 1e-8, probe_points: Sequence | None = None):
        self.basis = basis
        self.dim = int(p)
        x = np.asarray(samples, dtype=float).ravel()
        if np.any((x < 0) | (x > 1)):
            raise ValueError("samples must lie in [0, 1]")
        self.samples = x
        self.n = x.size
        self.S = _basis_values(basis, self.dim, x).sum(axis=0) if x.size else np.zeros(self.dim)
        self.upsilon_star = None if upsilon_star is None else np.asarray(upsilon_star, dtype=float)
        self.quad_tol = quad_tol
        self.panels = int(panels)
        self._set_nodes(self.panels)
        probes = [np.zeros(self.dim)]
        if self.upsilon_star is not None:
            probes.append(self.upsilon_star)
        if probe_points is not None:
            probes.extend(np.atleast_2d(probe_points))
        self.refine(probes)

    def _set_nodes(self, panels):
        self.panels = panels
        x, w = _gauss_legendre_nodes(panels)
        self.nodes = x
        self.log_weights = np.log(w)
        self.features = np.ascontiguousarray(_basis_values(self.basis, self.dim, x))

    def refine(self, points) -> int:
        """Double the panel count until ``phi`` is stable at every probe point."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        for _ in range(12):
            coarse = self._phi_many(P)
            x2, w2 = _gauss_legendre_nodes(2 * self.panels)
            F2 = _basis_values(self.basis, self.dim, x2)
            fine = _kernels.tilted_logsumexp_many(F2, np.log(w2), P)
            if np.max(np.abs(fine - coarse)) < self.quad_tol:
                return self.panels
            self._set_nodes(2 * self.panels)
        raise FloatingPointError("cumulant quadrature failed to converge (non-integrable tilt?)")

    def _phi_many(self, P):
        return _kernels.tilted_logsumexp_many(self.features, self.log_weights, np.atleast_2d(P))

    def cumulant(self, upsilon) -> tuple[float, np.ndarray, np.ndarray]:
        """``(phi, grad phi, grad^2 phi)`` as tilted moments of ``Psi(X)``."""
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        expo = self.log_weights + self.features @ v
        top = expo.max()
        wts = np.exp(expo - top)
        total = wts.sum()
        phi = float(top + math.log(total))
        wts /= total
        mean = wts @ self.features
        cen = self.features - mean
        cov = (cen * wts[:, None]).T @ cen
        return phi, mean, cov

    def tilted_weights(self, upsilon) -> np.ndarray:
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        expo = self.log_weights + self.features @ v
        wts = np.exp(expo - expo.max())
        return wts / wts.sum()

    def directional_cumulants(self, points, direction) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Second, third and fourth cumulants of ``<Psi(X), d>`` under each tilt."""
        P = np.atleast_2d(points)
        proj = self.features @ np.asarray(direction, dtype=float)
        expo = self.log_weights[None, :] + P @ self.features.T
        expo -= expo.max(axis=1, keepdims=True)
        wts = np.exp(expo)
        wts /= wts.sum(axis=1, keepdims=True)
        mean = wts @ proj
        e = proj[None, :] - mean[:, None]
        k2 = (wts * e ** 2).sum(axis=1)
        k3 = (wts * e ** 3).sum(axis=1)
        k4 = (wts * e ** 4).sum(axis=1) - 3.0 * k2 ** 2
        return k2, k3, k4

    # data side -----------------------------------------------------------
    def loglik(self, upsilon) -> float:
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        return float(self.S @ v - self.n * self._phi_many(v[None, :])[0])

    def loglik_many(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        return P @ self.S - self.n * self._phi_many(P)

    def grad(self, upsilon):
        _, mean, _ = self.cumulant(upsilon)
        return self.S - self.n * mean

    def hessian(self, upsilon):
        return self.n * self.cumulant(upsilon)[2]

    # truth side ----------------------------------------------------------
    @property
    def has_truth(self) -> bool:
        return self.upsilon_star is not None

    def _truth_mean(self):
        if self.upsilon_star is None:
            raise ValueError("model has no synthetic truth attached")
        return self.cumulant(self.upsilon_star)[1]

    def expected_loglik(self, upsilon):
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        return float(self.n * (self._truth_mean() @ v - self._phi_many(v[None, :])[0]))

    def expected_grad(self, upsilon):
        return self.n * (self._truth_mean() - self.cumulant(upsilon)[1])

    def variance_matrix(self):
        return self.n * self.cumulant(self.upsilon_star)[2]

    def score(self):
        return self.S - self.n * self._truth_mean()

    def truth_point(self):
        return self.upsilon_star

    # smoothness ----------------------------------------------------------
    def delta3(self, upsilon, steps):
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        U = np.atleast_2d(steps)
        phi, mean, cov = self.cumulant(v)
        # phi(v + u) - phi(v) = log E_v exp<Psi, u>, evaluated with the tilted weights
        wts = self.tilted_weights(v)
        shift = _kernels.tilted_logsumexp_many(self.features, np.log(np.maximum(wts, 1e-300)), U)
        quad = 0.5 * np.einsum("ij,jk,ik->i", U, cov, U)
        return -self.n * (shift - U @ mean - quad)

    def third_directional(self, points, direction):
        k2, k3, k4 = self.directional_cumulants(points, direction)
        return -self.n * k3

    def fourth_directional(self, points, direction):
        k2, k3, k4 = self.directional_cumulants(points, direction)
        return -self.n * k4

    def direct_tau(self, upsilon, radius: float, grid: int = 4097) -> tuple[float, float]:
        """Bound from the oscillation of ``<Psi(x), d>`` over the domain.

        For ``||D d|| = 1`` let ``osc`` be the sup over ``x, x'`` of
        ``|<Psi(x) - Psi(x'), d>|``.  The tilt ``v + s d`` changes the density
        by at most ``e^{|s| osc}``, so ``n kappa_2(v + s d) <= e^{|s| osc}``,
        ``n |kappa_3| <= osc e^{|s| osc}`` and
        ``n |kappa_4| <= max(osc^2, 3 e^{|s| osc}/n) e^{|s| osc}``.
        """
        v = np.atleast_1d(np.asarray(upsilon, dtype=float))
        D2 = self.hessian(v)
        root_inv = _inv_sqrt(D2)
        xs = np.linspace(0.0, 1.0, grid)
        B = _basis_values(self.basis, self.dim, xs) @ root_inv
        if self.dim == 1:
            osc = float(B.max() - B.min())
        else:
            center = 0.5 * (B.max(axis=0) + B.min(axis=0))
            osc = 2.0 * float(np.max(np.linalg.norm(B - center, axis=1)))
        growth = math.exp(radius * osc)
        tau3 = osc * growth
        tau4 = max(osc ** 2, 3.0 * growth / self.n) * growth
        return tau3, tau4

    def smoothness(self, upsilon, r, nu=2.0 / 3.0, route="auto"):
        radius = r / nu
        t3d, t4d = self.direct_tau(upsilon, radius)
        alternatives = {"direct": t3d}
        if route == "grid":
            t3g, t4g = self.grid_smoothness(upsilon, radius)
            alternatives["grid-estimated"] = t3g
            return SmoothnessConstants(
                tau3=t3g, tau4=t4g, radius=radius, n=self.n, source="grid-estimated", certified=False,
                alternatives=alternatives,
            )
        if route == "analytic":
            rho = radius / math.sqrt(self.n)
            consts = logdensity_constants(self, upsilon, rho)
            return SmoothnessConstants(
                tau3=consts.c3 / math.sqrt(self.n), tau4=consts.c4 / self.n, radius=radius, n=self.n,
                source="analytic", certified=False, c3=consts.c3, c4=consts.c4,
                alternatives={**alternatives, "constants": consts.to_dict()},
                notes=("constants are sampled suprema, not certified",),
            )
        if route not in ("auto", "direct"):
            raise ValueError(f"unknown smoothness route {route!r}")
        return SmoothnessConstants(
            tau3=t3d, tau4=t4d, radius=radius, n=self.n, source="direct", certified=True,
            c3=t3d * math.sqrt(self.n), c4=t4d * self.n, alternatives=alternatives,
            tau3_fn=lambda R, _v=np.array(upsilon, dtype=float): self.direct_tau(_v, R)[0],
            tau4_fn=lambda R, _v=np.array(upsilon, dtype=float): self.direct_tau(_v, R)[1],
        )

    def describe(self) -> dict:
        return {"kind": self.kind, "n": self.n, "p": self.dim, "basis": self.basis, "panels": self.panels}


def logdensity_cumulant(model: LogDensityModel, upsilon):
    """``(phi(v), grad phi(v), grad^2 phi(v))``."""
    return model.cumulant(upsilon)


@dataclass(frozen=True)
class LogDensityConstants:
    C_rho: float
    C_psi3: float
    C_psi4: float
    kurtosis_ratio: float
    h_phi: float
    c3: float
    c4: float
    rho: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def logdensity_constants(model: LogDensityModel, upsilon, rho: float, n_dirs: int = 256,
                         n_radii: int = 8, seed: int = 0) -> LogDensityConstants:
    """Sampled constants of the log-density conditions in the ``m(v)``-ball of radius ``rho``.

    ``C_rho`` maximises ``exp phi(v'; u)`` over ``v'`` in the ``rho`` ball and ``u``
    in the ``2 rho`` ball; ``C_psi3`` and ``C_psi4`` maximise the third and fourth
    standardised moments of ``<Psi(X), d>`` over directions and the same tilts.
    ``c4`` uses the fourth-cumulant ratio instead of ``C_psi4 - 3`` so that it
    stays non-negative for light-tailed laws.
    """
    v = np.atleast_1d(np.asarray(upsilon, dtype=float))
    p = model.dim
    _, _, cov = model.cumulant(v)
    m_inv = _inv_sqrt(cov)
    dirs = sphere_directions(p, n_dirs, seed) @ m_inv  # ||m d|| = 1
    if rho > 0:
        fracs = np.arange(0, n_radii + 1) / n_radii
        centers = np.vstack([v] + [v + rho * f * d for d in dirs[: 2 * p + 8] for f in fracs[1:]])
    else:
        centers = v[None, :]
    c_rho = 1.0
    c3 = 0.0
    c4 = 0.0
    kurt = 0.0
    for c in centers:
        phi_c, mean_c, cov_c = model.cumulant(c)
        if rho > 0:
            steps = (2.0 * rho * np.arange(1, n_radii + 1)[:, None, None] / n_radii * dirs[None]).reshape(-1, p)
            breg = model._phi_many(c[None, :] + steps) - phi_c - steps @ mean_c
            c_rho = max(c_rho, float(np.exp(breg.max())))
        for d in dirs:
            k2, k3, k4 = model.directional_cumulants(c[None, :], d)
            m4 = k4 + 3.0 * k2 ** 2
            c3 = max(c3, float(np.abs(k3[0]) / k2[0] ** 1.5))
            c4 = max(c4, float(m4[0] / k2[0] ** 2))
            kurt = max(kurt, float(np.abs(k4[0]) / k2[0] ** 2))
    c4 = max(c4, 3.0)
    h_phi = math.sqrt(c4 * c_rho)
    return LogDensityConstants(
        C_rho=c_rho, C_psi3=c3, C_psi4=c4, kurtosis_ratio=kurt, h_phi=h_phi,
        c3=c3 * h_phi ** 1.5, c4=kurt * h_phi ** 2, rho=float(rho),
    )


def logdensity_sampler(upsilon_star, n: int, seed, basis: str = "cosine", grid: int = 16385) -> np.ndarray:
    """Inverse-CDF sampling from ``exp(<Psi(x), v*> - phi(v*))`` on ``[0, 1]``."""
    v = np.atleast_1d(np.asarray(upsilon_star, dtype=float))
    xs = np.linspace(0.0, 1.0, grid)
    logd = _basis_values(basis, v.size, xs) @ v
    dens = np.exp(logd - logd.max())
    cells = 0.5 * (dens[1:] + dens[:-1]) * np.diff(xs)
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    u = rng.random(int(n))
    return np.interp(u, cdf, xs)
