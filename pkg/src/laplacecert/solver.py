"""Damped Newton solver for the penalized log-likelihood ``L(v) - ||G v||^2 / 2``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ConcaveModel
from .penalty import PenaltyDiagonal, PenaltySpec, build_penalty

__all__ = [
    "NotConcaveError",
    "FitDivergenceError",
    "PenalizedObjective",
    "FitResult",
    "fit_pmle",
    "population_fit",
    "fisher_residual",
]

ARMIJO_C = 0.25
ARMIJO_BETA = 0.5
# objective gains below this many ulps of |f| are treated as rounding noise
NOISE_ULPS = 1e4


class NotConcaveError(np.linalg.LinAlgError):
    """The penalized curvature is not positive definite."""


class FitDivergenceError(RuntimeError):
    """Newton iterations failed to converge; ``trace`` holds the decrements."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = list(trace)


class PenalizedObjective:
    """``L_G(v) = L(v) - <G^2 v, v>/2`` on the retained coordinates.

    Coordinates removed by a truncation prior are pinned at zero; every method
    takes and returns vectors of the reduced dimension.  ``expected=True``
    switches to the expected log-likelihood of a synthetic-truth model.
    """

    def __init__(self, model: ConcaveModel, penalty=None, expected: bool = False):
        self.model = model
        self.expected = expected
        p = model.dim
        if penalty is None:
            self.retained = np.arange(p)
            self.G2 = np.zeros((p, p))
        elif isinstance(penalty, (PenaltySpec, PenaltyDiagonal)):
            diag = build_penalty(penalty) if isinstance(penalty, PenaltySpec) else penalty
            if diag.p != p:
                raise ValueError("penalty dimension differs from the model dimension")
            self.retained = diag.retained
            self.G2 = diag.matrix()
        else:
            arr = np.asarray(penalty, dtype=float)
            if arr.ndim == 0:
                arr = np.full(p, float(arr))
            if arr.ndim == 1:
                if arr.size != p:
                    raise ValueError("penalty dimension differs from the model dimension")
                arr = np.diag(arr)
            if arr.shape != (p, p):
                raise ValueError("penalty dimension differs from the model dimension")
            self.retained = np.arange(p)
            self.G2 = 0.5 * (arr + arr.T)
        if expected and not model.has_truth:
            raise ValueError("expected objective needs a model with synthetic truth")
        self.dim = self.retained.size

    def lift(self, v_red) -> np.ndarray:
        full = np.zeros(self.model.dim)
        full[self.retained] = v_red
        return full

    def lift_many(self, V_red) -> np.ndarray:
        V_red = np.atleast_2d(V_red)
        full = np.zeros((V_red.shape[0], self.model.dim))
        full[:, self.retained] = V_red
        return full

    def restrict(self, v_full) -> np.ndarray:
        return np.asarray(v_full, dtype=float)[self.retained]

    def value(self, v_red) -> float:
        full = self.lift(v_red)
        base = self.model.expected_loglik(full) if self.expected else self.model.loglik(full)
        return float(base - 0.5 * v_red @ self.G2 @ v_red)

    def value_many(self, V_red) -> np.ndarray:
        """Penalized log-likelihood at many reduced points (data objective only)."""
        V_red = np.atleast_2d(V_red)
        base = self.model.loglik_many(self.lift_many(V_red))
        return base - 0.5 * np.einsum("ij,jk,ik->i", V_red, self.G2, V_red)

    def gradient(self, v_red) -> np.ndarray:
        full = self.lift(v_red)
        g = self.model.expected_grad(full) if self.expected else self.model.grad(full)
        return g[self.retained] - self.G2 @ v_red

    def curvature(self, v_red) -> np.ndarray:
        """Unpenalized ``D^2`` restricted to the retained coordinates."""
        H = self.model.hessian(self.lift(v_red))
        return H[np.ix_(self.retained, self.retained)]


@dataclass
class FitResult:
    """Penalized maximiser with curvature and Newton diagnostics.

    Matrices live on the retained coordinates (all of them unless a truncation
    prior removed some); ``upsilon_hat`` is the full-length vector.
    """

    upsilon_hat: np.ndarray
    D2: np.ndarray
    DG2: np.ndarray
    G2: np.ndarray
    retained: np.ndarray
    grad_norm: float
    start_grad_norm: float
    newton_decrements: list
    objective_trace: list
    converged: bool
    objective: float
    population_counterpart: np.ndarray | None = None
    curvature_shift: np.ndarray | None = None
    expected: bool = False
    notes: list = field(default_factory=list)

    @property
    def D_G2(self) -> np.ndarray:
        return self.DG2

    @property
    def iterations(self) -> int:
        return len(self.newton_decrements)

    @property
    def mode_reduced(self) -> np.ndarray:
        return self.upsilon_hat[self.retained]

    def to_dict(self) -> dict:
        return {
            "upsilon_hat": self.upsilon_hat.tolist(),
            "D2": self.D2.tolist(),
            "DG2": self.DG2.tolist(),
            "retained": self.retained.tolist(),
            "grad_norm": self.grad_norm,
            "start_grad_norm": self.start_grad_norm,
            "newton_decrements": list(self.newton_decrements),
            "converged": self.converged,
            "objective": self.objective,
            "iterations": self.iterations,
            "population_counterpart": None
            if self.population_counterpart is None
            else self.population_counterpart.tolist(),
            "notes": list(self.notes),
        }


def _chol_or_none(H):
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None


def fit_pmle(
    model: ConcaveModel,
    penalty=None,
    start=None,
    tol: float = 1e-9,
    max_iter: int = 200,
    weak_shift=None,
    expected: bool = False,
) -> FitResult:
    """Maximise ``L(v) - ||G v||^2/2`` by Newton steps with Armijo backtracking.

    ``weak_shift`` is an optional ``G0^2 <= G^2`` (vector or matrix) for
    weakly concave likelihoods: the fit is unchanged but the certificate
    curvature becomes ``D^2 + G0^2`` and the effective penalty ``G^2 - G0^2``.
    """
    obj = PenalizedObjective(model, penalty, expected=expected)
    p = obj.dim
    if start is None:
        v = np.zeros(p)
    else:
        start = np.atleast_1d(np.asarray(start, dtype=float))
        v = obj.restrict(start) if start.size == model.dim else start.copy()

    shift = None
    if weak_shift is not None:
        shift = np.asarray(weak_shift, dtype=float)
        if shift.ndim == 1:
            shift = np.diag(shift)
        if shift.shape[0] == model.dim and p != model.dim:
            shift = shift[np.ix_(obj.retained, obj.retained)]
        if np.linalg.eigvalsh(obj.G2 - shift)[0] < -1e-12:
            raise ValueError("weak_shift must satisfy G0^2 <= G^2")

    f = obj.value(v)
    g = obj.gradient(v)
    g0_norm = float(np.linalg.norm(g))
    lambdas: list[float] = []
    values: list[float] = [f]
    converged = False
    for _ in range(max_iter):
        H = obj.curvature(v) + obj.G2
        L = _chol_or_none(H)
        if L is None:
            hint = "" if shift is not None else " (declare a weak-concavity shift G0^2 <= G^2 or increase the penalty)"
            raise NotConcaveError("penalized Hessian is not positive definite" + hint)
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        lam = math.sqrt(max(float(g @ step), 0.0))
        lambdas.append(lam)
        if not np.all(np.isfinite(step)):
            raise FitDivergenceError("non-finite Newton step", lambdas)
        if lam < tol:
            # final polishing step: accept whenever it does not increase the gradient
            cand = v + step
            g_c = obj.gradient(cand)
            if np.linalg.norm(g_c) <= np.linalg.norm(g):
                v, g = cand, g_c
                f = obj.value(v)
                values.append(f)
            converged = True
            break
        t = 1.0
        slope = float(g @ step)
        accepted = False
        while t > 1e-12:
            cand = v + t * step
            f_c = obj.value(cand)
            if np.isfinite(f_c) and f_c >= f + ARMIJO_C * t * slope:
                accepted = True
                break
            if lam < 1e-6 or lam * lam <= NOISE_ULPS * np.finfo(float).eps * (1.0 + abs(f)):
                # objective differences are below rounding; fall back to the gradient
                g_c = obj.gradient(cand)
                if np.linalg.norm(g_c) < np.linalg.norm(g):
                    accepted = True
                    break
            t *= ARMIJO_BETA
        if not accepted:
            raise FitDivergenceError("line search failed to find an ascent step", lambdas)
        v = cand
        f = obj.value(v)
        g = obj.gradient(v)
        values.append(f)
    if not converged:
        raise FitDivergenceError(f"no convergence within {max_iter} iterations", lambdas)

    D2 = obj.curvature(v)
    notes = []
    if shift is not None:
        D2 = D2 + shift
        G2_eff = obj.G2 - shift
        notes.append("curvature shifted by G0^2 (weak concavity)")
    else:
        G2_eff = obj.G2
    DG2 = D2 + G2_eff
    return FitResult(
        upsilon_hat=obj.lift(v),
        D2=0.5 * (D2 + D2.T),
        DG2=0.5 * (DG2 + DG2.T),
        G2=G2_eff,
        retained=obj.retained.copy(),
        grad_norm=float(np.linalg.norm(g)),
        start_grad_norm=g0_norm,
        newton_decrements=lambdas,
        objective_trace=values,
        converged=converged,
        objective=float(f),
        curvature_shift=shift,
        expected=expected,
        notes=notes,
    )


def population_fit(model: ConcaveModel, penalty=None, start=None, tol: float = 1e-9) -> np.ndarray:
    """``v*_G = argmax E L(v) - ||G v||^2/2`` for a synthetic-truth model."""
    return fit_pmle(model, penalty, start=start, tol=tol, expected=True).upsilon_hat


def fisher_residual(fit: FitResult, population, score, model: ConcaveModel | None = None) -> float:
    """``||D (v_hat - v*_G - D_G^{-2} grad zeta)||``.

    Curvatures are taken at the population point when ``model`` is given,
    otherwise the fitted ``D^2`` and ``D_G^2`` are reused.
    """
    keep = fit.retained
    pop = np.asarray(population, dtype=float)
    sc = np.asarray(score, dtype=float)
    if pop.shape != fit.upsilon_hat.shape or sc.shape != fit.upsilon_hat.shape:
        raise ValueError("dimension mismatch in fisher_residual")
    if model is not None:
        D2 = model.hessian(pop)[np.ix_(keep, keep)]
        if fit.curvature_shift is not None:
            D2 = D2 + fit.curvature_shift
        DG2 = D2 + fit.G2
    else:
        D2, DG2 = fit.D2, fit.DG2
    diff = fit.upsilon_hat[keep] - pop[keep] - np.linalg.solve(DG2, sc[keep])
    return float(math.sqrt(max(diff @ D2 @ diff, 0.0)))
