"""Reference posterior computations used to check certificates.

Two modes are available:

* ``"quadrature"``: a tensor trapezoid grid in whitened coordinates
  ``z = D_G (v - mode)`` with ``p <= 3``.  The integrands are smooth and
  decay like Gaussians, so the trapezoid rule converges very fast; the grid
  with every second node dropped provides the error estimate.
* ``"importance"``: self-normalised importance sampling from
  ``N(mode, c D_G^{-2})``.

The posterior is ``exp(L(v) - ||G v||^2/2)`` on the retained coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gausscmp import radial_cdf
from .solver import FitResult, PenalizedObjective

__all__ = [
    "OracleUnavailable",
    "Estimate",
    "PosteriorOracle",
    "posterior_expectation",
    "empirical_tv",
    "elliptic_set_distance",
    "concentration_frequency",
    "numeric_kl",
]

DEFAULT_STEP = {1: 0.01, 2: 0.1, 3: 0.25}
LOG_FLOOR = math.log(1e-300)


class OracleUnavailable(RuntimeError):
    """The requested quantity needs exact density access (quadrature mode)."""


@dataclass(frozen=True)
class Estimate:
    value: float | np.ndarray
    error: float
    method: str
    reliable: bool = True
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        v = self.value.tolist() if isinstance(self.value, np.ndarray) else self.value
        return {"value": v, "error": self.error, "method": self.method, "reliable": self.reliable,
                "extras": dict(self.extras)}


def _root(M, power):
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return (U * w ** power) @ U.T


def _gauss_logpdf(points, center, prec) -> np.ndarray:
    d = np.atleast_2d(points) - center
    _, logdet = np.linalg.slogdet(prec)
    q = np.einsum("ij,jk,ik->i", d, prec, d)
    return -0.5 * q + 0.5 * logdet - 0.5 * d.shape[1] * math.log(2 * math.pi)


class PosteriorOracle:
    """Posterior ``pi(v | Y)`` in the coordinates retained by the penalty.

    ``density_fn`` may replace the penalized log-likelihood (vectorised over
    rows of reduced points); it is used for synthetic posteriors in tests.
    """

    def __init__(
        self,
        fit: FitResult,
        model=None,
        penalty=None,
        mode: str = "quadrature",
        step: float | None = None,
        half_width: float = 10.0,
        n_draws: int = 200_000,
        inflation: float = 1.5,
        seed: int = 0,
        density_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        boundary_tol: float = 1e-10,
        max_half_width: float = 80.0,
    ):
        self.fit = fit
        self.center = fit.mode_reduced.copy()
        self.DG2 = fit.DG2
        self.p = self.center.size
        if density_fn is None:
            if model is None:
                raise ValueError("need a model or a density function")
            obj = PenalizedObjective(model, penalty)
            if not np.array_equal(obj.retained, fit.retained):
                raise ValueError("penalty does not match the fit")
            density_fn = obj.value_many
        self._logf = density_fn
        self.mode = mode
        self.diagnostics: dict = {}
        self._R = _root(self.DG2, -0.5)
        self._logdetR = float(np.linalg.slogdet(self._R)[1])
        if mode == "quadrature":
            if self.p > 3:
                raise ValueError("quadrature mode is limited to p <= 3")
            self.step = float(step or DEFAULT_STEP[self.p])
            self._build_grid(half_width, boundary_tol, max_half_width)
        elif mode == "importance":
            self._build_is(n_draws, inflation, seed)
        else:
            raise ValueError("mode must be 'quadrature' or 'importance'")

    # -- construction -----------------------------------------------------
    def _grid_points(self, half: float):
        m = int(math.ceil(half / self.step))
        axis = self.step * np.arange(-m, m + 1)
        Z = np.stack(np.meshgrid(*([axis] * self.p), indexing="ij"), axis=-1).reshape(-1, self.p)
        return axis, Z

    def _build_grid(self, half, tol, max_half):
        ref = float(self._logf(self.center[None, :])[0])
        while True:
            axis, Z = self._grid_points(half)
            pts = self.center + Z @ self._R
            logf = np.asarray(self._logf(pts), dtype=float) - ref
            logf = np.where(np.isfinite(logf), logf, -np.inf)
            shift = float(np.max(logf))
            dens = np.exp(logf - shift)
            mass = dens.sum()
            edge = np.any(np.abs(Z) >= axis[-1] - 1.5 * self.step, axis=1)
            boundary = float(dens[edge].sum() / mass)
            if boundary < tol or half >= max_half:
                break
            half *= 1.5
        self.half_width = float(axis[-1])
        self.points = pts
        self.Z = Z
        self.shape = (axis.size,) * self.p
        self.logf = logf
        # log normaliser in v coordinates: sum exp(logf) h^p |det R|
        self.log_norm = float(shift + math.log(mass) + self.p * math.log(self.step) + self._logdetR + ref)
        self.weights = dens / mass  # posterior probabilities of the grid cells
        coarse = self._coarse_mask()
        mass_c = float(dens[coarse].sum()) * 2 ** self.p
        self.diagnostics = {
            "half_width": self.half_width,
            "step": self.step,
            "n_points": int(Z.shape[0]),
            "boundary_mass": boundary,
            "normaliser_refinement_rel": abs(mass_c - mass) / mass,
            "domain_ok": boundary < tol,
        }

    def _coarse_mask(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(self.p, -1).T
        mid = (self.shape[0] - 1) // 2
        return np.all((idx - mid) % 2 == 0, axis=1)

    def _build_is(self, N, c, seed):
        rng = np.random.default_rng(seed)
        Z = rng.standard_normal((N, self.p)) * math.sqrt(c)
        pts = self.center + Z @ self._R
        log_q = -0.5 * (Z * Z).sum(axis=1) / c
        logf = np.asarray(self._logf(pts), dtype=float)
        logw = logf - log_q
        logw -= np.max(logw)
        w = np.exp(logw)
        self.points = pts
        self.Z = Z
        self.weights = w / w.sum()
        ess = float(1.0 / np.sum(self.weights ** 2))
        self.diagnostics = {"n_draws": N, "inflation": c, "seed": seed, "ess": ess, "reliable": ess >= 0.1 * N}

    # -- basic integrals --------------------------------------------------
    @property
    def reliable(self) -> bool:
        if self.mode == "importance":
            return bool(self.diagnostics["reliable"])
        return bool(self.diagnostics["domain_ok"])

    def expectation(self, g: Callable[[np.ndarray], np.ndarray]) -> Estimate:
        vals = np.asarray(g(self.points), dtype=float)
        w = self.weights
        est = np.tensordot(w, vals, axes=(0, 0))
        if self.mode == "quadrature":
            mask = self._coarse_mask()
            wc = w[mask] / w[mask].sum()
            est_c = np.tensordot(wc, vals[mask], axes=(0, 0))
            err = float(np.max(np.abs(np.asarray(est_c - est))))
            return Estimate(est, err, "quadrature", self.reliable)
        resid = vals - est
        if resid.ndim == 1:
            resid = resid[:, None]
        se = float(np.max(np.sqrt(np.sum((w[:, None] * resid) ** 2, axis=0))))
        return Estimate(est, se, "importance", self.reliable, {"ess": self.diagnostics["ess"]})

    def mean(self) -> Estimate:
        return self.expectation(lambda P: P)

    def covariance(self) -> np.ndarray:
        mu = self.mean().value
        d = self.points - mu
        return (d * self.weights[:, None]).T @ d

    def _require_grid(self, what: str):
        if self.mode != "quadrature":
            raise OracleUnavailable(f"{what} needs quadrature mode")

    def _gauss_cell_probs(self, center, prec) -> tuple[np.ndarray, float]:
        """Gaussian probabilities of the grid cells and the Gaussian mass off the grid."""
        logg = _gauss_logpdf(self.points, center, prec) + self.p * math.log(self.step) + self._logdetR
        probs = np.exp(logg)
        return probs, max(0.0, 1.0 - float(probs.sum()))

    def _reflected_weights(self, center) -> np.ndarray:
        """Posterior cell probabilities at the points reflected through ``center``."""
        if np.allclose(center, self.center, rtol=0, atol=1e-12 * (1 + np.abs(self.center).max())):
            return self.weights.reshape(self.shape)[(slice(None, None, -1),) * self.p].ravel()
        refl = 2.0 * np.asarray(center) - self.points
        ref = float(self._logf(self.center[None, :])[0])
        logf = np.asarray(self._logf(refl), dtype=float) - ref
        logcell = logf + self.p * math.log(self.step) + self._logdetR + ref - self.log_norm
        return np.exp(np.where(np.isfinite(logcell), logcell, -np.inf))


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------


def posterior_expectation(oracle: PosteriorOracle, g: Callable[[np.ndarray], np.ndarray]) -> Estimate:
    """``E[g(v) | Y]`` for ``g`` vectorised over rows of reduced points."""
    return oracle.expectation(g)


def _tv_pair(oracle: PosteriorOracle, post: np.ndarray, gauss: np.ndarray, off_grid: float) -> float:
    return min(1.0, 0.5 * (float(np.abs(post - gauss).sum()) + off_grid))


def empirical_tv(oracle: PosteriorOracle, center, precision) -> tuple[Estimate, Estimate]:
    """TV to ``N(center, precision^{-1})`` over all Borel sets and over sets symmetric about ``center``.

    Borel: half the L1 distance of the densities.  Symmetric: the same for the
    symmetrised posterior ``(pi(c + u) + pi(c - u))/2`` (the Gaussian is
    already symmetric about ``c``).  Errors compare with the half-resolution grid.
    """
    oracle._require_grid("empirical TV")
    c = np.atleast_1d(np.asarray(center, dtype=float))
    P = np.atleast_2d(np.asarray(precision, dtype=float))
    g, off = oracle._gauss_cell_probs(c, P)
    post = oracle.weights
    sym = 0.5 * (post + oracle._reflected_weights(c))
    tv = _tv_pair(oracle, post, g, off)
    tv_s = _tv_pair(oracle, sym, g, off)
    mask = oracle._coarse_mask()
    scale = 2 ** oracle.p
    tv_c = _tv_pair(oracle, post[mask] * scale, g[mask] * scale, off)
    tv_sc = _tv_pair(oracle, sym[mask] * scale, g[mask] * scale, off)
    return (
        Estimate(tv, abs(tv - tv_c), "grid", oracle.reliable),
        Estimate(min(tv_s, tv), abs(tv_s - tv_sc), "grid", oracle.reliable, {"symmetry_center": c.tolist()}),
    )


def elliptic_set_distance(oracle: PosteriorOracle, center, Q, gaussian_precision, n_radii: int = 2048,
                          seed: int = 0) -> Estimate:
    """``sup_r |P(||Q(v - center)|| <= r | Y) - P(||Q H^{-1} gamma|| <= r)|`` on an ``r`` grid."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    H2 = np.atleast_2d(np.asarray(gaussian_precision, dtype=float))
    Sigma = Q @ np.linalg.inv(H2) @ Q.T
    cdf = radial_cdf(Sigma, seed=seed)
    s = np.linalg.norm((oracle.points - c) @ Q.T, axis=1)
    order = np.argsort(s)
    s_sorted = s[order]
    cum = np.cumsum(oracle.weights[order])
    lam = np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T))
    r_max = max(math.sqrt(max(lam.sum(), 0.0)) + 6.0 * math.sqrt(max(lam.max(), 0.0)),
                float(s_sorted[np.searchsorted(cum, 1 - 1e-12, side="left").clip(max=s.size - 1)]))
    radii = np.linspace(0.0, r_max, n_radii)
    idx = np.searchsorted(s_sorted, radii, side="right")
    post_cdf = np.where(idx > 0, cum[np.clip(idx - 1, 0, None)], 0.0)
    gap = np.abs(post_cdf - cdf(radii))
    noise = getattr(cdf, "standard_error", 0.0)
    return Estimate(float(gap.max()), float(noise), oracle.mode, oracle.reliable,
                    {"radial_method": cdf.method, "r_max": r_max})


def concentration_frequency(oracle: PosteriorOracle, ellipsoid) -> Estimate:
    """Posterior mass outside ``ellipsoid`` (anything with ``contains(points)``)."""
    inside = ellipsoid.contains(oracle.points)
    out = float(oracle.weights[~inside].sum())
    if oracle.mode == "quadrature":
        mask = oracle._coarse_mask()
        wc = oracle.weights[mask] / oracle.weights[mask].sum()
        err = abs(float(wc[~inside[mask]].sum()) - out) + oracle.diagnostics["boundary_mass"]
        return Estimate(out, err, "quadrature", oracle.reliable)
    se = math.sqrt(float(np.sum(oracle.weights ** 2 * ((~inside).astype(float) - out) ** 2)))
    return Estimate(out, se, "importance", oracle.reliable)


def numeric_kl(oracle: PosteriorOracle, center, precision, direction: str = "forward") -> Estimate:
    """Grid KL between the posterior and ``N(center, precision^{-1})``.

    ``"forward"`` is ``KL(posterior || Gaussian)``, ``"reverse"`` the other
    ordering.  Densities are floored at ``1e-300``; the mass affected by the
    floor is reported in ``extras``.
    """
    oracle._require_grid("numeric KL")
    c = np.atleast_1d(np.asarray(center, dtype=float))
    P = np.atleast_2d(np.asarray(precision, dtype=float))
    g, off = oracle._gauss_cell_probs(c, P)
    post = oracle.weights

    def kl(a, b):
        la = np.log(np.maximum(a, 1e-300))
        lb = np.log(np.maximum(b, 1e-300))
        affected = float(a[(b < 1e-300) & (a > 0)].sum())
        return max(0.0, float(np.sum(a * (la - lb)))), affected

    if direction == "forward":
        val, affected = kl(post, g)
        mask = oracle._coarse_mask()
        val_c, _ = kl(post[mask] / post[mask].sum(), g[mask] / g[mask].sum())
    elif direction == "reverse":
        val, affected = kl(g, post)
        affected += off
        mask = oracle._coarse_mask()
        val_c, _ = kl(g[mask] / g[mask].sum(), post[mask] / post[mask].sum())
    else:
        raise ValueError("direction must be 'forward' or 'reverse'")
    return Estimate(val, abs(val - val_c), "grid", oracle.reliable, {"floor_affected_mass": affected,
                                                                     "gaussian_off_grid": off})
