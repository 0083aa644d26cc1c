"""Diagonal Gaussian priors, effective dimensions and the sub-projector ``P_G``.

A penalty is the precision ``G^2 = diag(g_1^2, ..., g_p^2)`` of a centred
Gaussian prior.  Two parametric families are supported:

* smooth ``(s, w)`` priors with ``g_j^2 = j^{2s} / w``;
* truncation priors, flat on the first ``m`` coordinates and with zero prior
  variance beyond.  The zero-variance coordinates are never represented as
  floating infinities: they are carried as a boolean mask and removed from
  every linear-algebra operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "InvalidParameterError",
    "PenaltySpec",
    "PenaltyDiagonal",
    "GrowthCheck",
    "EffectiveDimReport",
    "SubprojectorBias",
    "SubprojectorComparison",
    "build_penalty",
    "check_growth",
    "effective_dims",
    "subprojector_bias",
    "compare_subprojectors",
    "tune_window",
    "sandwich_constant",
]


class InvalidParameterError(ValueError):
    """A penalty or tuning parameter lies outside its admissible domain."""


@dataclass(frozen=True)
class PenaltySpec:
    """Declarative description of a diagonal prior precision."""

    kind: str
    p: int
    s: float | None = None
    w: float | None = None
    m: int | None = None
    g2: tuple[float, ...] | None = None

    @classmethod
    def smooth(cls, s: float, w: float, p: int) -> "PenaltySpec":
        return cls(kind="smooth", p=int(p), s=float(s), w=float(w))

    @classmethod
    def truncation(cls, m: int, p: int) -> "PenaltySpec":
        return cls(kind="truncation", p=int(p), m=int(m))

    @classmethod
    def explicit(cls, g2: Sequence[float]) -> "PenaltySpec":
        values = tuple(float(v) for v in g2)
        return cls(kind="explicit", p=len(values), g2=values)

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "p": self.p}
        if self.kind == "smooth":
            out.update(s=self.s, w=self.w)
        elif self.kind == "truncation":
            out.update(m=self.m)
        else:
            out.update(g2=list(self.g2 or ()))
        return out


@dataclass(frozen=True)
class PenaltyDiagonal:
    """Materialised ``G^2``: finite entries plus a mask of removed coordinates."""

    values: np.ndarray
    infinite: np.ndarray
    spec: PenaltySpec | None = None

    @property
    def p(self) -> int:
        return int(self.values.size)

    @property
    def retained(self) -> np.ndarray:
        """Indices of coordinates with positive prior variance."""
        return np.flatnonzero(~self.infinite)

    @property
    def finite_values(self) -> np.ndarray:
        return self.values[~self.infinite]

    def matrix(self) -> np.ndarray:
        """``G^2`` restricted to the retained coordinates."""
        return np.diag(self.finite_values)

    def scaled(self, factor: float) -> "PenaltyDiagonal":
        return PenaltyDiagonal(self.values * float(factor), self.infinite.copy(), None)

    def describe(self) -> list:
        """Diagonal as a list where removed coordinates appear as the string ``"inf"``."""
        return ["inf" if flag else float(v) for v, flag in zip(self.values, self.infinite)]


def _as_diagonal(penalty) -> PenaltyDiagonal:
    if isinstance(penalty, PenaltyDiagonal):
        return penalty
    if isinstance(penalty, PenaltySpec):
        return build_penalty(penalty)
    arr = np.asarray(penalty, dtype=float)
    if arr.ndim == 2:
        arr = np.diag(arr)
    return PenaltyDiagonal(arr.copy(), np.zeros(arr.size, dtype=bool), None)


def build_penalty(spec: PenaltySpec) -> PenaltyDiagonal:
    """Build the diagonal of ``G^2`` described by ``spec``."""
    if spec.p is None or int(spec.p) < 1:
        raise InvalidParameterError("p must be a positive integer")
    p = int(spec.p)
    if spec.kind == "smooth":
        if spec.s is None or not spec.s > 0:
            raise InvalidParameterError("smooth penalty needs s > 0")
        if spec.w is None or not spec.w > 0:
            raise InvalidParameterError("smooth penalty needs w > 0")
        j = np.arange(1, p + 1, dtype=float)
        values = j ** (2.0 * spec.s) / spec.w
        return PenaltyDiagonal(values, np.zeros(p, dtype=bool), spec)
    if spec.kind == "truncation":
        if spec.m is None or not 1 <= int(spec.m) <= p:
            raise InvalidParameterError("truncation penalty needs 1 <= m <= p")
        infinite = np.arange(1, p + 1) > int(spec.m)
        return PenaltyDiagonal(np.zeros(p), infinite, spec)
    if spec.kind == "explicit":
        values = np.asarray(spec.g2, dtype=float)
        if values.size != p:
            raise InvalidParameterError("explicit diagonal length must equal p")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidParameterError("explicit diagonal entries must be finite and >= 0")
        return PenaltyDiagonal(values.copy(), np.zeros(p, dtype=bool), spec)
    raise InvalidParameterError(f"unknown penalty kind {spec.kind!r}")


class GrowthCheck(NamedTuple):
    holds: bool
    C_g: float
    holds_in_limit: bool | None


def check_growth(penalty) -> GrowthCheck:
    """Smallest ``C_g`` with ``sum_{j>m} g_j^{-2} <= C_g m g_m^{-2}`` for ``m < p``.

    ``holds_in_limit`` reports whether the condition survives ``p -> oo``; it is
    only known for smooth specs (``2s > 1``) and truncation.
    """
    diag = _as_diagonal(penalty)
    spec = diag.spec
    if spec is not None and spec.kind == "truncation":
        return GrowthCheck(True, 0.0, True)
    g2 = diag.values
    p = g2.size
    limit = None
    if spec is not None and spec.kind == "smooth":
        limit = bool(2.0 * spec.s > 1.0)
    if p < 2:
        return GrowthCheck(True, 0.0, limit)
    with np.errstate(divide="ignore"):
        inv = np.where(g2 > 0, 1.0 / np.where(g2 > 0, g2, 1.0), np.inf)
    tail = np.cumsum(inv[::-1])[::-1]  # tail[k] = sum over 0-based j >= k
    m = np.arange(1, p)
    head = g2[:-1]
    with np.errstate(invalid="ignore"):
        ratios = np.where(head > 0, tail[1:] * head / m, 0.0)
    c_g = float(np.max(ratios))
    return GrowthCheck(bool(np.isfinite(c_g)), c_g, limit)


def sandwich_constant(matrix: np.ndarray, scale: float) -> float:
    """Smallest ``C >= 1`` with ``C^{-1} scale I <= matrix <= C scale I``."""
    eig = np.linalg.eigvalsh(0.5 * (matrix + matrix.T)) / float(scale)
    lo, hi = float(eig[0]), float(eig[-1])
    if lo <= 0:
        return math.inf
    return max(1.0, hi, 1.0 / lo)


def _relative_sandwich(F: np.ndarray, V2: np.ndarray) -> float:
    """Smallest ``C_V >= 1`` with ``C_V^{-1} F <= V^2 <= C_V F``."""
    w, U = np.linalg.eigh(F)
    if w[0] <= 0:
        return math.inf
    root_inv = U @ np.diag(w ** -0.5) @ U.T
    rel = np.linalg.eigvalsh(root_inv @ V2 @ root_inv)
    if rel[0] <= 0:
        return math.inf
    return max(1.0, float(rel[-1]), 1.0 / float(rel[0]))


@dataclass(frozen=True)
class EffectiveDimReport:
    p_laplace: float
    p_effective: float
    m_index: int
    m_defined: bool
    lower_sandwich: float | None
    upper_sandwich: float | None
    lower_sandwich_V: float | None
    upper_sandwich_V: float | None
    C_F: float
    C_g: float
    C_V: float
    cutoff_tail_bound: float | None
    sandwich_holds: bool | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "p_laplace": self.p_laplace,
            "p_effective": self.p_effective,
            "m_index": self.m_index,
            "m_defined": self.m_defined,
            "lower_sandwich": self.lower_sandwich,
            "upper_sandwich": self.upper_sandwich,
            "lower_sandwich_V": self.lower_sandwich_V,
            "upper_sandwich_V": self.upper_sandwich_V,
            "constants": {"C_F": self.C_F, "C_g": self.C_g, "C_V": self.C_V},
            "cutoff_tail_bound": self.cutoff_tail_bound,
            "sandwich_holds": self.sandwich_holds,
            "notes": list(self.notes),
        }


def effective_dims(
    F: np.ndarray,
    V2: np.ndarray,
    penalty,
    n: float,
    C_F: float | None = None,
    C_V: float | None = None,
) -> EffectiveDimReport:
    """Laplace and variance effective dimensions with the ``m(G)`` sandwich."""
    diag = _as_diagonal(penalty)
    F = np.asarray(F, dtype=float)
    V2 = np.asarray(V2, dtype=float)
    if F.shape != (diag.p, diag.p) or V2.shape != F.shape:
        raise ValueError("F, V2 and the penalty must share the ambient dimension")
    keep = diag.retained
    Fr = F[np.ix_(keep, keep)]
    Vr = V2[np.ix_(keep, keep)]
    FG = Fr + np.diag(diag.values[keep])
    try:
        chol = np.linalg.cholesky(FG)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("F + G^2 is singular on the retained coordinates") from exc

    def trace_solve(M):
        y = np.linalg.solve(chol, M)
        return float(np.trace(np.linalg.solve(chol.T, y)))

    p_laplace = trace_solve(Fr)
    p_eff = trace_solve(Vr)

    scores = np.where(diag.infinite, math.inf, diag.values)
    hits = np.flatnonzero(scores >= n)
    m_defined = hits.size > 0
    m_index = int(hits[0]) + 1 if m_defined else diag.p + 1

    c_f = float(C_F) if C_F is not None else sandwich_constant(Fr, n)
    c_v = float(C_V) if C_V is not None else _relative_sandwich(Fr, Vr)
    growth = check_growth(diag)
    c_g = growth.C_g
    notes = []
    lower = upper = lower_v = upper_v = None
    holds = None
    if m_defined and math.isfinite(c_f):
        lower = 1.0 / (c_f + 1.0)
        upper = 1.0 + c_f * c_g
        ratio = p_laplace / m_index
        holds = bool(lower - 1e-12 <= ratio <= upper + 1e-12)
        if math.isfinite(c_v):
            lower_v = lower / c_v
            upper_v = c_v * upper
        g_m2 = scores[m_index - 1]
        if math.isfinite(g_m2) and g_m2 > n:
            notes.append("g_m^2 exceeds n; the lower sandwich relies on the tail coordinates")
    else:
        notes.append("m(G) undefined: no g_j^2 >= n; sandwich suppressed")

    tail_bound = None
    if diag.spec is not None and diag.spec.kind == "smooth" and 2 * diag.spec.s > 1:
        # sum_{j>p} ||F|| / g_j^2 <= ||F|| w p^{1-2s} / (2s - 1)
        s, w, p = diag.spec.s, diag.spec.w, diag.p
        tail_bound = float(np.linalg.eigvalsh(Fr)[-1]) * w * p ** (1 - 2 * s) / (2 * s - 1)
    elif diag.spec is not None and diag.spec.kind == "truncation":
        tail_bound = 0.0

    return EffectiveDimReport(
        p_laplace=p_laplace,
        p_effective=p_eff,
        m_index=m_index,
        m_defined=m_defined,
        lower_sandwich=lower,
        upper_sandwich=upper,
        lower_sandwich_V=lower_v,
        upper_sandwich_V=upper_v,
        C_F=c_f,
        C_g=c_g,
        C_V=c_v,
        cutoff_tail_bound=tail_bound,
        sandwich_holds=holds,
        notes=tuple(notes),
    )


class SubprojectorBias(NamedTuple):
    exact: float
    bound: float


def subprojector_bias(F_G: np.ndarray, G2, Q: np.ndarray, upsilon: np.ndarray) -> SubprojectorBias:
    """``||Q F_G^{-1} G^2 v||`` together with ``||Q F_G^{-1} Q^T||^{1/2} ||G v||``."""
    F_G = np.asarray(F_G, dtype=float)
    G2 = np.asarray(G2, dtype=float)
    G2m = np.diag(G2) if G2.ndim == 1 else G2
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    v = np.asarray(upsilon, dtype=float)
    p = F_G.shape[0]
    if G2m.shape != (p, p) or Q.shape[1] != p or v.shape != (p,):
        raise ValueError("dimension mismatch in subprojector_bias")
    exact = float(np.linalg.norm(Q @ np.linalg.solve(F_G, G2m @ v)))
    op = float(np.linalg.norm(Q @ np.linalg.solve(F_G, Q.T), 2))
    g_norm = math.sqrt(max(float(v @ G2m @ v), 0.0))
    return SubprojectorBias(exact, math.sqrt(op) * g_norm)


@dataclass(frozen=True)
class SubprojectorComparison:
    status: str  # "holds" | "fails" | "precondition-violation"
    constant: float
    min_eigenvalue: float
    C_F: float
    matched: bool
    ordered: bool
    displayed_ordering: bool
    detail: str

    @property
    def holds(self) -> bool:
        return self.status == "holds"


def compare_subprojectors(
    F: np.ndarray,
    G2,
    G02,
    m: int,
    n: float | None = None,
    rtol: float = 0.1,
    tol: float = 1e-10,
) -> SubprojectorComparison:
    """Check ``I - P_G <= C (I - P_{G0})`` with ``C = C_F^2 v (C_F + 1)``.

    The preconditions are the matching ``g_m^2 ~ g_{m,0}^2 ~ n`` (relative
    tolerance ``rtol``) and the domination ``G^2 Pi_m <= G0^2 Pi_m`` which is
    what the argument actually uses.  ``displayed_ordering`` records the
    ratio ordering in the opposite direction for reference.
    """
    F = np.asarray(F, dtype=float)
    g2 = _as_diagonal(G2).values
    g02 = _as_diagonal(G02).values
    p = F.shape[0]
    if g2.size != p or g02.size != p:
        raise ValueError("dimension mismatch in compare_subprojectors")
    if not 1 <= m <= p:
        raise InvalidParameterError("m must lie in [1, p]")
    eig = np.linalg.eigvalsh(0.5 * (F + F.T))
    if n is None:
        n = float(np.exp(np.mean(np.log(eig))))
    c_f = sandwich_constant(F, n)
    const = max(c_f ** 2, c_f + 1.0)

    gm, gm0 = g2[m - 1], g02[m - 1]
    matched = abs(gm / n - 1.0) <= rtol and abs(gm0 / n - 1.0) <= rtol
    head = slice(0, m)
    ordered = bool(np.all(g2[head] / gm <= g02[head] / gm0 * (1 + 1e-12)))
    displayed = bool(np.all(g02[head] / gm0 <= g2[head] / gm * (1 + 1e-12)))

    def complement(g):
        # I - P_G = (F + G^2)^{-1} G^2
        return np.linalg.solve(F + np.diag(g), np.diag(g))

    diff = const * complement(g02) - complement(g2)
    min_eig = float(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0])
    if not (matched and ordered):
        reasons = []
        if not matched:
            reasons.append(f"g_m^2/n = {gm / n:.4g}, g_m0^2/n = {gm0 / n:.4g} (rtol {rtol})")
        if not ordered:
            reasons.append("G^2 Pi_m <= G0^2 Pi_m fails")
        return SubprojectorComparison(
            "precondition-violation", const, min_eig, c_f, matched, ordered, displayed, "; ".join(reasons)
        )
    status = "holds" if min_eig >= -tol else "fails"
    return SubprojectorComparison(status, const, min_eig, c_f, matched, ordered, displayed, "")


def tune_window(n: float, s: float, s0: float, C0: float = 1.0) -> tuple[float, float]:
    """Window ``w`` and cut-off ``m0 = (C0 n)^{1/(2 s0 + 1)}`` with ``g_{m0}^2 = n``."""
    if not n >= 1:
        raise InvalidParameterError("n must be >= 1")
    if not s0 > 0 or not s >= s0:
        raise InvalidParameterError("need s >= s0 > 0")
    if not s > 0.5:
        raise InvalidParameterError("need s > 1/2")
    if not C0 > 0:
        raise InvalidParameterError("need C0 > 0")
    m0 = (C0 * n) ** (1.0 / (2.0 * s0 + 1.0))
    w = m0 ** (2.0 * s) / n
    return w, m0
