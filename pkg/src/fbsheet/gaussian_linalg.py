"""Exact Gaussian conditioning for linear functionals of the sheet.

Conditional variances are Schur complements ``Var(Y) - c^T K^+ c`` where
``K^+`` is a spectrally truncated pseudo-inverse: eigenvalues of the
conditioning Gram matrix below ``EIGEN_CUTOFF * max eigenvalue`` are treated
as exactly zero.  No additive jitter is used, so a functional lying in the
span of the conditioning variables gets conditional variance 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_model import ContractError, HurstVector, covariance

EIGEN_CUTOFF = 1e-10
# conditional variances below this fraction of Var(Y) are pure round-off
ZERO_SNAP = 1e-12


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    points: np.ndarray
    h: HurstVector

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class LinearFunctional:
    """Y = sum_i weights[i] * B0(points[i])."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.array(self.points, dtype=float))
        w = np.array(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] == 0 or pts.shape[0] != w.size:
            raise ContractError("linear functional needs one weight per point and at least one point")
        if not np.all(np.isfinite(w)):
            raise ContractError("weights must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def increment(cls, s, t) -> "LinearFunctional":
        """B0(t) - B0(s)."""
        return cls(np.vstack([np.asarray(t, float), np.asarray(s, float)]), [1.0, -1.0])

    @classmethod
    def point(cls, u) -> "LinearFunctional":
        return cls(np.atleast_2d(np.asarray(u, float)), [1.0])


def _as_points(points, h: HurstVector) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.zeros((0, h.N))
    pts = pts.reshape(-1, h.N) if pts.ndim == 1 else pts
    if pts.shape[1] != h.N:
        raise ContractError(f"points must have N={h.N} coordinates")
    return pts


def cross_covariance(a, b, h: HurstVector) -> np.ndarray:
    a = _as_points(a, h)
    b = _as_points(b, h)
    return covariance(a[:, None, :], b[None, :, :], h)


def gram(points: Sequence, h: HurstVector) -> GramMatrix:
    pts = _as_points(points, h)
    if pts.shape[0] == 0:
        raise ContractError("gram() needs at least one point")
    k = cross_covariance(pts, pts, h)
    k = 0.5 * (k + k.T)
    return GramMatrix(k, pts, h)


def _truncated_eigh(m: np.ndarray):
    lam, vec = np.linalg.eigh(m)
    top = lam[-1] if lam.size else 0.0
    if top <= 0.0:
        return lam[:0], vec[:, :0]
    keep = lam > EIGEN_CUTOFF * top
    return lam[keep], vec[:, keep]


def spd_solve(m, rhs) -> np.ndarray:
    """Minimum-norm solution of m x = rhs under the truncated pseudo-inverse."""
    a = m.entries if isinstance(m, GramMatrix) else np.asarray(m, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise ContractError(f"non-conforming shapes {a.shape} and {b.shape}")
    lam, vec = _truncated_eigh(0.5 * (a + a.T))
    return vec @ ((vec.T @ b) / (lam if b.ndim == 1 else lam[:, None]))


def conditional_variance(f: LinearFunctional, conditioning, h: HurstVector) -> float:
    """Var(Y | B0(s^1), ..., B0(s^n)), clamped to [0, Var(Y)].

    Equal to inf_alpha E[(Y - sum_j alpha_j B0(s^j))^2].
    """
    cond = _as_points(conditioning, h)
    w = f.weights
    var_y = float(w @ cross_covariance(f.points, f.points, h) @ w)
    var_y = max(var_y, 0.0)
    if cond.shape[0] == 0 or var_y == 0.0:
        return var_y
    k = cross_covariance(cond, cond, h)
    c = cross_covariance(cond, f.points, h) @ w
    lam, vec = _truncated_eigh(0.5 * (k + k.T))
    proj = vec.T @ c
    explained = float(np.sum(proj * proj / lam))
    out = var_y - explained
    if out <= ZERO_SNAP * var_y:
        return 0.0
    return min(out, var_y)
