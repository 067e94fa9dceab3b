"""Parameters, covariance kernel, moving-average kernel and anisotropic metric
of an (N, d)-fractional Brownian sheet.

The covariance is used exactly as

    E[B0(s) B0(t)] = prod_l ( |s_l|^{2H_l} + |t_l|^{2H_l} - |s_l - t_l|^{2H_l} )

i.e. without the customary factor 1/2 per axis.  ``CONVENTION_FACTOR_PER_AXIS``
records that choice: values here are ``CONVENTION_FACTOR_PER_AXIS ** N`` times
the usual normalised sheet covariance.

Points are plain float arrays whose last axis has length N.  Every function is
pure and vectorised over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gamma

# covariance() / (standard 1/2-normalised covariance), per parameter axis
CONVENTION_FACTOR_PER_AXIS = 2.0


class ContractError(ValueError):
    """Raised when arguments violate a function's preconditions."""


@dataclass(frozen=True)
class HurstVector:
    """Hurst index H in (0,1)^N together with the state-space dimension d."""

    H: tuple[float, ...]
    d: int = 1

    def __init__(self, H: Sequence[float], d: int = 1):
        H = tuple(float(x) for x in np.atleast_1d(np.asarray(H, dtype=float)))
        if len(H) < 1:
            raise ContractError("Hurst vector must have at least one entry")
        for x in H:
            if not (0.0 < x < 1.0):
                raise ContractError(f"Hurst index {x} outside the open interval (0, 1)")
        if int(d) != d or d < 1:
            raise ContractError(f"state dimension d={d} must be a positive integer")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "d", int(d))

    @property
    def N(self) -> int:
        return len(self.H)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.H, dtype=float)

    @property
    def inverse_sum(self) -> float:
        return float(sum(1.0 / x for x in self.H))

    @property
    def low_dimension_regime(self) -> bool:
        """True when d < sum_l 1/H_l."""
        return self.d < self.inverse_sum


@dataclass(frozen=True, eq=False)
class Configuration:
    """Conditioning scenario: increment B(t) - B(s) observed through B(s^1..s^n)."""

    s: np.ndarray
    t: np.ndarray
    conditioning: np.ndarray
    epsilon: float = 0.1

    def __post_init__(self):
        s = np.array(self.s, dtype=float).reshape(-1)
        t = np.array(self.t, dtype=float).reshape(-1)
        if s.shape != t.shape:
            raise ContractError("s and t must have the same dimension")
        cond = np.array(self.conditioning, dtype=float)
        cond = np.zeros((0, s.size)) if cond.size == 0 else cond.reshape(-1, s.size)
        if not (0.0 < self.epsilon < 1.0):
            raise ContractError(f"epsilon={self.epsilon} must lie in (0, 1)")
        for arr in (s, t, cond):
            arr.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "conditioning", cond)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def N(self) -> int:
        return self.s.size

    @property
    def n(self) -> int:
        return self.conditioning.shape[0]

    def in_domain(self) -> bool:
        """All points in [epsilon, 1)^N."""
        pts = np.vstack([self.s, self.t, self.conditioning])
        return bool(np.all((pts >= self.epsilon) & (pts < 1.0)))

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.epsilon == other.epsilon
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.conditioning, other.conditioning)
        )


def abs_pow(x, exponent):
    """|x|**exponent with 0 mapped to 0 (exponent > 0), computed via exp/log."""
    x = np.abs(np.asarray(x, dtype=float))
    exponent = np.asarray(exponent, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.exp(exponent * np.log(x))
    return np.where(x == 0.0, 0.0, out)


def _check_points(s, t, h: HurstVector):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if s.shape[-1:] != (h.N,) or t.shape[-1:] != (h.N,):
        raise ContractError(
            f"points must have last dimension N={h.N}, got {s.shape} and {t.shape}"
        )
    return s, t


def axis_covariance(a, b, hurst: float):
    """One-axis factor |a|^{2H} + |b|^{2H} - |a-b|^{2H}."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    e = 2.0 * hurst
    return abs_pow(a, e) + abs_pow(b, e) - abs_pow(a - b, e)


def covariance(s, t, h: HurstVector):
    """E[B0(s) B0(t)]: product over axes of the one-axis factors."""
    s, t = _check_points(s, t, h)
    out = 1.0
    for ell, hl in enumerate(h.H):
        out = out * axis_covariance(s[..., ell], t[..., ell], hl)
    return out


def rho(s, t, h: HurstVector):
    """Anisotropic metric sum_l |s_l - t_l|^{H_l}."""
    s, t = _check_points(s, t, h)
    return np.sum(abs_pow(s - t, h.array), axis=-1)


def r_vector(c: Configuration) -> np.ndarray:
    """Per-axis min_j |s_l - s^j_l| + min_j |t_l - s^j_l|."""
    if c.n == 0:
        raise ContractError("r_vector needs at least one conditioning point")
    ds = np.min(np.abs(c.conditioning - c.s), axis=0)
    dt = np.min(np.abs(c.conditioning - c.t), axis=0)
    return ds + dt


def positive_part_pow(x, exponent: float):
    """x_+^a: x**a for x > 0 and 0 for x <= 0, including a == 0."""
    x = np.asarray(x, dtype=float)
    pos = x > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(pos, np.power(np.where(pos, x, 1.0), exponent), 0.0)
    return val


def kernel_K(u, t, h: HurstVector):
    """Moving-average kernel prod_l {(t_l - u_l)_+^{H_l-1/2} - (-u_l)_+^{H_l-1/2}}.

    Returns NaN at the singular points u_l == t_l or u_l == 0 on an axis with
    H_l < 1/2, where the one-sided limit is infinite; quadrature rules must
    keep their nodes off those points.
    """
    u, t = _check_points(u, t, h)
    out = np.ones(np.broadcast_shapes(u.shape[:-1], t.shape[:-1]))
    for ell, hl in enumerate(h.H):
        a = hl - 0.5
        ul = u[..., ell]
        tl = t[..., ell]
        factor = positive_part_pow(tl - ul, a) - positive_part_pow(-ul, a)
        if a < 0.0:
            factor = np.where((ul == tl) | (ul == 0.0), np.nan, factor)
        out = out * factor
    return out


def mvn_constant(hurst: float) -> float:
    """int_R ((1-u)_+^{H-1/2} - (-u)_+^{H-1/2})^2 du in closed form.

    Equals Gamma(H+1/2)^2 / (Gamma(2H+1) sin(pi H)); it is 1 for H = 1/2.
    """
    return float(gamma(hurst + 0.5) ** 2 / (gamma(2.0 * hurst + 1.0) * np.sin(np.pi * hurst)))


def integral_representation_scale(h: HurstVector) -> float:
    """Ratio int K(u,s) K(u,t) du / covariance(s, t).

    The moving-average representation yields prod_l C(H_l)/2 times the
    covariance used here, with C the Mandelbrot-Van Ness constant.
    """
    return float(np.prod([mvn_constant(x) / CONVENTION_FACTOR_PER_AXIS for x in h.H]))
