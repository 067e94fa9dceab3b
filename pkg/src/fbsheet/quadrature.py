"""One-dimensional quadrature for integrands with algebraic endpoint singularities.

An integrand behaving like |u - a|^alpha near a breakpoint a (alpha > -1) is
split at its breakpoints; on each half-piece touching a singular endpoint the
substitution w = |u - a|^(1 + alpha) turns the leading term into a bounded
function of w before the adaptive Gauss-Kronrod rule (QUADPACK) is applied.
"""
from __future__ import annotations

import math
import warnings
from typing import Callable, Sequence

from scipy import integrate

ABS_TOL = 1e-9
_INNER_EPSABS = 1e-14
_INNER_EPSREL = 1e-12


class QuadratureError(RuntimeError):
    pass


def _quad(g, lo, hi, what):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(g, lo, hi, epsabs=_INNER_EPSABS, epsrel=_INNER_EPSREL, limit=400)
    if not math.isfinite(val) or err > max(ABS_TOL, 1e-9 * abs(val)):
        raise QuadratureError(
            f"quadrature on {what} did not converge: value={val!r}, error estimate={err!r}, tol={ABS_TOL}"
        )
    return val, err


def _piece(f, a, b, alpha, from_left):
    """Integral of f over [a, b] with a singular endpoint at a (from_left) or b."""
    if b <= a:
        return 0.0, 0.0
    alpha = min(alpha, 0.0)
    p = 1.0 + alpha
    width = b - a
    if p == 1.0:
        return _quad(f, a, b, f"[{a}, {b}]")
    top = width**p

    if from_left:
        def g(w):
            x = w ** (1.0 / p)
            return f(a + x) * x ** (1.0 - p) / p
    else:
        def g(w):
            x = w ** (1.0 / p)
            return f(b - x) * x ** (1.0 - p) / p

    return _quad(g, 0.0, top, f"[{a}, {b}] (power substitution, exponent {alpha:.3g})")


def integrate_breakpoints(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    singular: Sequence[tuple[float, float]] = (),
    tail_start: float | None = None,
):
    """Integral of f over [lo, hi] (hi may be +inf).

    ``singular`` lists (location, exponent) pairs: near ``location`` the
    integrand behaves like |u - location|^exponent on both sides.  Returns
    (value, error_estimate).
    """
    if hi < lo:
        raise ValueError("hi < lo")
    expo: dict[float, float] = {}
    for loc, a in singular:
        if lo <= loc <= hi:
            expo[loc] = min(expo.get(loc, 0.0), a)
    finite_hi = hi
    if math.isinf(hi):
        finite_hi = tail_start if tail_start is not None else (max(expo) if expo else lo) + 1.0
        finite_hi = max(finite_hi, max(expo, default=lo), lo)
    cuts = sorted({lo, finite_hi, *[x for x in expo if x <= finite_hi]})
    total, err = 0.0, 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        v1, e1 = _piece(f, a, mid, expo.get(a, 0.0), True)
        v2, e2 = _piece(f, mid, b, expo.get(b, 0.0), False)
        total += v1 + v2
        err += e1 + e2
    if math.isinf(hi):
        # finite piece right of the last breakpoint, then the infinite tail
        a = finite_hi
        b = a + max(1.0, abs(a))
        v1, e1 = _piece(f, a, b, expo.get(a, 0.0), True)
        v2, e2 = _quad(f, b, math.inf, f"[{b}, inf)")
        total += v1 + v2
        err += e1 + e2
    return total, err


def power_integral(base: float, exponent: float, lo: float, hi: float) -> float:
    """int_lo^hi (base - u)_+^exponent du in closed form (exponent > -1)."""
    a = min(hi, base)
    if a <= lo:
        return 0.0
    return ((base - lo) ** (exponent + 1) - (base - a) ** (exponent + 1)) / (exponent + 1)


def beta_fn(x: float, y: float) -> float:
    return math.exp(math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y))
