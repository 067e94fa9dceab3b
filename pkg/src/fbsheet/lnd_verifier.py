"""Local-nondeterminism bounds checked against exact conditional variances.

Four lower-bound expressions are evaluated without their (non-explicit)
constants:

* ``sectorial``   - sum_l min_j |u_l - t^j_l|^{2H_l} for a single point u,
* ``increment``   - sum_l min{ min_j|s_l-s^j_l|^{2H_l} + min_j|t_l-s^j_l|^{2H_l}, |s_l-t_l|^{2H_l} },
* ``anisotropic`` - rho(s,t)^2 * sum_l r_l^{2H_l},
* ``strong``      - sum_l min{r_l^{2H_l}, |s_l-t_l|^{2H_l}} + sum_l r_l^{2H_l} sum_{i!=l} |s_i-t_i|^{2H_i}.

The constants are then estimated as empirical infima of exact_var / bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import quadrature as quad
from .core_model import (
    Configuration,
    ContractError,
    HurstVector,
    abs_pow,
    mvn_constant,
    r_vector,
    rho,
)
from .gaussian_linalg import LinearFunctional, conditional_variance
from .simulator import FieldSample, SeedSpec, evaluate_shifted

BOUNDS = ("sectorial", "increment", "anisotropic", "strong")


def sector_gap_configuration(epsilon: float = 0.1) -> Configuration:
    """s, t on a horizontal line, conditioned on the points directly below them.

    The increment sectorial expression vanishes here while the conditional
    variance does not; for H = (1/2, 1/2) the variance is 1 and the
    anisotropic expression 1/2.
    """
    return Configuration((0.25, 0.75), (0.75, 0.75), ((0.25, 0.25), (0.75, 0.25)), epsilon)


FIXTURES = {"sector_gap": sector_gap_configuration}


# --------------------------------------------------------------------------
# bound expressions


def _cond_array(conditioning, N):
    cond = np.asarray(conditioning, dtype=float)
    if cond.size == 0:
        raise ContractError("bound expressions need a nonempty conditioning set")
    return cond.reshape(-1, N)


def sectorial_bound(u, conditioning, h: HurstVector) -> float:
    u = np.asarray(u, dtype=float)
    cond = _cond_array(conditioning, h.N)
    terms = abs_pow(cond - u, 2.0 * h.array)
    return float(np.sum(np.min(terms, axis=0)))


def increment_sectorial_bound(s, t, conditioning, h: HurstVector) -> float:
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    cond = _cond_array(conditioning, h.N)
    e = 2.0 * h.array
    inner = np.min(abs_pow(s - cond, e), axis=0) + np.min(abs_pow(t - cond, e), axis=0)
    return float(np.sum(np.minimum(inner, abs_pow(s - t, e))))


def anisotropic_bound(s, t, conditioning, h: HurstVector, strong: bool = False) -> float:
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    cond = _cond_array(conditioning, h.N)
    e = 2.0 * h.array
    r = np.min(np.abs(s - cond), axis=0) + np.min(np.abs(t - cond), axis=0)
    r_pow = abs_pow(r, e)
    if not strong:
        return float(rho(s, t, h) ** 2 * np.sum(r_pow))
    d_pow = abs_pow(s - t, e)
    others = np.sum(d_pow) - d_pow
    return float(np.sum(np.minimum(r_pow, d_pow)) + np.sum(r_pow * others))


def bound_value(which: str, c: Configuration, h: HurstVector) -> float:
    if which == "sectorial":
        return sectorial_bound(c.t, c.conditioning, h)
    if which == "increment":
        return increment_sectorial_bound(c.s, c.t, c.conditioning, h)
    if which == "anisotropic":
        return anisotropic_bound(c.s, c.t, c.conditioning, h)
    if which == "strong":
        return anisotropic_bound(c.s, c.t, c.conditioning, h, strong=True)
    raise ContractError(f"unknown bound {which!r}; expected one of {BOUNDS}")


def increment_variance(c: Configuration, h: HurstVector) -> float:
    """Var(B0(t) - B0(s) | B0(s^1), ..., B0(s^n))."""
    return conditional_variance(LinearFunctional.increment(c.s, c.t), c.conditioning, h)


def point_variance(c: Configuration, h: HurstVector) -> float:
    """Var(B0(t) | B0(s^1), ..., B0(s^n)), the left side of the sectorial bound."""
    return conditional_variance(LinearFunctional.point(c.t), c.conditioning, h)


def ratio(exact: float, bound: float) -> float:
    """exact / bound; +inf when only the bound vanishes, NaN when both vanish."""
    if bound > 0.0:
        return exact / bound
    return math.inf if exact > 0.0 else math.nan


@dataclass(frozen=True, eq=False)
class LndReport:
    """Exact variances and bound expressions for one configuration.

    ``exact_var`` is the conditional variance of the increment B(t) - B(s);
    ``point_var`` that of B(t) alone, which is what the sectorial bound
    (``sectorial``, evaluated at u = t) controls.  ``ratios`` maps each
    bound name to exact / bound with the markers of :func:`ratio`.
    """

    config: Configuration
    exact_var: float
    point_var: float
    sectorial: float
    increment: float
    anisotropic: float
    strong: float
    ratios: dict = field(default_factory=dict)


def lnd_report(c: Configuration, h: HurstVector) -> LndReport:
    ev = increment_variance(c, h)
    pv = point_variance(c, h)
    b = {w: bound_value(w, c, h) for w in BOUNDS}
    ratios = {w: ratio(pv if w == "sectorial" else ev, b[w]) for w in BOUNDS}
    return LndReport(c, ev, pv, b["sectorial"], b["increment"], b["anisotropic"], b["strong"], ratios)


def exact_for(which: str, c: Configuration, h: HurstVector) -> float:
    return point_variance(c, h) if which == "sectorial" else increment_variance(c, h)


# --------------------------------------------------------------------------
# constant scans


@dataclass(frozen=True)
class ScanPolicy:
    h: HurstVector
    epsilon: float = 0.1
    n_range: tuple = (1, 4)
    config_count: int = 10_000
    seed: SeedSpec = SeedSpec(0, 0)
    refine_steps: int = 50
    refine_starts: int = 8

    def __post_init__(self):
        if self.config_count < 1:
            raise ContractError("config_count must be >= 1")
        if not (0.0 < self.epsilon < 0.5):
            raise ContractError("epsilon must lie in (0, 0.5)")
        lo, hi = self.n_range
        if not (1 <= lo <= hi):
            raise ContractError("n_range must satisfy 1 <= lo <= hi")
        if self.refine_steps < 0:
            raise ContractError("refine_steps must be >= 0")
        if self.refine_starts < 1:
            raise ContractError("refine_starts must be >= 1")


@dataclass(frozen=True, eq=False)
class ScanRecord:
    index: int
    config: Configuration
    exact: float
    bound: float
    ratio: float
    source: str = "random"  # random | fixture | refined
    extra: dict = field(default_factory=dict)


@dataclass(eq=False)
class ScanReport:
    which: str
    policy: ScanPolicy
    records: list
    min_ratio: float
    argmin: Configuration | None
    sampled_min_ratio: float
    histogram: tuple  # (counts, edges) of log10 ratios
    both_zero: int
    infinite: int
    violations: int


def _upper(epsilon):
    return float(np.nextafter(1.0, 0.0))


def sample_configuration(rng: np.random.Generator, N: int, epsilon: float, n_range) -> Configuration:
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    pts = rng.uniform(epsilon, 1.0, size=(n + 2, N))
    return Configuration(pts[0], pts[1], pts[2:], epsilon)


def _evaluate(which, c, h):
    ex = exact_for(which, c, h)
    b = bound_value(which, c, h)
    return ex, b, ratio(ex, b)


def refine_configuration(which: str, c: Configuration, h: HurstVector, steps: int,
                         levels: int = 20, shrink: float = 0.5):
    """Coordinate-wise descent on exact/bound from ``c``.

    One coordinate of one point moves at a time, either by +-step (projected
    back into [epsilon, 1)^N) or straight to one of the two faces of the
    domain; at each of ``levels`` step sizes up to ``steps`` sweeps are made,
    stopping early when a sweep brings no improvement.
    """
    eps = c.epsilon
    hi = _upper(eps)
    pts = np.vstack([c.s, c.t, c.conditioning])
    best_ex, best_b, best = _evaluate(which, c, h)
    if not (math.isfinite(best) and best > 0.0):
        return c, best_ex, best_b, best
    step = 0.25 * (1.0 - eps)
    for _ in range(levels):
        for _sweep in range(steps):
            improved = False
            for p in range(pts.shape[0]):
                for ell in range(pts.shape[1]):
                    x = pts[p, ell]
                    for target in (min(x + step, hi), max(x - step, eps), eps, hi):
                        if target == pts[p, ell]:
                            continue
                        trial = pts.copy()
                        trial[p, ell] = target
                        cand = Configuration(trial[0], trial[1], trial[2:], eps)
                        ex, b, r = _evaluate(which, cand, h)
                        if math.isfinite(r) and 0.0 < r < best:
                            pts, best_ex, best_b, best = trial, ex, b, r
                            improved = True
            if not improved:
                break
        step *= shrink
    return Configuration(pts[0], pts[1], pts[2:], eps), best_ex, best_b, best


def _scan_chunk(args):
    which, policy, lo, hi = args
    out = []
    for i in range(lo, hi):
        rng = policy.seed.generator(i)
        c = sample_configuration(rng, policy.h.N, policy.epsilon, policy.n_range)
        ex, b, r = _evaluate(which, c, policy.h)
        out.append(ScanRecord(i, c, ex, b, r, "random"))
    return out


def lnd_ratio_scan(policy: ScanPolicy, which: str, fixtures: Sequence[Configuration] = (),
                   workers: int = 1, chunk: int = 1000) -> ScanReport:
    """Empirical infimum of exact / bound over random configurations.

    The ``refine_starts`` smallest sampled ratios are each refined by
    :func:`refine_configuration`; every improvement is appended as a
    ``refined`` record.

    Configuration i is drawn from the sub-stream i of ``policy.seed``, so the
    records do not depend on ``workers``.  Fixture configurations are
    evaluated too (source ``fixture``) and take part in the minimum.
    """
    if which not in BOUNDS:
        raise ContractError(f"unknown bound {which!r}; expected one of {BOUNDS}")
    h = policy.h
    tasks = [(which, policy, lo, min(lo + chunk, policy.config_count))
             for lo in range(0, policy.config_count, chunk)]
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_scan_chunk, tasks))
    else:
        parts = [_scan_chunk(t) for t in tasks]
    records = [r for part in parts for r in part]
    for j, c in enumerate(fixtures):
        ex, b, r = _evaluate(which, c, h)
        records.append(ScanRecord(policy.config_count + j, c, ex, b, r, "fixture"))

    finite = [r for r in records if math.isfinite(r.ratio)]
    both_zero = sum(1 for r in records if math.isnan(r.ratio))
    infinite = sum(1 for r in records if math.isinf(r.ratio))
    if finite:
        ranked = sorted(finite, key=lambda r: (r.ratio, r.index))
        worst = ranked[0]
        sampled_min = worst.ratio
        argmin, min_ratio = worst.config, worst.ratio
        if policy.refine_steps > 0:
            # descent from the few worst samples; a single start tends to stall
            for start in ranked[: policy.refine_starts]:
                c2, ex, b, r = refine_configuration(which, start.config, h, policy.refine_steps)
                if r < min_ratio:
                    records.append(ScanRecord(len(records), c2, ex, b, r, "refined"))
                    argmin, min_ratio = c2, r
        logs = np.log10([r.ratio for r in finite if r.ratio > 0.0])
        histogram = np.histogram(logs, bins=20) if logs.size else (np.zeros(0), np.zeros(0))
    else:
        argmin, min_ratio, sampled_min = None, math.nan, math.nan
        histogram = (np.zeros(0), np.zeros(0))
    violations = sum(1 for r in finite if r.exact < min_ratio * r.bound * (1.0 - 1e-12))
    return ScanReport(which, policy, records, min_ratio, argmin, sampled_min, histogram,
                      both_zero, infinite, violations)


def dominance_constant(h: HurstVector, epsilon: float) -> float:
    """C with weak <= C * strong on [epsilon, 1)^N.

    (sum_i a_i)^2 <= N sum_i a_i^2 bounds the cross terms of rho^2, and
    r^{2H} |s-t|^{2H} <= max(1, r^{2H}) min{r^{2H}, |s-t|^{2H}} with
    r_l <= 2 (1 - epsilon).
    """
    top = max(1.0, max((2.0 * (1.0 - epsilon)) ** (2.0 * x) for x in h.H))
    return h.N * top


def dominance_ratios(records: Sequence[ScanRecord], h: HurstVector) -> np.ndarray:
    """weak / strong for every record (0 when both vanish)."""
    out = np.empty(len(records))
    for j, r in enumerate(records):
        c = r.config
        weak = anisotropic_bound(c.s, c.t, c.conditioning, h)
        strong = anisotropic_bound(c.s, c.t, c.conditioning, h, strong=True)
        out[j] = weak / strong if strong > 0 else (math.inf if weak > 0 else 0.0)
    return out


def dominance_violations(records: Sequence[ScanRecord], h: HurstVector, constant: float = 1.0) -> int:
    """Count configurations where constant * strong is below weak."""
    return int(np.sum(dominance_ratios(records, h) > constant * (1.0 + 1e-12)))


# --------------------------------------------------------------------------
# the test function h of the anisotropic LND argument


def h_axis(u, t_k: float, r_k: float, hurst: float):
    """(u-t+r)_+^b + (u-t-r)_+^b - 2 (u-t)_+^b with b = 1/2 - H.

    Far to the right of t + r the three terms nearly cancel; there the value
    is formed from expm1/log1p to keep relative accuracy.
    """
    b = 0.5 - hurst
    u = np.asarray(u, dtype=float)
    x = u - t_k
    if b == 0.0:
        return np.where((x >= -r_k) & (x < 0.0), 1.0, 0.0) - np.where((x >= 0.0) & (x < r_k), 1.0, 0.0)
    v = x + r_k
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (
            quad_pos(v, b)
            + quad_pos(x - r_k, b)
            - 2.0 * quad_pos(x, b)
        )
        far = v > 8.0 * r_k
        q = np.where(far, r_k / np.where(far, v, 1.0), 0.0)
        stable = np.where(
            far,
            np.power(np.where(far, v, 1.0), b)
            * (np.expm1(b * np.log1p(-2.0 * q)) - 2.0 * np.expm1(b * np.log1p(-q))),
            0.0,
        )
    return np.where(far, stable, direct)


def _h_axis_scalar(u: float, t_k: float, r_k: float, b: float) -> float:
    """Scalar h_axis for quadrature integrands (b = 1/2 - H != 0)."""
    x = u - t_k
    v = x + r_k
    if v <= 0.0:
        return 0.0
    if v > 8.0 * r_k:
        q = r_k / v
        return v**b * (math.expm1(b * math.log1p(-2.0 * q)) - 2.0 * math.expm1(b * math.log1p(-q)))
    out = v**b
    if x > 0.0:
        out -= 2.0 * x**b
        if x > r_k:
            out += (x - r_k) ** b
    return out


def _pos_pow(x: float, b: float) -> float:
    return x**b if x > 0.0 else 0.0


def quad_pos(x, b):
    x = np.asarray(x, dtype=float)
    pos = x > 0.0
    return np.where(pos, np.power(np.where(pos, x, 1.0), b), 0.0)


def h_norm_constant(hurst: float) -> float:
    """int_0^inf {v^b + (v-2)_+^b - 2 (v-1)_+^b}^2 dv, b = 1/2 - H, in closed form.

    The integral is the variance of a second difference of a moving-average
    fBm with index 1 - H: C(1-H) (4 - 2^{2(1-H)}).
    """
    hp = 1.0 - hurst
    return mvn_constant(hp) * (4.0 - 2.0 ** (2.0 * hp))


@dataclass(eq=False)
class HReport:
    config: Configuration
    k: int
    i: int
    r: np.ndarray
    inner_products: np.ndarray  # <h, prod_l (s^j_l - u_l)_+^{H_l-1/2}> for each j
    normalized: np.ndarray  # |inner| / (||h|| ||kernel on supp h||)
    proof_regime: np.ndarray  # s^j_k outside (t_k - r_k, t_k + r_k)
    h_norm2: float
    h_norm2_closed: float
    h_norm2_relerr: float
    target_inner: float  # <h, prod_l (t_l - u_l)_+^{H_l-1/2}>
    exact_var: float
    c3_ratio: float  # exact_var / (r_k^{2H_k} |s_i - t_i|^{2H_i})
    quad_error: float


def _kernel_axis_integral(p: float, a: float, lo: float, hi: float):
    """int_lo^hi (p - u)_+^a du by quadrature."""
    hi_eff = min(hi, p)
    if hi_eff <= lo:
        return 0.0, 0.0
    return quad.integrate_breakpoints(lambda u: _pos_pow(p - u, a), lo, hi_eff, [(p, a)])


def _k_axis_inner(p: float, t_k: float, r_k: float, hurst: float):
    """int (p - u)_+^{H-1/2} h_k(u) du over the support of h_k."""
    a = hurst - 0.5
    lo = t_k - r_k
    if p <= lo:
        return 0.0, 0.0
    sing = [(p, a), (t_k - r_k, -a), (t_k, -a), (t_k + r_k, -a)]
    b = 0.5 - hurst
    if b == 0.0:
        f = lambda u: float(quad_pos(p - u, a) * h_axis(u, t_k, r_k, hurst))
    else:
        f = lambda u: _pos_pow(p - u, a) * _h_axis_scalar(u, t_k, r_k, b)
    return quad.integrate_breakpoints(f, lo, p, sing)


def h_norm2_quadrature(t_k: float, r_k: float, hurst: float):
    a = hurst - 0.5
    sing = [(t_k - r_k, -2 * a), (t_k, -2 * a), (t_k + r_k, -2 * a)]
    b = 0.5 - hurst
    if b == 0.0:
        f = lambda u: float(h_axis(u, t_k, r_k, hurst) ** 2)
    else:
        f = lambda u: _h_axis_scalar(u, t_k, r_k, b) ** 2
    return quad.integrate_breakpoints(f, t_k - r_k, math.inf, sing, tail_start=t_k + r_k)


def orient(c: Configuration, i: int) -> Configuration:
    """Swap s and t if needed so that t_i >= s_i."""
    if c.t[i] >= c.s[i]:
        return c
    return Configuration(c.t, c.s, c.conditioning, c.epsilon)


def h_orthogonality_check(c: Configuration, k: int, i: int, h: HurstVector,
                          exact_var: float | None = None) -> HReport:
    """Quadrature check of the test function h for axes k != i.

    h(u) = h_k(u_k) 1[s_i, t_i](u_i) prod_{l != i,k} 1[0, eps](u_l).
    """
    N = h.N
    if N < 2 or not (0 <= k < N and 0 <= i < N) or k == i:
        raise ContractError("need N >= 2 and two distinct axes k, i")
    if c.n == 0:
        raise ContractError("need a nonempty conditioning set")
    r = r_vector(c)
    s, t, eps = c.s, c.t, c.epsilon
    if not abs(s[k] - t[k]) < r[k]:
        raise ContractError("requires |s_k - t_k| < r_k")
    if not t[i] > s[i]:
        raise ContractError("requires t_i > s_i (see orient())")
    H = h.array
    a = H - 0.5
    others = [ell for ell in range(N) if ell not in (i, k)]
    err = 0.0

    def factors(p):
        nonlocal err
        val = 1.0
        for ell in others:
            v, e = _kernel_axis_integral(p[ell], a[ell], 0.0, eps)
            val *= v
            err += e
        v, e = _kernel_axis_integral(p[i], a[i], s[i], t[i])
        err += e
        v2, e2 = _k_axis_inner(p[k], t[k], r[k], H[k])
        err += e2
        return val * v * v2

    def kernel_norm2(p):
        # squared L2 norm of prod_l (p_l - u_l)_+^{a_l} over supp(h), closed form
        val = 1.0
        for ell in others:
            val *= quad.power_integral(p[ell], 2 * a[ell], 0.0, eps)
        val *= quad.power_integral(p[i], 2 * a[i], s[i], t[i])
        val *= quad.power_integral(p[k], 2 * a[k], t[k] - r[k], math.inf)
        return val

    hn_axis, e = h_norm2_quadrature(t[k], r[k], H[k])
    err += e
    h_norm2 = eps ** (N - 2) * (t[i] - s[i]) * hn_axis
    h_closed = eps ** (N - 2) * (t[i] - s[i]) * r[k] ** (2 - 2 * H[k]) * h_norm_constant(H[k])

    inners, normed, regime = [], [], []
    for p in c.conditioning:
        ip = factors(p)
        kn = kernel_norm2(p)
        inners.append(ip)
        normed.append(abs(ip) / math.sqrt(h_norm2 * kn) if kn > 0 else 0.0)
        regime.append(not (t[k] - r[k] < p[k] < t[k] + r[k]))
    target = factors(t)

    if exact_var is None:
        exact_var = increment_variance(c, h)
    scale = r[k] ** (2 * H[k]) * (t[i] - s[i]) ** (2 * H[i])
    return HReport(
        c, k, i, r, np.array(inners), np.array(normed), np.array(regime, dtype=bool),
        h_norm2, h_closed, abs(h_norm2 - h_closed) / h_closed, target, exact_var,
        ratio(exact_var, scale), err,
    )


def in_proof_branch(c: Configuration, k: int, i: int) -> bool:
    if c.n == 0:
        return False
    r = r_vector(c)
    return abs(c.s[k] - c.t[k]) < r[k] and c.t[i] != c.s[i]


@dataclass(eq=False)
class C3Scan:
    reports: list  # HReport per configuration, or bare ratios without quadrature
    min_c3: float
    max_normalized_proof: float  # over pairs (config, j) with s^j_k outside (t_k - r_k, t_k + r_k)
    max_normalized_other: float
    proof_pairs: int
    other_pairs: int
    max_h_norm_relerr: float


def _c3_task(args):
    c, k, i, h, quadrature = args
    if quadrature:
        return h_orthogonality_check(c, k, i, h)
    r = r_vector(c)
    return ratio(increment_variance(c, h), r[k] ** (2 * h.H[k]) * abs(c.t[i] - c.s[i]) ** (2 * h.H[i]))


def c3_scan(h: HurstVector, epsilon: float, count: int, seed: SeedSpec, k: int = 0, i: int = 1,
            n_range=(1, 4), quadrature: bool = True, workers: int = 1) -> C3Scan:
    """Sample ``count`` configurations in the branch |s_k - t_k| < r_k and measure
    exact_var / (r_k^{2H_k} |s_i - t_i|^{2H_i}).

    With ``quadrature`` every configuration also goes through
    :func:`h_orthogonality_check`.  Candidates come from sub-streams 0, 1, 2, ...
    of ``seed`` and are kept in that order, whatever ``workers`` is.
    """
    configs = []
    idx = 0
    while len(configs) < count:
        c = sample_configuration(seed.generator(idx), h.N, epsilon, n_range)
        idx += 1
        if in_proof_branch(c, k, i):
            configs.append(orient(c, i))
    tasks = [(c, k, i, h, quadrature) for c in configs]
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_c3_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        reports = [_c3_task(t) for t in tasks]
    if not quadrature:
        return C3Scan(reports, float(min(reports)), math.nan, math.nan, 0, 0, math.nan)
    norm_p = [x for rep in reports for x, ok in zip(rep.normalized, rep.proof_regime) if ok]
    norm_o = [x for rep in reports for x, ok in zip(rep.normalized, rep.proof_regime) if not ok]
    return C3Scan(reports, float(min(rep.c3_ratio for rep in reports)),
                  float(max(norm_p, default=0.0)), float(max(norm_o, default=0.0)),
                  len(norm_p), len(norm_o),
                  float(max(rep.h_norm2_relerr for rep in reports)))


# --------------------------------------------------------------------------
# sojourn quantity I(x, y, R)


@dataclass(eq=False)
class SojournReport:
    R: np.ndarray
    per_replica: np.ndarray  # (replicas, len(R))
    mean: np.ndarray
    slope: float
    stderr: float
    spacing: float
    max_snap: float
    t_nodes: int


def sojourn_grid_axes(x, y, epsilon: float, spacing: float):
    """Uniform per-axis coordinates covering x + t and y + t for t in [eps, 1]^N."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    axes = []
    for xl, yl in zip(x, y):
        lo = min(xl, yl) + epsilon
        hi = max(xl, yl) + 1.0
        k0 = int(math.floor(lo / spacing + 1e-9))
        k1 = int(math.ceil(hi / spacing - 1e-9))
        axes.append(np.arange(k0, k1 + 1) * spacing)
    return tuple(axes)


def sojourn_estimate(x, y, R_list: Sequence[float], fields: Sequence[FieldSample],
                     epsilon: float = 0.1) -> SojournReport:
    """Riemann-sum estimate of I(x, y, R) = |{t in [eps,1]^N : ||B(x+t) - B(y+t)|| <= 1/R}|.

    The shift nodes t are the grid nodes g with g - x in [eps, 1]^N; values at
    y + t are taken at the nearest grid node.
    """
    from .dimension_lab import loglog_fit

    R = np.asarray(R_list, dtype=float)
    if R.size < 2:
        raise ContractError("need at least two R values for a slope")
    if np.any(R <= 0) or np.any(np.diff(R) <= 0):
        raise ContractError("R values must be positive and increasing")
    if not fields:
        raise ContractError("need at least one field replica")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    vol = (1.0 - epsilon) ** x.size
    out = np.empty((len(fields), R.size))
    max_snap = 0.0
    spacing = 0.0
    n_t = 0
    for q, f in enumerate(fields):
        axes_t = []
        for ell, ax in enumerate(f.grid.axes):
            tt = ax - x[ell]
            sel = (tt >= epsilon - 1e-12) & (tt <= 1.0 + 1e-12)
            axes_t.append(tt[sel])
            spacing = max(spacing, float(np.max(np.diff(ax))) if ax.size > 1 else 0.0)
        mesh = np.meshgrid(*axes_t, indexing="ij")
        tpts = np.stack([m.ravel() for m in mesh], axis=-1)
        n_t = tpts.shape[0]
        if n_t == 0:
            raise ContractError("no grid node t with x + t in the grid and t in [eps, 1]^N")
        vx = evaluate_shifted(f, tpts, x)
        vy = evaluate_shifted(f, tpts, y)
        max_snap = max(max_snap, vx.max_snap, vy.max_snap)
        dist = np.linalg.norm(vx.values - vy.values, axis=1)
        for m, Rm in enumerate(R):
            out[q, m] = vol * np.mean(dist * Rm <= 1.0)
    mean = out.mean(axis=0)
    if np.any(mean <= 0):
        raise ContractError("E[I] estimate is zero at some R; lower R or add replicas")
    slope, stderr = loglog_fit(1.0 / R, mean)
    return SojournReport(R, out, mean, slope, stderr, spacing, max_snap, n_t)
