"""Fractal test sets, box-counting dimension estimators and the image-set
experiments for the dimension and Lebesgue-measure results.

Hausdorff dimension is approximated by box-counting dimension throughout.  The
generated sets are Cantor products and cubes, for which both coincide.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_model import ContractError, HurstVector
from .simulator import DEFAULT_NODE_BUDGET, BudgetError, SeedSpec, evaluate_shifted, simulate, union_grid

KINDS = ("cantor_product", "full_cube", "singleton_product")
DEFAULT_POINT_BUDGET = 2**22
_FLOOR_NUDGE = 1e-9


class HypothesisError(ContractError):
    """Raised when an experiment's dimensional hypothesis does not hold."""


@dataclass(frozen=True)
class FractalSet:
    """Product test set F in (0, inf)^N.

    ``cantor_product``: on every axis the depth-``depth`` left endpoints of the
    Cantor construction keeping two subintervals of relative length
    ``ratios[l]``.  ``full_cube``: the dyadic grid k 2^-depth of [0,1)^N.
    ``singleton_product``: axes listed in ``singleton_axes`` collapse to a
    single point, the remaining ones are Cantor axes as above; with every axis
    singular (the default) this is the one-point set {offset}.
    """

    kind: str
    ratios: tuple = ()
    depth: int = 0
    offset: tuple = ()
    singleton_axes: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"kind must be one of {KINDS}")
        off = tuple(float(x) for x in self.offset)
        if not off:
            raise ContractError("offset fixes N and must be nonempty")
        if any(x <= 0 for x in off):
            raise ContractError("offset must lie in (0, inf)^N")
        N = len(off)
        ratios = tuple(float(x) for x in self.ratios) if self.ratios else (0.5,) * N
        if len(ratios) == 1 and N > 1:
            ratios = ratios * N
        if len(ratios) != N:
            raise ContractError("need one ratio per axis")
        if any(not (0.0 < x <= 0.5) for x in ratios):
            raise ContractError("ratios must lie in (0, 1/2]")
        if self.depth < 0:
            raise ContractError("depth must be >= 0")
        single = self.singleton_axes
        if self.kind == "singleton_product":
            single = tuple(range(N)) if single is None else tuple(int(a) for a in single)
        else:
            single = ()
        object.__setattr__(self, "offset", off)
        object.__setattr__(self, "ratios", ratios)
        object.__setattr__(self, "singleton_axes", single)

    @property
    def N(self) -> int:
        return len(self.offset)

    def axis_kind(self, ell: int) -> str:
        if ell in self.singleton_axes:
            return "point"
        return "full" if self.kind == "full_cube" else "cantor"

    def axis_ratio(self, ell: int) -> float:
        return 0.5 if self.axis_kind(ell) == "full" else self.ratios[ell]

    def axis_coords(self, ell: int) -> np.ndarray:
        kind = self.axis_kind(ell)
        if kind == "point":
            return np.zeros(1)
        if kind == "full":
            return np.arange(2**self.depth) / 2.0**self.depth
        lam = self.ratios[ell]
        pts = np.zeros(1)
        for level in range(self.depth):
            pts = np.concatenate([pts, pts + (1.0 - lam) * lam**level])
        return np.sort(pts)

    def point_count(self) -> int:
        return int(np.prod([1 if self.axis_kind(ell) == "point" else 2**self.depth for ell in range(self.N)]))

    def cell_sizes(self) -> np.ndarray:
        """Side of the finest construction cell per axis (0 on singleton axes)."""
        return np.array([0.0 if self.axis_kind(ell) == "point" else self.axis_ratio(ell) ** self.depth
                         for ell in range(self.N)])

    def rho_dimension(self, h: HurstVector) -> float:
        """Exact anisotropic dimension: sum over non-point axes of dim(C_l) / H_l."""
        total = 0.0
        for ell in range(self.N):
            kind = self.axis_kind(ell)
            if kind == "point":
                continue
            lam = self.axis_ratio(ell)
            total += (math.log(2.0) / math.log(1.0 / lam)) / h.H[ell]
        return total


def generate_fractal(spec: FractalSet, budget: int = DEFAULT_POINT_BUDGET) -> np.ndarray:
    """All points of F as an array (P, N), row-major over the axis coordinates."""
    if spec.point_count() > budget:
        raise BudgetError(f"{spec.point_count()} points exceed the point budget {budget}")
    axes = [spec.axis_coords(ell) + spec.offset[ell] for ell in range(spec.N)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# --------------------------------------------------------------------------
# box counting


@dataclass(eq=False)
class DimEstimate:
    scales: np.ndarray  # decreasing
    counts: np.ndarray
    slope: float
    stderr: float
    fit_range: tuple  # [start, stop) indices into scales
    residual: float = 0.0


def loglog_fit(scales, counts, fit_range=None):
    """OLS slope of log(count) against log(1/scale); returns (slope, stderr)."""
    scales = np.asarray(scales, dtype=float)
    counts = np.asarray(counts, dtype=float)
    lo, hi = fit_range if fit_range is not None else (0, scales.size)
    x = np.log(1.0 / scales[lo:hi])
    y = counts[lo:hi]
    if x.size < 2:
        raise ContractError("need at least two scales in the fit range")
    if np.any(y <= 0):
        raise ContractError("counts in the fit range must be positive")
    y = np.log(y)
    xm = x - x.mean()
    sxx = float(xm @ xm)
    if sxx == 0.0:
        raise ContractError("degenerate fit: all scales equal")
    slope = float(xm @ (y - y.mean())) / sxx
    if x.size > 2:
        res = y - y.mean() - slope * xm
        stderr = math.sqrt(float(res @ res) / (x.size - 2) / sxx)
    else:
        stderr = 0.0
    return slope, stderr


def default_fit_range(n: int) -> tuple:
    """Drop the two largest and two smallest scales when at least two remain."""
    return (2, n - 2) if n - 4 >= 2 else (0, n)


def count_boxes(points: np.ndarray, pitch, origin=None) -> int:
    """Number of lattice boxes with the given per-axis pitch hit by the points.

    The lattice is anchored at ``origin``, by default the componentwise minimum
    of the points.
    """
    pts = np.atleast_2d(points)
    if origin is None:
        origin = pts.min(axis=0)
    idx = np.floor((pts - origin) / np.asarray(pitch, float) + _FLOOR_NUDGE).astype(np.int64)
    if idx.shape[1] == 1:
        return int(np.unique(idx[:, 0]).size)
    return int(np.unique(idx, axis=0).shape[0])


def _estimate(scales, counts, fit_range):
    scales = np.asarray(scales, dtype=float)
    counts = np.asarray(counts, dtype=float)
    fr = default_fit_range(scales.size) if fit_range is None else tuple(fit_range)
    slope, stderr = loglog_fit(scales, counts, fr)
    x = np.log(1.0 / scales[fr[0]:fr[1]])
    y = np.log(counts[fr[0]:fr[1]])
    res = y - y.mean() - slope * (x - x.mean())
    return DimEstimate(scales, counts, slope, stderr, fr, float(np.sqrt(np.mean(res**2))))


def _check_scales(scales):
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    if scales.size < 2:
        raise ContractError("need at least two scales")
    if np.any(scales <= 0):
        raise ContractError("scales must be positive")
    return scales


def rho_scales(spec: FractalSet, h: HurstVector, levels: int | None = None) -> np.ndarray:
    """rho-radii delta_j from 1 down to the construction cell, aligned with it.

    On axis l the box side delta^{1/H_l} never drops below the finest cell.
    """
    cells = spec.cell_sizes()
    active = [ell for ell in range(spec.N) if cells[ell] > 0]
    if not active or spec.depth == 0:
        return np.array([1.0, 0.5])
    floor = max(cells[ell] ** h.H[ell] for ell in active)
    m = spec.depth if levels is None else levels
    return floor ** (np.arange(m + 1) / m)


def box_dim_rho(points, h: HurstVector, scales, fit_range=None, origin=None) -> DimEstimate:
    """Box-counting dimension under rho: boxes of side delta^{1/H_l} on axis l."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ContractError("empty point set")
    scales = _check_scales(scales)
    counts = np.array([count_boxes(pts, delta ** (1.0 / h.array), origin) for delta in scales])
    return _estimate(scales, counts, fit_range)


def box_dim_euclidean(points, scales, fit_range=None, origin=None) -> DimEstimate:
    """Box-counting dimension with isotropic boxes of side delta."""
    pts = np.asarray(points, dtype=float)
    pts = pts.reshape(-1, 1) if pts.ndim == 1 else pts
    if pts.shape[0] == 0:
        raise ContractError("empty point set")
    scales = _check_scales(scales)
    counts = np.array([count_boxes(pts, np.full(pts.shape[1], delta), origin) for delta in scales])
    return _estimate(scales, counts, fit_range)


def dim_rho_estimate(spec: FractalSet, h: HurstVector, levels: int | None = None,
                     budget: int = DEFAULT_POINT_BUDGET) -> DimEstimate:
    return box_dim_rho(generate_fractal(spec, budget), h, rho_scales(spec, h, levels))


# --------------------------------------------------------------------------
# image experiments


def sibling_pairs(spec: FractalSet) -> list:
    """Index pairs (flat, row-major) of points that differ only in the last
    construction digit on one axis: the finest scale the discretised F carries."""
    shape = [1 if spec.axis_kind(ell) == "point" else 2**spec.depth for ell in range(spec.N)]
    flat = np.arange(int(np.prod(shape))).reshape(shape)
    pairs = []
    for ell in range(spec.N):
        if shape[ell] < 2:
            continue
        left = np.take(flat, np.arange(0, shape[ell], 2), axis=ell).ravel()
        right = np.take(flat, np.arange(1, shape[ell], 2), axis=ell).ravel()
        pairs.append(np.stack([left, right], axis=1))
    return pairs


def image_scales(values: np.ndarray, spec: FractalSet, saturation: float = 0.25,
                 max_levels: int = 40) -> np.ndarray:
    """Dyadic scales for an image point cloud of P points.

    The ladder runs from the image diameter down to the median image distance
    between sibling points of the finest construction level (below it the
    cloud is a finite set), continuing further only while fewer than
    ``saturation * P`` boxes are occupied.
    """
    v = values.reshape(values.shape[0], -1)
    diam = float(np.max(np.ptp(v, axis=0)))
    P = v.shape[0]
    if diam == 0.0 or P == 1:
        return np.array([1.0, 0.5, 0.25, 0.125, 0.0625])
    pairs = sibling_pairs(spec)
    sib = np.concatenate([np.linalg.norm(v[p[:, 0]] - v[p[:, 1]], axis=1) for p in pairs])
    floor = float(np.median(sib))
    scales = [diam]
    for j in range(1, max_levels + 1):
        delta = diam * 2.0**-j
        if delta < floor and count_boxes(v, np.full(v.shape[1], delta)) >= saturation * P:
            break
        scales.append(delta)
    if len(scales) < 2:
        scales.append(diam / 2.0)
    return np.array(scales)


@dataclass(eq=False)
class ExperimentReport:
    spec: FractalSet
    h: HurstVector
    shifts: np.ndarray  # (seeds, shifts, N)
    estimates: np.ndarray  # (seeds, shifts)
    details: list  # DimEstimate per (seed, shift), row-major
    mean: float
    target: float
    dim_rho: float  # box-counting estimate of dim_rho F
    dim_rho_exact: float
    within: np.ndarray  # |estimate - target| <= shift_tol
    shift_tol: float
    max_snap: float


def draw_shifts(seed: SeedSpec, N: int, count: int) -> np.ndarray:
    """Shifts t uniform on [0, 1]^N from a stream disjoint from the field noise."""
    return seed.generator(1_000_003).uniform(0.0, 1.0, size=(count, N))


def _field_for_shifts(spec: FractalSet, h: HurstVector, shifts: np.ndarray, seed: SeedSpec,
                      budget: int = DEFAULT_NODE_BUDGET):
    """One field sample on the tensor grid holding F + t for every shift t."""
    coords = [[spec.axis_coords(ell) + spec.offset[ell] + t[ell] for t in shifts] for ell in range(spec.N)]
    grid = union_grid(coords, budget)
    return simulate(grid, h, seed)


def _image_task(args):
    spec, h, seed, n_shifts, kind, params, budget = args
    shifts = draw_shifts(seed, spec.N, n_shifts)
    field = _field_for_shifts(spec, h, shifts, seed, budget)
    base = generate_fractal(spec)
    out = []
    for t in shifts:
        sv = evaluate_shifted(field, base, t)
        if kind == "dimension":
            scales = image_scales(sv.values, spec)
            out.append((box_dim_euclidean(sv.values, scales), sv.max_snap))
        else:
            out.append((occupancy_sequence(sv.values, params), sv.max_snap))
    del field
    return shifts, out


def _run_tasks(tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_image_task, tasks))
    return [_image_task(t) for t in tasks]


def image_dimension_experiment(spec: FractalSet, h: HurstVector, shifts: int = 20, seeds: int = 5,
                               seed: SeedSpec = SeedSpec(0, 0), shift_tol: float = 0.3,
                               workers: int = 1, node_budget: int = DEFAULT_NODE_BUDGET) -> ExperimentReport:
    """Box-counting dimension of B(F + t) for ``seeds`` fields x ``shifts`` shifts.

    Field q uses stream ``seed.stream + q``; its shifts come from the same
    stream.  The target is min{d, box-counting dim_rho F}.
    """
    if not h.low_dimension_regime:
        raise HypothesisError(
            f"d={h.d} >= sum 1/H_l = {h.inverse_sum:.4g}: outside the low-dimension regime; "
            "there dim B(F) = dim_rho F holds uniformly and this experiment does not apply"
        )
    if spec.N != h.N:
        raise ContractError("F and H have different N")
    dr = dim_rho_estimate(spec, h) if spec.point_count() > 1 else None
    dim_rho = dr.slope if dr is not None else 0.0
    target = min(h.d, dim_rho)
    tasks = [(spec, h, seed.child(seed.stream + q), shifts, "dimension", None, node_budget)
             for q in range(seeds)]
    results = _run_tasks(tasks, workers)
    all_shifts = np.stack([r[0] for r in results])
    details = [d for r in results for d, _ in r[1]]
    est = np.array([d.slope for d in details]).reshape(seeds, shifts)
    max_snap = max(s for r in results for _, s in r[1])
    return ExperimentReport(spec, h, all_shifts, est, details, float(est.mean()), target, dim_rho,
                            spec.rho_dimension(h), np.abs(est - target) <= shift_tol, shift_tol, max_snap)


# --------------------------------------------------------------------------
# occupancy


def occupancy_sequence(values: np.ndarray, resolutions: Sequence[int]) -> np.ndarray:
    """(occupied bins of side 2^-k) * 2^{-k d} for each k."""
    v = values.reshape(values.shape[0], -1)
    d = v.shape[1]
    out = []
    for k in resolutions:
        n = count_boxes(v, np.full(d, 2.0**-k))
        out.append(n * 2.0 ** (-k * d))
    return np.array(out)


@dataclass(eq=False)
class OccupancyReport:
    spec: FractalSet
    h: HurstVector
    resolutions: tuple
    shifts: np.ndarray
    occupancy: np.ndarray  # (seeds * shifts, len(resolutions))
    step_ratios: np.ndarray  # occupancy[k+1] / occupancy[k]
    window_ratio: np.ndarray  # occupancy[last] / occupancy[first]
    stabilized: np.ndarray  # window_ratio >= threshold
    fraction_stable: float
    threshold: float
    dim_rho_exact: float
    max_snap: float


def occupation_positivity(spec: FractalSet, h: HurstVector, shifts: int = 20,
                          resolutions: Sequence[int] = (8, 9, 10, 11, 12), seeds: int = 1,
                          seed: SeedSpec = SeedSpec(0, 0), threshold: float = 0.5,
                          contrast: bool = False, workers: int = 1,
                          node_budget: int = DEFAULT_NODE_BUDGET) -> OccupancyReport:
    """Occupancy of B(F + t) at dyadic resolutions, per shift.

    A shift counts as stabilised when occupancy at the finest resolution is at
    least ``threshold`` times occupancy at the coarsest.  Successive ratios
    are reported as well; they cannot fall below 1/2 for nested dyadic bins.
    ``contrast=True`` allows dim_rho F <= d, the case outside the hypothesis.
    """
    if not h.low_dimension_regime:
        raise HypothesisError(f"d={h.d} >= sum 1/H_l: outside the low-dimension regime")
    dim_exact = spec.rho_dimension(h)
    if dim_exact <= h.d and not contrast:
        raise HypothesisError(
            f"dim_rho F = {dim_exact:.4g} <= d = {h.d}: positivity hypothesis violated "
            "(pass contrast=True to run as a contrast case)"
        )
    res = tuple(int(k) for k in resolutions)
    if len(res) < 2:
        raise ContractError("need at least two resolutions")
    tasks = [(spec, h, seed.child(seed.stream + q), shifts, "occupancy", res, node_budget)
             for q in range(seeds)]
    results = _run_tasks(tasks, workers)
    all_shifts = np.concatenate([r[0] for r in results])
    occ = np.array([o for r in results for o, _ in r[1]])
    step = occ[:, 1:] / occ[:, :-1]
    window = occ[:, -1] / occ[:, 0]
    stable = window >= threshold
    max_snap = max(s for r in results for _, s in r[1])
    return OccupancyReport(spec, h, res, all_shifts, occ, step, window, stable,
                           float(np.mean(stable)), threshold, dim_exact, max_snap)
