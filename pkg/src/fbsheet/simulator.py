"""Exact sampling of fractional Brownian sheets on tensor grids.

The covariance is a product over axes, so over a tensor grid the Gram matrix
is the Kronecker product of one-dimensional Gram matrices K_l.  Factoring each
K_l = L_l L_l^T and applying L_1 x ... x L_N to a standard normal array gives
an exact sample at a cost of sum m_l^3 + d * prod(m_l) * sum(m_l).

``simulate_direct`` factors the dense Gram matrix over all nodes instead and
serves as the oracle for the Kronecker path.

Randomness comes from numpy's Philox counter-based generator keyed by
``(seed, stream, component)``; component streams are disjoint by construction.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core_model import ContractError, HurstVector, axis_covariance, covariance

RNG_ALGORITHM = "numpy.random.Philox(4x64-10)"
RNG_ID = f"{RNG_ALGORITHM}/numpy-{np.__version__}"
RIDGE = 1e-12
DEFAULT_NODE_BUDGET = 2**25
DIRECT_NODE_BUDGET = 4096

FIELD_MAGIC = b"FBSFIELD"
FIELD_FORMAT_VERSION = 1


class SimulationError(RuntimeError):
    pass


class BudgetError(SimulationError):
    pass


@dataclass(frozen=True)
class SeedSpec:
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if int(v) != v or not (0 <= v < 2**64):
                raise ContractError(f"{name}={v} must be a 64-bit unsigned integer")
            object.__setattr__(self, name, int(v))

    def generator(self, *key: int) -> np.random.Generator:
        """Generator for the sub-stream ``key`` under this (seed, stream)."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *key))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream: int) -> "SeedSpec":
        return SeedSpec(self.seed, stream)


@dataclass(frozen=True, eq=False)
class GridSpec:
    axes: tuple
    budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        axes = []
        for ell, ax in enumerate(self.axes):
            ax = np.array(ax, dtype=float).reshape(-1)
            if ax.size == 0:
                raise ContractError(f"axis {ell} is empty")
            if np.any(ax <= 0.0):
                raise ContractError(f"axis {ell} has non-positive coordinates")
            if np.any(np.diff(ax) <= 0.0):
                raise ContractError(f"axis {ell} is not strictly increasing")
            ax.setflags(write=False)
            axes.append(ax)
        object.__setattr__(self, "axes", tuple(axes))
        if self.size > self.budget:
            raise BudgetError(f"grid has {self.size} nodes, budget is {self.budget}")

    @classmethod
    def uniform(cls, lo, hi, m, budget: int = DEFAULT_NODE_BUDGET) -> "GridSpec":
        lo = np.atleast_1d(lo).astype(float)
        hi = np.atleast_1d(hi).astype(float)
        m = np.broadcast_to(np.atleast_1d(m), lo.shape)
        return cls(tuple(np.linspace(a, b, int(k)) for a, b, k in zip(lo, hi, m)), budget)

    @property
    def N(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(ax.size for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def nodes(self) -> np.ndarray:
        """All nodes, row-major, shape (size, N)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True, eq=False)
class FieldSample:
    grid: GridSpec
    h: HurstVector
    values: np.ndarray  # (d, m_1, ..., m_N)
    seed: SeedSpec
    rng_id: str = RNG_ID
    ridge: tuple = field(default=())
    method: str = "kronecker"


def draw_noise(grid: GridSpec, d: int, seed: SeedSpec) -> np.ndarray:
    """Standard normal array (d, *grid.shape); component c uses sub-stream c."""
    out = np.empty((d,) + grid.shape)
    for c in range(d):
        out[c] = seed.generator(c).standard_normal(grid.shape)
    return out


def regularized_cholesky(k: np.ndarray, what: str):
    """Cholesky factor of k; the RIDGE * max-diagonal shift is added only on failure."""
    try:
        return np.linalg.cholesky(k), 0.0
    except np.linalg.LinAlgError:
        pass
    ridge = RIDGE * float(np.max(np.diag(k)))
    try:
        return np.linalg.cholesky(k + ridge * np.eye(k.shape[0])), ridge
    except np.linalg.LinAlgError as exc:
        raise SimulationError(f"Cholesky factorisation failed on {what}") from exc


def axis_factor(coords, hurst: float, axis: int = 0):
    """Cholesky factor of the one-axis Gram matrix plus the ridge used."""
    a = np.asarray(coords, dtype=float)
    k = axis_covariance(a[:, None], a[None, :], hurst)
    return regularized_cholesky(0.5 * (k + k.T), f"axis {axis}")


def _check_hurst(grid: GridSpec, h: HurstVector):
    if grid.N != h.N:
        raise ContractError(f"grid has {grid.N} axes but H has {h.N} entries")


def simulate(grid: GridSpec, h: HurstVector, seed: SeedSpec, noise: np.ndarray | None = None) -> FieldSample:
    """Exact sample of the d-component sheet on ``grid`` via Kronecker factors.

    ``noise`` (shape (d, *grid.shape)) replaces the generated normals.
    """
    _check_hurst(grid, h)
    factors, ridges = [], []
    for ell, (ax, hl) in enumerate(zip(grid.axes, h.H)):
        L, r = axis_factor(ax, hl, ell)
        factors.append(L)
        ridges.append(r)
    z = draw_noise(grid, h.d, seed) if noise is None else np.array(noise, dtype=float)
    if z.shape != (h.d,) + grid.shape:
        raise ContractError(f"noise shape {z.shape} != {(h.d,) + grid.shape}")
    x = z
    for ell, L in enumerate(factors):
        # contract L with axis ell+1 of x (axis 0 is the component)
        x = np.moveaxis(np.tensordot(L, x, axes=([1], [ell + 1])), 0, ell + 1)
    x = np.ascontiguousarray(x)
    return FieldSample(grid, h, x, seed, RNG_ID, tuple(ridges), "kronecker")


def simulate_direct(grid: GridSpec, h: HurstVector, seed: SeedSpec, noise: np.ndarray | None = None) -> FieldSample:
    """Oracle sampler: Cholesky of the dense Gram matrix over every node."""
    _check_hurst(grid, h)
    if grid.size > DIRECT_NODE_BUDGET:
        raise BudgetError(f"dense sampler limited to {DIRECT_NODE_BUDGET} nodes, grid has {grid.size}")
    nodes = grid.nodes()
    k = covariance(nodes[:, None, :], nodes[None, :, :], h)
    k = 0.5 * (k + k.T)
    L, ridge = regularized_cholesky(k, "the dense Gram matrix")
    z = draw_noise(grid, h.d, seed) if noise is None else np.array(noise, dtype=float)
    if z.shape != (h.d,) + grid.shape:
        raise ContractError(f"noise shape {z.shape} != {(h.d,) + grid.shape}")
    x = (z.reshape(h.d, -1) @ L.T).reshape(z.shape)
    return FieldSample(grid, h, x, seed, RNG_ID, (ridge,), "dense")


class ShiftedValues(NamedTuple):
    values: np.ndarray  # (P, d)
    indices: np.ndarray  # (P, N) grid indices of the snapped nodes
    max_snap: float  # largest per-axis distance to the snapped node


def nearest_indices(axis: np.ndarray, x: np.ndarray) -> np.ndarray:
    j = np.clip(np.searchsorted(axis, x), 1, axis.size - 1) if axis.size > 1 else np.zeros(x.shape, int)
    if axis.size == 1:
        return j
    left = axis[j - 1]
    right = axis[j]
    return np.where(np.abs(x - left) <= np.abs(right - x), j - 1, j)


def evaluate_shifted(f: FieldSample, base_points, shift) -> ShiftedValues:
    """Field values at the grid nodes nearest to base_points + shift."""
    pts = np.atleast_2d(np.asarray(base_points, dtype=float)) + np.asarray(shift, dtype=float)
    if pts.shape[1] != f.grid.N:
        raise ContractError("points and grid dimensions differ")
    lo = np.array([ax[0] for ax in f.grid.axes])
    hi = np.array([ax[-1] for ax in f.grid.axes])
    outside = np.any((pts < lo) | (pts > hi), axis=1)
    if np.any(outside):
        bad = pts[outside]
        raise ContractError(f"{bad.shape[0]} point(s) outside the grid, e.g. {bad[:5].tolist()}")
    idx = np.stack([nearest_indices(ax, pts[:, ell]) for ell, ax in enumerate(f.grid.axes)], axis=1)
    snapped = np.stack([ax[idx[:, ell]] for ell, ax in enumerate(f.grid.axes)], axis=1)
    max_snap = float(np.max(np.abs(snapped - pts))) if pts.size else 0.0
    vals = f.values[(slice(None),) + tuple(idx.T)].T
    return ShiftedValues(np.ascontiguousarray(vals), idx, max_snap)


def write_field(path, f: FieldSample) -> None:
    """Binary container: magic, uint64 LE header length, JSON header, float64 LE values.

    Values are row-major with shape (d, m_1, ..., m_N).  The header holds the
    grid axes, H, d, seed, stream, RNG identifier, ridges and sampling method.
    """
    header = {
        "format_version": FIELD_FORMAT_VERSION,
        "axes": [ax.tolist() for ax in f.grid.axes],
        "H": list(f.h.H),
        "d": f.h.d,
        "seed": f.seed.seed,
        "stream": f.seed.stream,
        "rng": f.rng_id,
        "ridge": list(f.ridge),
        "method": f.method,
        "shape": list(f.values.shape),
        "dtype": "<f8",
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> FieldSample:
    with open(path, "rb") as fh:
        if fh.read(len(FIELD_MAGIC)) != FIELD_MAGIC:
            raise ValueError(f"{path} is not a field container")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        raw = fh.read()
    if header["format_version"] != FIELD_FORMAT_VERSION:
        raise ValueError(f"unsupported field format {header['format_version']}")
    values = np.frombuffer(raw, dtype="<f8").reshape(header["shape"]).copy()
    grid = GridSpec(tuple(header["axes"]), budget=max(DEFAULT_NODE_BUDGET, int(np.prod(header["shape"][1:]))))
    return FieldSample(
        grid,
        HurstVector(header["H"], header["d"]),
        values,
        SeedSpec(header["seed"], header["stream"]),
        header["rng"],
        tuple(header["ridge"]),
        header["method"],
    )


def union_grid(coords_per_axis: Sequence[Sequence[np.ndarray]], budget: int = DEFAULT_NODE_BUDGET) -> GridSpec:
    """Tensor grid whose axis l is the sorted union of the given coordinate sets."""
    axes = [np.unique(np.concatenate([np.asarray(c, float).ravel() for c in sets])) for sets in coords_per_axis]
    return GridSpec(tuple(axes), budget)
