"""Command-line runner.

    fbsheet <command> <config.toml>

The config is a flat TOML table of typed scalars and lists; every key is
checked against the command's schema before anything is computed.  A run
writes into its output directory:

* ``manifest.json``   config echo, version, RNG id, timing, output digests,
                      status (always written, also on failure)
* ``*.tsv``           tab-separated records with a ``schema_version`` column
* ``*.svg``           log-log plots with fitted slopes (unless ``plot = false``)
* ``field.fbsf``      the sampled field (``simulate`` only)

Exit codes: 0 success, 1 unexpected failure (including I/O), 2 invalid
configuration, 3 resource budget exceeded, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .core_model import Configuration, ContractError, HurstVector
from .dimension_lab import (
    DEFAULT_POINT_BUDGET,
    FractalSet,
    dim_rho_estimate,
    image_dimension_experiment,
    occupation_positivity,
)
from .lnd_verifier import (
    BOUNDS,
    FIXTURES,
    ScanPolicy,
    c3_scan,
    dominance_constant,
    dominance_ratios,
    lnd_ratio_scan,
    sojourn_estimate,
    sojourn_grid_axes,
)
from .plotting import PlotSeries, emit_plot, finite_positive
from .quadrature import QuadratureError
from .simulator import (
    DEFAULT_NODE_BUDGET,
    RNG_ID,
    BudgetError,
    GridSpec,
    SeedSpec,
    SimulationError,
    simulate,
    simulate_direct,
    write_field,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_BUDGET, EXIT_NUMERICAL = 0, 1, 2, 3, 4
ENV_OUTPUT_DIR = "FBSHEET_OUTPUT_DIR"
ENV_WORKERS = "FBSHEET_WORKERS"


class ConfigError(ContractError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


# --------------------------------------------------------------------------
# config schema

_TYPES = {
    "int": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "float": (lambda v: isinstance(v, (int, float)) and not isinstance(v, bool), "a number"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "bool": (lambda v: isinstance(v, bool), "true or false"),
}


@dataclass(frozen=True)
class Key:
    type: str  # int | float | str | bool, or list:<type>
    default: Any = None
    required: bool = False

    def check(self, name: str, value):
        if self.type.startswith("list:"):
            inner = self.type[5:]
            ok, what = _TYPES[inner]
            if not isinstance(value, list) or not all(ok(v) for v in value):
                raise ConfigError(name, f"expected a list of {what.split(' ', 1)[1]}s")
            return [float(v) for v in value] if inner == "float" else list(value)
        ok, what = _TYPES[self.type]
        if not ok(value):
            raise ConfigError(name, f"expected {what}, got {value!r}")
        return float(value) if self.type == "float" else value


COMMON = {
    "seed": Key("int", 0),
    "stream": Key("int", 0),
    "workers": Key("int"),
    "output_dir": Key("str"),
    "node_budget": Key("int", DEFAULT_NODE_BUDGET),
    "plot": Key("bool", True),
}
FRACTAL = {
    "kind": Key("str", required=True),
    "ratios": Key("list:float", []),
    "depth": Key("int", required=True),
    "offset": Key("list:float", required=True),
    "singleton_axes": Key("list:int"),
    "point_budget": Key("int", DEFAULT_POINT_BUDGET),
}
SCHEMAS = {
    "simulate": {
        "H": Key("list:float", required=True),
        "d": Key("int", 1),
        "lo": Key("list:float", required=True),
        "hi": Key("list:float", required=True),
        "sizes": Key("list:int", required=True),
        "method": Key("str", "kronecker"),
    },
    "lnd-scan": {
        "H": Key("list:float", required=True),
        "epsilon": Key("float", 0.1),
        "n_min": Key("int", 1),
        "n_max": Key("int", 4),
        "config_count": Key("int", 10_000),
        "refine_steps": Key("int", 50),
        "refine_starts": Key("int", 8),
        "bounds": Key("list:str", ["anisotropic", "sectorial", "increment"]),
        "fixtures": Key("list:str", []),
    },
    "h-check": {
        "H": Key("list:float", required=True),
        "epsilon": Key("float", 0.1),
        "count": Key("int", 1000),
        "k": Key("int", 0),
        "i": Key("int", 1),
        "n_min": Key("int", 1),
        "n_max": Key("int", 4),
        "quadrature": Key("bool", True),
    },
    "sojourn": {
        "H": Key("list:float", required=True),
        "d": Key("int", 1),
        "x": Key("list:float", required=True),
        "y": Key("list:float", required=True),
        "epsilon": Key("float", 0.1),
        "spacing": Key("float", required=True),
        "R": Key("list:float", required=True),
        "replicas": Key("int", 50),
    },
    "dim-rho": {
        **FRACTAL,
        "H": Key("list:float", required=True),
        "levels": Key("int"),
    },
    "image-exp": {
        **FRACTAL,
        "H": Key("list:float", required=True),
        "d": Key("int", 1),
        "shifts": Key("int", 20),
        "seeds": Key("int", 5),
        "shift_tol": Key("float", 0.3),
    },
    "occupancy": {
        **FRACTAL,
        "H": Key("list:float", required=True),
        "d": Key("int", 1),
        "shifts": Key("int", 20),
        "seeds": Key("int", 1),
        "resolutions": Key("list:int", [8, 9, 10, 11, 12]),
        "threshold": Key("float", 0.5),
        "contrast": Key("bool", False),
    },
}
COMMANDS = tuple(SCHEMAS)


def parse_config(command: str, text: str) -> dict:
    """Typed parameters for ``command``; raises ConfigError on the first bad key."""
    if command not in SCHEMAS:
        raise ConfigError("command", f"unknown command {command!r}; expected one of {COMMANDS}")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"config is not valid TOML: {exc}") from exc
    schema = {**COMMON, **SCHEMAS[command]}
    out = {}
    for name, value in raw.items():
        if name not in schema:
            raise ConfigError(name, f"unknown key for command {command!r}")
        if isinstance(value, dict):
            raise ConfigError(name, "nested tables are not allowed; the config is flat")
        out[name] = schema[name].check(name, value)
    for name, key in schema.items():
        if name not in out:
            if key.required:
                raise ConfigError(name, "required key is missing")
            out[name] = key.default
    for name in ("seed", "stream"):
        if not 0 <= out[name] < 2**64:
            raise ConfigError(name, "must be a 64-bit unsigned integer")
    if out["workers"] is not None and out["workers"] < 1:
        raise ConfigError("workers", "must be >= 1")
    for name in ("node_budget", "point_budget"):
        if name in out and out[name] < 1:
            raise ConfigError(name, "must be >= 1")
    return out


def _hurst(p, d_key=True) -> HurstVector:
    d = p["d"] if d_key else 1
    if d < 1:
        raise ConfigError("d", "must be a positive integer")
    try:
        return HurstVector(p["H"], d)
    except ContractError as exc:
        raise ConfigError("H", str(exc)) from exc


def _fractal(p, h: HurstVector) -> FractalSet:
    try:
        spec = FractalSet(p["kind"], tuple(p["ratios"]), p["depth"], tuple(p["offset"]),
                          None if p["singleton_axes"] is None else tuple(p["singleton_axes"]))
    except ContractError as exc:
        raise ConfigError("kind/ratios/depth/offset", str(exc)) from exc
    if spec.N != h.N:
        raise ConfigError("offset", f"offset has {spec.N} coordinates but H has {h.N}")
    if any(not 0 <= a < spec.N for a in spec.singleton_axes):
        raise ConfigError("singleton_axes", f"axes must lie in 0..{spec.N - 1}")
    return spec


def _positive(p, *names):
    for name in names:
        if p[name] <= 0:
            raise ConfigError(name, "must be positive")


# --------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 2:
            return ";".join(",".join(repr(float(x)) for x in row) for row in arr)
        return ",".join(repr(float(x)) for x in arr.ravel())
    if v is None:
        return ""
    return str(v)


def write_tsv(path: Path, columns, rows) -> None:
    """Header row then one row per record; first column is schema_version."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["schema_version", *columns])
        for row in rows:
            w.writerow([SCHEMA_VERSION, *(_fmt(v) for v in row)])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Output directory plus everything the manifest needs."""

    def __init__(self, out_dir: Path, workers: int, plot: bool):
        self.out = out_dir
        self.workers = workers
        self.plot = plot
        self.files: list[str] = []
        self.details: dict = {}
        self.summary: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def tsv(self, name, columns, rows):
        write_tsv(self.path(name), columns, rows)

    def figure(self, name, series, kind="loglog", title=""):
        if self.plot:
            return emit_plot(series, kind, self.path(name), title)
        return {}

    def say(self, line: str):
        self.summary.append(line)
        print(line)


# --------------------------------------------------------------------------
# commands: each prepare() validates and returns a zero-argument job


def prepare_simulate(p):
    h = _hurst(p)
    n = h.N
    if not (len(p["lo"]) == len(p["hi"]) == len(p["sizes"]) == n):
        raise ConfigError("lo", f"lo, hi and sizes need {n} entries (one per axis of H)")
    for ell in range(n):
        if not 0 < p["lo"][ell] <= p["hi"][ell]:
            raise ConfigError("lo", f"axis {ell}: need 0 < lo <= hi")
        if p["sizes"][ell] < 1 or (p["sizes"][ell] > 1 and p["lo"][ell] == p["hi"][ell]):
            raise ConfigError("sizes", f"axis {ell}: need a positive size and lo < hi for more than one node")
    if p["method"] not in ("kronecker", "dense"):
        raise ConfigError("method", "must be 'kronecker' or 'dense'")
    grid = GridSpec.uniform(p["lo"], p["hi"], p["sizes"], budget=p["node_budget"])
    seed = SeedSpec(p["seed"], p["stream"])

    def job(run: Run):
        f = (simulate if p["method"] == "kronecker" else simulate_direct)(grid, h, seed)
        write_field(run.path("field.fbsf"), f)
        rows = []
        for c in range(h.d):
            v = f.values[c]
            rows.append((c, v.size, v.mean(), v.var(), v.min(), v.max()))
        run.tsv("records.tsv", ["component", "nodes", "mean", "variance", "min", "max"], rows)
        run.details.update(ridge=list(f.ridge), method=f.method, grid_shape=list(grid.shape))
        run.say(f"simulate: grid {grid.shape}, d={h.d}, method={f.method}, ridge={list(f.ridge)}")

    return job


def _points(c: Configuration):
    return [_fmt(c.s), _fmt(c.t), _fmt(c.conditioning)]


def prepare_lnd_scan(p):
    h = _hurst(p, d_key=False)
    for b in p["bounds"]:
        if b not in BOUNDS:
            raise ConfigError("bounds", f"unknown bound {b!r}; expected some of {BOUNDS}")
    if not p["bounds"]:
        raise ConfigError("bounds", "need at least one bound")
    fixtures = []
    for name in p["fixtures"]:
        if name not in FIXTURES:
            raise ConfigError("fixtures", f"unknown fixture {name!r}; expected some of {tuple(FIXTURES)}")
        c = FIXTURES[name](p["epsilon"])
        if c.N != h.N or not c.in_domain():
            raise ConfigError("fixtures", f"fixture {name!r} needs N={c.N} and points in [epsilon, 1)^N")
        fixtures.append(c)
    try:
        policy = ScanPolicy(h, p["epsilon"], (p["n_min"], p["n_max"]), p["config_count"],
                            SeedSpec(p["seed"], p["stream"]), p["refine_steps"], p["refine_starts"])
    except ContractError as exc:
        raise ConfigError("epsilon/n_min/n_max/config_count/refine_steps/refine_starts", str(exc)) from exc

    def job(run: Run):
        summary = []
        for which in p["bounds"]:
            rep = lnd_ratio_scan(policy, which, fixtures, workers=run.workers)
            dr = dominance_ratios(rep.records, h)
            dom = int(np.sum(dr > 1.0 + 1e-12))
            dom_c = int(np.sum(dr > dominance_constant(h, p["epsilon"]) * (1.0 + 1e-12)))
            rows = [(which, r.index, r.source, r.config.n, *_points(r.config), r.exact, r.bound, r.ratio)
                    for r in rep.records]
            run.tsv(f"records_{which}.tsv",
                    ["bound", "index", "source", "n", "s", "t", "conditioning", "exact", "bound_value", "ratio"],
                    rows)
            arg = _points(rep.argmin) if rep.argmin is not None else ["", "", ""]
            summary.append((which, p["config_count"], rep.min_ratio, rep.sampled_min_ratio, *arg,
                            rep.both_zero, rep.infinite, rep.violations, dom, float(dr.max()), dom_c))
            run.say(f"lnd-scan {which}: min_ratio={rep.min_ratio:.6g} sampled_min={rep.sampled_min_ratio:.6g} "
                    f"violations={rep.violations} both_zero={rep.both_zero} "
                    f"weak>strong={dom} max_weak/strong={dr.max():.4g} weak>C*strong={dom_c}")
            for r in rep.records:
                if r.source == "fixture":
                    run.say(f"  fixture record {r.index}: ratio={r.ratio:.12g}")
            x, y = finite_positive([r.bound for r in rep.records], [r.exact for r in rep.records])
            if x:
                run.figure(f"plot_{which}.svg", [PlotSeries(f"{which}: exact vs bound", x, y, fit=False)],
                           "loglog", f"{which} bound")
        run.tsv("summary.tsv",
                ["bound", "config_count", "min_ratio", "sampled_min_ratio", "argmin_s", "argmin_t",
                 "argmin_conditioning", "both_zero", "infinite", "violations", "weak_above_strong",
                 "max_weak_over_strong", "weak_above_c_strong"],
                summary)

    return job


def prepare_h_check(p):
    h = _hurst(p, d_key=False)
    if h.N < 2:
        raise ConfigError("H", "the h-function check needs N >= 2")
    for name in ("k", "i"):
        if not 0 <= p[name] < h.N:
            raise ConfigError(name, f"axis must lie in 0..{h.N - 1}")
    if p["k"] == p["i"]:
        raise ConfigError("i", "k and i must differ")
    if not 0 < p["epsilon"] < 0.5:
        raise ConfigError("epsilon", "must lie in (0, 0.5)")
    if not 1 <= p["n_min"] <= p["n_max"]:
        raise ConfigError("n_min", "need 1 <= n_min <= n_max")
    _positive(p, "count")
    seed = SeedSpec(p["seed"], p["stream"])

    def job(run: Run):
        rep = c3_scan(h, p["epsilon"], p["count"], seed, p["k"], p["i"], (p["n_min"], p["n_max"]),
                      p["quadrature"], workers=run.workers)
        k, i = p["k"], p["i"]
        if p["quadrature"]:
            rows = []
            for j, r in enumerate(rep.reports):
                proof = [x for x, ok in zip(r.normalized, r.proof_regime) if ok]
                gap = [x for x, ok in zip(r.normalized, r.proof_regime) if not ok]
                rows.append((j, h.H[k], k, i, r.config.n, *_points(r.config), r.r[k], r.exact_var, r.c3_ratio,
                             r.h_norm2, r.h_norm2_closed, r.h_norm2_relerr, max(proof, default=0.0),
                             max(gap, default=0.0), len(proof), len(gap), r.quad_error))
            run.tsv("records.tsv",
                    ["index", "H_k", "k", "i", "n", "s", "t", "conditioning", "r_k", "exact_var", "c3_ratio",
                     "h_norm2", "h_norm2_closed", "h_norm2_relerr", "max_inner_proof", "max_inner_gap",
                     "proof_pairs", "gap_pairs", "quad_error"], rows)
        else:
            run.tsv("records.tsv", ["index", "H_k", "c3_ratio"],
                    [(j, h.H[k], x) for j, x in enumerate(rep.reports)])
        run.tsv("summary.tsv",
                ["H_k", "count", "min_c3", "max_inner_proof", "max_inner_gap", "proof_pairs", "gap_pairs",
                 "max_h_norm2_relerr"],
                [(h.H[k], p["count"], rep.min_c3, rep.max_normalized_proof, rep.max_normalized_other,
                  rep.proof_pairs, rep.other_pairs, rep.max_h_norm_relerr)])
        run.say(f"h-check H_k={h.H[k]}: min_c3={rep.min_c3:.6g} max_inner_proof={rep.max_normalized_proof:.3g} "
                f"max_inner_gap={rep.max_normalized_other:.3g} max_h_norm2_relerr={rep.max_h_norm_relerr:.3g}")

    return job


def prepare_sojourn(p):
    h = _hurst(p)
    if len(p["x"]) != h.N or len(p["y"]) != h.N:
        raise ConfigError("x", f"x and y need {h.N} coordinates")
    if not 0 < p["epsilon"] < 1:
        raise ConfigError("epsilon", "must lie in (0, 1)")
    _positive(p, "spacing", "replicas")
    R = p["R"]
    if len(R) < 2 or any(r <= 0 for r in R) or any(b <= a for a, b in zip(R, R[1:])):
        raise ConfigError("R", "need at least two positive, increasing values")
    axes = sojourn_grid_axes(p["x"], p["y"], p["epsilon"], p["spacing"])
    if axes[0][0] <= 0 or any(ax[0] <= 0 for ax in axes):
        raise ConfigError("x", "x + epsilon and y + epsilon must be positive")
    grid = GridSpec(axes, budget=p["node_budget"])

    def job(run: Run):
        fields = [simulate(grid, h, SeedSpec(p["seed"], p["stream"] + q)) for q in range(p["replicas"])]
        rep = sojourn_estimate(p["x"], p["y"], R, fields, p["epsilon"])
        rows = [(q, r, rep.per_replica[q, m]) for q in range(p["replicas"]) for m, r in enumerate(R)]
        run.tsv("records.tsv", ["replica", "R", "I"], rows)
        run.tsv("mean.tsv", ["R", "mean_I"], list(zip(R, rep.mean)))
        run.tsv("summary.tsv", ["slope", "stderr", "replicas", "spacing", "max_snap", "t_nodes"],
                [(rep.slope, rep.stderr, p["replicas"], rep.spacing, rep.max_snap, rep.t_nodes)])
        run.figure("plot.svg", [PlotSeries("E[I] vs R", list(R), list(rep.mean))], "loglog", "sojourn")
        run.say(f"sojourn: slope={rep.slope:.4f} stderr={rep.stderr:.3g} grid={grid.shape}")

    return job


def prepare_dim_rho(p):
    h = _hurst(p, d_key=False)
    spec = _fractal(p, h)
    if p["levels"] is not None and p["levels"] < 2:
        raise ConfigError("levels", "need at least 2 levels")

    def job(run: Run):
        est = dim_rho_estimate(spec, h, p["levels"], p["point_budget"])
        lo, hi = est.fit_range
        rows = [(s, c, lo <= j < hi) for j, (s, c) in enumerate(zip(est.scales, est.counts))]
        run.tsv("records.tsv", ["scale", "count", "in_fit"], rows)
        exact = spec.rho_dimension(h)
        run.tsv("summary.tsv", ["slope", "stderr", "residual", "fit_lo", "fit_hi", "exact", "points"],
                [(est.slope, est.stderr, est.residual, lo, hi, exact, spec.point_count())])
        run.figure("plot.svg", [PlotSeries("rho box counts", list(est.scales), list(est.counts),
                                           fit_range=est.fit_range, x_is_scale=True)], "loglog", "dim_rho")
        run.say(f"dim-rho: slope={est.slope:.4f} stderr={est.stderr:.3g} exact={exact:.4f}")

    return job


def _experiment_prelude(p):
    h = _hurst(p)
    spec = _fractal(p, h)
    _positive(p, "shifts", "seeds")
    if spec.point_count() > p["point_budget"]:
        raise BudgetError(f"{spec.point_count()} points exceed the point budget {p['point_budget']}")
    return h, spec


def prepare_image_exp(p):
    h, spec = _experiment_prelude(p)
    if not h.low_dimension_regime:
        raise ConfigError("d", f"d={h.d} must be below sum 1/H_l = {h.inverse_sum:.4g}")
    seed = SeedSpec(p["seed"], p["stream"])

    def job(run: Run):
        rep = image_dimension_experiment(spec, h, p["shifts"], p["seeds"], seed, p["shift_tol"],
                                         run.workers, p["node_budget"])
        rows, counts = [], []
        for q in range(p["seeds"]):
            for j in range(p["shifts"]):
                d = rep.details[q * p["shifts"] + j]
                rows.append((q, j, rep.shifts[q, j], d.slope, d.stderr, bool(rep.within[q, j]),
                             d.fit_range[0], d.fit_range[1], d.scales.size))
                counts.extend((q, j, s, c) for s, c in zip(d.scales, d.counts))
        run.tsv("records.tsv", ["seed_index", "shift_index", "shift", "estimate", "stderr", "within",
                                "fit_lo", "fit_hi", "scales"], rows)
        run.tsv("counts.tsv", ["seed_index", "shift_index", "scale", "count"], counts)
        frac = float(np.mean(rep.within))
        run.tsv("summary.tsv", ["mean", "target", "dim_rho", "dim_rho_exact", "fraction_within", "shift_tol",
                                "max_snap"],
                [(rep.mean, rep.target, rep.dim_rho, rep.dim_rho_exact, frac, rep.shift_tol, rep.max_snap)])
        d0 = rep.details[0]
        run.figure("plot.svg", [PlotSeries("image box counts (seed 0, shift 0)", list(d0.scales),
                                           list(d0.counts), fit_range=d0.fit_range, x_is_scale=True)],
                   "loglog", "image dimension")
        run.say(f"image-exp: mean={rep.mean:.4f} target={rep.target:.4f} fraction_within={frac:.3f}")

    return job


def prepare_occupancy(p):
    h, spec = _experiment_prelude(p)
    if len(p["resolutions"]) < 2 or any(k < 0 for k in p["resolutions"]):
        raise ConfigError("resolutions", "need at least two nonnegative resolutions")
    if not h.low_dimension_regime:
        raise ConfigError("d", f"d={h.d} must be below sum 1/H_l = {h.inverse_sum:.4g}")
    if spec.rho_dimension(h) <= h.d and not p["contrast"]:
        raise ConfigError("contrast", f"dim_rho F = {spec.rho_dimension(h):.4g} <= d = {h.d}; "
                                      "set contrast = true to run it as a contrast case")
    seed = SeedSpec(p["seed"], p["stream"])
    res = p["resolutions"]

    def job(run: Run):
        rep = occupation_positivity(spec, h, p["shifts"], res, p["seeds"], seed, p["threshold"],
                                    p["contrast"], run.workers, p["node_budget"])
        rows = []
        for j in range(rep.occupancy.shape[0]):
            rows.append((j // p["shifts"], j % p["shifts"], rep.shifts[j], *rep.occupancy[j],
                         rep.window_ratio[j], rep.step_ratios[j].min(), bool(rep.stabilized[j])))
        run.tsv("records.tsv", ["seed_index", "shift_index", "shift", *[f"occ_k{k}" for k in res],
                                "window_ratio", "min_step_ratio", "stable"], rows)
        run.tsv("summary.tsv", ["fraction_stable", "threshold", "mean_window_ratio", "max_window_ratio",
                                "dim_rho_exact", "contrast", "max_snap"],
                [(rep.fraction_stable, rep.threshold, rep.window_ratio.mean(), rep.window_ratio.max(),
                  rep.dim_rho_exact, p["contrast"], rep.max_snap)])
        run.figure("plot.svg", [PlotSeries("mean occupancy", [2.0**-k for k in res],
                                           list(rep.occupancy.mean(axis=0)), x_is_scale=True)],
                   "loglog", "occupancy")
        run.say(f"occupancy: fraction_stable={rep.fraction_stable:.3f} "
                f"mean_window_ratio={rep.window_ratio.mean():.4f}")

    return job


PREPARE: dict[str, Callable] = {
    "simulate": prepare_simulate,
    "lnd-scan": prepare_lnd_scan,
    "h-check": prepare_h_check,
    "sojourn": prepare_sojourn,
    "dim-rho": prepare_dim_rho,
    "image-exp": prepare_image_exp,
    "occupancy": prepare_occupancy,
}


# --------------------------------------------------------------------------
# driver


def _env_workers() -> int:
    raw = os.environ.get(ENV_WORKERS)
    if raw is None or raw == "":
        return 1
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(ENV_WORKERS, f"not an integer: {raw!r}") from None
    if w < 1:
        raise ConfigError(ENV_WORKERS, "must be >= 1")
    return w


def _output_dir(p: dict | None, config_path: Path) -> Path:
    if p is not None and p.get("output_dir"):
        return Path(p["output_dir"])
    base = os.environ.get(ENV_OUTPUT_DIR) or "fbsheet-out"
    return Path(base) / config_path.stem


def _classify(exc: BaseException) -> int:
    if isinstance(exc, BudgetError):
        return EXIT_BUDGET
    if isinstance(exc, ContractError):
        return EXIT_CONFIG
    if isinstance(exc, (QuadratureError, SimulationError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    return EXIT_FAILURE


def run(command: str, config_path) -> int:
    """Validate, execute, and write outputs plus manifest; returns the exit code."""
    config_path = Path(config_path)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    raw = b""
    params = None
    runner = None
    code = EXIT_OK
    failure = None
    try:
        try:
            raw = config_path.read_bytes()
        except OSError as exc:
            raise ConfigError("", f"cannot read config {config_path}: {exc}") from exc
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError("", "config is not UTF-8") from exc
        params = parse_config(command, text)
        workers = params["workers"] if params["workers"] is not None else _env_workers()
        job = PREPARE[command](params)
        out = _output_dir(params, config_path)
        out.mkdir(parents=True, exist_ok=True)
        runner = Run(out, workers, params["plot"])
        job(runner)
    except Exception as exc:  # noqa: BLE001 - every failure is reported in the manifest
        code = _classify(exc)
        failure = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError) and exc.key:
            failure["key"] = exc.key
        print(f"fbsheet {command}: error: {exc}", file=sys.stderr)
    try:
        out = runner.out if runner is not None else _output_dir(params, config_path)
        out.mkdir(parents=True, exist_ok=True)
        files = runner.files if runner is not None else []
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "config_path": str(config_path),
            # surrogateescape keeps undecodable bytes recoverable from the JSON string
            "config_text": raw.decode("utf-8", "surrogateescape"),
            "config_sha256": hashlib.sha256(raw).hexdigest(),
            "version": __version__,
            "rng": RNG_ID,
            "workers": runner.workers if runner is not None else None,
            "started_utc": started.isoformat(timespec="seconds"),
            "wall_clock_seconds": round(time.perf_counter() - t0, 6),
            "outputs": {name: sha256_file(out / name) for name in files if (out / name).exists()},
            "details": runner.details if runner is not None else {},
            "summary": runner.summary if runner is not None else [],
            "status": "ok" if code == EXIT_OK else "failed",
            "exit_code": code,
            "failure": failure,
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        print(f"fbsheet {command}: cannot write manifest: {exc}", file=sys.stderr)
        return code if code != EXIT_OK else EXIT_FAILURE
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="fbsheet",
        description="Fractional Brownian sheet experiments driven by a flat TOML config.",
        epilog=f"Environment: {ENV_OUTPUT_DIR} (default output root), {ENV_WORKERS} (default worker count).",
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="path to the TOML config")
    args = ap.parse_args(argv)
    return run(args.command, args.config)


if __name__ == "__main__":
    sys.exit(main())
