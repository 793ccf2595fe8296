"""
Connectivity sweeps, efficiency ratios and a Monte Carlo cross-check.

A sweep evaluates, for every (kernel, regression model) cell, the dispersion
of the Markov-weighted estimator at each requested connectivity ``m`` along
with the OLS and BLUE references.  Cells are independent; a failing cell is
recorded with its error status and the others still run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .covmodels import (Basis, ExpAbsCos, ExpQuad, ExpQuadCos, GaussianCurve, Grid,
                        Kernel, Polynomial, build_cov_matrix, build_design_matrix,
                        format_float)
from .errors import MarkovApproxError, NotPositiveDefinite
from .estimate import (FullInverse, Identity, MarkovApprox, Weight, dispersion,
                       functionals, glse, parse_weight)

__all__ = [
    "MonteCarloConfig", "SweepConfig", "SweepRecord", "SweepResult", "Cell",
    "default_m_values", "efficiency_ratio", "run_sweep", "monte_carlo_validate",
    "MonteCarloReport", "convergence_profile", "STUDIES", "study",
    "write_sweep_csv", "write_curves", "format_stacked",
]

CSV_COLUMNS = ("kernel", "params", "model", "m", "det", "trace",
               "psi_ratio_det", "psi_ratio_tr", "status")


def default_m_values(n: int) -> tuple:
    """``0..5`` capped at ``n - 1``, plus ``n - 1``."""
    return tuple(sorted(set(range(min(5, n - 1) + 1)) | {n - 1}))


@dataclass(frozen=True)
class MonteCarloConfig:
    samples: int = 10_000
    seed: int = 0
    beta: Optional[tuple] = None
    weights: tuple = ("ols", "blue")

    def __post_init__(self):
        if self.samples < 1000:
            raise ValueError(f"Monte Carlo needs at least 1000 samples, got {self.samples}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class SweepConfig:
    kernels: tuple
    models: tuple
    grid: Grid = field(default_factory=Grid.equidistant)
    m_values: Optional[tuple] = None
    jitter: float = 0.0
    variance: float = 1.0
    tolerance: float = 0.01
    functionals: str = "both"
    monte_carlo: Optional[MonteCarloConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "models", tuple(self.models))
        if not self.kernels or not self.models:
            raise ValueError("a sweep needs at least one kernel and one model")
        n = self.grid.n
        ms = default_m_values(n) if self.m_values is None else tuple(sorted(set(self.m_values)))
        if not ms or ms[0] < 0 or ms[-1] > n - 1:
            raise ValueError(f"connectivity values must lie in [0, {n - 1}], got {ms}")
        object.__setattr__(self, "m_values", ms)
        if self.functionals not in ("det", "trace", "both"):
            raise ValueError("functionals must be 'det', 'trace' or 'both'")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")

    @property
    def cells(self) -> list:
        return [Cell(i, k, b) for i, (k, b) in
                enumerate((k, b) for k in self.kernels for b in self.models)]

    def digest(self) -> str:
        """SHA-256 of a canonical JSON rendering; used to tag outputs."""
        doc = {
            "kernels": [[k.family, k.params] for k in self.kernels],
            "models": [[b.family, b.params] for b in self.models],
            "grid": [format_float(t) for t in self.grid.points],
            "m_values": list(self.m_values),
            "jitter": format_float(self.jitter),
            "variance": format_float(self.variance),
            "tolerance": format_float(self.tolerance),
            "functionals": self.functionals,
            "monte_carlo": None if self.monte_carlo is None else {
                "samples": self.monte_carlo.samples, "seed": self.monte_carlo.seed,
                "beta": None if self.monte_carlo.beta is None else list(self.monte_carlo.beta),
                "weights": list(self.monte_carlo.weights)},
        }
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Cell:
    index: int
    kernel: Kernel
    model: Basis


def _params_text(obj) -> str:
    return ";".join(f"{k}={format_float(v)}" for k, v in obj.params.items())


def _model_text(basis) -> str:
    return f"{basis.family}({_params_text(basis)})"


@dataclass(frozen=True)
class SweepRecord:
    kernel: str
    params: str
    model: str
    m: str                          # connectivity, or "ols" / "blue" for references
    det: Optional[float]
    trace: Optional[float]
    psi_ratio_det: Optional[float]
    psi_ratio_tr: Optional[float]
    status: str = "ok"
    cell: int = 0

    @property
    def ok(self):
        return self.status == "ok"


@dataclass(frozen=True)
class SweepResult:
    config: SweepConfig
    records: tuple
    monte_carlo: tuple = ()

    def cell_records(self, cell: int) -> list:
        return [r for r in self.records if r.cell == cell]

    def lookup(self, cell: int, m) -> SweepRecord:
        key = str(m)
        for r in self.records:
            if r.cell == cell and r.m == key:
                return r
        raise KeyError((cell, m))


def efficiency_ratio(d_ols, d_blue) -> tuple:
    """``(det D_ols / det D_blue, tr D_ols / tr D_blue)``."""
    det_o, tr_o = functionals(d_ols)
    det_b, tr_b = functionals(d_blue)
    return det_o / det_b, tr_o / tr_b


def _status(exc: BaseException) -> str:
    msg = str(exc).replace(",", ";").replace("\n", " ")
    return f"error:{type(exc).__name__}:{msg}"


def _run_cell(config: SweepConfig, cell: Cell) -> list:
    kname, kpar, model = cell.kernel.family, _params_text(cell.kernel), _model_text(cell.model)

    def rec(m, det=None, tr=None, ratio=(None, None), status="ok"):
        return SweepRecord(kname, kpar, model, str(m), det, tr, ratio[0], ratio[1],
                           status, cell.index)

    labels = ["ols", "blue", *config.m_values]
    try:
        K = build_cov_matrix(cell.kernel, config.grid, jitter=config.jitter,
                             variance=config.variance)
        F = build_design_matrix(cell.model, config.grid)
    except (MarkovApproxError, ValueError) as exc:
        return [rec(m, status=_status(exc)) for m in labels]

    disp, status = {}, {}
    weights = [("ols", Identity()), ("blue", FullInverse())]
    weights += [(m, MarkovApprox(m)) for m in config.m_values]
    for key, w in weights:
        try:
            disp[key] = dispersion(F, w, K)
        except (MarkovApproxError, ValueError, np.linalg.LinAlgError) as exc:
            status[key] = _status(exc)
    ratio = (None, None)
    if "ols" in disp and "blue" in disp:
        ratio = efficiency_ratio(disp["ols"], disp["blue"])
    out = []
    for key in labels:
        if key in disp:
            det, tr = functionals(disp[key])
            out.append(rec(key, det, tr, ratio))
        else:
            out.append(rec(key, ratio=ratio, status=status[key]))
    return out


def _run_cell_args(args):
    return _run_cell(*args)


def _run_mc_args(args):
    config, cell = args
    mc = config.monte_carlo
    try:
        return monte_carlo_validate(cell.kernel, cell.model, config.grid,
                                    [parse_weight(w, config.grid.n) for w in mc.weights],
                                    samples=mc.samples, seed=mc.seed, beta=mc.beta,
                                    cell_index=cell.index, jitter=config.jitter,
                                    variance=config.variance)
    except (MarkovApproxError, ValueError) as exc:
        return MonteCarloReport(cell.index, mc.samples, mc.seed, (), _status(exc))


def run_sweep(config: SweepConfig, jobs: int = 1) -> SweepResult:
    """Evaluate every cell; results come back in config order whatever ``jobs`` is."""
    cells = config.cells
    tasks = [(config, c) for c in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_cell_args, tasks))
            mc = list(pool.map(_run_mc_args, tasks)) if config.monte_carlo else []
    else:
        chunks = [_run_cell_args(t) for t in tasks]
        mc = [_run_mc_args(t) for t in tasks] if config.monte_carlo else []
    records = tuple(r for chunk in chunks for r in chunk)
    return SweepResult(config, records, tuple(mc))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloRow:
    weight: str
    analytic_trace: float
    empirical_trace: float
    rel_dev: float
    blue_trace: float
    rel_dev_blue: float
    excess_analytic: float      # tr(D_w - D_blue)
    excess_empirical: float     # tr cov(B_w - B_blue) over common draws
    max_bias_z: float

    @property
    def agrees(self) -> bool:
        return self.rel_dev <= 0.05


@dataclass(frozen=True)
class MonteCarloReport:
    cell: int
    samples: int
    seed: int
    rows: tuple
    status: str = "ok"

    def row(self, label: str) -> MonteCarloRow:
        for r in self.rows:
            if r.weight == label:
                return r
        raise KeyError(label)

    def to_text(self) -> str:
        lines = [f"# cell={self.cell} samples={self.samples} seed={self.seed} status={self.status}",
                 "weight,analytic_trace,empirical_trace,rel_dev,blue_trace,rel_dev_blue,"
                 "excess_analytic,excess_empirical,max_bias_z,agrees"]
        for r in self.rows:
            vals = [r.analytic_trace, r.empirical_trace, r.rel_dev, r.blue_trace,
                    r.rel_dev_blue, r.excess_analytic, r.excess_empirical, r.max_bias_z]
            lines.append(",".join([r.weight, *map(format_float, vals), str(r.agrees).lower()]))
        return "\n".join(lines) + "\n"


def monte_carlo_validate(kernel: Kernel, model: Basis, grid: Grid,
                         weights: Sequence[Weight], *, samples: int = 10_000,
                         seed: int = 0, beta=None, cell_index: int = 0,
                         jitter: float = 0.0, variance: float = 1.0) -> MonteCarloReport:
    """Sample ``Z = F^T beta + xi`` with ``cov(xi) = K`` and compare B-hat spread to theory.

    All weights see the same draws, so ``B_w - B_blue`` isolates the part of the
    dispersion that the BLUE short form cannot account for.  The stream is
    seeded from ``(seed, cell_index)``.
    """
    if samples < 1000:
        raise ValueError(f"Monte Carlo needs at least 1000 samples, got {samples}")
    K = build_cov_matrix(kernel, grid, jitter=jitter, variance=variance)
    F = build_design_matrix(model, grid)
    p = F.p
    beta = np.ones(p) if beta is None else np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise ValueError(f"beta must have {p} components, got {beta.shape}")
    try:
        chol = linalg.cholesky(K.values, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"cannot sample: {exc}") from None

    rng = np.random.default_rng(np.random.SeedSequence([seed, cell_index]))
    Z = F.values.T @ beta[:, None] + chol @ rng.standard_normal((grid.n, samples))

    blue = FullInverse()
    B_blue = glse(F, blue, K, Z)
    d_blue = dispersion(F, blue, K)
    rows = []
    for w in weights:
        B = glse(F, w, K, Z)
        D = dispersion(F, w, K)
        emp = np.atleast_2d(np.cov(B))
        diff = np.atleast_2d(np.cov(B - B_blue))
        se = np.sqrt(np.diag(D) / samples)
        bias_z = np.abs(B.mean(axis=1) - beta) / se
        tr, tr_emp, tr_blue = np.trace(D), np.trace(emp), np.trace(d_blue)
        rows.append(MonteCarloRow(
            w.label, float(tr), float(tr_emp), float(abs(tr_emp - tr) / tr),
            float(tr_blue), float(abs(tr_emp - tr_blue) / tr_blue),
            float(np.trace(D - d_blue)), float(np.trace(diff)), float(bias_z.max())))
    return MonteCarloReport(cell_index, samples, seed, tuple(rows))


# ---------------------------------------------------------------------------
# convergence profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceProfile:
    per_cell: tuple             # (cell index, smallest m or None)
    histogram: dict


def convergence_profile(result: SweepResult, tol: Optional[float] = None) -> ConvergenceProfile:
    """Smallest swept ``m`` whose det D is within ``tol`` (relative) of BLUE, per cell."""
    tol = result.config.tolerance if tol is None else tol
    out = []
    for cell in result.config.cells:
        recs = result.cell_records(cell.index)
        blue = next(r for r in recs if r.m == "blue")
        best = None
        if blue.ok:
            for m in result.config.m_values:
                r = next(x for x in recs if x.m == str(m))
                if r.ok and abs(r.det - blue.det) <= tol * blue.det:
                    best = m
                    break
        out.append((cell.index, best))
    hist = Counter("none" if m is None else str(m) for _, m in out)
    return ConvergenceProfile(tuple(out), dict(sorted(hist.items())))


# ---------------------------------------------------------------------------
# study presets
# ---------------------------------------------------------------------------

_OSC_PAIRS = ((3, 10), (3, 20), (3, 50), (10, 10), (10, 30), (50, 20), (50, 50))
_ABS_PAIRS = ((1, 10), (1, 30), (5, 10), (5, 40), (25, 20), (25, 50))

STUDIES = {
    "exp_quad_constant": ([ExpQuad(a) for a in (5, 20, 50)], [Polynomial(0)]),
    "exp_quad_linear": ([ExpQuad(a) for a in (3, 10, 50)], [Polynomial(1)]),
    "exp_quad_quadratic": ([ExpQuad(a) for a in (3, 10, 50)], [Polynomial(2)]),
    "exp_quad_cubic": ([ExpQuad(a) for a in (3, 10)], [Polynomial(3)]),
    "exp_quad_cos_constant": ([ExpQuadCos(*p) for p in _OSC_PAIRS], [Polynomial(0)]),
    "exp_quad_cos_linear": ([ExpQuadCos(*p) for p in _OSC_PAIRS], [Polynomial(1)]),
    "exp_quad_cos_quadratic": ([ExpQuadCos(*p) for p in _OSC_PAIRS], [Polynomial(2)]),
    "exp_quad_cos_narrow_bump": ([ExpQuadCos(*p) for p in ((3, 10), (3, 50), (10, 10), (10, 30))],
                                 [GaussianCurve(10)]),
    "exp_quad_cos_wide_bump": ([ExpQuadCos(10, f) for f in (20, 50)], [GaussianCurve(1)]),
    "exp_abs_cos_bump": ([ExpAbsCos(*p) for p in _ABS_PAIRS], [GaussianCurve(20)]),
    "exp_abs_cos_constant": ([ExpAbsCos(*p) for p in _ABS_PAIRS[:5]], [Polynomial(0)]),
}

# the polynomial-trend studies over squared-exponential noise
POLYNOMIAL_STUDIES = ("exp_quad_constant", "exp_quad_linear", "exp_quad_quadratic",
                      "exp_quad_cubic", "exp_quad_cos_constant", "exp_quad_cos_linear",
                      "exp_quad_cos_quadratic")


def study(name: str, **kwargs) -> SweepConfig:
    """SweepConfig for a named preset; keyword arguments override config fields."""
    try:
        kernels, models = STUDIES[name]
    except KeyError:
        raise ValueError(f"unknown study {name!r}; choose from {sorted(STUDIES)}") from None
    return SweepConfig(kernels, models, **kwargs)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else format_float(x)


def sweep_csv_text(result: SweepResult) -> str:
    want = result.config.functionals
    buf = io.StringIO()
    buf.write(f"# config_sha256={result.config.digest()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in result.records:
        det = r.det if want in ("det", "both") else None
        tr = r.trace if want in ("trace", "both") else None
        w.writerow([r.kernel, r.params, r.model, r.m, _fmt(det), _fmt(tr),
                    _fmt(r.psi_ratio_det), _fmt(r.psi_ratio_tr), r.status])
    return buf.getvalue()


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(sweep_csv_text(result))


def curve_name(result: SweepResult, cell: int) -> str:
    r = result.cell_records(cell)[0]
    slug = f"{cell:03d}_{r.kernel}_{r.params}_{r.model}"
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in slug) + ".dat"


def write_curves(directory, result: SweepResult) -> list:
    """One two-column ``m det`` file per cell; returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    digest = result.config.digest()
    paths = []
    for cell in result.config.cells:
        path = os.path.join(directory, curve_name(result, cell.index))
        lines = [f"# config_sha256={digest}", "# m det"]
        for m in result.config.m_values:
            r = result.lookup(cell.index, m)
            if r.ok:
                lines.append(f"{m} {format_float(r.det)}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def format_stacked(result: SweepResult, digits: int = 4) -> str:
    """Human-readable table: det over trace per connectivity, ratios at the end."""
    ms = result.config.m_values
    n = result.config.grid.n
    head = ["kernel", "model"] + ["n-1" if m == n - 1 else str(m) for m in ms] + ["ratio"]
    rows = [head]

    def num(x):
        return "-" if x is None or not math.isfinite(x) else f"{x:.{digits}g}"

    for cell in result.config.cells:
        recs = {r.m: r for r in result.cell_records(cell.index)}
        first = next(iter(recs.values()))
        tag = f"{first.kernel}({first.params})"
        top = [tag, first.model] + [num(recs[str(m)].det) if recs[str(m)].ok else "err"
                                    for m in ms] + [num(first.psi_ratio_det)]
        bot = ["", ""] + [num(recs[str(m)].trace) if recs[str(m)].ok else "" for m in ms]
        bot.append(num(first.psi_ratio_tr))
        rows += [top, bot]
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                     for r in rows) + "\n"
