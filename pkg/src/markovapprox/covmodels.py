"""
Stationary covariance kernels, regression bases and measurement grids.

Three kernel families are supported, all with unit variance at zero lag:

* ``ExpAbsCos(decay, freq)``:   k(tau) = exp(-decay |tau|) cos(freq tau)
* ``ExpQuad(decay)``:           k(tau) = exp(-decay tau^2)
* ``ExpQuadCos(decay, freq)``:  k(tau) = exp(-decay tau^2) cos(freq tau)

``ExpAbsCos`` with ``freq = 0`` is the Ornstein-Uhlenbeck kernel, the only one
of the three whose sampled covariance is exactly first-order Markov.

Regression bases are polynomials ``1, t, ..., t^degree`` or a single Gaussian
bump ``exp(-width (t - center)^2)`` of known shape.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .errors import NotPositiveDefinite, RankDeficient

__all__ = [
    "ExpAbsCos", "ExpQuad", "ExpQuadCos", "Kernel",
    "Polynomial", "GaussianCurve", "Basis",
    "Grid", "CovMatrix", "DesignMatrix",
    "eval_kernel", "build_cov_matrix", "build_design_matrix",
    "format_float", "write_matrix_csv", "read_matrix_csv",
    "MAX_JITTER",
]

MAX_JITTER = 1e-10
_SYMMETRY_RTOL = 1e-14


def _positive(name, value):
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be finite and > 0, got {value!r}")
    return value


def _nonnegative(name, value):
    value = float(value)
    if not (math.isfinite(value) and value >= 0):
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpAbsCos:
    """Exponentially damped cosine, ``exp(-decay |tau|) cos(freq tau)``."""

    decay: float
    freq: float = 0.0
    family = "exp_abs_cos"

    def __post_init__(self):
        object.__setattr__(self, "decay", _positive("decay", self.decay))
        object.__setattr__(self, "freq", _nonnegative("freq", self.freq))

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.exp(-self.decay * np.abs(tau)) * np.cos(self.freq * tau)

    @property
    def params(self):
        return {"decay": self.decay, "freq": self.freq}


@dataclass(frozen=True)
class ExpQuad:
    """Squared exponential, ``exp(-decay tau^2)``."""

    decay: float
    family = "exp_quad"

    def __post_init__(self):
        object.__setattr__(self, "decay", _positive("decay", self.decay))

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.exp(-self.decay * tau * tau)

    @property
    def params(self):
        return {"decay": self.decay}


@dataclass(frozen=True)
class ExpQuadCos:
    """Squared exponential times cosine, ``exp(-decay tau^2) cos(freq tau)``."""

    decay: float
    freq: float = 0.0
    family = "exp_quad_cos"

    def __post_init__(self):
        object.__setattr__(self, "decay", _positive("decay", self.decay))
        object.__setattr__(self, "freq", _nonnegative("freq", self.freq))

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.exp(-self.decay * tau * tau) * np.cos(self.freq * tau)

    @property
    def params(self):
        return {"decay": self.decay, "freq": self.freq}


Kernel = Union[ExpAbsCos, ExpQuad, ExpQuadCos]


def kernel_label(kernel: Kernel) -> str:
    """Compact, stable text label such as ``exp_quad_cos(decay=3,freq=20)``."""
    args = ",".join(f"{k}={format_float(v)}" for k, v in kernel.params.items())
    return f"{kernel.family}({args})"


def eval_kernel(kernel: Kernel, tau):
    """Evaluate ``kernel`` at lag(s) ``tau``; scalars in, Python floats out."""
    out = kernel(tau)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# regression bases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Polynomial:
    """Monomials ``1, t, ..., t**degree``."""

    degree: int
    family = "polynomial"

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a non-negative integer, got {self.degree!r}")
        object.__setattr__(self, "degree", int(self.degree))

    @property
    def size(self):
        return self.degree + 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.vstack([t ** j for j in range(self.size)])

    @property
    def params(self):
        return {"degree": self.degree}


@dataclass(frozen=True)
class GaussianCurve:
    """Single basis function ``exp(-width (t - center)^2)``."""

    width: float
    center: float = 0.0
    family = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "width", _positive("width", self.width))
        center = float(self.center)
        if not math.isfinite(center):
            raise ValueError("center must be finite")
        object.__setattr__(self, "center", center)

    size = 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self.width * (t - self.center) ** 2)[None, :]

    @property
    def params(self):
        return {"width": self.width, "center": self.center}


Basis = Union[Polynomial, GaussianCurve]


def basis_label(basis: Basis) -> str:
    args = ",".join(f"{k}={format_float(v)}" for k, v in basis.params.items())
    return f"{basis.family}({args})"


# ---------------------------------------------------------------------------
# grids and matrices
# ---------------------------------------------------------------------------

class Grid:
    """Strictly increasing, finite measurement points."""

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.array(points, dtype=float)
        if pts.ndim != 1:
            raise ValueError("grid points must be a 1-D sequence")
        if pts.size < 1:
            raise ValueError("grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        self.points = pts

    @classmethod
    def equidistant(cls, n: int = 16, lo: float = -1.0, hi: float = 1.0) -> "Grid":
        if n < 1:
            raise ValueError("n must be >= 1")
        if n > 1 and not hi > lo:
            raise ValueError("need hi > lo")
        return cls(np.linspace(lo, hi, n))

    @property
    def n(self):
        return self.points.size

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def __repr__(self):
        return f"Grid(n={self.n}, lo={self.points[0]:g}, hi={self.points[-1]:g})"


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """Symmetric positive-definite measurement covariance.

    Construction validates symmetry, positive diagonal and a successful
    Cholesky factorization unless ``check=False`` (used for matrices whose
    positive-definiteness is guaranteed by construction, e.g. band
    completions with positive innovations).
    """

    values: np.ndarray
    grid: Optional[Grid] = None
    jitter: float = 0.0
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        a = _frozen(self.values)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"covariance must be square, got shape {a.shape}")
        if self.grid is not None and self.grid.n != a.shape[0]:
            raise ValueError("grid size does not match matrix order")
        object.__setattr__(self, "values", a)
        if self.check:
            _check_spd(a)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def diag(self):
        return np.diag(self.values)

    def condition(self) -> float:
        """2-norm condition number (dense; fine at desk scale)."""
        return float(np.linalg.cond(self.values))

    def scaled(self, factor: float) -> "CovMatrix":
        return CovMatrix(self.values * float(factor), self.grid, self.jitter, self.check)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _check_spd(a):
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T), initial=0.0) > _SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")
    if np.any(np.diag(a) <= 0):
        raise NotPositiveDefinite("matrix has a non-positive diagonal entry")
    try:
        linalg.cholesky(a, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from None


def as_array(K) -> np.ndarray:
    """Return the dense values of a CovMatrix or any square array-like."""
    a = K.values if isinstance(K, CovMatrix) else np.asarray(K, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def build_cov_matrix(kernel: Kernel, grid: Grid, *, jitter: float = 0.0,
                     variance: float = 1.0) -> CovMatrix:
    """Evaluate ``variance * k(t_i - t_j)`` on the grid, plus optional diagonal jitter.

    Raises NotPositiveDefinite when the result fails Cholesky, which happens
    for squared-exponential kernels on dense grids unless some jitter is added.
    """
    jitter = float(jitter)
    if not 0.0 <= jitter <= MAX_JITTER:
        raise ValueError(f"jitter must lie in [0, {MAX_JITTER:g}], got {jitter!r}")
    variance = _positive("variance", variance)
    t = grid.points
    values = variance * kernel(t[:, None] - t[None, :])
    if jitter:
        values[np.diag_indices_from(values)] += jitter
    return CovMatrix(values, grid, jitter)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """``p x n`` matrix of basis functions evaluated at the grid points."""

    values: np.ndarray
    basis: Optional[Basis] = None
    grid: Optional[Grid] = None

    def __post_init__(self):
        a = _frozen(self.values)
        if a.ndim != 2:
            raise ValueError("design matrix must be 2-D")
        object.__setattr__(self, "values", a)

    @property
    def p(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]


def build_design_matrix(basis: Basis, grid: Grid) -> DesignMatrix:
    values = basis(grid.points)
    p = values.shape[0]
    if grid.n < p:
        raise RankDeficient(f"{p} basis functions need at least {p} points, got {grid.n}")
    if np.linalg.matrix_rank(values) < p:
        raise RankDeficient(f"design matrix has numerical rank < {p}")
    return DesignMatrix(values, basis, grid)


# ---------------------------------------------------------------------------
# CSV format: header "n,<n>" followed by n comma-separated rows
# ---------------------------------------------------------------------------

def format_float(x) -> str:
    """Shortest decimal string that round-trips to the same double; ints stay ints."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def matrix_to_csv(a) -> str:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("only square matrices are written in this format")
    buf = io.StringIO()
    buf.write(f"n,{a.shape[0]}\n")
    for row in a:
        buf.write(",".join(format_float(v) for v in row))
        buf.write("\n")
    return buf.getvalue()


def write_matrix_csv(path, a, comment=None) -> None:
    """Write ``a`` in the matrix CSV format, optionally preceded by ``# comment`` lines."""
    comments = [comment] if isinstance(comment, str) else list(comment or ())
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.writelines(f"# {c}\n" for c in comments)
        fh.write(matrix_to_csv(as_array(a)))


def read_matrix_csv(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    head = lines[0].split(",")
    if len(head) != 2 or head[0] != "n":
        raise ValueError(f"{path}: expected header 'n,<n>', got {lines[0]!r}")
    n = int(head[1])
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ValueError(f"{path}: expected {n} rows of {n} values")
    return np.array(rows, dtype=float)
