"""
Discrete Markov approximation of a covariance matrix.

Given a covariance ``K`` of n samples and a connectivity ``m`` the
approximation keeps the band ``|i - j| <= m`` of ``K`` and replaces everything
outside it with the values an m-th order Markov (autoregressive) sequence
would produce.  The result ``K^m`` (the *adjoint* matrix) is the unique
matrix that agrees with ``K`` on the band and has a banded inverse of
half-bandwidth ``m``; it is also the maximum-entropy completion of the band.

Everything is driven by the order-m linear predictors.  With 0-based indices,
point ``j`` is predicted from its ``min(j, m)`` predecessors
``lo = max(0, j - m) .. j - 1``::

    gamma[j-1] = K[lo:j, lo:j]^{-1} K[lo:j, j]        (predictor weights)
    alpha[j]   = K[j, j] - K[j, lo:j] @ gamma[j-1]   (innovation variance)
    alpha[0]   = K[0, 0]

Writing ``L`` for the unit lower-triangular matrix whose row ``j`` holds
``-gamma[j-1]`` left of the diagonal, the innovations ``e = L x`` are
uncorrelated with variances ``alpha``, so ``K^m = L^{-1} diag(alpha) L^{-T}``
and ``(K^m)^{-1} = L^T diag(1/alpha) L`` -- banded, O(n m^2) to assemble,
never dense.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import lapack

from .covmodels import CovMatrix, as_array, format_float
from .errors import InvalidConnectivity, NonPositiveInnovation, SingularSubmatrix

__all__ = [
    "MarkovFactor", "BandedMatrix", "MarkovCheck",
    "compute_gamma", "compute_alphas", "factorize", "dma_extend",
    "banded_inverse", "is_markov", "tridiagonal_mu", "extract_band",
    "write_factor_csv", "read_factor_csv", "write_banded_csv", "read_banded_csv",
    "RCOND_MIN", "INNOVATION_RTOL",
]

RCOND_MIN = 1e-14
INNOVATION_RTOL = 1e-12


def _check_connectivity(n, m):
    if int(m) != m or m < 0 or m > n - 1:
        raise InvalidConnectivity(f"connectivity m={m!r} outside 0..{n - 1}")
    return int(m)


def _spd_solve(S, b, where):
    """Solve ``S x = b`` for a small SPD block, rejecting near-singular blocks."""
    c, info = lapack.dpotrf(S, lower=1)
    if info != 0:
        raise SingularSubmatrix(f"predictor block ending at {where} is not positive definite")
    anorm = np.abs(S).sum(axis=0).max()
    rcond, info = lapack.dpocon(c, anorm, uplo="L")
    if info != 0 or rcond < RCOND_MIN:
        raise SingularSubmatrix(
            f"predictor block ending at {where} has reciprocal condition {rcond:.3g} < {RCOND_MIN:g}")
    x, info = lapack.dpotrs(c, b[:, None], lower=1)
    return x[:, 0]


def extract_band(K, m: int) -> np.ndarray:
    """Lower band storage ``band[d, i] = K[i + d, i]`` for ``d = 0..m``."""
    a = as_array(K)
    n = a.shape[0]
    m = _check_connectivity(n, m)
    band = np.zeros((m + 1, n))
    for d in range(m + 1):
        band[d, :n - d] = np.diagonal(a, -d)
    return band


def compute_gamma(K, m: int) -> list:
    """Order-m predictor weights for points ``1..n-1`` (0-based).

    ``result[j-1]`` has length ``min(j, m)`` and predicts point ``j`` from its
    predecessors in increasing index order.  Only entries with
    ``|i - j| <= m`` are read.
    """
    a = as_array(K)
    n = a.shape[0]
    m = _check_connectivity(n, m)
    gammas = []
    for j in range(1, n):
        lo = max(0, j - m)
        if lo == j:
            gammas.append(np.zeros(0))
            continue
        gammas.append(_spd_solve(a[lo:j, lo:j], a[lo:j, j], j - 1))
    return gammas


def compute_alphas(K, gammas: Sequence[np.ndarray]) -> np.ndarray:
    """Innovation variances of the predictors in ``gammas``."""
    a = as_array(K)
    n = a.shape[0]
    if len(gammas) != n - 1:
        raise ValueError(f"expected {n - 1} predictor vectors, got {len(gammas)}")
    alphas = np.empty(n)
    alphas[0] = a[0, 0]
    for j in range(1, n):
        g = gammas[j - 1]
        alphas[j] = a[j, j] - a[j, j - g.size:j] @ g
    bad = np.flatnonzero(alphas <= INNOVATION_RTOL * np.diag(a))
    if bad.size:
        j = int(bad[0])
        raise NonPositiveInnovation(
            f"innovation variance at point {j} is {alphas[j]:.3g}; band is not positive definite")
    return alphas


@dataclass(frozen=True, eq=False)
class MarkovFactor:
    """Compressed representation of ``K^m`` and of its banded inverse."""

    m: int
    gammas: tuple
    alphas: np.ndarray
    band: Optional[np.ndarray] = None

    def __post_init__(self):
        alphas = np.array(self.alphas, dtype=float)
        n = alphas.size
        gammas = tuple(np.array(g, dtype=float).ravel() for g in self.gammas)
        if len(gammas) != n - 1:
            raise ValueError("need n - 1 predictor vectors")
        for j, g in enumerate(gammas, start=1):
            if g.size != min(j, self.m):
                raise ValueError(f"predictor for point {j} has length {g.size}, "
                                 f"expected {min(j, self.m)}")
        if np.any(alphas <= 0):
            raise NonPositiveInnovation("innovation variances must be positive")
        for arr in (alphas, *gammas):
            arr.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "gammas", gammas)

    @property
    def n(self):
        return self.alphas.size

    def inverse(self) -> "BandedMatrix":
        return banded_inverse(self)

    def innovations(self, x):
        """``L x``: prediction residuals of ``x`` (vector or ``(n, k)`` block), O(n m)."""
        x = np.asarray(x, dtype=float)
        out = x.copy()
        for j in range(1, self.n):
            g = self.gammas[j - 1]
            if g.size:
                out[j] -= g @ x[j - g.size:j]
        return out

    def innovations_t(self, y):
        """``L^T y``, the adjoint of :meth:`innovations`."""
        y = np.asarray(y, dtype=float)
        out = y.copy()
        for j in range(1, self.n):
            g = self.gammas[j - 1]
            if g.size:
                out[j - g.size:j] -= np.multiply.outer(g, y[j])
        return out

    def whiten(self, x):
        """``diag(alpha)^{-1/2} L x``; whitened vectors have identity covariance under ``K^m``."""
        s = 1.0 / np.sqrt(self.alphas)
        r = self.innovations(x)
        return r * (s if r.ndim == 1 else s[:, None])

    def whiten_t(self, y):
        s = 1.0 / np.sqrt(self.alphas)
        y = np.asarray(y, dtype=float)
        return self.innovations_t(y * (s if y.ndim == 1 else s[:, None]))


def factorize(K, m: int) -> MarkovFactor:
    """Predictors, innovations and retained band of ``K`` at connectivity ``m``."""
    gammas = compute_gamma(K, m)
    alphas = compute_alphas(K, gammas)
    return MarkovFactor(int(m), tuple(gammas), alphas, extract_band(K, m))


def dma_extend(K, m: int) -> CovMatrix:
    """Adjoint matrix ``K^m``: band of ``K`` kept, exterior filled by Markov recursion.

    Entries are filled diagonal by diagonal, ``k[i, j] = k[i, lo:j] @ gamma[j-1]``
    for ``j - i > m``; every entry on the right-hand side lies closer to the
    diagonal and is therefore already final.
    """
    a = as_array(K)
    n = a.shape[0]
    factor = factorize(a, m)
    m = factor.m
    out = np.zeros_like(a)
    for d in range(m + 1):
        idx = np.arange(n - d)
        out[idx + d, idx] = a[idx + d, idx]
        out[idx, idx + d] = a[idx, idx + d]
    gammas = factor.gammas
    for d in range(m + 1, n):
        for i in range(n - d):
            j = i + d
            v = out[i, j - m:j] @ gammas[j - 1]
            out[i, j] = out[j, i] = v
    grid = K.grid if isinstance(K, CovMatrix) else None
    return CovMatrix(out, grid, check=False)


class BandedMatrix:
    """Symmetric matrix stored by its lower band, ``lower[d, i] = C[i + d, i]``."""

    symmetric = True

    def __init__(self, lower):
        lower = np.array(lower, dtype=float)
        if lower.ndim != 2:
            raise ValueError("band storage must be 2-D")
        m1, n = lower.shape
        if m1 > n:
            raise ValueError("half-bandwidth must be < n")
        for d in range(1, m1):
            lower[d, n - d:] = 0.0
        lower.setflags(write=False)
        self.lower = lower

    @property
    def n(self):
        return self.lower.shape[1]

    @property
    def m(self):
        return self.lower.shape[0] - 1

    def __getitem__(self, ij):
        i, j = ij
        if i < j:
            i, j = j, i
        d = i - j
        return float(self.lower[d, j]) if d <= self.m else 0.0

    def diagonal(self, offset=0):
        d = abs(offset)
        if d > self.m:
            return np.zeros(max(self.n - d, 0))
        return self.lower[d, :self.n - d].copy()

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        for d in range(self.m + 1):
            idx = np.arange(n - d)
            out[idx + d, idx] = self.lower[d, :n - d]
            out[idx, idx + d] = self.lower[d, :n - d]
        return out

    def matvec(self, x):
        """``C @ x`` for a vector or an ``(n, k)`` block, O(n m k)."""
        x = np.asarray(x, dtype=float)
        n = self.n
        if x.shape[0] != n:
            raise ValueError(f"dimension mismatch: {x.shape[0]} != {n}")
        vec = x.ndim == 1
        xb = x[:, None] if vec else x
        y = self.lower[0][:, None] * xb
        for d in range(1, self.m + 1):
            c = self.lower[d, :n - d][:, None]
            y[d:] += c * xb[:n - d]
            y[:n - d] += c * xb[d:]
        return y[:, 0] if vec else y

    __matmul__ = matvec

    def __repr__(self):
        return f"BandedMatrix(n={self.n}, m={self.m})"


def banded_inverse(factor: MarkovFactor) -> BandedMatrix:
    """``(K^m)^{-1} = L^T diag(1/alpha) L`` assembled directly in band storage."""
    n, m = factor.n, factor.m
    if np.any(factor.alphas <= 0):
        raise NonPositiveInnovation("innovation variances must be positive")
    lower = np.zeros((m + 1, n))
    for j in range(n):
        g = factor.gammas[j - 1] if j else np.zeros(0)
        lo = j - g.size
        row = np.empty(g.size + 1)
        row[:-1] = -g
        row[-1] = 1.0
        w = 1.0 / factor.alphas[j]
        k = row.size
        for d in range(k):
            lower[d, lo:lo + k - d] += w * row[d:] * row[:k - d]
    return BandedMatrix(lower)


class MarkovCheck(NamedTuple):
    ok: bool
    violation: float


def is_markov(K, m: int, tol: float = 1e-8) -> MarkovCheck:
    """Test whether ``K`` is exactly m-th order Markov.

    The violation is the largest out-of-band residual
    ``|k[i,j] - k[i, lo:j] @ gamma[j-1]|`` scaled by ``sqrt(k[i,i] k[j,j])``.
    """
    a = as_array(K)
    n = a.shape[0]
    gammas = compute_gamma(a, m)
    worst = 0.0
    for d in range(m + 1, n):
        for i in range(n - d):
            j = i + d
            r = abs(a[i, j] - a[i, j - m:j] @ gammas[j - 1])
            worst = max(worst, r / np.sqrt(a[i, i] * a[j, j]))
    return MarkovCheck(bool(worst <= tol), float(worst))


def tridiagonal_mu(K) -> np.ndarray:
    """Auxiliary first-order quantities ``mu`` (length ``n - 1``), for inspection.

    ``mu[0] = k[1,1]`` and ``mu[i] = k[i+1,i+1] - g[i-1]^2 g[i]^2 k[i-1,i-1]``
    with neighbour ratios ``g[i] = k[i,i+1] / k[i,i]``.  Not used by
    :func:`banded_inverse`.
    """
    a = as_array(K)
    n = a.shape[0]
    if n < 2:
        return np.zeros(0)
    d = np.diag(a)
    g = np.diagonal(a, 1) / d[:-1]
    mu = np.empty(n - 1)
    mu[0] = a[1, 1]
    for i in range(1, n - 1):
        mu[i] = d[i + 1] - g[i - 1] ** 2 * g[i] ** 2 * d[i - 1]
    return mu


# ---------------------------------------------------------------------------
# CSV formats
#   factor:  "n,m" then per point "j,alpha_j,gamma components..."
#   banded:  "n,m" then per diagonal "d,C[d,0],C[d+1,1],..."
# ---------------------------------------------------------------------------

def _comment_lines(comment):
    return [f"# {c}" for c in ([comment] if isinstance(comment, str) else comment or ())]


def write_factor_csv(path, factor: MarkovFactor, comment=None) -> None:
    lines = _comment_lines(comment) + [f"{factor.n},{factor.m}"]
    for j in range(factor.n):
        g = factor.gammas[j - 1] if j else ()
        lines.append(",".join([str(j), format_float(factor.alphas[j]),
                               *(format_float(v) for v in g)]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_rows(path):
    with open(path, encoding="ascii") as fh:
        rows = [ln.strip().split(",") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{path}: expected header 'n,m'")
    return int(rows[0][0]), int(rows[0][1]), rows[1:]


def read_factor_csv(path) -> MarkovFactor:
    n, m, rows = _read_rows(path)
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} rows, got {len(rows)}")
    alphas, gammas = [], []
    for j, row in enumerate(rows):
        if int(row[0]) != j:
            raise ValueError(f"{path}: row {j} labelled {row[0]}")
        alphas.append(float(row[1]))
        if j:
            gammas.append([float(v) for v in row[2:]])
        elif len(row) > 2:
            raise ValueError(f"{path}: first point has no predecessors")
    return MarkovFactor(m, tuple(gammas), np.array(alphas))


def write_banded_csv(path, C: BandedMatrix, comment=None) -> None:
    lines = _comment_lines(comment) + [f"{C.n},{C.m}"]
    for d in range(C.m + 1):
        lines.append(",".join([str(d), *(format_float(v) for v in C.lower[d, :C.n - d])]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_banded_csv(path) -> BandedMatrix:
    n, m, rows = _read_rows(path)
    if len(rows) != m + 1:
        raise ValueError(f"{path}: expected {m + 1} diagonals")
    lower = np.zeros((m + 1, n))
    for d, row in enumerate(rows):
        vals = [float(v) for v in row[1:]]
        if int(row[0]) != d or len(vals) != n - d:
            raise ValueError(f"{path}: malformed diagonal {d}")
        lower[d, :n - d] = vals
    return BandedMatrix(lower)
