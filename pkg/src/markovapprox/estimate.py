"""
Generalized least squares for a linear trend observed in correlated noise.

Model: ``Z = F^T beta + xi`` with ``cov(xi) = K``.  For a symmetric weight
``W`` the estimator and its dispersion are::

    beta_hat = (F W F^T)^{-1} F W Z
    D        = (F W F^T)^{-1} F W K W F^T (F W F^T)^{-1}

Weights: ``Identity`` (OLS), ``DiagonalOfK`` (WLSE), ``FullInverse`` (BLUE,
where D collapses to ``(F K^{-1} F^T)^{-1}``) and ``MarkovApprox(m)``, which
uses the inverse of the adjoint matrix ``K^m``.

Every weight is applied through a whitening factor ``S`` with ``W = S^T S``;
for ``MarkovApprox`` that factor is ``diag(alpha)^{-1/2} L`` with ``L`` the
banded unit-triangular predictor matrix, so no dense weight is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import linalg

from .covmodels import DesignMatrix, as_array
from .errors import NotPositiveDefinite, RankDeficient
from .markov import factorize

__all__ = [
    "Identity", "DiagonalOfK", "FullInverse", "MarkovApprox", "Weight",
    "parse_weight", "EstimateResult",
    "glse", "dispersion", "sandwich_dispersion", "blue_dispersion",
    "functionals", "estimate",
]


class _WeightBase:
    """A symmetric PD weight ``W = S^T S`` exposed through its whitening factor ``S``."""

    def whitener(self, K):
        """Return ``(S, S_t)``: callables applying ``S`` and ``S^T`` to vectors or blocks."""
        raise NotImplementedError

    def operator(self, K) -> Callable:
        """Callable applying ``W`` itself."""
        S, St = self.whitener(K)
        return lambda X: St(S(X))


def _cols(v, X):
    return v if np.ndim(X) == 1 else v[:, None]


@dataclass(frozen=True)
class Identity(_WeightBase):
    label = "ols"

    def whitener(self, K):
        ident = lambda X: np.asarray(X, dtype=float)  # noqa: E731
        return ident, ident


@dataclass(frozen=True)
class DiagonalOfK(_WeightBase):
    label = "wlse"

    def whitener(self, K):
        d = np.diag(as_array(K))
        if np.any(d <= 0):
            raise NotPositiveDefinite("covariance has a non-positive diagonal entry")
        s = 1.0 / np.sqrt(d)

        def S(X):
            X = np.asarray(X, dtype=float)
            return X * _cols(s, X)
        return S, S


@dataclass(frozen=True)
class FullInverse(_WeightBase):
    label = "blue"

    def whitener(self, K):
        try:
            L = linalg.cholesky(as_array(K), lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from None

        def S(X):
            return linalg.solve_triangular(L, np.asarray(X, dtype=float), lower=True)

        def St(Y):
            return linalg.solve_triangular(L, np.asarray(Y, dtype=float), lower=True, trans="T")
        return S, St


@dataclass(frozen=True)
class MarkovApprox(_WeightBase):
    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"connectivity must be a non-negative integer, got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def label(self):
        return f"markov({self.m})"

    def whitener(self, K):
        a = as_array(K)
        if self.m == a.shape[0] - 1:
            # the adjoint matrix at full connectivity is K itself
            return FullInverse().whitener(a)
        factor = factorize(a, self.m)
        return factor.whiten, factor.whiten_t


Weight = Union[Identity, DiagonalOfK, FullInverse, MarkovApprox]


def parse_weight(text: str, n: int = None) -> Weight:
    """Parse ``ols``, ``wlse``, ``blue`` or ``markov:<m>`` (``markov:n-1`` needs ``n``)."""
    key = text.strip().lower()
    simple = {"ols": Identity, "identity": Identity, "wlse": DiagonalOfK,
              "diagonal": DiagonalOfK, "blue": FullInverse, "full": FullInverse}
    if key in simple:
        return simple[key]()
    for prefix in ("markov:", "markov(", "dma:"):
        if key.startswith(prefix):
            arg = key[len(prefix):].rstrip(")").strip()
            if arg == "n-1":
                if n is None:
                    raise ValueError("'n-1' connectivity needs the grid size")
                return MarkovApprox(n - 1)
            return MarkovApprox(int(arg))
    raise ValueError(f"unknown weight {text!r}")


def _design(F):
    a = F.values if isinstance(F, DesignMatrix) else np.atleast_2d(np.asarray(F, dtype=float))
    return a


def _weighted(F, weight: Weight, K):
    """Whitening factors, whitened design ``S F^T`` and the Cholesky factor of ``F W F^T``."""
    F = _design(F)
    a = as_array(K)
    if F.shape[1] != a.shape[0]:
        raise ValueError(f"design has {F.shape[1]} columns but K has order {a.shape[0]}")
    S, St = weight.whitener(a)
    SFt = S(F.T)
    A = SFt.T @ SFt
    try:
        cf = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError:
        raise RankDeficient("weighted normal matrix F W F^T is not positive definite") from None
    return F, a, S, St, SFt, cf


def glse(F, weight: Weight, K, Z) -> np.ndarray:
    """Coefficients ``(F W F^T)^{-1} F W Z``; ``Z`` may be ``(n,)`` or ``(n, samples)``."""
    F, _, S, _, SFt, cf = _weighted(F, weight, K)
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] != F.shape[1]:
        raise ValueError(f"measurement vector has length {Z.shape[0]}, expected {F.shape[1]}")
    return linalg.cho_solve(cf, SFt.T @ S(Z))


def sandwich_dispersion(F, weight: Weight, K) -> np.ndarray:
    """General dispersion ``A^{-1} F W K W F^T A^{-1}`` with ``A = F W F^T``."""
    _, a, _, St, SFt, cf = _weighted(F, weight, K)
    P = linalg.cho_solve(cf, St(SFt).T).T      # W F^T A^{-1}
    D = P.T @ a @ P
    return 0.5 * (D + D.T)


def blue_dispersion(F, K) -> np.ndarray:
    """Short form ``(F K^{-1} F^T)^{-1}`` valid for the BLUE weight only."""
    F, _, _, _, _, cf = _weighted(F, FullInverse(), K)
    D = linalg.cho_solve(cf, np.eye(F.shape[0]))
    return 0.5 * (D + D.T)


def dispersion(F, weight: Weight, K) -> np.ndarray:
    """Dispersion matrix of the GLS estimate when the noise covariance is ``K``.

    The weight is built from the same ``K``.  ``FullInverse`` (and
    ``MarkovApprox(n - 1)``, whose weight is the same matrix) uses the short
    BLUE form; all other weights use the sandwich.
    """
    full = isinstance(weight, MarkovApprox) and weight.m == as_array(K).shape[0] - 1
    if full or isinstance(weight, FullInverse):
        return blue_dispersion(F, K)
    return sandwich_dispersion(F, weight, K)


def functionals(D) -> tuple:
    """``(det D, trace D)``; both equal ``D[0, 0]`` exactly for a 1x1 matrix."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape == (1, 1):
        return float(D[0, 0]), float(D[0, 0])
    return float(np.linalg.det(D)), float(np.trace(D))


@dataclass(frozen=True, eq=False)
class EstimateResult:
    coefficients: np.ndarray
    dispersion: np.ndarray
    det: float
    trace: float
    weight: str


def estimate(F, weight: Weight, K, Z) -> EstimateResult:
    coef = glse(F, weight, K, Z)
    D = dispersion(F, weight, K)
    det, tr = functionals(D)
    return EstimateResult(coef, D, det, tr, weight.label)
