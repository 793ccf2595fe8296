"""Banded Markov approximation of covariance matrices for fast GLS trend estimation."""

__version__ = "0.1.0"

from .covmodels import (CovMatrix, DesignMatrix, ExpAbsCos, ExpQuad, ExpQuadCos,  # noqa: E402
                        GaussianCurve, Grid, Polynomial, build_cov_matrix,
                        build_design_matrix, eval_kernel, read_matrix_csv, write_matrix_csv)
from .errors import (ConfigError, InvalidConnectivity, MarkovApproxError,  # noqa: E402
                     NonPositiveInnovation, NotPositiveDefinite, NumericalError,
                     RankDeficient, SingularSubmatrix)
from .estimate import (DiagonalOfK, EstimateResult, FullInverse, Identity,  # noqa: E402
                       MarkovApprox, dispersion, estimate, functionals, glse)
from .markov import (BandedMatrix, MarkovFactor, banded_inverse, compute_alphas,  # noqa: E402
                     compute_gamma, dma_extend, factorize, is_markov)
from .simulate import (SweepConfig, convergence_profile, efficiency_ratio,  # noqa: E402
                       monte_carlo_validate, run_sweep, study)

__all__ = [
    "CovMatrix", "DesignMatrix", "ExpAbsCos", "ExpQuad", "ExpQuadCos", "GaussianCurve",
    "Grid", "Polynomial", "build_cov_matrix", "build_design_matrix", "eval_kernel",
    "read_matrix_csv", "write_matrix_csv",
    "ConfigError", "InvalidConnectivity", "MarkovApproxError", "NonPositiveInnovation",
    "NotPositiveDefinite", "NumericalError", "RankDeficient", "SingularSubmatrix",
    "DiagonalOfK", "EstimateResult", "FullInverse", "Identity", "MarkovApprox",
    "dispersion", "estimate", "functionals", "glse",
    "BandedMatrix", "MarkovFactor", "banded_inverse", "compute_alphas", "compute_gamma",
    "dma_extend", "factorize", "is_markov",
    "SweepConfig", "convergence_profile", "efficiency_ratio", "monte_carlo_validate",
    "run_sweep", "study",
]
