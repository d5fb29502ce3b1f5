"""Information criteria and sparsity counts for fitted models and paths."""

from dataclasses import dataclass

import numpy as np

from .model import sigma_from_params


@dataclass(frozen=True)
class CriteriaTriple:
    aic: float
    bic: float
    ebic: float
    p0: int
    loglik: float

    def get(self, name: str) -> float:
        return getattr(self, name.lower())


def count_nonzero(lam, zero_tol=0.0) -> int:
    """Number of loadings with absolute value above ``zero_tol``."""
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    return int(np.sum(np.abs(np.asarray(lam)) > zero_tol))


def gaussian_loglik(params, cov) -> float:
    """-(n/2) * (log|Sigma| + tr(Sigma^-1 S) + p log(2 pi))."""
    sigma = sigma_from_params(params)
    p = sigma.shape[0]
    _, logdet = np.linalg.slogdet(sigma)
    tr = np.trace(np.linalg.solve(sigma, cov.s))
    return -0.5 * cov.n * (logdet + tr + p * np.log(2 * np.pi))


def criteria(fit, cov, m, delta=1.0, zero_tol=0.0) -> CriteriaTriple:
    """AIC, BIC and EBIC of a fitted model.

    The parameter count includes the p unique variances as well as the
    nonzero loadings; N is the sample size of ``cov``.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    params = fit.params
    p = params.lam.shape[0]
    p0 = count_nonzero(params.lam, zero_tol) + p
    ll = gaussian_loglik(params, cov)
    log_n = np.log(cov.n)
    aic = -2 * ll + 2 * p0
    bic = -2 * ll + log_n * p0
    ebic = bic + 2 * p0 * delta * np.log(p * m)
    return CriteriaTriple(float(aic), float(bic), float(ebic), int(p0), float(ll))


def select_along_path(path, criterion="bic") -> int:
    """Index of the grid point minimizing ``criterion``.

    Ties go to the earliest index, which is the largest penalty.
    """
    values = [c.get(criterion) for c in path.criteria]
    if not values:
        raise ValueError("empty path")
    return int(np.argmin(values))
