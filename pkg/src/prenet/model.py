"""
Domain types, loss functions and penalty functions for penalized factor
analysis.

Everything here is a pure function of its inputs. The solver, selection and
simulation modules build on these definitions.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np


class Family(str, Enum):
    PRENET = "prenet"
    WEIGHTED_PRENET = "wprenet"
    ELASTIC_NET = "enet"
    LASSO = "lasso"
    MC = "mc"
    QUARTIMIN = "quartimin"
    VARIMAX = "varimax"


# integer codes shared with the compiled coordinate-descent kernels
FAMILY_CODES = {
    Family.PRENET: 0,
    Family.WEIGHTED_PRENET: 1,
    Family.ELASTIC_NET: 2,
    Family.LASSO: 3,
    Family.MC: 4,
    Family.QUARTIMIN: 5,
    Family.VARIMAX: 6,
}

SEPARABLE_FAMILIES = (Family.ELASTIC_NET, Family.LASSO, Family.MC)


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance matrix that must be PD is not."""


@dataclass(frozen=True, eq=False)
class SampleCovariance:
    """A p x p sample covariance matrix together with its sample size.

    Parameters
    ----------
    s : ndarray
        Symmetric positive semidefinite matrix.
    n : int
        Number of observations used to compute ``s``.
    """

    s: np.ndarray
    n: int

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"covariance must be square, got shape {s.shape}")
        scale = max(np.max(np.abs(s)), 1.0)
        if np.max(np.abs(s - s.T)) > 1e-10 * scale:
            raise ValueError("covariance matrix is not symmetric")
        if np.any(np.diag(s) < 0):
            raise ValueError("covariance matrix has negative diagonal entries")
        if int(self.n) < 1:
            raise ValueError("sample size n must be positive")
        s = 0.5 * (s + s.T)
        s.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "n", int(self.n))

    @property
    def p(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True, eq=False)
class FactorParams:
    """Loading matrix (p x m) and unique variances (length p)."""

    lam: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        psi = np.array(self.psi, dtype=float).ravel()
        if lam.ndim != 2 or lam.shape[0] != psi.shape[0]:
            raise ValueError(
                f"loadings {lam.shape} and unique variances {psi.shape} disagree"
            )
        if not np.all(np.isfinite(lam)):
            raise ValueError("loadings must be finite")
        if not np.all(psi > 0):
            raise ValueError("unique variances must be positive")
        lam.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "psi", psi)

    @property
    def p(self) -> int:
        return self.lam.shape[0]

    @property
    def m(self) -> int:
        return self.lam.shape[1]


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Penalty family and its tuning parameters.

    ``gamma`` lives in [0, 1] for the prenet and elastic-net families and in
    (1, inf] for MC, where ``inf`` reproduces the lasso. It is ignored by the
    lasso, quartimin and varimax families. ``weights`` are the per-row
    weights of the weighted prenet and are rejected for every other family.
    """

    family: Family = Family.PRENET
    rho: float = 0.0
    gamma: float = 1.0
    weights: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        rho = float(self.rho)
        gamma = float(self.gamma)
        if not rho >= 0 or not np.isfinite(rho):
            raise ValueError(f"rho must be a finite nonnegative number, got {rho}")
        if family in (Family.PRENET, Family.WEIGHTED_PRENET, Family.ELASTIC_NET):
            if not 0.0 <= gamma <= 1.0:
                raise ValueError(f"gamma must lie in [0, 1] for {family.value}")
        elif family is Family.MC:
            if not gamma > 1.0:
                raise ValueError("MC concavity parameter gamma must exceed 1")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "gamma", gamma)
        if family is Family.WEIGHTED_PRENET:
            if self.weights is None:
                raise ValueError("weighted prenet requires row weights")
            w = np.array(self.weights, dtype=float).ravel()
            if not np.all(w > 0) or not np.all(np.isfinite(w)):
                raise ValueError("row weights must be positive and finite")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        elif self.weights is not None:
            raise ValueError("weights are only valid for the weighted prenet")

    def with_rho(self, rho: float) -> "PenaltySpec":
        return PenaltySpec(self.family, rho, self.gamma, self.weights)

    @property
    def code(self) -> int:
        return FAMILY_CODES[self.family]


def sample_covariance(data, centered=True, correlation=False) -> SampleCovariance:
    """Sample covariance with divisor n.

    Parameters
    ----------
    data : array-like, shape (n, p)
        Observations in rows.
    centered : bool
        Subtract column means before forming the cross-product.
    correlation : bool
        Rescale the result to a correlation matrix.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if n < 2:
        raise ValueError("at least two observations are required")
    if p < 1:
        raise ValueError("at least one variable is required")
    if centered:
        x = x - x.mean(axis=0)
    s = x.T @ x / n
    if correlation:
        d = np.sqrt(np.diag(s))
        if np.any(d <= 0):
            raise ValueError("cannot form a correlation matrix: zero-variance column")
        s = s / np.outer(d, d)
        np.fill_diagonal(s, 1.0)
    return SampleCovariance(0.5 * (s + s.T), n)


def sigma_from_params(params: FactorParams) -> np.ndarray:
    """Model-implied covariance ``lam @ lam.T + diag(psi)``."""
    lam = params.lam
    return lam @ lam.T + np.diag(params.psi)


def _as_matrix(cov):
    return cov.s if isinstance(cov, SampleCovariance) else np.asarray(cov, dtype=float)


def discrepancy_loss(params: FactorParams, cov) -> float:
    """Maximum-likelihood discrepancy 0.5 * (tr(Sigma^-1 S) - log|Sigma^-1 S| - p).

    Nonnegative, and zero exactly when the model reproduces ``S``.
    """
    s = _as_matrix(cov)
    sigma = sigma_from_params(params)
    p = s.shape[0]
    try:
        sigma_inv_s = np.linalg.solve(sigma, s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("model covariance is singular") from exc
    sign_sigma, logdet_sigma = np.linalg.slogdet(sigma)
    sign_s, logdet_s = np.linalg.slogdet(s)
    if sign_sigma <= 0:
        raise NotPositiveDefiniteError("model covariance is not positive definite")
    if sign_s <= 0:
        raise NotPositiveDefiniteError(
            "sample covariance is not positive definite; |Sigma^-1 S| <= 0"
        )
    return 0.5 * (np.trace(sigma_inv_s) - (logdet_s - logdet_sigma) - p)


def quadratic_loss(params: FactorParams, cov, gamma_matrix="identity") -> float:
    """Quadratic loss ||G (S - lam lam' - Psi)||_F^2.

    ``gamma_matrix="identity"`` gives the plain squared loss. With
    ``"inverse_s"`` the weight matrix Gamma is S^-1, so Gamma^-1 = S multiplies
    the residual from the left only. That variant is experimental.
    """
    s = _as_matrix(cov)
    resid = s - sigma_from_params(params)
    if gamma_matrix == "identity":
        pass
    elif gamma_matrix == "inverse_s":
        if np.linalg.matrix_rank(s) < s.shape[0]:
            raise NotPositiveDefiniteError("S is singular; Gamma = S^-1 is undefined")
        resid = s @ resid
    else:
        raise ValueError(f"unknown gamma_matrix {gamma_matrix!r}")
    return float(np.sum(resid**2))


def _pair_sum(x):
    """Row-wise sum over j < k of x_ij * x_ik."""
    return 0.5 * (x.sum(axis=1) ** 2 - (x**2).sum(axis=1))


def mc_penalty(lam, rho, gamma):
    """Elementwise MC penalty, already multiplied by rho."""
    a = np.abs(np.asarray(lam, dtype=float))
    if np.isinf(gamma):
        return rho * a
    inner = rho * (a - a**2 / (2.0 * rho * gamma)) if rho > 0 else np.zeros_like(a)
    return np.where(a < rho * gamma, inner, 0.5 * rho**2 * gamma)


def penalty_value(lam, spec: PenaltySpec) -> float:
    """Penalty P(lam) for the family in ``spec``.

    For the MC family the returned value already contains the factor rho, so
    the objective adds it unscaled. The quartimin family is the sum over
    j < k of lam_ij^2 lam_ik^2 with no factor 1/2, which makes the prenet at
    gamma = 0 equal to exactly half of it.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 2:
        raise ValueError("loadings must be a 2-d array")
    p = lam.shape[0]
    fam = spec.family
    a = np.abs(lam)
    sq = lam**2
    if fam is Family.PRENET:
        g = spec.gamma
        return float(np.sum(g * _pair_sum(a) + 0.5 * (1 - g) * _pair_sum(sq)))
    if fam is Family.WEIGHTED_PRENET:
        w = spec.weights
        if w.shape[0] != p:
            raise ValueError(f"expected {p} row weights, got {w.shape[0]}")
        g = spec.gamma
        return float(np.sum(g * w * _pair_sum(a) + 0.5 * (1 - g) * w**2 * _pair_sum(sq)))
    if fam is Family.ELASTIC_NET:
        g = spec.gamma
        return float(np.sum(g * a + 0.5 * (1 - g) * sq))
    if fam is Family.LASSO:
        return float(np.sum(a))
    if fam is Family.MC:
        return float(np.sum(mc_penalty(lam, spec.rho, spec.gamma)))
    if fam is Family.QUARTIMIN:
        return float(np.sum(_pair_sum(sq)))
    if fam is Family.VARIMAX:
        cross = 2.0 * np.sum(_pair_sum(sq))
        return float(cross + np.sum(sq.sum(axis=0) ** 2) / p)
    raise ValueError(f"unsupported family {fam}")


def normalized_prenet_penalty(lam, gamma) -> float:
    """Prenet applied to row-normalized loadings.

    Not offered as a :class:`PenaltySpec` family: the value is unchanged when
    ``lam`` is multiplied by any positive scalar, so it cannot shrink
    anything. Kept for documentation and comparison only.
    """
    lam = np.asarray(lam, dtype=float)
    norms = np.sqrt(np.sum(lam**2, axis=1, keepdims=True))
    norms[norms == 0] = 1.0
    u = lam / norms
    return float(np.sum(gamma * _pair_sum(np.abs(u)) + 0.5 * (1 - gamma) * _pair_sum(u**2)))


def scaled_penalty(lam, spec: PenaltySpec) -> float:
    """The penalty term as it enters the objective (rho * P, or P for MC)."""
    if spec.family is Family.MC:
        return penalty_value(lam, spec)
    if spec.rho == 0:
        return 0.0
    return spec.rho * penalty_value(lam, spec)


def penalized_objective(params: FactorParams, cov, spec: PenaltySpec) -> float:
    """Discrepancy loss plus the scaled penalty."""
    return discrepancy_loss(params, cov) + scaled_penalty(params.lam, spec)


def is_perfect_simple(lam, zero_tol=0.0) -> bool:
    """True when every row of ``lam`` has at most one entry above ``zero_tol``."""
    lam = np.asarray(lam)
    return bool(np.all(np.sum(np.abs(lam) > zero_tol, axis=1) <= 1))
