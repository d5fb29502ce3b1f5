"""
GEM estimation of penalized factor analysis models.

The E-step builds the sufficient quantities M, A and b from the current
parameters. The M-step runs cyclic coordinate descent on the loadings and
then updates the unique variances in closed form. For large penalties a
dedicated solver restricted to perfect simple structures is used, which also
yields the smallest penalty at which the prenet estimate is perfectly simple.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from . import _kernels
from .model import (
    Family,
    FactorParams,
    PenaltySpec,
    SampleCovariance,
    SEPARABLE_FAMILIES,
    NotPositiveDefiniteError,
    scaled_penalty,
)
from .selection import CriteriaTriple, criteria

# ratio between the smallest and the largest penalty of a default grid
PATH_DELTA = 1e-3

# relative margin added to the perfect-simple-structure boundary so that
# rounding in the thresholding test cannot reopen a zero loading
RHO_MAX_MARGIN = 1e-9

# iteration cap for polishing a perfect-simple-structure fit; EM creeps slowly
# when a unique variance is heading for its floor
POLISH_MAX_ITER = 200_000


class Init(str, Enum):
    RANDOM = "random"
    GIVEN = "given"
    WARM = "warm"


@dataclass(frozen=True)
class FitConfig:
    max_em_iter: int = 1000
    max_cd_iter: int = 50
    tol: float = 1e-7
    n_starts: int = 20
    seed: int = 0
    init: Init = Init.RANDOM

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if min(self.max_em_iter, self.max_cd_iter, self.n_starts) < 1:
            raise ValueError("iteration caps and n_starts must be at least 1")
        object.__setattr__(self, "init", Init(self.init))


@dataclass(frozen=True, eq=False)
class EStepQuantities:
    m_matrix: np.ndarray
    a_matrix: np.ndarray
    b: np.ndarray
    loss: float = np.nan  # discrepancy at the parameters the E-step used


@dataclass(eq=False)
class FitResult:
    params: FactorParams
    objective_trace: np.ndarray
    converged: bool
    n_em_iter: int
    spec: Optional[PenaltySpec] = None

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


@dataclass(eq=False)
class SolutionPath:
    rhos: np.ndarray
    gamma: float
    family: Family
    fits: List[FitResult]
    criteria: List[CriteriaTriple] = field(default_factory=list)

    def __len__(self):
        return len(self.fits)


def psi_floor(cov: SampleCovariance) -> np.ndarray:
    return np.maximum(1e-3 * np.diag(cov.s), 1e-8)


def _logdet_s(cov):
    """Constant log|S| inside the discrepancy.

    A singular S (e.g. n <= p) has no finite log-determinant. The constant
    does not affect estimates or criteria, so sum_i log s_ii stands in for it
    and objectives are then reported up to that offset.
    """
    sign, logdet = np.linalg.slogdet(cov.s)
    if sign > 0 and np.isfinite(logdet):
        return logdet
    diag = np.diag(cov.s)
    if np.any(diag <= 0):
        raise NotPositiveDefiniteError("sample covariance has a zero-variance variable")
    return float(np.sum(np.log(diag)))


def _estep(lam, psi, s, logdet_s):
    p, m = lam.shape
    lam_psi = lam / psi[:, None]
    m_mat = lam.T @ lam_psi + np.eye(m)
    m_inv = np.linalg.inv(m_mat)
    m_inv = 0.5 * (m_inv + m_inv.T)
    w = s @ lam_psi  # S Psi^-1 Lambda
    b = w @ m_inv
    inner = lam_psi.T @ w
    inner = 0.5 * (inner + inner.T)
    a_mat = m_inv + m_inv @ inner @ m_inv
    a_mat = 0.5 * (a_mat + a_mat.T)
    # Woodbury forms of tr(Sigma^-1 S) and log|Sigma|
    trace = np.sum(np.diag(s) / psi) - np.sum(m_inv * inner)
    _, logdet_m = np.linalg.slogdet(m_mat)
    logdet_sigma = np.sum(np.log(psi)) + logdet_m
    loss = 0.5 * (trace + logdet_sigma - logdet_s - p)
    return EStepQuantities(m_mat, a_mat, b, loss)


def e_step(params: FactorParams, cov: SampleCovariance) -> EStepQuantities:
    """Expected sufficient quantities given the current parameters.

    Returns ``M = lam' Psi^-1 lam + I``, ``A = M^-1 + M^-1 lam' Psi^-1 S
    Psi^-1 lam M^-1`` and the p x m matrix ``b`` whose i-th row is
    ``M^-1 lam' Psi^-1 s_i``.
    """
    return _estep(np.asarray(params.lam, float), np.asarray(params.psi, float), cov.s,
                  _logdet_s(cov))


def soft_threshold(theta, threshold):
    """sign(theta) * max(|theta| - threshold, 0)."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return float(_kernels.soft(float(theta), float(threshold)))


def _weights(spec, p):
    if spec.family is Family.WEIGHTED_PRENET:
        return np.ascontiguousarray(spec.weights, dtype=float)
    return np.ones(p)


def cd_update_loading(i, j, lam, eq: EStepQuantities, psi_i, spec: PenaltySpec) -> float:
    """Minimizer of the surrogate over the single loading ``lam[i, j]``.

    ``lam`` is the full current loading matrix; only row ``i`` matters except
    for the varimax family, whose penalty couples rows through column sums.
    """
    lam = np.ascontiguousarray(lam, dtype=float)
    a_jj = eq.a_matrix[j, j]
    if not a_jj > 0:
        raise ValueError("a_jj must be positive")
    p = lam.shape[0]
    w = _weights(spec, p)[i]
    colsq = np.sum(lam**2, axis=0)
    c, s1, s2, col_rest = _kernels.row_context(lam, i, j, eq.a_matrix, eq.b, colsq)
    return float(
        _kernels.coord_minimize(
            spec.code, c, a_jj, float(psi_i), spec.rho, spec.gamma, w, s1, s2, col_rest, float(p)
        )
    )


def surrogate_loadings(lam, psi, eq: EStepQuantities, spec: PenaltySpec) -> float:
    """Loading-dependent part of the expected complete-data objective."""
    lam = np.asarray(lam, dtype=float)
    quad = np.einsum("ij,jk,ik->i", lam, eq.a_matrix, lam) - 2 * np.sum(lam * eq.b, axis=1)
    return float(np.sum(quad / (2 * psi)) + scaled_penalty(lam, spec))


def surrogate(lam, psi, cov: SampleCovariance, eq: EStepQuantities, spec: PenaltySpec) -> float:
    """Expected complete-data penalized objective Q(lam, psi), up to a constant."""
    s_diag = np.diag(cov.s)
    return float(0.5 * np.sum(np.log(psi)) + np.sum(s_diag / (2 * psi))
                 + surrogate_loadings(lam, psi, eq, spec))


def update_loadings(params: FactorParams, eq: EStepQuantities, spec: PenaltySpec,
                    max_cd_iter=50, tol=1e-10) -> np.ndarray:
    """Coordinate-descent sweeps on the loading surrogate.

    Sweeps stop once a full pass lowers the surrogate by less than ``tol``.
    The returned matrix never has a larger surrogate value than the input.
    """
    lam = np.array(params.lam, dtype=float, order="C")
    psi = np.ascontiguousarray(params.psi, dtype=float)
    _kernels.cd_sweeps(spec.code, lam, eq.b, eq.a_matrix, psi, spec.rho, spec.gamma,
                       _weights(spec, lam.shape[0]), int(max_cd_iter), float(tol))
    return lam


def _psi_update(lam, eq, s_diag, floor):
    quad = np.einsum("ij,jk,ik->i", lam, eq.a_matrix, lam)
    psi = s_diag - 2 * np.sum(lam * eq.b, axis=1) + quad
    return np.maximum(psi, floor)


def update_unique_variances(lam_new, eq: EStepQuantities, cov: SampleCovariance) -> np.ndarray:
    """psi_i = s_ii - 2 lam_i' b_i + lam_i' A lam_i, clamped from below."""
    return _psi_update(np.asarray(lam_new, float), eq, np.diag(cov.s), psi_floor(cov))


def random_start(cov: SampleCovariance, m: int, rng) -> FactorParams:
    p = cov.p
    q, r = np.linalg.qr(rng.standard_normal((p, m)))
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    scale = 0.7 * np.sqrt(np.diag(cov.s))
    return FactorParams(scale[:, None] * q, np.maximum(0.5 * np.diag(cov.s), psi_floor(cov)))


def _start_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _check_dims(cov, m):
    if not 1 <= m < cov.p:
        raise ValueError(f"number of factors must satisfy 1 <= m < p={cov.p}, got {m}")


def _run_gem(cov, spec, start, config, logdet_s):
    floor = psi_floor(cov)
    lam = np.array(start.lam, dtype=float, order="C")
    psi = np.maximum(np.array(start.psi, dtype=float), floor)
    w = _weights(spec, lam.shape[0])
    lam, psi, trace, it, converged = _kernels.gem_loop(
        spec.code, lam, psi, cov.s, logdet_s, floor, spec.rho, spec.gamma, w,
        config.max_em_iter, config.max_cd_iter, config.tol, 0.1 * config.tol)
    return FitResult(FactorParams(lam, psi), trace, bool(converged), int(it), spec)


def fit(cov: SampleCovariance, m: int, spec: PenaltySpec, config: FitConfig = FitConfig(),
        start: Optional[FactorParams] = None) -> FitResult:
    """Minimize the penalized discrepancy with the GEM algorithm.

    With ``config.init`` set to random, ``config.n_starts`` random starts are
    run and the one with the lowest final objective is kept. Given and
    warm-start initializations use ``start`` directly.

    Parameters
    ----------
    cov : SampleCovariance
    m : int
        Number of factors.
    spec : PenaltySpec
    config : FitConfig
    start : FactorParams, optional
        Required unless ``config.init`` is random.

    Returns
    -------
    FitResult
        The objective trace is non-increasing.
    """
    _check_dims(cov, m)
    logdet_s = _logdet_s(cov)
    if config.init is Init.RANDOM and start is None:
        best = None
        for rng in _start_rngs(config.seed, config.n_starts):
            res = _run_gem(cov, spec, random_start(cov, m, rng), config, logdet_s)
            if best is None or res.objective < best.objective:
                best = res
        return best
    if start is None:
        raise ValueError(f"init={config.init.value} requires starting parameters")
    if start.lam.shape != (cov.p, m):
        raise ValueError(f"starting loadings have shape {start.lam.shape}, expected {(cov.p, m)}")
    return _run_gem(cov, spec, start, config, logdet_s)


def pss_row_update(b_i, a_diag):
    """Best perfectly simple row given b_i and diag(A).

    The nonzero column maximizes b_ik**2 / a_kk (lowest index on ties) and
    takes the value b_ij / a_jj. An all-zero ``b_i`` gives a zero row.
    """
    b_i = np.asarray(b_i, dtype=float)
    row = np.zeros_like(b_i)
    if not np.any(b_i != 0):
        return row
    j = int(np.argmax(b_i**2 / a_diag))
    row[j] = b_i[j] / a_diag[j]
    return row


def _run_pss(cov, start, config, logdet_s, fixed_psi=None, polish=False):
    floor = psi_floor(cov)
    lam = np.array(start.lam, dtype=float, order="C")
    if fixed_psi is not None:
        psi = fixed_psi
    else:
        psi = np.maximum(np.array(start.psi, dtype=float), floor)
    max_iter = max(config.max_em_iter, POLISH_MAX_ITER) if polish else config.max_em_iter
    lam, psi, trace, it, converged = _kernels.pss_loop(
        lam, psi, cov.s, logdet_s, floor, fixed_psi is not None, max_iter, config.tol,
        1e-13 if polish else 0.0)
    return FitResult(FactorParams(lam, psi), trace, bool(converged), int(it))


def pss_fit(cov: SampleCovariance, m: int, config: FitConfig = FitConfig(),
            start: Optional[FactorParams] = None, fixed_psi=None) -> FitResult:
    """EM restricted to loading matrices with perfect simple structure.

    Each M-step moves every row to its best single column. Runs
    ``config.n_starts`` random starts (or the given ``start``), keeps the
    lowest final discrepancy, then iterates the winner until the parameters
    stop moving so that it is an accurate fixed point.

    ``fixed_psi`` holds the unique variances constant, e.g. at alpha * I.
    """
    _check_dims(cov, m)
    logdet_s = _logdet_s(cov)
    if fixed_psi is not None:
        fixed_psi = np.broadcast_to(np.asarray(fixed_psi, float), (cov.p,)).copy()
        if not np.all(fixed_psi > 0):
            raise ValueError("fixed unique variances must be positive")
    if start is not None:
        starts = [start]
    else:
        starts = [random_start(cov, m, rng) for rng in _start_rngs(config.seed, config.n_starts)]
    best = None
    for st in starts:
        res = _run_pss(cov, st, config, logdet_s, fixed_psi)
        if best is None or res.objective < best.objective:
            best = res
    polished = _run_pss(cov, best.params, config, logdet_s, fixed_psi, polish=True)
    trace = np.concatenate([best.objective_trace, polished.objective_trace[1:]])
    return FitResult(polished.params, trace, polished.converged, best.n_em_iter + polished.n_em_iter,
                     PenaltySpec(Family.PRENET, 0.0, 1.0))


def rho_max_from_params(params: FactorParams, cov: SampleCovariance, gamma: float,
                        weights=None) -> float:
    """Smallest prenet penalty keeping a perfectly simple solution fixed.

    For each row i with nonzero column j and each other column k, the zero
    loading stays zero while rho * gamma * psi_i * |lam_ij| covers
    |b_ik - a_kj lam_ij|. Rows that are entirely zero are skipped.
    """
    if not gamma > 0:
        raise ValueError("rho_max is undefined for gamma = 0")
    lam = np.asarray(params.lam)
    psi = np.asarray(params.psi)
    eq = e_step(params, cov)
    w = np.ones(cov.p) if weights is None else np.asarray(weights, float)
    best = 0.0
    for i in range(lam.shape[0]):
        nz = np.flatnonzero(lam[i])
        if nz.size == 0:
            continue
        if nz.size > 1:
            raise ValueError("rho_max requires loadings with perfect simple structure")
        j = nz[0]
        lij = lam[i, j]
        for k in range(lam.shape[1]):
            if k == j:
                continue
            r = abs(eq.b[i, k] - eq.a_matrix[k, j] * lij) / (gamma * w[i] * psi[i] * abs(lij))
            best = max(best, r)
    return best * (1.0 + RHO_MAX_MARGIN)


def rho_max(cov: SampleCovariance, m: int, gamma: float, config: FitConfig = FitConfig(),
            weights=None) -> float:
    """Run :func:`pss_fit` and return the penalty where perfect simple structure begins."""
    if not gamma > 0:
        raise ValueError("rho_max is undefined for gamma = 0")
    pss = pss_fit(cov, m, config)
    return rho_max_from_params(pss.params, cov, gamma, weights)


def ml_weights(cov: SampleCovariance, m: int, config: FitConfig = FitConfig()) -> np.ndarray:
    """Row weights 1 / sum_q lam_iq**2 from the unpenalized fit."""
    ml = fit(cov, m, PenaltySpec(Family.PRENET, 0.0, 1.0), replace(config, tol=min(config.tol, 1e-7)))
    comm = np.sum(ml.params.lam**2, axis=1)
    return 1.0 / np.maximum(comm, 1e-8)


def separable_rho_max(params: FactorParams, cov: SampleCovariance, spec: PenaltySpec) -> float:
    """Penalty above which a zero loading matrix survives one sweep from the given fit."""
    eq = e_step(params, cov)
    ratio = np.abs(eq.b) / params.psi[:, None]
    if spec.family is Family.ELASTIC_NET:
        if spec.gamma == 0:
            raise ValueError("a ridge penalty never produces zeros")
        ratio = ratio / spec.gamma
    return float(np.max(ratio))


def _attach_criteria(path, cov, m):
    path.criteria = [criteria(f, cov, m) for f in path.fits]
    return path


def solution_path(cov: SampleCovariance, m: int, gamma: float, K: int = 30,
                  config: FitConfig = FitConfig(), family=Family.PRENET, weights=None,
                  rhos=None, delta: float = PATH_DELTA) -> SolutionPath:
    """Warm-started fits over a decreasing grid of penalties.

    For the prenet families the grid runs log-spaced from rho_max down to
    rho_max * delta * sqrt(gamma). The first point starts from the best of
    ``config.n_starts`` perfect-simple-structure fits and every later point
    starts from the previous solution.

    For lasso, elastic net and MC a zero loading column is absorbing under
    EM, so these paths are computed from the small end upwards: the smallest
    penalty gets a multi-start fit and each larger one is warm-started from
    its neighbour. The grid top is the penalty that zeroes every loading
    when starting from zero at the unpenalized fit.

    An explicit decreasing ``rhos`` grid overrides the default one; its
    first point then gets a multi-start fit.
    """
    family = Family(family)
    _check_dims(cov, m)
    if K < 2 and rhos is None:
        raise ValueError("a path needs at least two grid points")
    if family is Family.WEIGHTED_PRENET and weights is None:
        weights = ml_weights(cov, m, config)
    spec0 = PenaltySpec(family, 0.0, gamma, weights)
    warm = replace(config, init=Init.WARM)

    if rhos is not None:
        rhos = np.asarray(rhos, dtype=float)
        if rhos.size > 1 and np.any(np.diff(rhos) >= 0):
            raise ValueError("rhos must be strictly decreasing")
        fits, prev = [], None
        for rho in rhos:
            spec = spec0.with_rho(rho)
            res = fit(cov, m, spec, config) if prev is None else fit(cov, m, spec, warm, prev)
            fits.append(res)
            prev = res.params
        return _attach_criteria(SolutionPath(rhos, gamma, family, fits), cov, m)

    if family in (Family.PRENET, Family.WEIGHTED_PRENET):
        if not 0 < gamma <= 1:
            raise ValueError("prenet paths need gamma in (0, 1]")
        pss = pss_fit(cov, m, config)
        top = rho_max_from_params(pss.params, cov, gamma, weights)
        rhos = np.geomspace(top, top * delta * np.sqrt(gamma), K)
        fits, prev = [], pss.params
        for rho in rhos:
            res = fit(cov, m, spec0.with_rho(rho), warm, prev)
            fits.append(res)
            prev = res.params
        return _attach_criteria(SolutionPath(rhos, gamma, family, fits), cov, m)

    if family in SEPARABLE_FAMILIES:
        ml = fit(cov, m, PenaltySpec(Family.PRENET, 0.0, 1.0), config)
        probe = spec0.with_rho(1.0)
        top = separable_rho_max(ml.params, cov, probe)
        rhos = np.geomspace(top, top * delta, K)
        fits = [None] * K
        prev = None
        for idx in range(K - 1, -1, -1):
            spec = spec0.with_rho(rhos[idx])
            if prev is None:
                res = fit(cov, m, spec, warm, ml.params)
                alt = fit(cov, m, spec, config)
                res = alt if alt.objective < res.objective else res
            else:
                res = fit(cov, m, spec, warm, prev)
            fits[idx] = res
            prev = res.params
        return _attach_criteria(SolutionPath(rhos, gamma, family, fits), cov, m)

    raise ValueError(f"no default grid for family {family.value}; pass rhos explicitly")
