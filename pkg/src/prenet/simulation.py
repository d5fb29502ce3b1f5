"""
Monte Carlo designs and scoring for sparse loading recovery.

Four true models are provided: two small 6 x 2 designs (one perfectly
simple, one dense), a 100 x 4 block design and a perturbed version of it
whose zero loadings are partly filled in. ``run_study`` simulates data sets,
fits a solution path per estimator, selects a point per information
criterion and reports mean MSE, TPR and FPR.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Family, sample_covariance
from .selection import select_along_path
from .solver import FitConfig, solution_path

MODEL_TAGS = ("A", "B", "C", "D")


@dataclass(frozen=True, eq=False)
class SimModel:
    tag: str
    lambda_true: np.ndarray
    psi_true: np.ndarray
    seed: int = 0

    @property
    def sigma(self) -> np.ndarray:
        return self.lambda_true @ self.lambda_true.T + np.diag(self.psi_true)


@dataclass(frozen=True)
class SimMetrics:
    mse: float
    tpr: float
    fpr: Optional[float]


def _block_loadings():
    lam = np.zeros((100, 4))
    for k, v in enumerate((0.8, 0.75, 0.7, 0.65)):
        lam[25 * k:25 * (k + 1), k] = v
    return lam


def make_model(tag: str, seed: int = 0) -> SimModel:
    """True loadings and unique variances for model ``tag``.

    Model D takes the block design of model C, replaces 100 of its 300 zero
    loadings by U(0.4, 0.6) draws and rescales any row whose communality
    exceeds one to communality 0.95. The draw depends on ``seed``.
    """
    tag = tag.upper()
    if tag == "A":
        lam = np.array([[0.95, 0.9, 0.85, 0.0, 0.0, 0.0],
                        [0.0, 0.0, 0.0, 0.8, 0.75, 0.7]]).T
    elif tag == "B":
        lam = np.array([[0.9, 0.8, 0.7, 0.2, 0.2, 0.2],
                        [0.2, 0.2, 0.2, 0.9, 0.8, 0.7]]).T
    elif tag == "C":
        lam = _block_loadings()
    elif tag == "D":
        lam = _block_loadings()
        rng = np.random.default_rng(seed)
        zeros = np.flatnonzero(lam.ravel() == 0)
        chosen = rng.choice(zeros, size=100, replace=False)
        flat = lam.ravel()
        flat[chosen] = rng.uniform(0.4, 0.6, size=100)
        lam = flat.reshape(100, 4)
        comm = np.sum(lam**2, axis=1)
        over = comm > 1
        lam[over] *= np.sqrt(0.95 / comm[over])[:, None]
    else:
        raise ValueError(f"unknown model tag {tag!r}; expected one of {MODEL_TAGS}")
    psi = 1.0 - np.sum(lam**2, axis=1)
    return SimModel(tag, lam, psi, seed)


def illustrative_loadings():
    """Dense 6 x 2 loadings used in the two-factor illustration."""
    return make_model("B").lambda_true.copy()


def sample_mvn(model: SimModel, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` rows from N(0, lam lam' + Psi) using a Cholesky factor."""
    if n < 1:
        raise ValueError("n must be positive")
    chol = np.linalg.cholesky(model.sigma)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, chol.shape[0])) @ chol.T


def align_loadings(estimate, truth) -> np.ndarray:
    """Permute and sign-flip the columns of ``estimate`` to best match ``truth``.

    The Frobenius distance separates over matched column pairs once each
    pair uses its better sign, so the optimal permutation is an assignment
    problem and is solved exactly.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError("estimate and truth must have the same shape")
    plus = np.sum((est[:, :, None] - tru[:, None, :]) ** 2, axis=0)
    minus = np.sum((-est[:, :, None] - tru[:, None, :]) ** 2, axis=0)
    cost = np.minimum(plus, minus)
    rows, cols = linear_sum_assignment(cost)
    out = np.zeros_like(est)
    for r, c in zip(rows, cols):
        sign = -1.0 if minus[r, c] < plus[r, c] else 1.0
        out[:, c] = sign * est[:, r]
    return out


def sim_metrics(estimate, truth, zero_tol=0.0) -> SimMetrics:
    """Squared error per entry plus true and false positive rates of the zero pattern.

    The FPR is ``None`` when the truth has no zero entries.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    p, m = tru.shape
    mse = float(np.sum((tru - est) ** 2) / (p * m))
    est_nz = np.abs(est) > zero_tol
    true_nz = tru != 0
    tpr = float(np.sum(est_nz & true_nz) / np.sum(true_nz)) if np.any(true_nz) else 1.0
    n_zero = np.sum(~true_nz)
    fpr = float(np.sum(est_nz & ~true_nz) / n_zero) if n_zero else None
    return SimMetrics(mse, tpr, fpr)


@dataclass(frozen=True)
class Estimator:
    """A penalty family plus its gamma, e.g. prenet with gamma 0.01."""

    family: Family
    gamma: float = 1.0
    label: str = ""

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.family in (Family.PRENET, Family.WEIGHTED_PRENET, Family.MC, Family.ELASTIC_NET):
            return f"{self.family.value}_{self.gamma:g}"
        return self.family.value

    @classmethod
    def parse(cls, text: str) -> "Estimator":
        """Parse ``family`` or ``family:gamma``, e.g. ``prenet:0.01``."""
        name, _, g = text.partition(":")
        family = Family(name.strip().lower())
        if g:
            return cls(family, float(g))
        default = {Family.MC: 3.0, Family.ELASTIC_NET: 0.5}.get(family, 1.0)
        return cls(family, default)


STUDY_ESTIMATORS = (
    Estimator(Family.LASSO, 1.0),
    Estimator(Family.MC, 3.0),
    Estimator(Family.PRENET, 1.0),
    Estimator(Family.PRENET, 0.01),
)
STUDY_CRITERIA = ("aic", "bic", "ebic")
STUDY_TABLES = {3: "A", 4: "B", 5: "C", 6: "D"}
STUDY_SAMPLE_SIZES = (50, 100, 500)


@dataclass(frozen=True)
class StudyRow:
    model: str
    n: int
    criterion: str
    estimator: str
    mse: float
    tpr: float
    fpr: Optional[float]
    replicates: int
    failures: int


def replicate_seed(master_seed: int, index: int) -> int:
    """Seed for replicate ``index``, derived from a counter rather than a shared stream."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _run_replicate(tag, n, estimators, criteria_names, seed, config, K, fixed_model):
    model = fixed_model if fixed_model is not None else make_model(tag, seed)
    data = sample_mvn(model, n, seed)
    cov = sample_covariance(data)
    m = model.lambda_true.shape[1]
    out = {}
    for est in estimators:
        try:
            path = solution_path(cov, m, est.gamma, K, replace(config, seed=seed), family=est.family)
        except (ValueError, np.linalg.LinAlgError):
            for crit in criteria_names:
                out[(crit, est.name)] = None
            continue
        for crit in criteria_names:
            idx = select_along_path(path, crit)
            aligned = align_loadings(path.fits[idx].params.lam, model.lambda_true)
            out[(crit, est.name)] = sim_metrics(aligned, model.lambda_true)
    return out


def run_study(tag: str, n: int, T: int, estimators: Sequence[Estimator] = STUDY_ESTIMATORS,
              criteria_names: Sequence[str] = STUDY_CRITERIA, seed: int = 0,
              config: Optional[FitConfig] = None, K: int = 30, threads: int = 1,
              regenerate_model: bool = True) -> List[StudyRow]:
    """Replicated simulation for one model and sample size.

    Replicate ``s`` uses the seed ``replicate_seed(seed, s)`` for its data
    and, when ``regenerate_model`` is set, for model D's random loadings.
    Results are reduced in replicate order, so the table does not depend on
    ``threads``. A replicate whose fit fails is counted in ``failures`` and
    left out of the means.
    """
    config = config or FitConfig()
    fixed = None if regenerate_model else make_model(tag, seed)
    seeds = [replicate_seed(seed, s) for s in range(T)]

    def task(s):
        return _run_replicate(tag, n, estimators, criteria_names, s, config, K, fixed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, seeds))
    else:
        results = [task(s) for s in seeds]

    rows = []
    for crit in criteria_names:
        for est in estimators:
            ms = [r[(crit, est.name)] for r in results]
            ok = [x for x in ms if x is not None]
            fprs = [x.fpr for x in ok if x.fpr is not None]
            rows.append(StudyRow(
                model=tag.upper(), n=n, criterion=crit.upper(), estimator=est.name,
                mse=float(np.mean([x.mse for x in ok])) if ok else float("nan"),
                tpr=float(np.mean([x.tpr for x in ok])) if ok else float("nan"),
                fpr=float(np.mean(fprs)) if fprs else None,
                replicates=len(ok), failures=len(ms) - len(ok),
            ))
    return rows


def format_table(rows: Sequence[StudyRow], delimiter: str = ",") -> str:
    header = ["model", "n", "criterion", "estimator", "mse", "tpr", "fpr", "replicates", "failures"]
    lines = [delimiter.join(header)]
    for r in rows:
        fpr = "" if r.fpr is None else f"{r.fpr:.6f}"
        lines.append(delimiter.join([r.model, str(r.n), r.criterion, r.estimator, f"{r.mse:.6f}",
                                     f"{r.tpr:.6f}", fpr, str(r.replicates), str(r.failures)]))
    return "\n".join(lines) + "\n"

