"""
Likelihood, penalty and penalized objective of sparse logistic PCA.

Provides:
- Link functions (logit and probit) and the canonical parameter matrix
- Observed-data log likelihood for binary and mixed binary/Gaussian data
- L1 penalty on the loadings and the penalized objective the solver descends
"""

import logging
import math
from typing import Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.special import expit, log_expit, log_ndtr, ndtr

from slpca.config import settings
from slpca.models.schemas import BinaryDataMatrix, Link, SlpcaModel
from slpca.services.errors import DataValidationError, DimensionMismatchError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def inverse_logit(theta: ArrayLike) -> ArrayLike:
    """
    Logistic function 1/(1+exp(−θ)), unclamped.

    Args:
        theta: Scalar or array of finite canonical parameters

    Returns:
        Probability (float for scalar input, array otherwise)
    """
    values = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataValidationError("inverse_logit requires finite input")
    result = expit(values)
    return float(result) if result.ndim == 0 else result


def link_inverse(theta: np.ndarray, link: Link) -> np.ndarray:
    """Elementwise success probability under the given link."""
    if Link(link) == Link.PROBIT:
        return ndtr(theta)
    return expit(theta)


def canonical_matrix(model: SlpcaModel) -> np.ndarray:
    """Θ = 1μᵀ + ABᵀ"""
    return model.mu[None, :] + model.A @ model.B.T


def probabilities(model: SlpcaModel) -> np.ndarray:
    return link_inverse(canonical_matrix(model), model.link)


def check_dimensions(data: BinaryDataMatrix, model: SlpcaModel) -> None:
    if (data.n, data.d) != (model.n, model.d):
        raise DimensionMismatchError(
            f"model is {model.n}×{model.d} but data is {data.n}×{data.d}"
        )


def cell_log_likelihood(
    data: BinaryDataMatrix,
    theta: np.ndarray,
    link: Link = Link.LOGIT,
    sigma2: Optional[float] = None,
    prob_clamp: Optional[float] = None,
) -> np.ndarray:
    """
    Per-cell log likelihood contributions, zero on missing cells.

    Binary cells contribute log π(qθ) with the probability clamped to
    [prob_clamp, 1−prob_clamp]. Continuous cells contribute at deviance
    scale, −(y−θ)²/σ² − log(2πσ²).

    Args:
        data: Data matrix
        theta: n×d canonical parameters
        link: Link of the binary columns
        sigma2: Residual variance, required when continuous columns exist
        prob_clamp: Probability clamp (default from settings)

    Returns:
        n×d matrix of contributions
    """
    clamp = settings.prob_clamp if prob_clamp is None else prob_clamp
    theta = np.asarray(theta, dtype=float)
    if theta.shape != data.values.shape:
        raise DimensionMismatchError(f"theta shape {theta.shape} does not match data {data.values.shape}")

    signed = data.q * theta
    if Link(link) == Link.PROBIT:
        log_p = log_ndtr(signed)
    else:
        log_p = log_expit(signed)
    cells = np.clip(log_p, math.log(clamp), math.log1p(-clamp))

    if data.has_continuous:
        if sigma2 is None or sigma2 <= 0:
            raise DataValidationError("continuous columns need a positive sigma2")
        cont = data.continuous_columns
        resid = data.values[:, cont] - theta[:, cont]
        cells[:, cont] = -(resid ** 2) / sigma2 - math.log(2.0 * math.pi * sigma2)

    return np.where(data.mask, 0.0, cells)


def sum_cells(cells: np.ndarray) -> float:
    """Sum with compensated accumulation for large matrices."""
    if cells.size > settings.fsum_threshold:
        return math.fsum(cells.ravel())
    return float(np.sum(cells))


def log_likelihood_theta(
    data: BinaryDataMatrix,
    theta: np.ndarray,
    link: Link = Link.LOGIT,
    sigma2: Optional[float] = None,
    prob_clamp: Optional[float] = None,
) -> float:
    """Observed-data log likelihood at a canonical parameter matrix."""
    return sum_cells(cell_log_likelihood(data, theta, link, sigma2, prob_clamp))


def log_likelihood(
    data: BinaryDataMatrix,
    model: SlpcaModel,
    prob_clamp: Optional[float] = None,
) -> float:
    """
    Observed-data log likelihood of a fitted model.

    Missing cells are excluded from the sum, so an all-missing matrix
    gives 0.
    """
    check_dimensions(data, model)
    return log_likelihood_theta(data, canonical_matrix(model), model.link, model.sigma2, prob_clamp)


def penalty_value(B: np.ndarray, lam: Union[float, Sequence[float], np.ndarray]) -> float:
    """
    L1 penalty Σ_l λ_l Σ_j |b_jl|.

    Args:
        B: d×k loading matrix
        lam: Length-k penalty vector

    Returns:
        Nonnegative penalty
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != B.shape[1]:
        raise DimensionMismatchError(f"lambda has {lam.size} entries for {B.shape[1]} columns")
    if np.any(lam < 0):
        raise DataValidationError("lambda entries must be nonnegative")
    return float(np.sum(lam * np.abs(B).sum(axis=0)))


def objective_from_parts(loglik: float, n: int, penalty: float) -> float:
    return -loglik + n * penalty


def penalized_objective(
    data: BinaryDataMatrix,
    model: SlpcaModel,
    prob_clamp: Optional[float] = None,
) -> float:
    """
    −ℓ + n·P_λ(B).

    The likelihood term is the observed-data likelihood, which equals the
    complete-data one when the mask is empty.
    """
    loglik = log_likelihood(data, model, prob_clamp)
    return objective_from_parts(loglik, data.n, penalty_value(model.B, model.lambda_))


def nnz(B: np.ndarray) -> int:
    """Number of nonzero loadings."""
    return int(np.count_nonzero(B))


def support(B: np.ndarray) -> Set[Tuple[int, int]]:
    """Positions (j, l) of the nonzero loadings."""
    rows, cols = np.nonzero(np.asarray(B))
    return set(zip(rows.tolist(), cols.tolist()))
