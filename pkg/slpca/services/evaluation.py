"""
Metrics and diagnostics for fitted models.

Provides:
- Principal angle between loading subspaces
- False-positive rate of the selected loadings
- Pearson residuals and their within-group pairwise correlations
- Parametric bootstrap envelope of the fitted probabilities
- One-way F test of component scores on group labels, plus a permutation
  reference
"""

import logging
import math
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import f as f_distribution

from slpca.config import settings
from slpca.models.schemas import (
    BinaryDataMatrix,
    BootstrapEnvelope,
    CorrelationSummary,
    FitConfig,
    FTestResult,
    SlpcaModel,
    SubspaceAngle,
)
from slpca.services import solver
from slpca.services.errors import BootstrapFailureError, DataValidationError
from slpca.services.likelihood import canonical_matrix, check_dimensions, probabilities

logger = logging.getLogger(__name__)


def _orthonormal_basis(B: np.ndarray, name: str) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if B.shape[1] == 0 or np.linalg.matrix_rank(B) < B.shape[1]:
        raise DataValidationError(f"{name} is rank-deficient")
    Q, _ = np.linalg.qr(B)
    return Q


def principal_angle(B_hat: np.ndarray, B_true: np.ndarray) -> SubspaceAngle:
    """
    Largest principal angle between span(B_hat) and span(B_true).

    The cosine is the smallest singular value of Q_hatᵀQ_true. When one
    basis has fewer columns it is projected onto the other, and the angle
    is taken from both the cosine and the norm of the projection residual
    so that nearly identical subspaces still give angles near zero.
    """
    Q_hat = _orthonormal_basis(B_hat, "B_hat")
    Q_true = _orthonormal_basis(B_true, "B_true")
    if Q_hat.shape[0] != Q_true.shape[0]:
        raise DataValidationError("bases must have the same number of rows")

    small, big = (Q_true, Q_hat) if Q_true.shape[1] <= Q_hat.shape[1] else (Q_hat, Q_true)
    cosine = np.linalg.svd(big.T @ small, compute_uv=False).min()
    residual = small - big @ (big.T @ small)
    sine = np.linalg.norm(residual, ord=2)
    degrees = math.degrees(math.atan2(min(sine, 1.0), min(max(cosine, 0.0), 1.0)))
    return SubspaceAngle(degrees=min(max(degrees, 0.0), 90.0))


def nonzero_columns(B: np.ndarray) -> np.ndarray:
    """Columns of B that are not identically zero."""
    B = np.asarray(B)
    return B[:, np.any(B != 0, axis=0)]


def false_positive_rate(
    B_hat: np.ndarray,
    true_support: Iterable[Tuple[int, int]],
    denominator: str = "selected",
    by: str = "cell",
) -> float:
    """
    Percentage of selected loadings that fall outside the true support.

    Args:
        B_hat: Fitted loadings with exact zeros
        true_support: Positions (j, l) of the true nonzero loadings
        denominator: "selected" (estimated nonzeros) or "true_zeros"
        by: "cell" for (j, l) positions, "variable" for rows with any nonzero

    Returns:
        Percentage in [0, 100]
    """
    B_hat = np.asarray(B_hat)
    truth = set((int(j), int(l)) for j, l in true_support)
    d, k = B_hat.shape

    if by == "cell":
        rows, cols = np.nonzero(B_hat)
        selected: Set = set(zip(rows.tolist(), cols.tolist()))
        true_set: Set = {(j, l) for j, l in truth if j < d and l < k}
        universe = d * k
    elif by == "variable":
        selected = set(np.flatnonzero(np.any(B_hat != 0, axis=1)).tolist())
        true_set = {j for j, _ in truth if j < d}
        universe = d
    else:
        raise DataValidationError(f"unknown level {by!r}; use 'cell' or 'variable'")

    if not selected:
        raise DataValidationError("B_hat has no nonzero loadings")
    false = selected - true_set

    if denominator == "selected":
        total = len(selected)
    elif denominator == "true_zeros":
        total = universe - len(true_set)
        if total == 0:
            raise DataValidationError("true support leaves no zero positions")
    else:
        raise DataValidationError(f"unknown denominator {denominator!r}")
    return 100.0 * len(false) / total


def pearson_residuals(
    data: BinaryDataMatrix,
    model: SlpcaModel,
    prob_clamp: Optional[float] = None,
) -> np.ndarray:
    """
    (y − π̂)/sqrt(π̂(1 − π̂)) on observed binary cells; NaN elsewhere.
    """
    check_dimensions(data, model)
    clamp = settings.prob_clamp if prob_clamp is None else prob_clamp
    p = np.clip(probabilities(model), clamp, 1.0 - clamp)
    residuals = (data.values - p) / np.sqrt(p * (1.0 - p))
    keep = data.observed & data.binary_columns[None, :]
    return np.where(keep, residuals, np.nan)


def residual_pairwise_correlations(
    residuals: np.ndarray,
    groups: Sequence[Sequence[int]],
) -> CorrelationSummary:
    """
    Pearson correlation of every within-group column pair.

    Rows where either residual is missing are dropped pairwise. Pairs with
    a zero-variance column are skipped and counted.

    Args:
        residuals: n×d residual matrix (NaN where absent)
        groups: Column partition, one index list per group

    Returns:
        CorrelationSummary with one entry per usable pair
    """
    residuals = np.asarray(residuals, dtype=float)
    summary = CorrelationSummary()
    for group_id, columns in enumerate(groups):
        columns = [int(c) for c in columns]
        if len(columns) < 2:
            raise DataValidationError(f"group {group_id} needs at least two columns")
        # pandas drops incomplete rows per pair and yields NaN for zero variance
        matrix = pd.DataFrame(residuals[:, columns]).corr(method="pearson", min_periods=2).to_numpy()
        for position, a in enumerate(columns):
            for offset, b in enumerate(columns[position + 1:], start=position + 1):
                value = matrix[position, offset]
                if not np.isfinite(value):
                    summary.skipped += 1
                    continue
                summary.correlations.append(float(value))
                summary.pairs.append([a, b])
                summary.groups.append(group_id)

    logger.info(
        f"Computed {len(summary.correlations)} residual correlations "
        f"across {len(groups)} groups ({summary.skipped} skipped)"
    )
    return summary


def _simulate_like(data: BinaryDataMatrix, model: SlpcaModel, rng: np.random.Generator) -> BinaryDataMatrix:
    theta = canonical_matrix(model)
    p = probabilities(model)
    values = (rng.random(p.shape) < p).astype(float)
    if data.has_continuous:
        cont = data.continuous_columns
        noise = rng.standard_normal(theta.shape) * math.sqrt(model.sigma2 or 1.0)
        values[:, cont] = (theta + noise)[:, cont]
    return BinaryDataMatrix(values=values, mask=data.mask, col_kind=data.col_kind, column_names=data.column_names)


def config_for(model: SlpcaModel, **overrides) -> FitConfig:
    """Fit configuration that reproduces a model's rank, link and penalty."""
    options = {"k": model.k, "link": model.link, "lambda_": list(model.lambda_)}
    options.update(overrides)
    return FitConfig(**options)


def bootstrap_envelope(
    data: BinaryDataMatrix,
    model: SlpcaModel,
    n_boot: Optional[int] = None,
    seed: int = 0,
    config: Optional[FitConfig] = None,
    seeds: Optional[Sequence[int]] = None,
    warm_start: bool = True,
    n_jobs: Optional[int] = None,
) -> BootstrapEnvelope:
    """
    Parametric bootstrap envelope of the fitted probabilities.

    Each replicate draws cells from the fitted model (missing cells stay
    missing), refits, and records π̂ for every binary cell. The envelope is
    the per-cell 5%/95% quantile, listed in the order of the original π̂.

    Args:
        data: Original data matrix
        model: Fitted model
        n_boot: Replicate count (default settings.n_boot)
        seed: Seed from which replicate streams are spawned
        config: Refit configuration (default: the model's k, link and λ)
        seeds: Explicit per-replicate seeds; overrides n_boot and seed
        warm_start: Start each refit from the fitted model
        n_jobs: Workers (default settings.threads)

    Returns:
        BootstrapEnvelope over the binary cells
    """
    check_dimensions(data, model)
    if seeds is not None:
        streams = [np.random.SeedSequence(int(s)) for s in seeds]
    else:
        count = settings.n_boot if n_boot is None else n_boot
        streams = np.random.SeedSequence(seed).spawn(count)
    if len(streams) < 2:
        raise DataValidationError("bootstrap needs at least two replicates")
    config = config or config_for(model)
    cells = np.broadcast_to(data.binary_columns[None, :], data.values.shape).ravel()

    def replicate(stream: np.random.SeedSequence) -> Optional[np.ndarray]:
        rng = np.random.default_rng(stream)
        sample = _simulate_like(data, model, rng)
        refit = solver.safe_fit(sample, config, init=model if warm_start else None)
        if refit is None:
            return None
        return probabilities(refit.model).ravel()[cells]

    jobs = n_jobs or settings.threads
    outcomes = Parallel(n_jobs=jobs, prefer="threads")(delayed(replicate)(s) for s in streams)
    draws = [item for item in outcomes if item is not None]
    n_failed = len(outcomes) - len(draws)
    if n_failed:
        logger.warning(f"{n_failed} of {len(outcomes)} bootstrap refits failed")
    if len(draws) < settings.bootstrap_min_success * len(outcomes):
        raise BootstrapFailureError(
            f"only {len(draws)} of {len(outcomes)} bootstrap refits succeeded",
            n_success=len(draws),
            n_failed=n_failed,
        )

    stacked = np.vstack(draws)
    point_all = probabilities(model).ravel()[cells]
    index = np.flatnonzero(cells)
    order = np.argsort(point_all, kind="stable")
    lower = np.quantile(stacked, 0.05, axis=0)
    upper = np.quantile(stacked, 0.95, axis=0)
    return BootstrapEnvelope(
        order=index[order],
        point=point_all[order],
        lower=lower[order],
        upper=upper[order],
        n_success=len(draws),
        n_failed=n_failed,
    )


def group_f_test(scores: Sequence[float], labels: Sequence) -> FTestResult:
    """
    One-way ANOVA F test of scores on group labels.

    Args:
        scores: Length-n component scores
        labels: Length-n group ids

    Returns:
        FTestResult with (g − 1, n − g) degrees of freedom
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape[0] != labels.shape[0]:
        raise DataValidationError("scores and labels must have the same length")
    levels = np.unique(labels)
    g, n = levels.size, scores.size
    if g < 2:
        raise DataValidationError("F test needs at least two groups")
    if n <= g:
        raise DataValidationError(f"F test needs more observations ({n}) than groups ({g})")

    grand = scores.mean()
    between = 0.0
    within = 0.0
    for level in levels:
        member = scores[labels == level]
        between += member.size * (member.mean() - grand) ** 2
        within += float(np.sum((member - member.mean()) ** 2))

    df_between, df_within = g - 1, n - g
    if within == 0.0:
        if between == 0.0:
            return FTestResult(statistic=0.0, p_value=1.0, df_between=df_between, df_within=df_within)
        return FTestResult(statistic=math.inf, p_value=0.0, df_between=df_between, df_within=df_within)

    statistic = (between / df_between) / (within / df_within)
    p_value = float(f_distribution.sf(statistic, df_between, df_within))
    return FTestResult(statistic=statistic, p_value=p_value, df_between=df_between, df_within=df_within)


def permute_columns(data: BinaryDataMatrix, rng: np.random.Generator) -> BinaryDataMatrix:
    """Permute the rows of every column independently, mask included."""
    values = np.empty_like(data.values)
    mask = np.empty_like(data.mask)
    for j in range(data.d):
        order = rng.permutation(data.n)
        values[:, j] = data.values[order, j]
        mask[:, j] = data.mask[order, j]
    return BinaryDataMatrix(values=values, mask=mask, col_kind=data.col_kind, column_names=data.column_names)


def permutation_f_test(
    data: BinaryDataMatrix,
    config: FitConfig,
    labels: Sequence,
    seed: int = 0,
    components: Optional[Sequence[int]] = None,
) -> List[FTestResult]:
    """
    F tests of scores fitted to column-permuted data.

    Permuting each column breaks any association with the labels, so the
    resulting tests give a null reference for group_f_test.
    """
    rng = np.random.default_rng(seed)
    permuted = permute_columns(data, rng)
    result = solver.fit(permuted, config)
    components = range(config.k) if components is None else components
    return [group_f_test(result.model.A[:, l], labels) for l in components]
