"""
BIC-based selection of the penalty λ and the rank k.

BIC(λ) = −2ℓ + log(n)·m(λ) with m(λ) = d + nk + |nonzero loadings|.
The three-stage (λ, k, λ) search lives in slpca.graph.workflow and is
re-exported here as select_k.
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from slpca.config import settings
from slpca.models.schemas import (
    BinaryDataMatrix,
    FitConfig,
    FitResult,
    SelectionReport,
    SelectionRow,
    SlpcaModel,
    StagedSelection,
)
from slpca.services.errors import DataValidationError, SelectionAbortedError, SlpcaError
from slpca.services.likelihood import log_likelihood
from slpca.services.solver import fit

logger = logging.getLogger(__name__)


def degrees_of_freedom(
    model: SlpcaModel,
    n: Optional[int] = None,
    d: Optional[int] = None,
    k: Optional[int] = None,
) -> int:
    """m = d + n·k + number of nonzero loadings."""
    n = model.n if n is None else n
    d = model.d if d is None else d
    k = model.k if k is None else k
    return d + n * k + model.nnz


def bic(data: BinaryDataMatrix, result: FitResult) -> float:
    """−2ℓ + log(n)·m, with the observed-data likelihood under missingness."""
    loglik = log_likelihood(data, result.model)
    return -2.0 * loglik + math.log(data.n) * degrees_of_freedom(result.model, data.n, data.d)


def grid_row(data: BinaryDataMatrix, value: float, result: FitResult) -> SelectionRow:
    loglik = log_likelihood(data, result.model)
    dof = degrees_of_freedom(result.model, data.n, data.d)
    return SelectionRow(
        value=value,
        bic=-2.0 * loglik + math.log(data.n) * dof,
        loglik=loglik,
        dof=dof,
        nnz=result.nnz,
        objective=result.final_objective,
        iterations=result.iterations,
        converged=result.converged,
    )


def choose(rows: Sequence[SelectionRow], prefer_largest: bool) -> SelectionRow:
    """
    Minimal-BIC row; ties go to the largest value (λ) or the smallest (k).
    """
    best = min(row.bic for row in rows)
    ties = [row for row in rows if np.isclose(row.bic, best, rtol=settings.bic_tie_rtol, atol=0.0)]
    pick = max if prefer_largest else min
    return pick(ties, key=lambda row: row.value)


def _validated_grid(grid: Optional[Sequence[float]]) -> List[float]:
    values = list(settings.fine_grid if grid is None else grid)
    if not values:
        raise DataValidationError("lambda grid is empty")
    if any(value < 0 or not math.isfinite(value) for value in values):
        raise DataValidationError("lambda grid values must be finite and nonnegative")
    return sorted(set(float(value) for value in values))


def _finish(parameter: str, stage: str, rows: List[SelectionRow], fits: dict, prefer_largest: bool) -> SelectionReport:
    rows = sorted(rows, key=lambda row: row.value)
    winner = choose(rows, prefer_largest)
    return SelectionReport(
        parameter=parameter,
        stage=stage,
        grid=rows,
        chosen=winner.value,
        best=fits[winner.value],
    )


def select_lambda(
    data: BinaryDataMatrix,
    k: int,
    grid: Optional[Sequence[float]] = None,
    config: Optional[FitConfig] = None,
    warm_start: bool = True,
    n_jobs: Optional[int] = None,
    stage: str = "lambda",
) -> SelectionReport:
    """
    Grid search for λ at fixed k.

    With warm starts the grid is walked in ascending order, each fit
    starting from the previous one; zeros already absorbed stay zero, so
    the support can only shrink as λ grows. Fresh mode fits every grid
    point from its own random start and may run in parallel.

    Args:
        data: Data matrix
        k: Rank
        grid: λ values (default: the fine grid)
        config: Base fit configuration
        warm_start: Chain fits along the grid
        n_jobs: Workers in fresh mode
        stage: Stage name recorded in the report

    Returns:
        SelectionReport with one row per λ and the winning fit attached
    """
    values = _validated_grid(grid)
    base = (config or FitConfig(k=k)).with_updates(k=k, lambda_=0.0)
    rows: List[SelectionRow] = []
    fits = {}

    def aborted(message: str) -> SelectionAbortedError:
        report = SelectionReport(parameter="lambda", stage=stage, grid=sorted(rows, key=lambda r: r.value))
        return SelectionAbortedError(message, report=report)

    if warm_start:
        previous: Optional[SlpcaModel] = None
        for value in values:
            try:
                result = fit(data, base.with_updates(lambda_=value), init=previous)
            except SlpcaError as exc:
                raise aborted(f"fit at lambda={value:g} failed: {exc}") from exc
            previous = result.model
            fits[value] = result
            rows.append(grid_row(data, value, result))
    else:
        jobs = n_jobs or settings.threads

        def attempt(value: float):
            try:
                return value, fit(data, base.with_updates(lambda_=value), n_jobs=1), None
            except SlpcaError as exc:
                return value, None, exc

        outcomes = Parallel(n_jobs=jobs, prefer="threads")(delayed(attempt)(value) for value in values)
        failure = None
        for value, result, exc in outcomes:
            if exc is not None:
                failure = failure or (value, exc)
                continue
            fits[value] = result
            rows.append(grid_row(data, value, result))
        if failure is not None:
            value, exc = failure
            raise aborted(f"fit at lambda={value:g} failed: {exc}") from exc

    report = _finish("lambda", stage, rows, fits, prefer_largest=True)
    logger.info(f"Stage {stage}: k={k}, chose lambda={report.chosen:g} over {len(rows)} grid points")
    return report


def scan_k(
    data: BinaryDataMatrix,
    lam: float,
    k_values: Sequence[int],
    config: Optional[FitConfig] = None,
    n_jobs: Optional[int] = None,
    stage: str = "k_scan",
) -> SelectionReport:
    """
    BIC scan over ranks at fixed λ.

    Each rank is fitted from its own start; ties go to the smallest k.
    """
    ks = sorted(set(int(k) for k in k_values))
    if not ks:
        raise DataValidationError("k scan is empty")
    limit = min(data.n, data.d)
    if ks[0] < 1 or ks[-1] > limit:
        raise DataValidationError(f"k values must lie in 1..{limit}")
    base = config or FitConfig(k=ks[0])
    jobs = n_jobs or settings.threads

    def attempt(k: int):
        try:
            return k, fit(data, base.with_updates(k=k, lambda_=lam), n_jobs=1), None
        except SlpcaError as exc:
            return k, None, exc

    outcomes = Parallel(n_jobs=jobs, prefer="threads")(delayed(attempt)(k) for k in ks)
    rows: List[SelectionRow] = []
    fits = {}
    for k, result, exc in outcomes:
        if exc is not None:
            report = SelectionReport(parameter="k", stage=stage, grid=rows)
            raise SelectionAbortedError(f"fit at k={k} failed: {exc}", report=report) from exc
        fits[float(k)] = result
        rows.append(grid_row(data, float(k), result))

    report = _finish("k", stage, rows, fits, prefer_largest=False)
    logger.info(f"Stage {stage}: lambda={lam:g}, chose k={int(report.chosen)} over {len(rows)} ranks")
    return report


def select_k(data: BinaryDataMatrix, config: Optional[FitConfig] = None, **kwargs) -> StagedSelection:
    """Three-stage (λ, k, λ) search; see slpca.graph.workflow.select_k."""
    from slpca.graph.workflow import select_k as run_staged

    return run_staged(data, config, **kwargs)
