"""
Planted-model experiments.

Provides:
- Baseline noise level: mean score variance of rank-k fits to pure noise
- Data generation with SNR-calibrated score variances and unit loadings
- Batch runner comparing regularized and nonregularized fits by principal
  angle, false-positive rate and selected rank
"""

import logging
import math
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from slpca.config import settings
from slpca.models.schemas import (
    BinaryDataMatrix,
    ExperimentTable,
    FitConfig,
    FitMode,
    FitResult,
    ModeSummary,
    ReplicateRecord,
    SimulationSpec,
)
from slpca.services import evaluation, selection, solver
from slpca.services.errors import DataValidationError, ExperimentAbortedError, SlpcaError

logger = logging.getLogger(__name__)


def _stream(seed: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(replicate,))


def _fit_seed(stream: np.random.SeedSequence) -> int:
    return int(stream.generate_state(1)[0])


def score_variance(result: FitResult) -> float:
    """
    Mean sample variance of the scale-carrying scores UD, where UDVᵀ is the
    thin SVD of the fitted ABᵀ.
    """
    model = result.model
    U, s, _ = np.linalg.svd(model.A @ model.B.T, full_matrices=False)
    scores = U[:, :model.k] * s[:model.k]
    return float(np.mean(scores.var(axis=0, ddof=1)))


def baseline_noise_level(
    n: int,
    d: int,
    k: int,
    n_rep: Optional[int] = None,
    seed: int = 0,
    config: Optional[FitConfig] = None,
    n_jobs: Optional[int] = None,
) -> float:
    """
    Noise level that calibrates the SNR.

    Each replicate fits an unpenalized rank-k model to an n×d matrix of
    Bernoulli(1/2) cells; the result is the mean over replicates of the
    average score variance.

    Args:
        n: Rows
        d: Columns
        k: Rank
        n_rep: Replicates (default settings.baseline_replicates)
        seed: Base seed
        config: Fit controls (k and λ are overridden)
        n_jobs: Workers (default settings.threads)

    Returns:
        Positive noise level
    """
    n_rep = settings.baseline_replicates if n_rep is None else n_rep
    if n_rep < 1:
        raise DataValidationError("baseline needs at least one replicate")
    base = (config or FitConfig(k=k)).with_updates(k=k, lambda_=0.0)

    def replicate(index: int) -> Optional[float]:
        stream = _stream(seed, index)
        rng = np.random.default_rng(stream)
        data = BinaryDataMatrix(values=rng.integers(0, 2, size=(n, d)).astype(float))
        result = solver.safe_fit(data, base.with_updates(seed=_fit_seed(stream)))
        return None if result is None else score_variance(result)

    jobs = n_jobs or settings.threads
    outcomes = Parallel(n_jobs=jobs, prefer="threads")(delayed(replicate)(i) for i in range(n_rep))
    values = [value for value in outcomes if value is not None]
    if len(values) < n_rep:
        raise ExperimentAbortedError(
            f"{n_rep - len(values)} of {n_rep} baseline fits failed",
            partial=values,
        )

    level = float(np.mean(values))
    logger.info(f"Baseline noise level for n={n}, d={d}, k={k}: {level:.6g} over {n_rep} replicates")
    return level


def resolve_baseline(spec: SimulationSpec, n_jobs: Optional[int] = None) -> float:
    if spec.baseline is not None:
        return spec.baseline
    return baseline_noise_level(spec.n, spec.d, spec.k_true, spec.baseline_replicates, spec.seed, n_jobs=n_jobs)


def true_loadings(spec: SimulationSpec) -> np.ndarray:
    """d×k_true matrix with unit loadings on each support set."""
    B = np.zeros((spec.d, spec.k_true))
    for l, rows in enumerate(spec.support):
        B[rows, l] = 1.0
    return B


def generate_dataset(
    spec: SimulationSpec,
    replicate: int = 0,
    baseline: Optional[float] = None,
) -> Tuple[BinaryDataMatrix, np.ndarray, np.ndarray, np.ndarray]:
    """
    Draw one planted data set.

    Scores of component l are N(0, snr_l·baseline), loadings are the unit
    support indicators, μ = 0 and every cell is Bernoulli(π(θ)).

    Args:
        spec: Experiment definition
        replicate: Replicate index; each index has its own random stream
        baseline: Noise level (default spec.baseline, computed if absent)

    Returns:
        (data, A, B, mu)
    """
    baseline = resolve_baseline(spec) if baseline is None else baseline
    rng = np.random.default_rng(_stream(spec.seed, replicate))
    sd = np.sqrt(np.asarray(spec.snr, dtype=float) * baseline)
    A = rng.standard_normal((spec.n, spec.k_true)) * sd[None, :]
    B = true_loadings(spec)
    mu = np.zeros(spec.d)
    theta = mu[None, :] + A @ B.T
    values = (rng.random(theta.shape) < expit(theta)).astype(float)
    return BinaryDataMatrix(values=values), A, B, mu


def _fit_mode(
    data: BinaryDataMatrix,
    spec: SimulationSpec,
    mode: FitMode,
    config: FitConfig,
) -> Tuple[FitResult, float]:
    if mode == FitMode.REGULARIZED_SELECT:
        staged = selection.select_k(
            data,
            config,
            k_init=spec.k_large,
            k_max=min(spec.k_max, spec.n, spec.d),
            fine_grid=spec.lambda_grid,
            n_jobs=1,
        )
        return staged.fit, staged.lambda_

    k = spec.rank_for(mode)
    if mode.regularized:
        report = selection.select_lambda(data, k, spec.lambda_grid, config, n_jobs=1)
        return report.best, report.chosen
    return solver.fit(data, config.with_updates(k=k, lambda_=0.0), n_jobs=1), 0.0


def _score(
    replicate: int,
    mode: FitMode,
    result: FitResult,
    lam: float,
    B_true: np.ndarray,
    spec: SimulationSpec,
) -> ReplicateRecord:
    fitted = evaluation.nonzero_columns(result.model.B)
    if fitted.shape[1] == 0:
        logger.warning(f"Replicate {replicate} {mode.value}: every loading is zero")
        angle, fp = 90.0, None
    else:
        angle = evaluation.principal_angle(fitted, B_true).degrees
        truth = {(j, l) for l, rows in enumerate(spec.support) for j in rows}
        fp = evaluation.false_positive_rate(result.model.B, truth, by="variable")
    return ReplicateRecord(
        replicate=replicate,
        mode=mode,
        angle=angle,
        false_positive=fp,
        k=result.model.k,
        lambda_=lam,
        monotone=result.is_monotone(),
    )


def _standard_error(values: Sequence[float]) -> float:
    if len(values) < 2:
        return math.nan
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def summarize(mode: FitMode, records: List[ReplicateRecord], failed: int) -> ModeSummary:
    angles = [record.angle for record in records]
    fps = [record.false_positive for record in records if record.false_positive is not None]
    return ModeSummary(
        mode=mode,
        angle_mean=float(np.mean(angles)) if angles else math.nan,
        angle_se=_standard_error(angles),
        fp_mean=float(np.mean(fps)) if fps else None,
        fp_se=_standard_error(fps) if fps else None,
        selected_k=dict(sorted(Counter(record.k for record in records).items())),
        n_ok=len(records),
        n_failed=failed,
    )


def run_experiment(
    spec: SimulationSpec,
    modes: Optional[Sequence[FitMode]] = None,
    config: Optional[FitConfig] = None,
    n_jobs: Optional[int] = None,
) -> ExperimentTable:
    """
    Replicated comparison of fitting modes on planted data.

    Every replicate draws a data set and fits each mode: regularized modes
    choose λ by BIC (and k as well for the select mode), nonregularized
    modes fit λ = 0. Failed fits are logged, counted and excluded.

    Args:
        spec: Experiment definition
        modes: Modes to fit (default derived from spec.k_fit)
        config: Base fit controls
        n_jobs: Workers over replicates (default settings.threads)

    Returns:
        ExperimentTable with per-mode summaries and per-replicate records
    """
    if spec.replicates < 2:
        raise DataValidationError("standard errors need at least two replicates")
    modes = [FitMode(mode) for mode in (modes or spec.resolved_modes())]
    baseline = resolve_baseline(spec, n_jobs=n_jobs)
    base = config or FitConfig(k=1)
    B_true = true_loadings(spec)

    def replicate(index: int) -> Tuple[List[ReplicateRecord], List[FitMode]]:
        data, _, _, _ = generate_dataset(spec, index, baseline)
        stream = _stream(spec.seed, index).spawn(1)[0]
        replicate_config = base.with_updates(seed=_fit_seed(stream))
        records, failed = [], []
        for mode in modes:
            try:
                result, lam = _fit_mode(data, spec, mode, replicate_config)
                records.append(_score(index, mode, result, lam, B_true, spec))
            except SlpcaError as exc:
                logger.warning(f"Replicate {index} {mode.value} failed: {exc}")
                failed.append(mode)
        return records, failed

    jobs = n_jobs or settings.threads
    outcomes = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(replicate)(index) for index in range(spec.replicates)
    )

    records: List[ReplicateRecord] = []
    failures: Dict[FitMode, int] = {mode: 0 for mode in modes}
    for replicate_records, failed in outcomes:
        records.extend(replicate_records)
        for mode in failed:
            failures[mode] += 1

    summaries = [
        summarize(mode, [record for record in records if record.mode == mode], failures[mode])
        for mode in modes
    ]
    for item in summaries:
        logger.info(
            f"{item.mode.value}: angle {item.angle_mean:.3f} (se {item.angle_se:.3f}), "
            f"{item.n_ok} ok, {item.n_failed} failed"
        )
    return ExperimentTable(
        spec=spec,
        baseline=baseline,
        summaries=summaries,
        records=records,
        failures=sum(failures.values()),
    )
