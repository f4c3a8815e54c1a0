"""
Majorization–Minimization engine for sparse logistic PCA.

Each cycle replaces the negative log likelihood by a weighted quadratic
upper bound that touches it at the current iterate, replaces |b| by
(b² + b_m²)/(2|b_m|), and minimizes the bound block by block:

1. Working responses and weights for the current canonical parameters
2. Missing cells imputed with their current fitted values
3. Intercept (weighted column means)
4. Scores (orthonormal columns)
5. Loadings (component-wise shrinkage or a small weighted ridge solve)
6. Residual variance of continuous columns, when present

Every step decreases the bound, so the penalized objective never
increases.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit, log_ndtr, ndtri
from scipy.stats import norm
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from slpca.config import settings
from slpca.models.schemas import (
    BinaryDataMatrix,
    Bound,
    FitConfig,
    FitResult,
    Link,
    ScoreUpdate,
    SlpcaModel,
    WorkingState,
)
from slpca.services import likelihood
from slpca.services.errors import (
    DataValidationError,
    DegenerateFactorError,
    DimensionMismatchError,
    SlpcaError,
)

logger = logging.getLogger(__name__)

UNIFORM_WEIGHT = 0.125
PROBIT_WEIGHT = 0.5


def _is_uniform(W: np.ndarray) -> bool:
    return bool(np.all(W == W.flat[0]))


# ---------------------------------------------------------------------------
# Working values
# ---------------------------------------------------------------------------

def working_values_uniform(theta_m: np.ndarray, data: BinaryDataMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """
    Working responses under the uniform logit bound.

    x = θ + 4q{1 − π(qθ)}, w = 1/8. Missing cells are filled later by
    impute_missing.
    """
    q = data.q
    X = theta_m + 4.0 * q * expit(-q * theta_m)
    W = np.full(theta_m.shape, UNIFORM_WEIGHT)
    return X, W


def tight_weights(theta_m: np.ndarray, origin: Optional[float] = None) -> np.ndarray:
    """
    Curvature {2π(θ)−1}/(4θ) = tanh(θ/2)/(4θ) of the tight logit bound.

    Near the origin the analytic limit 1/8 is used.
    """
    origin = settings.tight_origin if origin is None else origin
    small = np.abs(theta_m) < origin
    safe = np.where(small, 1.0, theta_m)
    return np.where(small, UNIFORM_WEIGHT, np.tanh(safe / 2.0) / (4.0 * safe))


def working_values_tight(theta_m: np.ndarray, data: BinaryDataMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """
    Working responses under the tight logit bound.

    w = {2π(θ)−1}/(4θ) (q cancels), x = θ + q{1 − π(qθ)}/(2w).
    """
    q = data.q
    W = tight_weights(theta_m)
    X = theta_m + q * expit(-q * theta_m) / (2.0 * W)
    return X, W


def mills_ratio(t: np.ndarray, cutoff: Optional[float] = None, depth: Optional[int] = None) -> np.ndarray:
    """
    φ(t)/Φ(t), stable far into the lower tail.

    Above the cutoff the ratio comes from log densities; below it a
    continued fraction in u = −t is evaluated from the tail:
    r = u + 1/(u + 2/(u + 3/(u + ...))).
    """
    cutoff = settings.mills_cutoff if cutoff is None else cutoff
    depth = settings.mills_depth if depth is None else depth
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)

    upper = t >= cutoff
    out[upper] = np.exp(norm.logpdf(t[upper]) - log_ndtr(t[upper]))

    lower = ~upper
    if lower.any():
        u = -t[lower]
        tail = np.zeros_like(u)
        for k in range(depth, 1, -1):
            tail = k / (u + tail)
        out[lower] = u + 1.0 / (u + tail)
    return out


def working_values_probit(theta_m: np.ndarray, data: BinaryDataMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """Probit working responses x = θ + q·φ(qθ)/Φ(qθ), w = 1/2."""
    q = data.q
    X = theta_m + q * mills_ratio(q * theta_m)
    W = np.full(theta_m.shape, PROBIT_WEIGHT)
    return X, W


def working_values_gaussian(
    data: BinaryDataMatrix,
    col: Union[int, Sequence[int]],
    sigma2: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Working values of continuous columns: x = y, w = 1/σ².

    Args:
        data: Data matrix
        col: Column index or indices, all tagged continuous
        sigma2: Residual variance

    Returns:
        (X, W) restricted to the requested columns
    """
    if sigma2 is None or sigma2 <= 0:
        raise DataValidationError(f"sigma2 must be positive, got {sigma2}")
    cols = np.atleast_1d(np.asarray(col, dtype=int))
    if not np.all(data.continuous_columns[cols]):
        raise DataValidationError(f"columns {cols.tolist()} are not all continuous")
    X = data.values[:, cols].copy()
    W = np.full(X.shape, 1.0 / sigma2)
    if np.ndim(col) == 0:
        return X[:, 0], W[:, 0]
    return X, W


def working_values(
    theta_m: np.ndarray,
    data: BinaryDataMatrix,
    link: Link = Link.LOGIT,
    bound: Bound = Bound.UNIFORM,
    sigma2: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Working values for every column, chosen per link, bound and column kind."""
    if Link(link) == Link.PROBIT:
        if Bound(bound) == Bound.TIGHT:
            logger.debug("Tight bound is a logit construction; probit uses curvature 1/2")
        X, W = working_values_probit(theta_m, data)
    elif Bound(bound) == Bound.TIGHT:
        X, W = working_values_tight(theta_m, data)
    else:
        X, W = working_values_uniform(theta_m, data)

    if data.has_continuous:
        cols = np.flatnonzero(data.continuous_columns)
        X[:, cols], W[:, cols] = working_values_gaussian(data, cols, sigma2)
    return X, W


def impute_missing(X: np.ndarray, theta_m: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked cells of X by the current fitted values."""
    if X.shape != theta_m.shape or X.shape != mask.shape:
        raise DimensionMismatchError(
            f"X {X.shape}, theta {theta_m.shape} and mask {mask.shape} must share a shape"
        )
    return np.where(mask, theta_m, X)


# ---------------------------------------------------------------------------
# Block updates
# ---------------------------------------------------------------------------

def update_intercept(X: np.ndarray, W: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    Intercept update from x† = x − aᵀb.

    Uniform weights give plain column means, otherwise weighted means.
    """
    residual = X - A @ B.T
    if _is_uniform(W):
        return residual.mean(axis=0)
    totals = W.sum(axis=0)
    if np.any(totals <= 0):
        raise DegenerateFactorError("zero total weight in a column")
    return (W * residual).sum(axis=0) / totals


class _SingularSystem(np.linalg.LinAlgError):
    pass


def _solve_batched(gram: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    k = gram.shape[-1]
    system = gram + ridge * np.eye(k)
    if np.any(np.linalg.cond(system) > 1.0 / np.finfo(float).eps):
        raise _SingularSystem("ill-conditioned normal equations")
    solution = np.linalg.solve(system, rhs[..., None])[..., 0]
    if not np.all(np.isfinite(solution)):
        raise _SingularSystem("non-finite solution")
    return solution


def _log_ridge_fallback(retry_state) -> None:
    logger.warning(f"Score normal equations singular; retrying with ridge {settings.ridge:g}")


def update_scores(
    X: np.ndarray,
    W: np.ndarray,
    mu: np.ndarray,
    B: np.ndarray,
    ridge: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise weighted least-squares scores, orthonormalized by QR.

    Solves (BᵀW_iB)a_i = BᵀW_i x*_i with x* = x − μ, then returns Q and
    the compensated loadings BRᵀ so that ABᵀ is unchanged. A singular
    system is retried once with a small ridge.

    Args:
        X: n×d working responses
        W: n×d weights
        mu: Length-d intercept
        B: d×k loadings

    Returns:
        (A, B_absorbed) with orthonormal A
    """
    ridge = settings.ridge if ridge is None else ridge
    Xs = X - mu[None, :]
    if _is_uniform(W):
        gram = (B.T @ B)[None, :, :]
        rhs = Xs @ B
    else:
        gram = np.einsum("jk,ij,jl->ikl", B, W, B)
        rhs = (W * Xs) @ B

    try:
        for attempt in Retrying(
            stop=stop_after_attempt(2),
            retry=retry_if_exception_type(np.linalg.LinAlgError),
            before_sleep=_log_ridge_fallback,
            reraise=True,
        ):
            with attempt:
                level = 0.0 if attempt.retry_state.attempt_number == 1 else ridge
                raw = _solve_batched(gram, rhs, level)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFactorError(f"score update failed after ridge fallback: {exc}") from exc

    Q, R = np.linalg.qr(raw)
    return Q, B @ R.T


def update_scores_procrustes(
    X: np.ndarray,
    W: np.ndarray,
    mu: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
) -> np.ndarray:
    """
    Orthonormal score update A = UVᵀ from the SVD of X̃*B.

    With non-uniform weights the score surrogate is bounded once more with
    curvature max(W), which turns it into an unweighted problem around
    X̃* = ABᵀ + (W/max W)(X* − ABᵀ).
    """
    Xs = X - mu[None, :]
    if not _is_uniform(W):
        fitted = A @ B.T
        Xs = fitted + (W / W.max()) * (Xs - fitted)
    U, _, Vt = np.linalg.svd(Xs @ B, full_matrices=False)
    return U @ Vt


def _is_orthonormal(A: np.ndarray) -> bool:
    return bool(np.allclose(A.T @ A, np.eye(A.shape[1]), atol=1e-8))


def update_loadings(
    X: np.ndarray,
    W: np.ndarray,
    mu: np.ndarray,
    A: np.ndarray,
    B_m: np.ndarray,
    lam: Union[float, Sequence[float], np.ndarray],
    n: int,
    zero_eps: Optional[float] = None,
) -> np.ndarray:
    """
    Loading update with the L1 penalty majorized at B_m.

    Uniform weight w0 and orthonormal A give component-wise shrinkage
    b = |b_m|·c/(|b_m| + nλ/(2w0)) with c = Aᵀx*_j, i.e. 4nλ for the logit
    bound and nλ for probit. Otherwise each row solves
    (AᵀW_jA + n·D_j)b_j = AᵀW_j x*_j with D_j = diag(λ/(2|b_m|)).
    Penalized loadings with |b_m| < zero_eps are set to exactly zero.

    Args:
        X: n×d working responses
        W: n×d weights
        mu: Length-d intercept
        A: n×k scores
        B_m: d×k loadings at the current iterate
        lam: Length-k penalty (scalar broadcast)
        n: Row count that scales the penalty
        zero_eps: Absorption threshold

    Returns:
        d×k loadings
    """
    zero_eps = settings.zero_eps if zero_eps is None else zero_eps
    k = B_m.shape[1]
    lam = np.broadcast_to(np.asarray(lam, dtype=float).reshape(-1), (k,))
    Xs = X - mu[None, :]
    magnitude = np.abs(B_m)
    penalized = lam[None, :] > 0
    absorbed = penalized & (magnitude < zero_eps)

    if _is_uniform(W) and _is_orthonormal(A):
        w0 = float(W.flat[0])
        C = Xs.T @ A
        shrink = np.where(
            penalized,
            magnitude / np.where(absorbed, 1.0, magnitude + n * lam[None, :] / (2.0 * w0)),
            1.0,
        )
        B = shrink * C
    else:
        gram = np.einsum("ik,ij,il->jkl", A, W, A)
        rhs = (W * Xs).T @ A
        active_mag = np.where(absorbed | ~penalized, 1.0, magnitude)
        diag = np.where(penalized & ~absorbed, n * lam[None, :] / (2.0 * active_mag), 0.0)
        gram = gram + diag[:, :, None] * np.eye(k)[None, :, :]
        keep = ~absorbed
        gram = gram * keep[:, :, None] * keep[:, None, :]
        gram = gram + np.eye(k)[None, :, :] * absorbed[:, :, None]
        rhs = np.where(absorbed, 0.0, rhs)
        try:
            B = np.linalg.solve(gram, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise DegenerateFactorError(f"loading update singular: {exc}") from exc

    return np.where(absorbed, 0.0, B)


# ---------------------------------------------------------------------------
# Majorizer
# ---------------------------------------------------------------------------

def majorizer_value(
    data: BinaryDataMatrix,
    model: SlpcaModel,
    tangent: SlpcaModel,
    bound: Bound = Bound.UNIFORM,
    prob_clamp: Optional[float] = None,
    zero_eps: Optional[float] = None,
) -> float:
    """
    Quadratic upper bound g(model | tangent) of the penalized objective.

    Per observed cell: loss(θ_m) + w(θ − x)² − w(θ_m − x)². Missing cells
    contribute w(θ − θ_m)². The penalty term is n·Σ λ(b² + b_m²)/(2|b_m|);
    loadings absorbed at zero are constrained to stay there. At
    model == tangent the bound equals the objective. The residual variance
    of continuous columns is held at the tangent's value.
    """
    zero_eps = settings.zero_eps if zero_eps is None else zero_eps
    likelihood.check_dimensions(data, model)
    likelihood.check_dimensions(data, tangent)
    theta = likelihood.canonical_matrix(model)
    theta_m = likelihood.canonical_matrix(tangent)
    X, W = working_values(theta_m, data, tangent.link, bound, tangent.sigma2)
    X = impute_missing(X, theta_m, data.mask)
    loss_m = -likelihood.cell_log_likelihood(data, theta_m, tangent.link, tangent.sigma2, prob_clamp)
    cells = loss_m + W * (theta - X) ** 2 - W * (theta_m - X) ** 2
    data_term = likelihood.sum_cells(cells)

    lam = np.asarray(tangent.lambda_, dtype=float)
    magnitude = np.abs(tangent.B)
    penalized = lam[None, :] > 0
    absorbed = penalized & (magnitude < zero_eps)
    if np.any(absorbed & (model.B != 0)):
        return math.inf
    active = penalized & ~absorbed
    safe = np.where(active, magnitude, 1.0)
    surrogate = np.where(active, (model.B ** 2 + tangent.B ** 2) / (2.0 * safe), 0.0)
    penalty = float(np.sum(lam[None, :] * surrogate))
    return data_term + data.n * penalty


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------

def _initial_intercept(data: BinaryDataMatrix, link: Link) -> np.ndarray:
    low, high = settings.init_prob_clip
    observed = data.observed
    counts = observed.sum(axis=0)
    sums = np.where(observed, data.values, 0.0).sum(axis=0)
    means = np.divide(sums, counts, out=np.full(data.d, 0.5), where=counts > 0)
    clipped = np.clip(means, low, high)
    mu = ndtri(clipped) if Link(link) == Link.PROBIT else np.log(clipped / (1.0 - clipped))
    cont = data.continuous_columns
    if cont.any():
        cont_means = np.divide(sums, counts, out=np.zeros(data.d), where=counts > 0)
        mu = np.where(cont, cont_means, mu)
    return mu


def _initialize(
    data: BinaryDataMatrix,
    config: FitConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[float]]:
    mu = _initial_intercept(data, config.link)
    A, _ = np.linalg.qr(rng.standard_normal((data.n, config.k)))
    B = rng.normal(0.0, settings.init_loading_sd, size=(data.d, config.k))
    sigma2 = settings.sigma2_init if data.has_continuous else None
    return mu, A, B, sigma2


def _from_init(
    data: BinaryDataMatrix,
    config: FitConfig,
    init: SlpcaModel,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[float]]:
    likelihood.check_dimensions(data, init)
    if init.k != config.k:
        raise DataValidationError(f"warm start has k={init.k} but config asks for k={config.k}")
    sigma2 = init.sigma2
    if data.has_continuous and sigma2 is None:
        sigma2 = settings.sigma2_init
    return init.mu.copy(), init.A.copy(), init.B.copy(), sigma2


def _update_sigma2(data: BinaryDataMatrix, theta: np.ndarray, current: Optional[float]) -> Optional[float]:
    if not data.has_continuous:
        return None
    cells = data.observed & data.continuous_columns[None, :]
    count = int(cells.sum())
    if count == 0:
        return current
    rss = float(np.sum(((data.values - theta) ** 2)[cells]))
    return max(rss / count, settings.sigma2_floor)


def _objective(
    data: BinaryDataMatrix,
    theta: np.ndarray,
    B: np.ndarray,
    lam: np.ndarray,
    sigma2: Optional[float],
    config: FitConfig,
) -> float:
    loglik = likelihood.log_likelihood_theta(data, theta, config.link, sigma2, config.prob_clamp)
    return likelihood.objective_from_parts(loglik, data.n, likelihood.penalty_value(B, lam))


def _scores_and_loadings(
    X: np.ndarray,
    W: np.ndarray,
    mu: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    lam: np.ndarray,
    n: int,
    zero_eps: float,
    score_update: ScoreUpdate,
) -> Tuple[np.ndarray, np.ndarray]:
    if score_update == ScoreUpdate.QR:
        A_new, _ = update_scores(X, W, mu, B)
    else:
        A_new = update_scores_procrustes(X, W, mu, A, B)
    return A_new, update_loadings(X, W, mu, A_new, B, lam, n, zero_eps)


def mm_step(
    data: BinaryDataMatrix,
    config: FitConfig,
    mu: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    sigma2: Optional[float],
    iteration: int = 0,
) -> Tuple[WorkingState, Optional[float]]:
    """
    One full MM cycle.

    A QR score step that would raise the penalized objective is replaced
    by the Procrustes step, which always descends.

    Returns:
        Working state holding the new (μ, A, B) and the updated σ²
    """
    lam = config.penalty_vector()
    theta_m = mu[None, :] + A @ B.T
    X, W = working_values(theta_m, data, config.link, config.bound, sigma2)
    X = impute_missing(X, theta_m, data.mask)

    mu_new = update_intercept(X, W, A, B)
    A_new, B_new = _scores_and_loadings(
        X, W, mu_new, A, B, lam, data.n, config.zero_eps, config.score_update
    )
    sigma2_new = _update_sigma2(data, mu_new[None, :] + A_new @ B_new.T, sigma2)

    if config.score_update == ScoreUpdate.QR:
        before = _objective(data, theta_m, B, lam, sigma2, config)
        after = _objective(data, mu_new[None, :] + A_new @ B_new.T, B_new, lam, sigma2_new, config)
        if after > before:
            logger.debug(f"iter {iteration}: QR step raised the objective; using the Procrustes step")
            A_new, B_new = _scores_and_loadings(
                X, W, mu_new, A, B, lam, data.n, config.zero_eps, ScoreUpdate.PROCRUSTES
            )
            sigma2_new = _update_sigma2(data, mu_new[None, :] + A_new @ B_new.T, sigma2)

    state = WorkingState(X=X, W=W, mu=mu_new, A=A_new, B=B_new, iter=iteration)
    return state, sigma2_new


def _polar(A: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(A, full_matrices=False)
    return U @ Vt


def _extrapolate(
    previous: Tuple[np.ndarray, np.ndarray, np.ndarray],
    current: Tuple[np.ndarray, np.ndarray, np.ndarray],
    beta: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Move past the latest MM iterate along its last step.

    Scores are projected back onto orthonormal columns and loadings that
    are exactly zero stay zero.
    """
    mu0, A0, B0 = previous
    mu1, A1, B1 = current
    mu = mu1 + beta * (mu1 - mu0)
    A = _polar(A1 + beta * (A1 - A0))
    B = np.where(B1 == 0.0, 0.0, B1 + beta * (B1 - B0))
    return mu, A, B


def _fit_once(
    data: BinaryDataMatrix,
    config: FitConfig,
    seed: np.random.SeedSequence,
    restart: int,
    init: Optional[SlpcaModel] = None,
) -> FitResult:
    rng = np.random.default_rng(seed)
    if init is not None:
        mu, A, B, sigma2 = _from_init(data, config, init)
    else:
        mu, A, B, sigma2 = _initialize(data, config, rng)
    lam = config.penalty_vector()

    previous = _objective(data, mu[None, :] + A @ B.T, B, lam, sigma2, config)
    trace: List[float] = [previous]
    converged = False
    iterations = 0
    momentum = 1.0
    accepted = 0

    for iteration in range(1, config.max_iter + 1):
        state, sigma2 = mm_step(data, config, mu, A, B, sigma2, iteration)
        current = _objective(data, state.mu[None, :] + state.A @ state.B.T, state.B, lam, sigma2, config)
        step = (state.mu, state.A, state.B)

        if config.accelerate:
            following = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum ** 2))
            beta = (momentum - 1.0) / following
            momentum = following
            if beta > 0.0:
                mu_x, A_x, B_x = _extrapolate((mu, A, B), step, beta)
                theta_x = mu_x[None, :] + A_x @ B_x.T
                sigma2_x = _update_sigma2(data, theta_x, sigma2)
                value = _objective(data, theta_x, B_x, lam, sigma2_x, config)
                if value <= current:
                    step, sigma2, current = (mu_x, A_x, B_x), sigma2_x, value
                    accepted += 1
                else:
                    momentum = 1.0

        mu, A, B = step
        trace.append(current)
        iterations = iteration
        logger.debug(f"restart {restart} iter {iteration}: objective {current:.10g}")

        if abs(previous - current) / (abs(previous) + 1.0) < config.tol:
            converged = True
            break
        previous = current

    if config.accelerate:
        logger.debug(f"restart {restart}: {accepted} of {iterations} extrapolated steps accepted")
    if not converged:
        logger.warning(
            f"Fit did not converge in {config.max_iter} iterations "
            f"(restart {restart}, objective {trace[-1]:.10g})"
        )

    model = SlpcaModel(
        mu=mu,
        A=A,
        B=B,
        link=config.link,
        lambda_=lam.tolist(),
        sigma2=sigma2,
    )
    return FitResult(
        model=model,
        objective_trace=trace,
        iterations=iterations,
        converged=converged,
        nnz=model.nnz,
        restart=restart,
    )


def fit(
    data: BinaryDataMatrix,
    config: FitConfig,
    init: Optional[SlpcaModel] = None,
    n_jobs: Optional[int] = None,
) -> FitResult:
    """
    Fit sparse logistic PCA by Majorization–Minimization.

    Args:
        data: Binary or mixed data matrix, possibly with missing cells
        config: Rank, penalty, bound, link and stopping rule
        init: Warm-start model; when given a single run starts from it
        n_jobs: Workers for independent restarts (default settings.threads)

    Returns:
        FitResult of the restart with the lowest final objective
    """
    if config.k > min(data.n, data.d):
        raise DataValidationError(f"k={config.k} exceeds min(n, d)={min(data.n, data.d)}")

    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    if init is not None or config.restarts == 1:
        if init is not None and config.restarts > 1:
            logger.debug("Warm start given; running a single start")
        result = _fit_once(data, config, seeds[0], 0, init)
    else:
        jobs = n_jobs or settings.threads
        results = Parallel(n_jobs=jobs, prefer="threads")(
            delayed(_fit_once)(data, config, seed, index) for index, seed in enumerate(seeds)
        )
        result = min(results, key=lambda item: (item.final_objective, item.restart))

    logger.info(
        f"Fit k={config.k} lambda={config.lambda_}: {result.iterations} iterations, "
        f"converged={result.converged}, objective={result.final_objective:.10g}, nnz={result.nnz}"
    )
    return result


def safe_fit(data: BinaryDataMatrix, config: FitConfig, init: Optional[SlpcaModel] = None) -> Optional[FitResult]:
    """Fit, returning None on a library error (used by replicate loops)."""
    try:
        return fit(data, config, init=init, n_jobs=1)
    except SlpcaError as exc:
        logger.warning(f"Refit failed: {exc}")
        return None
