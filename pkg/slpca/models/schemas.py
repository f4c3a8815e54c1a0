from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from slpca.config import settings


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class Link(str, Enum):
    """Link between canonical parameters and success probabilities"""
    LOGIT = "logit"
    PROBIT = "probit"


class Bound(str, Enum):
    """Quadratic majorizer of the logit negative log likelihood"""
    UNIFORM = "uniform"
    TIGHT = "tight"


class ColumnKind(str, Enum):
    """Per-column data type"""
    BINARY = "binary"
    CONTINUOUS = "continuous"


class ScoreUpdate(str, Enum):
    """Score-matrix update used inside a fit"""
    PROCRUSTES = "procrustes"
    QR = "qr"


class FitMode(str, Enum):
    """Penalty and rank combination fitted by the simulation runner"""
    REGULARIZED_K_TRUE = "regularized:k_true"
    REGULARIZED_K_LARGE = "regularized:k_large"
    REGULARIZED_SELECT = "regularized:select"
    NONREGULARIZED_K_TRUE = "nonregularized:k_true"
    NONREGULARIZED_K_LARGE = "nonregularized:k_large"

    @property
    def regularized(self) -> bool:
        return self.value.startswith("regularized")

    @property
    def rank(self) -> str:
        return self.value.split(":")[1]


class BinaryDataMatrix(BaseModel):
    """n×d data matrix with an explicit missingness mask and column types"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray = Field(..., description="n×d cells; masked cells hold 0")
    mask: np.ndarray = Field(..., description="True where a cell is missing")
    col_kind: List[ColumnKind] = Field(..., description="Per-column type tag")
    column_names: Optional[List[str]] = Field(None, description="Header names, if any")

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        values = np.array(data.get("values"), dtype=float)
        if values.ndim != 2:
            raise ValueError(f"values must be a 2-d matrix, got {values.ndim} dimensions")
        mask = data.get("mask")
        mask = np.zeros(values.shape, dtype=bool) if mask is None else np.array(mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} does not match values {values.shape}")
        values[mask] = 0.0
        kinds = data.get("col_kind")
        if kinds is None:
            kinds = [ColumnKind.BINARY] * values.shape[1]
        data["values"] = _frozen(values)
        data["mask"] = _frozen(mask)
        data["col_kind"] = [ColumnKind(kind) for kind in kinds]
        return data

    @model_validator(mode="after")
    def _check(self) -> "BinaryDataMatrix":
        n, d = self.values.shape
        if n < 1 or d < 1:
            raise ValueError(f"data matrix must be at least 1×1, got {n}×{d}")
        if len(self.col_kind) != d:
            raise ValueError(f"col_kind has {len(self.col_kind)} entries for {d} columns")
        if self.column_names is not None and len(self.column_names) != d:
            raise ValueError(f"column_names has {len(self.column_names)} entries for {d} columns")
        observed = ~self.mask
        if not np.all(np.isfinite(self.values[observed])):
            raise ValueError("observed cells must be finite; flag missing cells in the mask")
        binary_cells = observed & self.binary_columns[None, :]
        bad = binary_cells & (self.values != 0.0) & (self.values != 1.0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValueError(f"binary cell ({i + 1}, {j + 1}) holds {self.values[i, j]!r}, expected 0 or 1")
        return self

    @classmethod
    def from_array(
        cls,
        values: Sequence,
        mask: Optional[Sequence] = None,
        col_kind: Optional[Sequence[Union[str, ColumnKind]]] = None,
        column_names: Optional[List[str]] = None,
    ) -> "BinaryDataMatrix":
        """Build from an array in which NaN marks a missing cell."""
        array = np.array(values, dtype=float)
        nan_mask = np.isnan(array)
        if mask is not None:
            nan_mask = nan_mask | np.array(mask, dtype=bool)
        return cls(values=array, mask=nan_mask, col_kind=col_kind, column_names=column_names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return ~self.mask

    @property
    def has_missing(self) -> bool:
        return bool(self.mask.any())

    @property
    def binary_columns(self) -> np.ndarray:
        return np.array([kind == ColumnKind.BINARY for kind in self.col_kind], dtype=bool)

    @property
    def continuous_columns(self) -> np.ndarray:
        return ~self.binary_columns

    @property
    def has_continuous(self) -> bool:
        return bool(self.continuous_columns.any())

    @property
    def q(self) -> np.ndarray:
        """Sign matrix 2y−1 for binary cells, computed on demand."""
        return 2.0 * self.values - 1.0


class SlpcaModel(BaseModel):
    """Fitted intercept, scores and sparse loadings"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, populate_by_name=True)

    mu: np.ndarray = Field(..., description="Length-d intercept on the link scale")
    A: np.ndarray = Field(..., description="n×k principal component scores")
    B: np.ndarray = Field(..., description="d×k principal component loadings")
    link: Link = Field(default=Link.LOGIT)
    lambda_: List[float] = Field(..., alias="lambda", description="Per-component penalty")
    sigma2: Optional[float] = Field(None, gt=0.0, description="Residual variance of continuous columns")

    @field_validator("mu", mode="before")
    @classmethod
    def _vector(cls, value: Any) -> np.ndarray:
        return _frozen(np.array(value, dtype=float).reshape(-1))

    @field_validator("A", "B", mode="before")
    @classmethod
    def _matrix(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=float)
        if array.ndim == 1:
            array = array.reshape(-1, 1)
        if array.ndim != 2:
            raise ValueError("score and loading matrices must be 2-d")
        return _frozen(array)

    @model_validator(mode="after")
    def _check(self) -> "SlpcaModel":
        if self.B.shape[0] != self.mu.shape[0]:
            raise ValueError(f"B has {self.B.shape[0]} rows but mu has length {self.mu.shape[0]}")
        if self.A.shape[1] != self.B.shape[1]:
            raise ValueError(f"A has {self.A.shape[1]} columns but B has {self.B.shape[1]}")
        if len(self.lambda_) != self.k:
            raise ValueError(f"lambda has {len(self.lambda_)} entries for k={self.k}")
        if any(value < 0 for value in self.lambda_):
            raise ValueError("lambda entries must be nonnegative")
        return self

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.B))


class FitConfig(BaseModel):
    """Algorithm controls for one fit"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    k: int = Field(..., ge=1, description="Target rank")
    bound: Bound = Field(default=Bound.UNIFORM)
    link: Link = Field(default=Link.LOGIT)
    lambda_: Union[float, List[float]] = Field(default=0.0, alias="lambda")
    tol: float = Field(default_factory=lambda: settings.tol, gt=0.0)
    max_iter: int = Field(default_factory=lambda: settings.max_iter, ge=1)
    accelerate: bool = Field(default_factory=lambda: settings.accelerate)
    restarts: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    zero_eps: float = Field(default_factory=lambda: settings.zero_eps, gt=0.0)
    prob_clamp: float = Field(default_factory=lambda: settings.prob_clamp, gt=0.0, lt=0.5)
    score_update: ScoreUpdate = Field(default=ScoreUpdate.PROCRUSTES)

    @model_validator(mode="after")
    def _check_lambda(self) -> "FitConfig":
        values = [self.lambda_] if isinstance(self.lambda_, (int, float)) else list(self.lambda_)
        if any(value < 0 for value in values):
            raise ValueError("lambda entries must be nonnegative")
        if len(values) not in (1, self.k):
            raise ValueError(f"lambda has {len(values)} entries for k={self.k}")
        return self

    def penalty_vector(self) -> np.ndarray:
        """Length-k penalty, broadcasting a scalar."""
        if isinstance(self.lambda_, (int, float)):
            return np.full(self.k, float(self.lambda_))
        values = np.array(self.lambda_, dtype=float)
        return np.full(self.k, values[0]) if values.size == 1 else values

    def with_updates(self, **changes: Any) -> "FitConfig":
        """Copy with validated changes."""
        data = self.model_dump(by_alias=True)
        if "lambda_" in changes:
            changes["lambda"] = changes.pop("lambda_")
        data.update(changes)
        return FitConfig(**data)


class WorkingState(BaseModel):
    """Working responses, weights and parameter iterate of one MM cycle"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    X: np.ndarray = Field(..., description="n×d working responses, imputed where missing")
    W: np.ndarray = Field(..., description="n×d majorizer weights")
    mu: np.ndarray
    A: np.ndarray
    B: np.ndarray
    iter: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _check(self) -> "WorkingState":
        if self.X.shape != self.W.shape:
            raise ValueError("X and W must share a shape")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("working responses must be finite")
        if np.any(self.W <= 0):
            raise ValueError("working weights must be positive")
        return self

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.W == self.W.flat[0]))


class FitResult(BaseModel):
    """Fitted model plus the penalized objective trace"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    model: SlpcaModel
    objective_trace: List[float] = Field(..., description="Objective at iterate 0..iterations")
    iterations: int = Field(..., ge=0)
    converged: bool
    nnz: int = Field(..., ge=0)
    restart: int = Field(default=0, ge=0)

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]

    def is_monotone(self, rtol: float = 1e-9) -> bool:
        trace = np.asarray(self.objective_trace)
        if trace.size < 2:
            return True
        return bool(np.all(trace[1:] <= trace[:-1] + rtol * np.abs(trace[:-1])))


class SelectionRow(BaseModel):
    """One grid point of a BIC search"""
    value: float = Field(..., description="λ or k at this grid point")
    bic: float
    loglik: float
    dof: int = Field(..., ge=0)
    nnz: int = Field(..., ge=0)
    objective: float
    iterations: int = Field(..., ge=0)
    converged: bool


class SelectionReport(BaseModel):
    """BIC grid for λ or k together with the winning fit"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    parameter: str = Field(..., description="'lambda' or 'k'")
    stage: str = Field(..., description="Stage that produced this report")
    grid: List[SelectionRow] = Field(default_factory=list)
    chosen: Optional[float] = None
    best: Optional[FitResult] = Field(None, exclude=True)


class StagedSelection(BaseModel):
    """Outcome of the three-stage (λ, k, λ) search"""

    model_config = ConfigDict(arbitrary_types_allowed=True, populate_by_name=True)

    k: int
    lambda_: float = Field(..., alias="lambda")
    rough: SelectionReport
    k_scan: SelectionReport
    fine: SelectionReport
    fit: FitResult = Field(..., exclude=True)
    n_fits: int


class SubspaceAngle(BaseModel):
    """Largest principal angle between two column spaces, in degrees"""
    degrees: float = Field(..., ge=0.0, le=90.0)


class BootstrapEnvelope(BaseModel):
    """Per-cell 5%/95% bootstrap quantiles, ordered by the point estimates"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    order: np.ndarray = Field(..., description="Flat cell indices sorted by point estimate")
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_success: int = Field(..., ge=0)
    n_failed: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _check(self) -> "BootstrapEnvelope":
        if np.any(self.lower > self.upper):
            raise ValueError("lower quantile exceeds upper quantile")
        if np.any(self.lower < 0.0) or np.any(self.upper > 1.0):
            raise ValueError("envelope must lie in [0, 1]")
        return self

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.upper - self.lower))

    def coverage(self) -> float:
        """Fraction of cells whose point estimate lies inside the envelope."""
        inside = (self.point >= self.lower) & (self.point <= self.upper)
        return float(np.mean(inside))


class CorrelationSummary(BaseModel):
    """Within-group pairwise correlations of residual columns"""
    correlations: List[float] = Field(default_factory=list)
    pairs: List[List[int]] = Field(default_factory=list)
    groups: List[int] = Field(default_factory=list)
    skipped: int = Field(0, ge=0, description="Pairs skipped for zero variance")


class FTestResult(BaseModel):
    """One-way ANOVA of scores on group labels"""
    statistic: float = Field(..., ge=0.0)
    p_value: float = Field(..., ge=0.0, le=1.0)
    df_between: int
    df_within: int


class SimulationSpec(BaseModel):
    """Planted sparse logistic PCA experiment"""

    n: int = Field(..., ge=1)
    d: int = Field(..., ge=1)
    k_true: int = Field(..., ge=1)
    snr: List[float]
    support: List[List[int]] = Field(..., description="0-based row indices of unit loadings per component")
    replicates: int = Field(..., ge=1)
    k_fit: Union[int, str] = Field(default="select")
    seed: int = Field(default=0, ge=0)
    baseline: Optional[float] = Field(None, gt=0.0)
    baseline_replicates: int = Field(default_factory=lambda: settings.baseline_replicates, ge=1)
    k_large: int = Field(default_factory=lambda: settings.k_large, ge=1)
    k_max: int = Field(default_factory=lambda: settings.k_max, ge=1, description="Largest rank scanned when k is selected")
    lambda_grid: List[float] = Field(default_factory=lambda: list(settings.fine_grid))
    modes: Optional[List[FitMode]] = None

    @field_validator("k_fit")
    @classmethod
    def _k_fit(cls, value: Union[int, str]) -> Union[int, str]:
        if isinstance(value, str):
            if value.strip().lower() == "select":
                return "select"
            value = int(value)
        if value < 1:
            raise ValueError("k_fit must be positive or 'select'")
        return value

    @model_validator(mode="after")
    def _check(self) -> "SimulationSpec":
        if len(self.snr) != self.k_true or len(self.support) != self.k_true:
            raise ValueError("snr and support need one entry per true component")
        if any(value <= 0 for value in self.snr):
            raise ValueError("snr entries must be positive")
        seen = set()
        for rows in self.support:
            for j in rows:
                if not 0 <= j < self.d:
                    raise ValueError(f"support index {j} outside 0..{self.d - 1}")
                if j in seen:
                    raise ValueError(f"support sets overlap at row {j}")
                seen.add(j)
        return self

    def resolved_modes(self) -> List[FitMode]:
        """Explicit modes, or the pair implied by k_fit."""
        if self.modes:
            return list(self.modes)
        if self.k_fit == "select":
            return [FitMode.REGULARIZED_SELECT]
        if self.k_fit == self.k_true:
            return [FitMode.REGULARIZED_K_TRUE, FitMode.NONREGULARIZED_K_TRUE]
        return [FitMode.REGULARIZED_K_LARGE, FitMode.NONREGULARIZED_K_LARGE]

    def rank_for(self, mode: FitMode) -> Optional[int]:
        if mode.rank == "k_true":
            return self.k_true
        if mode.rank == "k_large":
            return self.k_fit if isinstance(self.k_fit, int) and self.k_fit != self.k_true else self.k_large
        return None


class ReplicateRecord(BaseModel):
    """Scores of one fitted mode on one simulated data set"""
    replicate: int
    mode: FitMode
    angle: float
    false_positive: Optional[float] = None
    k: int
    lambda_: float = Field(..., alias="lambda")
    monotone: bool

    model_config = ConfigDict(populate_by_name=True)


class ModeSummary(BaseModel):
    """Mean and standard error over replicates for one mode"""
    mode: FitMode
    angle_mean: float
    angle_se: float
    fp_mean: Optional[float] = None
    fp_se: Optional[float] = None
    selected_k: Dict[int, int] = Field(default_factory=dict)
    n_ok: int
    n_failed: int


class ExperimentTable(BaseModel):
    """Aggregated simulation results"""
    spec: SimulationSpec
    baseline: float
    summaries: List[ModeSummary] = Field(default_factory=list)
    records: List[ReplicateRecord] = Field(default_factory=list)
    failures: int = 0

    def summary(self, mode: FitMode) -> ModeSummary:
        for item in self.summaries:
            if item.mode == mode:
                return item
        raise KeyError(mode)

    def paired_wins(self, better: FitMode, worse: FitMode) -> int:
        """Replicates in which `better` attains a strictly smaller angle than `worse`."""
        angles: Dict[FitMode, Dict[int, float]] = {better: {}, worse: {}}
        for record in self.records:
            if record.mode in angles:
                angles[record.mode][record.replicate] = record.angle
        shared = set(angles[better]) & set(angles[worse])
        return sum(1 for r in shared if angles[better][r] < angles[worse][r])


class RunManifest(BaseModel):
    """Provenance record written next to every command's outputs"""
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    input_digest: Optional[str] = None
    library_version: str
    build: Optional[str] = None
    started_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    finished_at: Optional[datetime] = None
