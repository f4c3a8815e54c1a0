from typing import List, Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict


def _rough_grid() -> List[float]:
    return [0.0] + [1.5 ** e for e in range(-18, -9)]


def _fine_grid() -> List[float]:
    return [round(0.0005 * i, 4) for i in range(21)]


class Settings(BaseSettings):
    """Library settings loaded from SLPCA_* environment variables"""

    model_config = SettingsConfigDict(
        env_prefix="SLPCA_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"
    log_dir: str = "logs"
    log_to_file: bool = False

    # Parallelism
    threads: int = 1

    # Solver defaults
    tol: float = 1e-6
    max_iter: int = 2000
    accelerate: bool = True
    zero_eps: float = 1e-10
    prob_clamp: float = 1e-12
    ridge: float = 1e-10
    tight_origin: float = 1e-4
    init_prob_clip: Tuple[float, float] = (0.05, 0.95)
    init_loading_sd: float = 0.1
    sigma2_init: float = 1.0
    sigma2_floor: float = 1e-8
    mills_cutoff: float = -8.0
    mills_depth: int = 60

    # Likelihood accumulation switches to math.fsum above this many cells
    fsum_threshold: int = 100_000

    # Model selection
    k_init: int = 30
    rough_grid: List[float] = _rough_grid()
    fine_grid: List[float] = _fine_grid()
    bic_tie_rtol: float = 1e-12

    # Evaluation / simulation
    n_boot: int = 100
    bootstrap_min_success: float = 0.8
    baseline_replicates: int = 100
    k_large: int = 30
    k_max: int = 10

    # Output
    float_digits: int = 17
    schema_suffix: str = ".schema.json"


# Singleton instance
settings = Settings()
