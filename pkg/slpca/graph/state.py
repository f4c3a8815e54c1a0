"""
LangGraph workflow state definition.

Defines the SelectionState TypedDict which flows through the three
selection stages (rough λ, k scan, fine λ).
"""

from typing import Dict, List, Optional, TypedDict

from slpca.models.schemas import BinaryDataMatrix, FitConfig, FitResult, SelectionReport


class SelectionState(TypedDict, total=False):
    """
    State shared by the selection nodes.

    Fields:
        data: Data matrix being modelled
        config: Base fit configuration (k and λ are overwritten per stage)
        k_init: Rank used while choosing the rough λ
        k_max: Largest rank scanned in stage two
        rough_grid: λ grid of stage one
        fine_grid: λ grid of stage three
        warm_start: Chain λ fits along each grid
        n_jobs: Worker count for parallel fits
        lambda_rough: Stage-one winner
        k: Stage-two winner
        lambda_fine: Stage-three winner
        reports: Stage name -> SelectionReport
        fit: Final fit at (k, lambda_fine)
        n_fits: Number of fits performed
        execution_time_ms: Node execution times
    """

    # Input fields
    data: BinaryDataMatrix
    config: FitConfig
    k_init: int
    k_max: int
    rough_grid: List[float]
    fine_grid: List[float]
    warm_start: bool
    n_jobs: Optional[int]

    # Stage results
    lambda_rough: Optional[float]
    k: Optional[int]
    lambda_fine: Optional[float]
    reports: Dict[str, SelectionReport]
    fit: Optional[FitResult]

    # Metadata
    n_fits: int
    execution_time_ms: Dict[str, int]


def create_initial_state(
    data: BinaryDataMatrix,
    config: FitConfig,
    k_init: int,
    k_max: int,
    rough_grid: List[float],
    fine_grid: List[float],
    warm_start: bool = True,
    n_jobs: Optional[int] = None,
) -> SelectionState:
    """
    Create initial selection state.

    Returns:
        SelectionState with every result field empty
    """
    return SelectionState(
        data=data,
        config=config,
        k_init=k_init,
        k_max=k_max,
        rough_grid=list(rough_grid),
        fine_grid=list(fine_grid),
        warm_start=warm_start,
        n_jobs=n_jobs,
        lambda_rough=None,
        k=None,
        lambda_fine=None,
        reports={},
        fit=None,
        n_fits=0,
        execution_time_ms={},
    )


def validate_state(state: SelectionState) -> bool:
    """
    Basic validation of state structure.

    Args:
        state: SelectionState to validate

    Returns:
        True if state is valid
    """
    required_fields = ["data", "config", "k_init", "k_max", "rough_grid", "fine_grid"]
    for field in required_fields:
        if field not in state:
            return False

    data = state["data"]
    limit = min(data.n, data.d)
    if not 1 <= state["k_init"] <= limit:
        return False
    if not 1 <= state["k_max"] <= limit:
        return False

    if not state["rough_grid"] or not state["fine_grid"]:
        return False

    return True
