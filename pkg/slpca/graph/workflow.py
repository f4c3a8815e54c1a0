"""
LangGraph workflow for the staged choice of rank and penalty.

Workflow Flow:
    Data + base config
        ↓
    [rough_lambda] → λ on the rough grid at k = k_init
        ↓
    [scan_k] → k = 1..k_max at the rough λ
        ↓
    [fine_lambda] → λ on the fine grid at the chosen k
        ↓
    StagedSelection with all three reports
"""

import logging
import time
from typing import Any, Dict, Optional, Sequence

from langgraph.graph import END, StateGraph

from slpca.config import settings
from slpca.graph.state import SelectionState, create_initial_state, validate_state
from slpca.models.schemas import BinaryDataMatrix, FitConfig, StagedSelection
from slpca.services import selection
from slpca.services.errors import DataValidationError

logger = logging.getLogger(__name__)


def _elapsed(state: Dict[str, Any], node: str, start: float) -> Dict[str, int]:
    times = dict(state.get("execution_time_ms", {}))
    times[node] = int((time.time() - start) * 1000)
    return times


def rough_lambda_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """Stage one: choose λ on the rough grid at k_init."""
    start = time.time()
    report = selection.select_lambda(
        state["data"],
        state["k_init"],
        state["rough_grid"],
        state["config"],
        warm_start=state.get("warm_start", True),
        n_jobs=state.get("n_jobs"),
        stage="rough_lambda",
    )
    logger.info(f"rough_lambda: k={state['k_init']} -> lambda={report.chosen:g}")
    return {
        "lambda_rough": report.chosen,
        "reports": {**state.get("reports", {}), "rough_lambda": report},
        "n_fits": state.get("n_fits", 0) + len(report.grid),
        "execution_time_ms": _elapsed(state, "rough_lambda", start),
    }


def scan_k_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """Stage two: scan k = 1..k_max at the rough λ."""
    start = time.time()
    report = selection.scan_k(
        state["data"],
        state["lambda_rough"],
        range(1, state["k_max"] + 1),
        state["config"],
        n_jobs=state.get("n_jobs"),
        stage="k_scan",
    )
    k = int(report.chosen)
    logger.info(f"scan_k: lambda={state['lambda_rough']:g} -> k={k}")
    return {
        "k": k,
        "reports": {**state.get("reports", {}), "k_scan": report},
        "n_fits": state.get("n_fits", 0) + len(report.grid),
        "execution_time_ms": _elapsed(state, "scan_k", start),
    }


def fine_lambda_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """Stage three: refine λ on the fine grid at the chosen k."""
    start = time.time()
    report = selection.select_lambda(
        state["data"],
        state["k"],
        state["fine_grid"],
        state["config"],
        warm_start=state.get("warm_start", True),
        n_jobs=state.get("n_jobs"),
        stage="fine_lambda",
    )
    logger.info(f"fine_lambda: k={state['k']} -> lambda={report.chosen:g}")
    return {
        "lambda_fine": report.chosen,
        "fit": report.best,
        "reports": {**state.get("reports", {}), "fine_lambda": report},
        "n_fits": state.get("n_fits", 0) + len(report.grid),
        "execution_time_ms": _elapsed(state, "fine_lambda", start),
    }


class SelectionWorkflowBuilder:
    """Build the staged selection graph."""

    @staticmethod
    def build() -> StateGraph:
        """
        Build the three-stage selection workflow.

        Returns:
            Compiled LangGraph StateGraph
        """
        # Create graph
        workflow = StateGraph(SelectionState)

        # Add nodes
        workflow.add_node("rough_lambda", rough_lambda_node)
        workflow.add_node("scan_k", scan_k_node)
        workflow.add_node("fine_lambda", fine_lambda_node)

        # Set entry point
        workflow.set_entry_point("rough_lambda")

        # Linear flow
        workflow.add_edge("rough_lambda", "scan_k")
        workflow.add_edge("scan_k", "fine_lambda")
        workflow.add_edge("fine_lambda", END)

        # Compile the graph
        return workflow.compile()


# Global workflow instance
_workflow = None


def get_workflow():
    """Get or create the compiled selection workflow"""
    global _workflow
    if _workflow is None:
        _workflow = SelectionWorkflowBuilder.build()
    return _workflow


def select_k(
    data: BinaryDataMatrix,
    config: Optional[FitConfig] = None,
    k_init: Optional[int] = None,
    k_max: Optional[int] = None,
    rough_grid: Optional[Sequence[float]] = None,
    fine_grid: Optional[Sequence[float]] = None,
    warm_start: bool = True,
    n_jobs: Optional[int] = None,
) -> StagedSelection:
    """
    Choose (k, λ) in three stages: λ at a large k, then k, then λ again.

    Args:
        data: Data matrix
        config: Base fit configuration
        k_init: Rank of stage one (default settings.k_init, capped at min(n, d))
        k_max: Largest rank of stage two (default k_init)
        rough_grid: λ grid of stage one (default settings.rough_grid)
        fine_grid: λ grid of stage three (default settings.fine_grid)
        warm_start: Chain λ fits along each grid
        n_jobs: Workers for parallel fits

    Returns:
        StagedSelection with the chosen pair, all three reports and the final fit
    """
    limit = min(data.n, data.d)
    k_init = min(k_init or settings.k_init, limit)
    k_max = k_init if k_max is None else k_max
    if not 1 <= k_max <= limit:
        raise DataValidationError(f"k_max={k_max} must lie in 1..{limit}")
    config = config or FitConfig(k=k_init)

    state = create_initial_state(
        data,
        config,
        k_init,
        k_max,
        list(settings.rough_grid if rough_grid is None else rough_grid),
        list(settings.fine_grid if fine_grid is None else fine_grid),
        warm_start=warm_start,
        n_jobs=n_jobs,
    )
    if not validate_state(state):
        raise DataValidationError("invalid selection input")

    logger.info(f"Starting staged selection: k_init={k_init}, k_max={k_max}")
    result = get_workflow().invoke(state)
    logger.debug(f"Execution times: {result.get('execution_time_ms', {})}")

    reports = result["reports"]
    return StagedSelection(
        k=result["k"],
        lambda_=result["lambda_fine"],
        rough=reports["rough_lambda"],
        k_scan=reports["k_scan"],
        fine=reports["fine_lambda"],
        fit=result["fit"],
        n_fits=result["n_fits"],
    )
