"""Staged model-selection workflow"""

from .state import SelectionState, create_initial_state, validate_state
from .workflow import SelectionWorkflowBuilder, get_workflow, select_k

__all__ = [
    "SelectionState",
    "create_initial_state",
    "validate_state",
    "SelectionWorkflowBuilder",
    "get_workflow",
    "select_k",
]
