"""Conic relaxations, branch and bound, and the subproblem builders."""

from .bnb import MipProblem, branch_and_bound, enumerate_binaries
from .conic import (
    ConicProblem,
    SOCBlock,
    SolveOutcome,
    Status,
    constraint_violation,
    problem_from_json,
    problem_to_json,
    solve_conic,
)
from .problems import (
    build_comm_subproblem,
    build_min_power_p1,
    build_rx_subproblem,
    build_tx_subproblem,
    min_power_p1,
    solve_mip,
)

__all__ = [
    "ConicProblem", "MipProblem", "SOCBlock", "SolveOutcome", "Status",
    "branch_and_bound", "build_comm_subproblem", "build_min_power_p1", "build_rx_subproblem",
    "build_tx_subproblem", "constraint_violation", "enumerate_binaries", "min_power_p1",
    "problem_from_json", "problem_to_json", "solve_conic", "solve_mip",
]
