from hflassign.solver.assign import (
    BRUTE_FORCE_LIMIT,
    DEFAULT_NODE_LIMIT,
    SearchSpaceTooLarge,
    branch_and_bound,
    brute_force_optimal,
    random_assign,
    relax_and_round,
    search_space_size,
)
from hflassign.solver.lp import (
    LpModel,
    SolveResult,
    Status,
    build_epigraph_lp,
    equal_edge_size,
)
from hflassign.solver.simplex import simplex_solve

__all__ = [
    "BRUTE_FORCE_LIMIT",
    "DEFAULT_NODE_LIMIT",
    "LpModel",
    "SearchSpaceTooLarge",
    "SolveResult",
    "Status",
    "branch_and_bound",
    "brute_force_optimal",
    "build_epigraph_lp",
    "equal_edge_size",
    "random_assign",
    "relax_and_round",
    "search_space_size",
    "simplex_solve",
]
