"""KL-regularized two-player zero-sum Markov games learned from offline data."""

from klgames.errors import (
    CapacityError,
    ConsistencyError,
    ConvergenceError,
    DimensionError,
    DomainError,
    KLGameError,
    SupportError,
)
from klgames.game import (
    GameDims,
    JointPolicy,
    MarkovGame,
    RegularizationConfig,
    ValueTables,
    best_response_values,
    check_side_condition,
    duality_gap,
    evaluate_policy,
    kl_divergence,
    min_ref_prob,
)
from klgames.stage import (
    StageGame,
    gibbs_response,
    solve_stage_equilibrium,
    stage_exploitability,
    stage_objective,
)
from klgames.data import (
    FunctionClass,
    OfflineDataset,
    d2_divergence,
    estimate_unilateral_concentrability,
    fit_q_finite_class,
    fit_q_tabular,
    make_behavior_policy,
    sample_dataset,
)
from klgames.rose import SolveResult, rose_solve, solve_game
from klgames.sosmd import IterateDiagnostics, SosmdOptions, marginal_payoff, mirror_step, sosmd_solve, stepsize_schedule

__all__ = [name for name in dir() if not name.startswith("_")]
