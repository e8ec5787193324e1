"""Mixed-integer programming toolkit with learned diving and branching heuristics."""

from .core import (
    BINARY,
    CONTINUOUS,
    INTEGER,
    FeasibilityReport,
    MipInstance,
    SubMipSpec,
    apply_submip,
    check_feasible,
    energy,
    normalize_instance,
    objective_value,
    permute_instance,
    validate,
)
from .mpsio import (
    MpsParseError,
    instance_from_dict,
    instance_to_dict,
    parse_mps,
    read_assignment,
    read_canonical,
    read_mps,
    write_assignment,
    write_canonical,
)
from .lp import (
    AdmmConfig,
    AdmmState,
    BoundOverride,
    LpProblem,
    LpSolution,
    admm_solve,
    admm_solve_batch,
    benchmark_batch,
    factorize,
    solve_lp_exact,
    speedup_factor,
    warm_state_from_solution,
)
from .bnb import (
    BranchContext,
    BranchScores,
    CutSelection,
    FsbPolicy,
    MostFractionalPolicy,
    PseudocostPolicy,
    RandomPolicy,
    SolveResult,
    SolverLimits,
    expert_distribution,
    fractional_candidates,
    fsb_scores,
    lp_bound_with_cuts,
    make_policy,
    node_instance,
    relative_gap,
    select_cuts_expert,
    solve,
)
from .graph import BipartiteGraph, encode, permute_graph
from .gnn import (
    BranchingExample,
    DivingExample,
    GcnConfig,
    GcnModel,
    LearnedBranchingPolicy,
    TrainConfig,
    bit_probabilities,
    branching_distribution,
    diving_probabilities,
    init_model,
    load_model,
    loss_branching,
    loss_diving,
    loss_selective,
    save_model,
    selection_probabilities,
    train,
    train_coverage_suite,
)
from .diving import (
    DivingConfig,
    ModelPredictor,
    OraclePredictor,
    dive_parallel,
    dive_sequential,
    generate_submips,
    sample_partial_assignment,
)
from .imitation import (
    DivingLabels,
    build_diving_dataset,
    collect_diving_labels,
    dagger_round,
    generate_branching_data,
    load_dataset,
    save_dataset,
    topk_accuracy,
)
from .evaluation import (
    EVALUATION_SEEDS,
    CalibratedClock,
    CalibrationConfig,
    GapCurve,
    average_curve,
    build_gap_curve,
    dual_gap,
    par_k,
    plot_curves,
    primal_dual_gap,
    primal_gap,
    survival,
    time_to_target,
)
from .generators import (
    FAMILIES,
    calibration_instance,
    fractional_root_family,
    generate_family,
    knapsack_instance,
    set_cover_instance,
)

__version__ = "0.1.0"
