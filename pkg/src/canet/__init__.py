"""Causal abstraction networks over Gaussian models.

Networks of zero-mean Gaussians joined by masked orthonormal abstraction
maps: block algebraic invariants, measure diffusion, an ADMM solver that
recovers single maps from covariance pairs, and a search procedure that
recovers whole network structures.
"""

from .clca import (
    Clca,
    StructureMatrix,
    compose_clca,
    constructiveness,
    frobenius_distance,
    interlacing_check,
    structural_f1,
    validate_clca,
)
from .diffusion import (
    OneCochain,
    WeightProfile,
    ZeroCochain,
    boundary,
    coboundary,
    is_fixed_point,
    iterate_dynamics,
    laplacian_operator,
    step_dynamics,
)
from .measures import (
    EigenDecomposition,
    GaussianMeasure,
    MixtureMeasure,
    convex_combine,
    eigendecompose,
    kl_gaussian_abstracted,
    mixture_distance,
    polar_prox,
    pushforward_gaussian,
    pushforward_mixture,
    random_stiefel,
)
from .network import (
    BlockMatrix,
    CanEdge,
    CanNode,
    CanSpec,
    adjacency,
    check_consistency,
    degree,
    generate_global_section,
    incidence,
    kernel_multiplicity,
    laplacian,
    reachability_from_coarsest,
    smoothness,
    supports_global_sections,
)
from .search import (
    CandidateMatrix,
    LearnedAdjacency,
    build_candidates,
    fpr_tpr,
    learn_can,
    transitive_closure,
    transitive_reduction,
)
from .solver import (
    LocalProblem,
    ResidualReport,
    SolveOutcome,
    SolverConfig,
    SolverState,
    build_local_problem,
    solve,
)
from .synth import (
    CanInstance,
    LocalInstance,
    gen_can_instance,
    gen_local_instance,
    random_pd_cov,
    random_structure,
    topology_pairs,
)

__version__ = "0.1.0"
