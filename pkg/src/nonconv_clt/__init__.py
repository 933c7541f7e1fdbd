"""Exact structure and limiting covariances of normalized sums sampled along
integer-valued polynomial times, with Monte-Carlo verification."""

from .covariance import (
    CovarianceReport,
    PositivityVerdict,
    ScenarioContext,
    build_context,
    compute_report,
    construct_vanishing_variance_scenario,
    covariance_diagonal,
    covariance_linear,
    covariance_nonlinear,
    increment_covariance,
    long_run_variance,
    paper_series_proxy,
    positivity_verdict,
    solve_vanishing_variance,
)
from .observables import (
    DecomposedObservable,
    MultiPolynomial,
    ReducedSetup,
    center,
    decompose,
    evaluate,
    reduce_setup,
)
from .polynomials import (
    DensityResult,
    EquivalenceWitness,
    ExactRoot,
    FamilyStructure,
    IntegerValuedPolynomial,
    analyze_family,
    empirical_subset_density,
    equivalence_witness,
    family_density,
    leading_ratio,
    residue_count,
    strict_witness,
    subset_density,
    validate_polynomial,
)
from .processes import (
    DependenceHorizon,
    IIDProcess,
    JointLaw,
    MarkovChain,
    MovingAverage,
    StackedProcess,
    dependence_horizon,
    joint_law,
    moment,
    sample_at,
    stationary_law,
)
from .montecarlo import (
    ComparisonRow,
    SimulationPlan,
    SimulationReport,
    increment_check,
    normality_check,
    replicate_stats,
    simulate_paths,
)

__version__ = "0.1.0"
