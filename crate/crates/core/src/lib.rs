//! Numerical laboratory for a confined quantum particle linearly coupled to a
//! variable-coefficient scalar boson field, discretized on a Dirichlet box.
//!
//! The crate builds the lattice operators (particle Hamiltonian K, field
//! operator h and its square root omega), exposes their heat kernels with
//! two-sided Gaussian comparison fits, runs the associated diffusions (both
//! an Euler-Maruyama integrator and an exact ground-state-transformed kernel
//! chain), tabulates the effective pair potential W induced by the field,
//! estimates the overlap decay curve gamma(T) by importance-weighted path
//! sampling, and cross-validates everything against a truncated-Fock exact
//! diagonalization at desk scale.

pub mod chain;
pub mod coeff;
pub mod container;
pub mod error;
pub mod fock;
pub mod gamma;
pub mod grid;
pub mod ground;
pub mod heat;
pub mod operator;
pub mod pairpot;
pub mod prob_checks;
pub mod rng;
pub mod sde;
pub mod spectral;
pub mod stats;

pub use chain::{
    build_transition_kernel, chapman_kolmogorov_defect, sample_stationary_two_sided,
    stationary_law_checks, LawReport, TransitionKernel, TwoSidedPaths,
};
pub use coeff::{ChargeProfile, CoefficientSpec, GrowthCert, MassDecayCert, MatrixField, ScalarField};
pub use container::{read_container, read_expecting, write_container, ContainerHeader, Payload};
pub use error::{Error, Result};
pub use fock::{
    annihilation_operators, build_h as build_fock_h, build_mode_basis, fock_basis,
    number_bound_check, overlap_oracle, FockBasis, FockOperator, ModeBasis, NumberBoundReport,
    OverlapOracle, FOCK_DIM_CAP,
};
pub use gamma::{
    estimate_gamma, estimate_numerator, estimate_z, path_weights, tail_probability_check,
    trapezoid_refinement, upper_bound_decomposition, z_shift_invariance_check, GammaCurve,
    GammaPoint, LogEstimate, PathWeights, RefinementReport, ShiftReport, TailReport,
    UpperBoundReport,
};
pub use grid::{Boundary, Grid};
pub use ground::{decay_check, ground_state, DecayReport, GroundState, TransformedGenerator};
pub use heat::{
    default_rate_grid, flat_comparator, free_heat_kernel, gaussian_bound_fit, heat_kernel,
    heat_kernel_of, log_convexity_check,
    subordination_check, trotter_check, HeatKernelSlice, KernelConvention, SandwichFit,
    SandwichSide, SubordinationQuad,
};
pub use operator::{
    assemble_div_form, assemble_h, assemble_h0, assemble_k, assemble_k0, flat_laplacian,
    potential_on_states, LatticeOperator, OperatorKind,
};
pub use pairpot::{
    compute_w, double_time_integral_bound_check, infrared_integral, sample_charges, w_infinity,
    w_infinity_checked, w_sandwich_fit, xi_constant, xi_gaussian, DoubleTimeReport,
    PairPotentialTable, SmearedCharges, WInfMethod, WMethod, WSandwichReport,
};
pub use prob_checks::{
    exit_probability_check, finite_dim_distribution_check, moment_bound_check,
    stopping_time_check, ExitReport, FiniteDimReport, MomentReport, StoppingReport,
};
pub use rng::{path_rng, Direction};
pub use sde::{feynman_kac, simulate_diffusion, ContinuumPaths, FkEstimate, SdeConfig};
pub use spectral::{eigendecompose, omega_decomposition, omega_sqrt, SpectralDecomposition, DENSE_CAP};
pub use stats::{
    batch_log_means, effective_sample_size, log_domain_se, log_mean_exp, logsumexp, mean_and_se,
    pairwise_sum,
};
