//! Equilibrium-free stability and performance analysis of discrete-time
//! nonlinear systems.
//!
//! The crate builds velocity/differential representations of a nonlinear
//! model, embeds them into a grid-based scheduling-parameter form, solves
//! dissipativity matrix inequalities as semidefinite programs, and turns
//! the results into certificates: universal shifted Lyapunov functions and
//! invariant level sets, incremental gain/passivity levels, and
//! geodesic-based incremental storage verified along simulated trajectory
//! pairs.
//!
//! Pipeline overview:
//!
//! 1. [`expr`] — parse the model's right-hand sides into expression trees
//!    with exact forward-mode differentiation.
//! 2. [`system`] — discrete-time models, fixed-step RK4 discretization of
//!    continuous-time models, simulation, equilibrium solving.
//! 3. [`forms`] — pointwise and segment-averaged Jacobian matrices.
//! 4. [`sets`] — boxes, grids, one-step increment set estimation, and the
//!    scheduling embedding.
//! 5. [`lmi`] — grid-based matrix-inequality assembly and conic solving.
//! 6. [`certificates`] — shifted Lyapunov functions, invariant sets, gain
//!    transfer constants, serialized certificates.
//! 7. [`incremental`] — geodesic incremental storage and dissipation
//!    inequality verification.

pub mod certificates;
pub mod error;
pub mod expr;
pub mod forms;
pub mod incremental;
pub mod lmi;
pub mod quad;
pub mod sets;
pub mod system;

pub use certificates::{
    check_supply_stability, estimate_alpha, level_set_fit, system_hash, tube_membership,
    usp_bound, Certificate, InvariantSet, InvariantTube, RestrictedForm, ShiftedLyapunov,
    StorageForm, UspBound,
};
pub use error::{
    CertificateError, EmbeddingError, EquilibriumError, EvalError, GeodesicError, LmiError,
    ModelError, SimError,
};
pub use expr::{parse, parse_with_names, Expr, ParseError, VarSpace};
pub use forms::{
    eval_forms, eval_integral_forms, velocity_residual, FormMatrices, IntegralFormMatrices,
    SystemJacobians, DEFAULT_QUAD_NODES,
};
pub use incremental::{
    convergence_metric, geodesic, incremental_storage, path_energy, verify_id, IdReport,
    PiecewisePath, StorageMetric, DEFAULT_SEGMENTS,
};
pub use lmi::{
    assemble_dd_lmi, assemble_incremental_l2, assemble_incremental_passivity,
    schur_equivalence_check, solve, LmiBlock, ProblemKind, QsrSupply, SdpProblem, SolveResult,
    SolveStatus, StorageBasis,
};
pub use sets::{
    build_embedding, build_identity_embedding, estimate_dset, BoxRegion, Grid, GridEmbedding,
    SchedulingMap,
};
pub use system::{
    find_equilibrium, forward_difference, rk4_discretize, simulate, CtSystem, DtSystem,
    Equilibrium, Trajectory,
};
