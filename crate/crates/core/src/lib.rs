//! Certified Lipschitz bounds for ReLU multilayer perceptrons.
//!
//! The crate enumerates activation patterns, measures how robustly each one
//! is realized on an input domain via a small LP, and combines pattern norms
//! into upper, lower and robustness-parameterized bounds. It can also emit
//! the equivalent mixed-integer quadratically constrained model.

pub mod bounds;
pub mod domain;
pub mod linalg;
pub mod miqcqp;
pub mod network;
pub mod norms;
pub mod region;
pub mod simplex;

pub use domain::{DomainError, InputDomain};
pub use linalg::Matrix;
pub use network::{ActivationPattern, AffineForm, MlpNetwork, NetworkError, RelaxedPattern};
pub use norms::{operator_norm, pattern_norm, NormKind};
pub use simplex::{lp_solve, LinearProgram, LpOutcome, Relation, VarBounds};
pub use region::{max_slack, region_feasible, Admission, RegionError, SlackResult};
pub use bounds::{
    branch_and_bound, brute_force_bounds, compute_bounds, pairwise_quotient_estimate, sampled_lower_bound,
    unconstrained_bound, BoundsError, BoundsOptions, BoundsReport, Mode, Target,
};
pub use miqcqp::{
    build_model, check_assignment, compute_big_m, emit_json, emit_lp_text, parse_json, witness_from_bounds, MiqcqpModel,
    ModelError, ModelOptions,
};
