//! Kinetics of genome distributions under per-site mutation and
//! similarity-dependent homologous recombination.
//!
//! The crate provides:
//!
//! * an exact dense integrator for the mean-field (infinite population)
//!   equation over `K^n`, with relative-entropy monitoring against the
//!   product stationary law of the mutation process;
//! * numerical checks of the entropy inequalities that make the relative
//!   entropy a Lyapunov function;
//! * an event-driven simulator of finite populations, in donor
//!   (`I`-recombination) and pair-exchange (`I/I`) modes;
//! * pairwise-distance diagnostics that compare populations to the
//!   structureless product law.

pub mod audit;
pub mod diagnostics;
pub mod error;
pub mod kinetics;
pub mod mutation;
pub mod population;
pub mod recombination;
pub mod state_space;
pub mod stochastic;

pub use error::{Error, Result};
pub use kinetics::{
    integrate, integrate_schedule, lyapunov_monotonicity_audit, relative_entropy_rate_mutation,
    total_rhs, verify_entropy_chain, verify_lemma1, IntegratorConfig, ScheduleSegment,
    TrajectoryRecord,
};
pub use mutation::{site_stationary, MutationModel, SiteRateMatrix};
pub use population::{PopulationState, RecombinationMode, SimConfig};
pub use recombination::{FamilySpec, PhiTable, RecombinationModel, SimilaritySpec};
pub use state_space::{
    l1_distance, marginalize, neg_entropy, product_measure, relative_entropy, total_variation,
    AlphabetSpec, Distribution, SubsetMask,
};
pub use stochastic::StochasticMatrix;
