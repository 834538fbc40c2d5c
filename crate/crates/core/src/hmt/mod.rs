//! Two-state wavelet hidden Markov trees: parameters, exact inference and EM.
//!
//! State 0 is the small-variance ("surround") state and state 1 the
//! large-variance ("centre") state. All nodes at one scale share their
//! emission and transition parameters.

mod em;
mod params;
mod sample;
mod tree;
mod updown;

pub use em::{
    em_train, em_train_forest, em_train_vector, init_params, init_params_forest, EmConfig,
    EmOutcome, InitOutcome,
};
pub use params::{
    universal_params, Emission, Flavor, HmtParams, ScaleParams, UniversalSource,
    COVARIANCE_RIDGE, VARIANCE_FLOOR,
};
pub use sample::sample_tree;
pub use tree::HmtTree;
pub use updown::{upward_downward, LikelihoodTree};
