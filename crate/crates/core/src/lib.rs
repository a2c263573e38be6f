//! Adaptive noise augmentation for graphical models and generalized linear
//! models.
//!
//! Regularization comes from appending synthetic noise rows to the data and
//! refitting unpenalized models. The noise variance depends on the current
//! estimate, so the augmented fit behaves like a penalized one.

pub mod engine;
pub mod error;
pub mod glm;
pub mod inference;
pub mod linalg;
pub mod ngd;
pub mod rng;
pub mod simgen;
pub mod variants;

pub use engine::{
    check_convergence, hard_threshold, moving_average, run_panda_glm, run_panda_ns, symmetrize,
    Convergence, ConvergenceStatus, Dataset, FitTrace, GlmFit, GraphEstimate, Init, PandaConfig,
    Symmetrization, TraceRecord,
};
pub use error::{PandaError, Result};
pub use glm::{fit_glm, fit_ols, neg_log_likelihood, AugmentedDesign, NodeFamily};
pub use inference::{confidence_intervals, fisher_augmented, sandwich_covariance, InferenceReport};
pub use ngd::{expected_penalty, noise_variance, sample_noise, NoiseCovariance, NoiseSpec};
pub use simgen::{Adjacency, AdjacencySpec, GraphKind, RocResult};
pub use variants::{
    gridge_noise, run_panda_cd, run_panda_cd_ordered, run_panda_gridge, run_panda_scio, run_panda_space,
    scio_column, GridgeEstimate, LdlEstimate, ScioEstimate, SpaceEstimate,
};
