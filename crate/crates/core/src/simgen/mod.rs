//! Synthetic graphs and data, plus edge-recovery and coverage benchmarks.

mod coverage;
mod graph;
mod metrics;
mod sampling;

pub use coverage::{coverage_experiment, CoverageReport, CovariateLaw, GlmScenario};
pub use graph::{gen_adjacency, Adjacency, AdjacencySpec, GraphKind};
pub use metrics::{auc, roc_curve, roc_point, RocResult};
pub use sampling::{gen_precision, sample_ggm, sample_gibbs, GibbsModel, PrecisionSpec};
