//! Low-rank matrix sensing through deep matrix factorization.
//!
//! The crate builds sensing problems, samples and evaluates deep
//! factorizations, and compares two ways of fitting them: Guess & Check
//! (rejection sampling from a prior over weight settings) and gradient
//! descent from a small initialization. [`diagnostics`] probes the
//! mechanisms behind the width and depth trends, and [`harness`] runs
//! the width/depth sweeps, writes CSV and renders SVG plots.

pub mod descent;
pub mod diagnostics;
pub mod error;
pub mod factorization;
pub mod guess_check;
pub mod harness;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod stats;

pub use descent::{init_weights, run_gd, run_gd_from, EmaMode, EmaRule, GdConfig, GdOutcome, GdTrace};
pub use diagnostics::{
    effective_rank, probe_end_to_end_rank, probe_independence, probe_spectrum,
    IndependenceProbe, ProbeSource, SpectralProbe,
};
pub use error::{Error, Result};
pub use factorization::{
    fact_gen_loss, fact_train_loss, forward, loss_gradient, sample_prior, Activation,
    BaseDistribution, FactorizationSpec, Precision, PriorSpec, WeightSetting,
};
pub use guess_check::{run_gnc, run_prior_baseline, GncConfig, GncReport, GncStatus};
pub use problem::{
    estimate_rip, gen_loss, make_complement_basis, make_ground_truth, make_measurements,
    train_loss, MeasurementKind, ProblemInstance, ProblemParams, RipEstimate,
};
pub use rng::Seed;
