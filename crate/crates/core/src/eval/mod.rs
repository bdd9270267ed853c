//! Evaluation: discriminator-based filtering metrics, bootstrap tests, and
//! the numerical studies behind the estimator (cross-covariance term,
//! random-subnetwork convergence, recursion and delta-method checks).

mod bootstrap;
mod cross_term;
mod discriminator;
mod filtering;
mod metrics;
mod sketch_study;
mod theory;

pub use bootstrap::{bootstrap_p, filtered_metrics, paired_bootstrap_p, FilteredMetrics, DEFAULT_RESAMPLES, MIN_RESAMPLES};
pub use cross_term::{
    cross_term_study, one_sided_t_tests, CrossTermReport, ThresholdTest, CROSS_TERM_LAMBDA, MIN_CROSS_TERM_DRAWS,
};
pub use discriminator::{train_discriminator, Discriminator, DiscriminatorConfig, DiscriminatorFit};
pub use filtering::{evaluate_filtering, FilteringConfig, FilteringStudy, MetricsReport};
pub use metrics::{accuracy, filter_by_score, gap_closure, pooled_accuracy, retained_count, roc_auc, DECISION_THRESHOLD};
pub use sketch_study::{
    sketch_convergence_study, synthetic_sketch_instance, SketchInstanceSpec, SketchStudyReport, MIN_ALIGNMENT,
    SKETCH_RCOND,
};
pub use theory::{lemma1_check, lemma1_deviation, prop1_mc_check, unroll_check, DeviationSummary, Prop1Check, LEMMA1_RCOND};
