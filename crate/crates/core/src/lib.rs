//! Adaptive contrast test for dose-response studies.
//!
//! Contrast coefficients are derived from the observed arm means under a
//! pre-specified ordinal constraint, the contrast t-statistic is assessed
//! by permutation, and a dose-response model chosen by AIC yields a
//! recommended dose. A Monte-Carlo simulator estimates power and type-I
//! error for given true dose-response shapes.

pub mod contrast;
pub mod error;
pub mod model_fit;
pub mod optimize;
pub mod permutation;
pub mod report;
pub mod rng;
pub mod simulation;
pub mod study_data;

pub use contrast::{
    compute_coefficients, contrast_statistic, running_extremes, ConstraintSpec, ContrastTestResult,
    ContrastVector, Direction, Rounding,
};
pub use error::{Error, Result};
pub use model_fit::{
    fit_all, fit_model, predict, recommend_dose, select_best, DoseCriterion, FitOptions, FitResult,
    EmaxAnchoring, ModelAnchors, ModelKind,
};
pub use permutation::{
    fixed_contrast_pvalue, multi_contrast_max_t, permutation_pvalue, Alternative, CoefficientMode, MaxTOutcome,
    PermutationConfig, PermutationOutcome,
};
pub use study_data::{
    load_csv, load_summary_csv, pooled_variance, summarize, ArmSummary, CsvSchema, StudyInput,
    StudySummaries, SubjectRecord,
};
pub use report::{
    analyze, curve_table, power_matrix, AnalysisOptions, AnalysisReport, CurveTable, PowerMatrix,
};
pub use simulation::{
    builtin_scenarios, power_table, simulate_power, ConstraintVariant, PowerResult, PowerRow,
    Scenario, SimConfig,
};
