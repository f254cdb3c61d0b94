//! End-to-end analysis of one study, and the tables behind its plots.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::contrast::{
    compute_coefficients, contrast_statistic, t_reference_quantiles, ConstraintSpec, ContrastVector, Rounding,
    TQuantile,
};
use crate::error::{Error, Result};
use crate::model_fit::{
    fit_all, recommend_dose, select_best, DoseCriterion, EmaxAnchoring, FitOptions, FitResult, ModelAnchors,
    ModelKind, CURVE_POINTS,
};
use crate::permutation::{permutation_pvalue, PermutationConfig};
use crate::simulation::{ConstraintVariant, PowerRow};
use crate::study_data::{ArmSummary, StudyInput};

pub const TOOL_NAME: &str = "doseadapt";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SUMMARY_ONLY_NOTE: &str = "permutation requires subject-level data";

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub constraint: ConstraintSpec,
    pub rounding: Rounding,
    pub permutation: PermutationConfig,
    /// One-sided level for the proof-of-concept decision.
    pub alpha: f64,
    /// Fit models even when the contrast test is not significant.
    pub always_fit: bool,
    pub placebo_delta: Option<f64>,
    pub baseline_delta: Option<f64>,
    pub emax_anchoring: EmaxAnchoring,
    /// Weight arm means by arm size when fitting.
    pub weighted: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            constraint: ConstraintSpec::increasing(),
            rounding: Rounding::default(),
            permutation: PermutationConfig::default(),
            alpha: 0.025,
            always_fit: false,
            placebo_delta: None,
            baseline_delta: None,
            emax_anchoring: EmaxAnchoring::default(),
            weighted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Subjects,
    Summaries,
}

/// What the significance decision was based on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceBasis {
    Permutation,
    /// Summary-only input: `T` against the upper `alpha` quantile of a t
    /// distribution with the pooled degrees of freedom.
    TReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub config: PermutationConfig,
    pub exceed_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub dose: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub fit: FitResult,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseRecommendation {
    pub criterion: DoseCriterion,
    pub delta: f64,
    /// `None` when no dose up to the highest studied one qualifies.
    pub dose: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: String,
    pub version: String,
    pub input: InputKind,
    pub arms: Vec<ArmSummary>,
    pub pooled_variance: f64,
    pub degrees_of_freedom: usize,
    pub rounding: Rounding,
    pub contrast: ContrastVector,
    pub t_value: f64,
    /// `sum(c_i * Y_i)`
    pub numerator: f64,
    /// `sum(c_i^2 / n_i)`
    pub variance_term: f64,
    pub alpha: f64,
    pub p_value: Option<f64>,
    pub permutation: Option<PermutationSummary>,
    pub t_reference: Option<Vec<TQuantile>>,
    pub significant: bool,
    pub significance_basis: SignificanceBasis,
    pub notes: Vec<String>,
    pub emax_anchoring: EmaxAnchoring,
    pub fits: Vec<ModelReport>,
    pub best_model: Option<ModelKind>,
    pub recommended_doses: Vec<DoseRecommendation>,
    pub seed: u64,
}

impl AnalysisReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn best_fit(&self) -> Option<&FitResult> {
        let kind = self.best_model?;
        self.fits.iter().map(|m| &m.fit).find(|f| f.kind == kind)
    }

    /// Models were fitted but none converged.
    pub fn all_fits_failed(&self) -> bool {
        !self.fits.is_empty() && self.best_model.is_none()
    }
}

/// Runs the contrast test and, when it succeeds (or `always_fit` is set),
/// model selection and dose recommendation.
pub fn analyze(input: &StudyInput, options: &AnalysisOptions) -> Result<AnalysisReport> {
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", options.alpha)));
    }
    let summaries = input.summaries()?;
    let contrast = compute_coefficients(&summaries.means(), options.constraint, options.rounding)?;
    let stat = contrast_statistic(&contrast, &summaries)?;
    let df = summaries.degrees_of_freedom();

    let mut notes = Vec::new();
    let (p_value, permutation, t_reference, significant, basis) = match input {
        StudyInput::Subjects(records) => {
            let out = permutation_pvalue(records, options.constraint, options.rounding, &options.permutation)?;
            let summary = PermutationSummary {
                config: options.permutation,
                exceed_count: out.exceed_count,
            };
            (
                Some(out.p_value),
                Some(summary),
                None,
                out.p_value < options.alpha,
                SignificanceBasis::Permutation,
            )
        }
        StudyInput::Summaries(_) => {
            notes.push(SUMMARY_ONLY_NOTE.to_string());
            let critical = StudentsT::new(0.0, 1.0, df as f64)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?
                .inverse_cdf(1.0 - options.alpha);
            let significant = !contrast.degenerate && stat.t_value > critical;
            (
                None,
                None,
                Some(t_reference_quantiles(df)?),
                significant,
                SignificanceBasis::TReference,
            )
        }
    };
    if contrast.degenerate {
        notes.push("contrast is degenerate: all coefficients are zero".to_string());
    }

    let mut fits = Vec::new();
    let mut best_model = None;
    let mut recommended_doses = Vec::new();
    if significant || options.always_fit {
        let doses = summaries.doses();
        let means = summaries.means();
        let max_dose = doses.iter().copied().fold(0.0, f64::max);
        let anchors =
            ModelAnchors::with_anchoring(&doses, &means, options.constraint.direction, options.emax_anchoring)?;
        let fit_options = FitOptions {
            weights: options
                .weighted
                .then(|| summaries.sizes().iter().map(|&n| n as f64).collect()),
            optimizer: None,
        };
        let results = fit_all(&doses, &means, &anchors, &fit_options)?;
        match select_best(&results) {
            Ok(best) => {
                best_model = Some(best.kind);
                let criteria = [
                    (DoseCriterion::DiffFromPlacebo, options.placebo_delta),
                    (DoseCriterion::ChangeFromBaseline, options.baseline_delta),
                ];
                for (criterion, delta) in criteria {
                    if let Some(delta) = delta {
                        recommended_doses.push(DoseRecommendation {
                            criterion,
                            delta,
                            dose: recommend_dose(best, criterion, delta, max_dose, options.constraint.direction),
                        });
                    }
                }
            }
            Err(Error::NoConvergedFits) => notes.push("no model fit converged".to_string()),
            Err(e) => return Err(e),
        }
        for fit in results {
            let curve = fit
                .curve(max_dose, CURVE_POINTS)?
                .into_iter()
                .map(|(dose, mean)| CurvePoint { dose, mean })
                .collect();
            fits.push(ModelReport { fit, curve });
        }
    } else {
        notes.push("dose-response not significant: models not fitted".to_string());
    }

    Ok(AnalysisReport {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        input: match input {
            StudyInput::Subjects(_) => InputKind::Subjects,
            StudyInput::Summaries(_) => InputKind::Summaries,
        },
        arms: summaries.arms().to_vec(),
        pooled_variance: stat.pooled_variance,
        degrees_of_freedom: df,
        rounding: options.rounding,
        contrast,
        t_value: stat.t_value,
        numerator: stat.numerator,
        variance_term: stat.variance_term,
        alpha: options.alpha,
        p_value,
        permutation,
        t_reference,
        significant,
        significance_basis: basis,
        notes,
        emax_anchoring: options.emax_anchoring,
        fits,
        best_model,
        recommended_doses,
        seed: options.permutation.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowType {
    Curve,
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub row_type: RowType,
    pub dose: f64,
    /// One entry per model in [`CurveTable::models`]; empty cells on
    /// observed rows.
    pub predicted: Vec<Option<f64>>,
    pub observed: Option<f64>,
}

/// Fitted curves on a shared dose grid followed by the observed arm means.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub models: Vec<ModelKind>,
    pub rows: Vec<CurveRow>,
}

pub fn curve_table(report: &AnalysisReport) -> Result<CurveTable> {
    let first = report.fits.first().ok_or(Error::MissingSection("fits"))?;
    let models: Vec<ModelKind> = report.fits.iter().map(|m| m.fit.kind).collect();
    let mut rows: Vec<CurveRow> = first
        .curve
        .iter()
        .enumerate()
        .map(|(i, p)| CurveRow {
            row_type: RowType::Curve,
            dose: p.dose,
            predicted: report
                .fits
                .iter()
                .map(|m| m.curve.get(i).map(|q| q.mean))
                .collect(),
            observed: None,
        })
        .collect();
    rows.extend(report.arms.iter().map(|a| CurveRow {
        row_type: RowType::Observed,
        dose: a.dose,
        predicted: vec![None; models.len()],
        observed: Some(a.mean),
    }));
    Ok(CurveTable { models, rows })
}

fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

impl CurveTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["row_type".to_string(), "dose".to_string()];
        header.extend(self.models.iter().map(|m| m.name().to_string()));
        header.push("observed".to_string());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![
                match row.row_type {
                    RowType::Curve => "curve".to_string(),
                    RowType::Observed => "observed".to_string(),
                },
                row.dose.to_string(),
            ];
            record.extend(row.predicted.iter().map(|&v| cell(v)));
            record.push(cell(row.observed));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrixRow {
    pub scenario: String,
    pub constraint_variant: ConstraintVariant,
    /// Aligned with [`PowerMatrix::sample_sizes`].
    pub power: Vec<Option<f64>>,
}

/// Power reshaped to one row per scenario and constraint variant and one
/// column per sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    pub sample_sizes: Vec<usize>,
    pub rows: Vec<PowerMatrixRow>,
}

/// Rows and columns keep their order of first appearance.
pub fn power_matrix(rows: &[PowerRow]) -> PowerMatrix {
    let mut sample_sizes: Vec<usize> = Vec::new();
    for r in rows {
        if !sample_sizes.contains(&r.n) {
            sample_sizes.push(r.n);
        }
    }
    let mut out: Vec<PowerMatrixRow> = Vec::new();
    for r in rows {
        let col = sample_sizes.iter().position(|&n| n == r.n).unwrap_or(0);
        let idx = match out
            .iter()
            .position(|m| m.scenario == r.scenario && m.constraint_variant == r.constraint_variant)
        {
            Some(i) => i,
            None => {
                out.push(PowerMatrixRow {
                    scenario: r.scenario.clone(),
                    constraint_variant: r.constraint_variant,
                    power: vec![None; sample_sizes.len()],
                });
                out.len() - 1
            }
        };
        out[idx].power[col] = Some(r.power);
    }
    PowerMatrix {
        sample_sizes,
        rows: out,
    }
}

impl PowerMatrix {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["scenario".to_string(), "constraint_variant".to_string()];
        header.extend(self.sample_sizes.iter().map(|n| format!("N={n}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.scenario.clone(), row.constraint_variant.label().to_string()];
            record.extend(row.power.iter().map(|&v| cell(v)));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}
