//! Study data ingestion: subject-level records, per-arm summaries and the
//! pooled within-arm variance.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of arms (placebo plus at least two doses).
pub const MIN_ARMS: usize = 3;

/// One subject's response. `arm` is 1-based with arm 1 the placebo group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub arm: usize,
    pub dose: f64,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub dose: f64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Per-arm summaries in ascending dose order together with the pooled
/// variance `S^2 = sum((n_i - 1) S_i^2) / (sum(n_i) - k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummaries {
    arms: Vec<ArmSummary>,
    pooled_variance: f64,
}

impl StudySummaries {
    /// Validates and sorts arm summaries, then pools their variances.
    pub fn from_arms(mut arms: Vec<ArmSummary>) -> Result<Self> {
        for arm in &arms {
            check_finite(arm.dose, "dose")?;
            check_finite(arm.mean, "arm mean")?;
            check_finite(arm.sd, "arm sd")?;
            if arm.dose < 0.0 {
                return Err(Error::NegativeDose { dose: arm.dose });
            }
            if arm.sd < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "negative sd {} at dose {}",
                    arm.sd, arm.dose
                )));
            }
            if arm.n == 0 {
                return Err(Error::ArmTooSmall {
                    arm: 0,
                    dose: arm.dose,
                    n: 0,
                    required: 1,
                });
            }
        }
        arms.sort_by(|a, b| a.dose.total_cmp(&b.dose));
        validate_dose_layout(arms.iter().map(|a| a.dose))?;
        let pooled_variance = pooled_variance(&arms)?;
        Ok(Self {
            arms,
            pooled_variance,
        })
    }

    /// Replaces the pooled variance, e.g. with a value reported alongside
    /// published summaries.
    pub fn with_pooled_variance(mut self, pooled_variance: f64) -> Result<Self> {
        if !(pooled_variance.is_finite() && pooled_variance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pooled variance {pooled_variance} must be finite and non-negative"
            )));
        }
        self.pooled_variance = pooled_variance;
        Ok(self)
    }

    pub fn arms(&self) -> &[ArmSummary] {
        &self.arms
    }

    pub fn pooled_variance(&self) -> f64 {
        self.pooled_variance
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn doses(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.dose).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.mean).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.arms.iter().map(|a| a.n).collect()
    }

    pub fn total_n(&self) -> usize {
        self.arms.iter().map(|a| a.n).sum()
    }

    /// Error degrees of freedom of the pooled variance, `sum(n_i) - k`.
    pub fn degrees_of_freedom(&self) -> usize {
        self.total_n() - self.arms.len()
    }
}

/// Study data as supplied by the user: either subject-level records or
/// precomputed arm summaries.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyInput {
    Subjects(Vec<SubjectRecord>),
    Summaries(StudySummaries),
}

impl StudyInput {
    pub fn summaries(&self) -> Result<StudySummaries> {
        match self {
            StudyInput::Subjects(records) => summarize(records),
            StudyInput::Summaries(s) => Ok(s.clone()),
        }
    }

    /// Subject-level records; summary-only input cannot be permuted.
    pub fn records(&self) -> Result<&[SubjectRecord]> {
        match self {
            StudyInput::Subjects(records) => Ok(records),
            StudyInput::Summaries(_) => Err(Error::SummaryOnly),
        }
    }
}

/// Responses of one arm, used for summaries and permutation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ArmGroup {
    pub dose: f64,
    pub responses: Vec<f64>,
}

/// Groups records by arm index and returns the groups in ascending dose
/// order. Enforces the arm-count, arm-size and placebo requirements.
pub(crate) fn group_by_arm(records: &[SubjectRecord], min_arms: usize) -> Result<Vec<ArmGroup>> {
    let mut by_arm: BTreeMap<usize, ArmGroup> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        check_finite(rec.response, &format!("response of record {}", i + 1))?;
        check_finite(rec.dose, &format!("dose of record {}", i + 1))?;
        if rec.arm == 0 {
            return Err(Error::InvalidConfig(format!(
                "record {}: arm index must be 1-based",
                i + 1
            )));
        }
        let group = by_arm.entry(rec.arm).or_insert_with(|| ArmGroup {
            dose: rec.dose,
            responses: Vec::new(),
        });
        if group.dose != rec.dose {
            return Err(Error::InconsistentDose {
                row: i + 1,
                arm: rec.arm,
                expected: group.dose,
                found: rec.dose,
            });
        }
        group.responses.push(rec.response);
    }

    if by_arm.len() < min_arms {
        return Err(Error::TooFewArms {
            found: by_arm.len(),
            required: min_arms,
        });
    }
    if by_arm.get(&1).is_some_and(|placebo| placebo.dose != 0.0) {
        return Err(Error::MissingPlacebo);
    }
    for (&arm, group) in &by_arm {
        if group.responses.len() < 2 {
            return Err(Error::ArmTooSmall {
                arm,
                dose: group.dose,
                n: group.responses.len(),
                required: 2,
            });
        }
    }

    let mut groups: Vec<ArmGroup> = by_arm.into_values().collect();
    groups.sort_by(|a, b| a.dose.total_cmp(&b.dose));
    validate_dose_layout(groups.iter().map(|g| g.dose))?;
    Ok(groups)
}

/// Per-arm means, SDs (n - 1 denominator) and the pooled variance.
pub fn summarize(records: &[SubjectRecord]) -> Result<StudySummaries> {
    let groups = group_by_arm(records, MIN_ARMS)?;
    let arms = groups
        .iter()
        .map(|g| {
            let (mean, sd) = mean_sd(&g.responses);
            ArmSummary {
                dose: g.dose,
                n: g.responses.len(),
                mean,
                sd,
            }
        })
        .collect();
    StudySummaries::from_arms(arms)
}

/// `sum((n_i - 1) S_i^2) / (sum(n_i) - k)`.
pub fn pooled_variance(arms: &[ArmSummary]) -> Result<f64> {
    let total: usize = arms.iter().map(|a| a.n).sum();
    if total <= arms.len() {
        return Err(Error::InsufficientDegreesOfFreedom {
            total,
            arms: arms.len(),
        });
    }
    let within: f64 = arms
        .iter()
        .map(|a| (a.n as f64 - 1.0) * a.sd * a.sd)
        .sum();
    Ok(within / (total - arms.len()) as f64)
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn check_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

/// Sorted doses must start at 0 and increase strictly.
fn validate_dose_layout(sorted_doses: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev: Option<f64> = None;
    for dose in sorted_doses {
        match prev {
            None if dose != 0.0 => return Err(Error::MissingPlacebo),
            Some(p) if p == dose => return Err(Error::DuplicateDose { dose }),
            _ => {}
        }
        prev = Some(dose);
    }
    Ok(())
}

/// Column names used to read subject-level CSV files. `None` means the
/// column is resolved from common aliases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvSchema {
    pub arm: Option<String>,
    pub dose: Option<String>,
    pub response: Option<String>,
}

const DOSE_ALIASES: &[&str] = &["dose", "d"];
const RESPONSE_ALIASES: &[&str] = &["response", "resp", "res", "y"];
const ARM_ALIASES: &[&str] = &["arm", "group"];

fn resolve_column(
    headers: &csv::StringRecord,
    explicit: Option<&str>,
    aliases: &[&str],
    required: bool,
) -> Result<Option<usize>> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    if let Some(name) = explicit {
        return find(name)
            .map(Some)
            .ok_or_else(|| Error::MissingColumn(name.to_string()));
    }
    match aliases.iter().find_map(|a| find(a)) {
        Some(idx) => Ok(Some(idx)),
        None if required => Err(Error::MissingColumn(aliases[0].to_string())),
        None => Ok(None),
    }
}

fn parse_field(record: &csv::StringRecord, idx: usize, row: usize, what: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    let value: f64 = raw.parse().map_err(|_| Error::MalformedRow {
        row,
        message: format!("{what} '{raw}' is not a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::MalformedRow {
            row,
            message: format!("{what} '{raw}' is not finite"),
        });
    }
    Ok(value)
}

/// Reads subject-level records from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<SubjectRecord>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Reads subject-level records. Without an arm column, arms are numbered by
/// ascending dose. Records keep file order. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let dose_col = resolve_column(&headers, schema.dose.as_deref(), DOSE_ALIASES, true)?
        .expect("required column");
    let resp_col = resolve_column(&headers, schema.response.as_deref(), RESPONSE_ALIASES, true)?
        .expect("required column");
    let arm_col = resolve_column(&headers, schema.arm.as_deref(), ARM_ALIASES, false)?;

    let mut rows: Vec<(Option<usize>, f64, f64)> = Vec::new();
    let mut arm_doses: BTreeMap<usize, f64> = BTreeMap::new();
    for result in rdr.records() {
        let record = result?;
        let row = record.position().map_or(rows.len() + 2, |p| p.line() as usize);
        let dose = parse_field(&record, dose_col, row, "dose")?;
        if dose < 0.0 {
            return Err(Error::MalformedRow {
                row,
                message: format!("negative dose {dose}"),
            });
        }
        let response = parse_field(&record, resp_col, row, "response")?;
        let arm = match arm_col {
            Some(idx) => {
                let raw = record.get(idx).unwrap_or("").trim();
                let arm: usize = raw.parse().map_err(|_| Error::MalformedRow {
                    row,
                    message: format!("arm '{raw}' is not a positive integer"),
                })?;
                if arm == 0 {
                    return Err(Error::MalformedRow {
                        row,
                        message: "arm index must be 1-based".into(),
                    });
                }
                let expected = *arm_doses.entry(arm).or_insert(dose);
                if expected != dose {
                    return Err(Error::InconsistentDose {
                        row,
                        arm,
                        expected,
                        found: dose,
                    });
                }
                Some(arm)
            }
            None => None,
        };
        rows.push((arm, dose, response));
    }

    let mut unique: Vec<f64> = rows.iter().map(|r| r.1).collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    Ok(rows
        .into_iter()
        .map(|(arm, dose, response)| SubjectRecord {
            arm: arm.unwrap_or_else(|| {
                unique.partition_point(|&d| d < dose) + 1
            }),
            dose,
            response,
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    dose: f64,
    n: usize,
    mean: f64,
    sd: f64,
}

/// Reads arm summaries from a CSV with columns `dose,n,mean,sd`.
pub fn load_summary_csv(path: impl AsRef<Path>) -> Result<StudySummaries> {
    read_summary_csv(std::fs::File::open(path)?)
}

pub fn read_summary_csv<R: Read>(reader: R) -> Result<StudySummaries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut arms = Vec::new();
    for (i, row) in rdr.deserialize::<SummaryRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            row: i + 2,
            message: e.to_string(),
        })?;
        arms.push(ArmSummary {
            dose: row.dose,
            n: row.n,
            mean: row.mean,
            sd: row.sd,
        });
    }
    if arms.len() < MIN_ARMS {
        return Err(Error::TooFewArms {
            found: arms.len(),
            required: MIN_ARMS,
        });
    }
    StudySummaries::from_arms(arms)
}
