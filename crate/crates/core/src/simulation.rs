//! Monte-Carlo power and type-I error of the adaptive contrast test.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{ConstraintSpec, Rounding};
use crate::error::{Error, Result};
use crate::permutation::{adaptive_rejects, Alternative, CoefficientMode, PermutationConfig, MIN_PERMUTATIONS};
use crate::rng;
use crate::study_data::ArmGroup;

pub const DEFAULT_SD: f64 = 1.5;
pub const DEFAULT_DOSES: [f64; 5] = [0.0, 0.05, 0.2, 0.6, 1.0];

/// Desk-scale replicate and permutation counts.
pub const DESK_N_SIM: usize = 2_000;
pub const DESK_N_PERM: usize = 5_000;

const PERMUTATION_SEED_PURPOSE: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub true_means: Vec<f64>,
    pub sd: f64,
    pub doses: Vec<f64>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, true_means: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            true_means,
            sd: DEFAULT_SD,
            doses: DEFAULT_DOSES.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_means.len() != self.doses.len() {
            return Err(Error::LengthMismatch {
                what: "true_means",
                expected: self.doses.len(),
                found: self.true_means.len(),
            });
        }
        if self.doses.len() < crate::study_data::MIN_ARMS {
            return Err(Error::TooFewArms {
                found: self.doses.len(),
                required: crate::study_data::MIN_ARMS,
            });
        }
        if self.doses[0] != 0.0 {
            return Err(Error::MissingPlacebo);
        }
        if self.doses.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig(format!(
                "{}: doses must increase strictly",
                self.name
            )));
        }
        if !(self.sd > 0.0) || self.true_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{}: sd must be positive and means finite",
                self.name
            )));
        }
        Ok(())
    }
}

/// The eleven reference scenarios (true means at doses 0, 0.05, 0.2, 0.6, 1).
pub fn builtin_scenarios() -> Vec<Scenario> {
    let table: [(&str, [f64; 5]); 11] = [
        ("Scenario1", [0.2, 0.2, 0.2, 0.2, 0.2]),
        ("Scenario2", [0.2, 0.23, 0.32, 0.56, 0.8]),
        ("Scenario3", [0.2, 0.275, 0.432, 0.664, 0.8]),
        ("Scenario4", [0.2, 0.34, 0.55, 0.725, 0.783]),
        ("Scenario5", [0.2, 0.201, 0.206, 0.226, 0.264]),
        ("Scenario6", [0.2, 0.298, 0.54, 0.8, 0.5]),
        ("Scenario7", [0.271, 0.289, 0.362, 0.631, 0.767]),
        ("Scenario8", [0.2, 0.4, 0.6, 0.6, 0.8]),
        ("Scenario9", [0.2, 0.4, 0.6, 0.6, 0.6]),
        ("Scenario10", [0.2, 0.6, 0.6, 0.6, 0.6]),
        ("Scenario11", [0.2, 0.6, 0.6, 0.8, 0.8]),
    ];
    table
        .iter()
        .map(|(name, means)| Scenario::new(*name, means.to_vec()))
        .collect()
}

/// Looks up a built-in scenario; accepts `Scenario2`, `scenario 2` or `2`.
pub fn find_scenario(name: &str) -> Result<Scenario> {
    let key: String = name
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .collect::<String>()
        .to_ascii_lowercase();
    let key = key.strip_prefix("scenario").unwrap_or(&key).to_string();
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name.to_ascii_lowercase().strip_prefix("scenario") == Some(key.as_str()))
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

/// Generating shapes behind scenarios 1-7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratingModel {
    Constant,
    Linear,
    LinearLog,
    Emax,
    Exponential,
    Quadratic,
    Logistic,
}

impl GeneratingModel {
    /// Mean at dose `d`. The exponential and logistic rates carry a
    /// base-10 logarithm; only then do the tabulated scenario means follow.
    pub fn mean(self, d: f64) -> f64 {
        match self {
            GeneratingModel::Constant => 0.2,
            GeneratingModel::Linear => 0.2 + 0.6 * d,
            GeneratingModel::LinearLog => 0.2 + 0.6 * (5.0 * d + 1.0).ln() / 6f64.ln(),
            GeneratingModel::Emax => 0.2 + 0.7 * d / (0.2 + d),
            GeneratingModel::Exponential => 0.183 + 0.017 * (2.0 * d * 6f64.log10()).exp(),
            GeneratingModel::Quadratic => 0.2 + 2.049 * d - 1.749 * d * d,
            GeneratingModel::Logistic => {
                0.193 + 0.607 / (1.0 + (10.0 * 3f64.log10() * (0.4 - d)).exp())
            }
        }
    }

    pub fn scenario_means(self, doses: &[f64]) -> Vec<f64> {
        doses.iter().map(|&d| self.mean(d)).collect()
    }
}

/// Generating model of built-in scenarios 1-7.
pub fn scenario_model(index: usize) -> Option<GeneratingModel> {
    use GeneratingModel::*;
    [Constant, Linear, LinearLog, Emax, Exponential, Quadratic, Logistic]
        .get(index.checked_sub(1)?)
        .copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintVariant {
    /// Top dose exempt from the ordering chain.
    Umbrella,
    /// Every coefficient in the chain.
    FullChain,
}

impl ConstraintVariant {
    pub fn label(self) -> &'static str {
        match self {
            ConstraintVariant::Umbrella => "umbrella",
            ConstraintVariant::FullChain => "full-chain",
        }
    }

    pub fn constraint(self) -> ConstraintSpec {
        ConstraintSpec::increasing().with_umbrella(self == ConstraintVariant::Umbrella)
    }
}

impl std::str::FromStr for ConstraintVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "umbrella" | "1" => Ok(ConstraintVariant::Umbrella),
            "full-chain" | "full_chain" | "fullchain" | "full" | "2" => Ok(ConstraintVariant::FullChain),
            other => Err(Error::InvalidConfig(format!("unknown constraint variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Subjects per arm (equal allocation).
    pub n_per_arm: usize,
    pub n_sim: usize,
    pub n_perm: usize,
    /// One-sided significance level.
    pub alpha: f64,
    pub constraint: ConstraintSpec,
    pub rounding: Rounding,
    pub seed: u64,
    #[serde(default)]
    pub coefficient_mode: CoefficientMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_per_arm: 100,
            n_sim: DESK_N_SIM,
            n_perm: DESK_N_PERM,
            alpha: 0.025,
            constraint: ConstraintVariant::Umbrella.constraint(),
            rounding: Rounding::default(),
            seed: 2021,
            coefficient_mode: CoefficientMode::Readapt,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.n_per_arm < 2 {
            return Err(Error::InvalidConfig("n_per_arm must be at least 2".into()));
        }
        if self.n_sim == 0 {
            return Err(Error::InvalidConfig("n_sim must be positive".into()));
        }
        if self.n_perm < MIN_PERMUTATIONS {
            return Err(Error::TooFewPermutations {
                got: self.n_perm,
                min: MIN_PERMUTATIONS,
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub scenario: String,
    pub rejections: usize,
    pub n_sim: usize,
    pub power: f64,
    pub mc_se: f64,
}

impl PowerResult {
    pub fn from_counts(scenario: impl Into<String>, rejections: usize, n_sim: usize) -> Self {
        let power = rejections as f64 / n_sim as f64;
        Self {
            scenario: scenario.into(),
            rejections,
            n_sim,
            power,
            mc_se: (power * (1.0 - power) / n_sim as f64).sqrt(),
        }
    }
}

/// Draws replicate `index` of `scenario` with `n` subjects per arm.
fn simulate_groups(scenario: &Scenario, n: usize, seed: u64, index: u64) -> Vec<ArmGroup> {
    let mut rng = rng::stream(seed, index);
    scenario
        .true_means
        .iter()
        .zip(&scenario.doses)
        .map(|(&mean, &dose)| ArmGroup {
            dose,
            responses: (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + scenario.sd * z
                })
                .collect(),
        })
        .collect()
}

/// Rejection rate of the adaptive contrast test at `config.alpha`.
///
/// Replicate `r` draws its data from stream `(seed, r)` and permutes with
/// its own derived seed, so counts do not depend on the thread count.
pub fn simulate_power(scenario: &Scenario, config: &SimConfig) -> Result<PowerResult> {
    scenario.validate()?;
    config.validate()?;
    let perm_seed_base = rng::stream_seed(config.seed, PERMUTATION_SEED_PURPOSE);
    let rejections = (0..config.n_sim as u64)
        .into_par_iter()
        .map(|r| -> Result<usize> {
            let groups = simulate_groups(scenario, config.n_per_arm, config.seed, r);
            let perm = PermutationConfig {
                n_permutations: config.n_perm,
                seed: rng::stream_seed(perm_seed_base, r),
                alternative: Alternative::Upper,
                add_one_correction: false,
                coefficient_mode: config.coefficient_mode,
            };
            adaptive_rejects(&groups, config.constraint, config.rounding, &perm, config.alpha)
                .map(usize::from)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(PowerResult::from_counts(scenario.name.clone(), rejections, config.n_sim))
}

/// One row of a power report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: String,
    pub constraint_variant: ConstraintVariant,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_sim: usize,
    pub n_perm: usize,
    pub alpha: f64,
    pub power: f64,
    pub mc_se: f64,
    pub seed: u64,
}

/// Power over `scenarios x sample_sizes x variants`. Other settings come
/// from `base`.
pub fn power_table(
    scenarios: &[Scenario],
    sample_sizes: &[usize],
    variants: &[ConstraintVariant],
    base: &SimConfig,
) -> Result<Vec<PowerRow>> {
    let mut rows = Vec::with_capacity(scenarios.len() * sample_sizes.len() * variants.len());
    for &variant in variants {
        for scenario in scenarios {
            for &n in sample_sizes {
                let config = SimConfig {
                    n_per_arm: n,
                    constraint: variant.constraint(),
                    ..*base
                };
                let result = simulate_power(scenario, &config)?;
                rows.push(PowerRow {
                    scenario: scenario.name.clone(),
                    constraint_variant: variant,
                    n,
                    n_sim: config.n_sim,
                    n_perm: config.n_perm,
                    alpha: config.alpha,
                    power: result.power,
                    mc_se: result.mc_se,
                    seed: config.seed,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_power_csv<W: Write>(rows: &[PowerRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        wtr.write_record([
            "scenario",
            "constraint_variant",
            "N",
            "n_sim",
            "n_perm",
            "alpha",
            "power",
            "mc_se",
            "seed",
        ])?;
    }
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_power_csv<R: std::io::Read>(reader: R) -> Result<Vec<PowerRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::MalformedRow {
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct ScenarioRow {
    scenario: String,
    dose: f64,
    mean: f64,
    #[serde(default)]
    sd: Option<f64>,
}

/// Reads custom scenarios from long-format CSV `scenario,dose,mean[,sd]`.
pub fn read_scenarios_csv<R: std::io::Read>(reader: R) -> Result<Vec<Scenario>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut scenarios: Vec<Scenario> = Vec::new();
    for (i, row) in rdr.deserialize::<ScenarioRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            row: i + 2,
            message: e.to_string(),
        })?;
        let idx = match scenarios.iter().position(|s| s.name == row.scenario) {
            Some(idx) => idx,
            None => {
                scenarios.push(Scenario {
                    name: row.scenario.clone(),
                    true_means: Vec::new(),
                    sd: DEFAULT_SD,
                    doses: Vec::new(),
                });
                scenarios.len() - 1
            }
        };
        let s = &mut scenarios[idx];
        s.doses.push(row.dose);
        s.true_means.push(row.mean);
        if let Some(sd) = row.sd {
            s.sd = sd;
        }
    }
    for s in &mut scenarios {
        let mut pairs: Vec<(f64, f64)> = s.doses.iter().copied().zip(s.true_means.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        (s.doses, s.true_means) = pairs.into_iter().unzip();
        s.validate()?;
    }
    Ok(scenarios)
}
