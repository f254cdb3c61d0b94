//! Permutation p-values for contrast tests.
//!
//! Each permutation reassigns the pooled responses to arms of the original
//! sizes and recomputes the full t-statistic, pooled variance included. For
//! the adaptive test the coefficients are by default re-derived from every
//! permuted set of means, so the reference distribution is that of the
//! statistic actually observed. Holding the observed coefficients fixed is
//! available but does not hold its level: the observed contrast is tuned to
//! the observed means while permuted data are scored against it blindly.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{coefficients_into, compute_coefficients, ConstraintSpec, Rounding};
use crate::error::{Error, Result};
use crate::rng;
use crate::study_data::{group_by_arm, ArmGroup, SubjectRecord, MIN_ARMS};

pub const MIN_PERMUTATIONS: usize = 100;

/// Relative slack when comparing a permuted statistic to the observed one,
/// so that rearrangements reproducing the observed partition count as ties
/// regardless of summation order.
const TIE_TOLERANCE: f64 = 1e-10;

const ZERO_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    Upper,
    Lower,
}

impl Alternative {
    fn sign(self) -> f64 {
        match self {
            Alternative::Upper => 1.0,
            Alternative::Lower => -1.0,
        }
    }
}

/// How the adaptive test treats its coefficients under permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientMode {
    /// Recompute the coefficients from each permuted set of means.
    #[default]
    Readapt,
    /// Keep the coefficients of the observed data for every permutation.
    Frozen,
}

impl std::str::FromStr for CoefficientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "readapt" | "re-adapt" => Ok(Self::Readapt),
            "frozen" | "fixed" => Ok(Self::Frozen),
            other => Err(Error::InvalidConfig(format!("unknown coefficient mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_permutations: usize,
    pub seed: u64,
    pub alternative: Alternative,
    /// Report `(count + 1) / (B + 1)` instead of `count / B`.
    pub add_one_correction: bool,
    /// Only used by the adaptive test.
    #[serde(default)]
    pub coefficient_mode: CoefficientMode,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            n_permutations: 10_000,
            seed: 2021,
            alternative: Alternative::Upper,
            add_one_correction: false,
            coefficient_mode: CoefficientMode::Readapt,
        }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_permutations < MIN_PERMUTATIONS {
            return Err(Error::TooFewPermutations {
                got: self.n_permutations,
                min: MIN_PERMUTATIONS,
            });
        }
        Ok(())
    }

    pub fn p_value(&self, exceed_count: usize) -> f64 {
        let b = self.n_permutations as f64;
        if self.add_one_correction {
            (exceed_count as f64 + 1.0) / (b + 1.0)
        } else {
            exceed_count as f64 / b
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub p_value: f64,
    pub observed_t: f64,
    pub exceed_count: usize,
    pub n_permutations: usize,
}

/// Max-T permutation results for a family of fixed contrasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxTOutcome {
    pub observed_t: Vec<f64>,
    /// `#{max_m T_b,m >= T_obs,j} / B` for each contrast `j`.
    pub adjusted_p: Vec<f64>,
    pub exceed_counts: Vec<usize>,
    /// Index of the contrast with the most extreme observed statistic.
    pub best_index: usize,
    pub global_p: f64,
    pub n_permutations: usize,
}

/// Pooled, centred responses laid out arm by arm.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pooled: Vec<f64>,
    /// Grand mean removed from `pooled`.
    offset: f64,
    sizes: Vec<usize>,
    total_ss: f64,
    df: f64,
}

impl Layout {
    pub(crate) fn from_groups(groups: &[ArmGroup]) -> Self {
        let n: usize = groups.iter().map(|g| g.responses.len()).sum();
        let grand = groups.iter().flat_map(|g| &g.responses).sum::<f64>() / n as f64;
        let pooled: Vec<f64> = groups
            .iter()
            .flat_map(|g| g.responses.iter().map(|r| r - grand))
            .collect();
        let total_ss = pooled.iter().map(|r| r * r).sum();
        Self {
            pooled,
            offset: grand,
            sizes: groups.iter().map(|g| g.responses.len()).collect(),
            total_ss,
            df: (n - groups.len()) as f64,
        }
    }

    pub(crate) fn arm_count(&self) -> usize {
        self.sizes.len()
    }

    /// Arm means (in centred units) of the unpermuted data.
    pub(crate) fn observed_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.sizes.len()];
        block_means(&self.pooled, &self.sizes, &mut means);
        means
    }

    /// Draws the `index`-th permutation and writes the arm means into `means`.
    fn permuted_means(&self, seed: u64, index: u64, buf: &mut [f64], means: &mut [f64]) {
        buf.copy_from_slice(&self.pooled);
        let n = buf.len();
        let fixed = n - self.sizes.last().copied().unwrap_or(0);
        let mut rng = rng::stream(seed, index);
        for i in 0..fixed {
            let j = rng.random_range(i..n);
            buf.swap(i, j);
        }
        block_means(buf, &self.sizes, means);
    }

    /// Pooled within-arm variance given centred arm means.
    fn pooled_variance(&self, means: &[f64]) -> f64 {
        let (between, total): (f64, f64) = means
            .iter()
            .zip(&self.sizes)
            .fold((0.0, 0.0), |(b, t), (&m, &n)| {
                (b + n as f64 * m * m, t + n as f64 * m)
            });
        let n_total = self.pooled.len() as f64;
        let within = self.total_ss - between + total * total / n_total;
        (within / self.df).max(0.0)
    }

    fn variance_is_zero(&self, s2: f64) -> bool {
        s2 * self.df <= 1e-13 * self.total_ss
    }
}

fn block_means(values: &[f64], sizes: &[usize], means: &mut [f64]) {
    let mut start = 0;
    for (m, &n) in means.iter_mut().zip(sizes) {
        *m = values[start..start + n].iter().sum::<f64>() / n as f64;
        start += n;
    }
}

/// A fixed contrast with its scale-free denominator precomputed.
#[derive(Debug, Clone)]
pub(crate) struct PreparedContrast {
    coefficients: Vec<f64>,
    variance_term: f64,
}

impl PreparedContrast {
    pub(crate) fn new(coefficients: &[f64], sizes: &[usize]) -> Self {
        Self {
            coefficients: coefficients.to_vec(),
            variance_term: variance_term(coefficients, sizes),
        }
    }
}

fn variance_term(coefficients: &[f64], sizes: &[usize]) -> f64 {
    coefficients
        .iter()
        .zip(sizes)
        .map(|(c, &n)| c * c / n as f64)
        .sum()
}

/// Contrast t-statistic. A zero pooled variance yields `+-inf` (or 0 when
/// the numerator vanishes too).
fn t_statistic(layout: &Layout, coefficients: &[f64], var_term: f64, means: &[f64], s2: f64) -> f64 {
    let numerator: f64 = coefficients.iter().zip(means).map(|(c, m)| c * m).sum();
    if layout.variance_is_zero(s2) {
        let scale = (layout.total_ss / layout.pooled.len() as f64).sqrt();
        return if numerator.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            0.0
        } else {
            numerator.signum() * f64::INFINITY
        };
    }
    numerator / (var_term * s2).sqrt()
}

/// What is evaluated on each permuted data set.
enum Statistic<'a> {
    /// Maximum over a family of fixed contrasts.
    Fixed(&'a [PreparedContrast]),
    /// The adaptive contrast, re-derived from the permuted means.
    Adaptive {
        constraint: ConstraintSpec,
        rounding: Rounding,
    },
}

struct Scratch {
    buf: Vec<f64>,
    means: Vec<f64>,
    raw: Vec<f64>,
    coefficients: Vec<f64>,
}

/// Exceedance threshold for an observed (sign-adjusted) statistic.
fn threshold(observed: f64) -> f64 {
    if observed.is_finite() {
        observed - TIE_TOLERANCE * observed.abs().max(1.0)
    } else {
        observed
    }
}

/// Engine shared by all permutation tests. For each permutation the
/// sign-adjusted statistic (the maximum over the family for fixed
/// contrasts) is compared with every threshold.
struct Engine<'a> {
    layout: &'a Layout,
    statistic: Statistic<'a>,
    sign: f64,
    seed: u64,
}

impl Engine<'_> {
    /// Signed statistics of the unpermuted data, one per contrast.
    fn observed(&self) -> Vec<f64> {
        let mut scratch = self.scratch();
        scratch.means = self.layout.observed_means();
        match self.statistic {
            Statistic::Fixed(contrasts) => {
                let s2 = self.layout.pooled_variance(&scratch.means);
                contrasts
                    .iter()
                    .map(|c| t_statistic(self.layout, &c.coefficients, c.variance_term, &scratch.means, s2))
                    .collect()
            }
            Statistic::Adaptive { .. } => vec![self.sign * self.score(&mut scratch)],
        }
    }

    /// Sign-adjusted statistic for the means held in `scratch`; the
    /// maximum over the family for fixed contrasts.
    fn score(&self, scratch: &mut Scratch) -> f64 {
        let s2 = self.layout.pooled_variance(&scratch.means);
        match self.statistic {
            Statistic::Fixed(contrasts) => contrasts
                .iter()
                .map(|c| self.sign * t_statistic(self.layout, &c.coefficients, c.variance_term, &scratch.means, s2))
                .fold(f64::NEG_INFINITY, f64::max),
            Statistic::Adaptive { constraint, rounding } => {
                for (r, m) in scratch.raw.iter_mut().zip(&scratch.means) {
                    *r = m + self.layout.offset;
                }
                if coefficients_into(&scratch.raw, constraint, rounding, &mut scratch.coefficients) {
                    return 0.0;
                }
                let vt = variance_term(&scratch.coefficients, &self.layout.sizes);
                self.sign * t_statistic(self.layout, &scratch.coefficients, vt, &scratch.means, s2)
            }
        }
    }

    fn max_statistic(&self, index: u64, scratch: &mut Scratch) -> f64 {
        self.layout
            .permuted_means(self.seed, index, &mut scratch.buf, &mut scratch.means);
        self.score(scratch)
    }

    fn scratch(&self) -> Scratch {
        let k = self.layout.arm_count();
        Scratch {
            buf: vec![0.0; self.layout.pooled.len()],
            means: vec![0.0; k],
            raw: vec![0.0; k],
            coefficients: vec![0.0; k],
        }
    }

    /// Exceedance counts over permutations `range`, in parallel.
    fn count_parallel(&self, thresholds: &[f64], range: Range<usize>) -> Vec<usize> {
        let zero = || vec![0usize; thresholds.len()];
        range
            .into_par_iter()
            .with_min_len(256)
            .fold(
                || (zero(), self.scratch()),
                |(mut counts, mut scratch), b| {
                    let max_t = self.max_statistic(b as u64, &mut scratch);
                    for (count, &thr) in counts.iter_mut().zip(thresholds) {
                        *count += usize::from(max_t >= thr);
                    }
                    (counts, scratch)
                },
            )
            .map(|(counts, _)| counts)
            .reduce(zero, |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            })
    }

    /// Single-contrast rejection decision at `alpha`, evaluated sequentially
    /// and stopped as soon as the outcome is settled. Gives the same answer
    /// as running all permutations.
    fn rejects_sequential(&self, threshold: f64, config: &PermutationConfig, alpha: f64) -> bool {
        let total = config.n_permutations;
        let rejects = |count: usize| config.p_value(count) < alpha;
        let mut scratch = self.scratch();
        let mut count = 0usize;
        for b in 0..total {
            if !rejects(count) {
                return false;
            }
            if rejects(count + (total - b)) {
                return true;
            }
            let t = self.max_statistic(b as u64, &mut scratch);
            count += usize::from(t >= threshold);
        }
        rejects(count)
    }
}

fn check_contrast(index: usize, coefficients: &[f64], arms: usize) -> Result<()> {
    if coefficients.len() != arms {
        return Err(Error::LengthMismatch {
            what: "contrast",
            expected: arms,
            found: coefficients.len(),
        });
    }
    let sum: f64 = coefficients.iter().sum();
    if !sum.is_finite() || sum.abs() > ZERO_SUM_TOLERANCE {
        return Err(Error::ContrastNotZeroSum { index, sum });
    }
    if coefficients.iter().all(|&c| c == 0.0) {
        return Err(Error::InvalidConfig(format!("contrast {index} is identically zero")));
    }
    Ok(())
}

/// Adaptive contrast test p-value. Coefficients come from the means after
/// `rounding`; `config.coefficient_mode` decides whether permuted data get
/// their own coefficients or reuse the observed ones.
pub fn permutation_pvalue(
    records: &[SubjectRecord],
    constraint: ConstraintSpec,
    rounding: Rounding,
    config: &PermutationConfig,
) -> Result<PermutationOutcome> {
    config.validate()?;
    let groups = group_by_arm(records, MIN_ARMS)?;
    let raw_means: Vec<f64> = groups
        .iter()
        .map(|g| g.responses.iter().sum::<f64>() / g.responses.len() as f64)
        .collect();
    let contrast = compute_coefficients(&raw_means, constraint, rounding)?;
    if contrast.degenerate {
        return Ok(PermutationOutcome {
            p_value: 1.0,
            observed_t: 0.0,
            exceed_count: config.n_permutations,
            n_permutations: config.n_permutations,
        });
    }
    let layout = Layout::from_groups(&groups);
    match config.coefficient_mode {
        CoefficientMode::Frozen => fixed_contrast_outcome(&layout, &contrast.coefficients, config),
        CoefficientMode::Readapt => {
            let engine = Engine {
                layout: &layout,
                statistic: Statistic::Adaptive { constraint, rounding },
                sign: config.alternative.sign(),
                seed: config.seed,
            };
            Ok(single_outcome(&engine, config))
        }
    }
}

/// Permutation p-value for one fixed contrast. Works for any number of
/// arms from two upward.
pub fn fixed_contrast_pvalue(
    records: &[SubjectRecord],
    coefficients: &[f64],
    config: &PermutationConfig,
) -> Result<PermutationOutcome> {
    config.validate()?;
    let groups = group_by_arm(records, 2)?;
    check_contrast(0, coefficients, groups.len())?;
    fixed_contrast_outcome(&Layout::from_groups(&groups), coefficients, config)
}

fn fixed_contrast_outcome(
    layout: &Layout,
    coefficients: &[f64],
    config: &PermutationConfig,
) -> Result<PermutationOutcome> {
    let prepared = [PreparedContrast::new(coefficients, &layout.sizes)];
    let engine = Engine {
        layout,
        statistic: Statistic::Fixed(&prepared),
        sign: config.alternative.sign(),
        seed: config.seed,
    };
    Ok(single_outcome(&engine, config))
}

fn single_outcome(engine: &Engine, config: &PermutationConfig) -> PermutationOutcome {
    let observed_t = engine.observed()[0];
    let thr = threshold(engine.sign * observed_t);
    let exceed_count = engine.count_parallel(&[thr], 0..config.n_permutations)[0];
    PermutationOutcome {
        p_value: config.p_value(exceed_count),
        observed_t,
        exceed_count,
        n_permutations: config.n_permutations,
    }
}

/// Max-T permutation test over several fixed contrasts.
pub fn multi_contrast_max_t(
    records: &[SubjectRecord],
    contrasts: &[Vec<f64>],
    config: &PermutationConfig,
) -> Result<MaxTOutcome> {
    config.validate()?;
    if contrasts.is_empty() {
        return Err(Error::InvalidConfig("no contrasts supplied".into()));
    }
    let groups = group_by_arm(records, 2)?;
    for (i, c) in contrasts.iter().enumerate() {
        check_contrast(i, c, groups.len())?;
    }
    let layout = Layout::from_groups(&groups);
    let prepared: Vec<PreparedContrast> = contrasts
        .iter()
        .map(|c| PreparedContrast::new(c, &layout.sizes))
        .collect();
    let engine = Engine {
        layout: &layout,
        statistic: Statistic::Fixed(&prepared),
        sign: config.alternative.sign(),
        seed: config.seed,
    };
    let observed_t = engine.observed();
    let thresholds: Vec<f64> = observed_t.iter().map(|t| threshold(engine.sign * t)).collect();
    let exceed_counts = engine.count_parallel(&thresholds, 0..config.n_permutations);
    let adjusted_p: Vec<f64> = exceed_counts.iter().map(|&c| config.p_value(c)).collect();
    let best_index = observed_t
        .iter()
        .enumerate()
        .max_by(|a, b| (engine.sign * a.1).total_cmp(&(engine.sign * b.1)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(MaxTOutcome {
        global_p: adjusted_p[best_index],
        observed_t,
        adjusted_p,
        exceed_counts,
        best_index,
        n_permutations: config.n_permutations,
    })
}

/// Whether the adaptive test rejects at `alpha` for already-grouped data.
/// Used by the power simulator; stops permuting once the decision is fixed.
pub(crate) fn adaptive_rejects(
    groups: &[ArmGroup],
    constraint: ConstraintSpec,
    rounding: Rounding,
    config: &PermutationConfig,
    alpha: f64,
) -> Result<bool> {
    let raw_means: Vec<f64> = groups
        .iter()
        .map(|g| g.responses.iter().sum::<f64>() / g.responses.len() as f64)
        .collect();
    let contrast = compute_coefficients(&raw_means, constraint, rounding)?;
    if contrast.degenerate {
        return Ok(config.p_value(config.n_permutations) < alpha);
    }
    let layout = Layout::from_groups(groups);
    let prepared = [PreparedContrast::new(&contrast.coefficients, &layout.sizes)];
    let statistic = match config.coefficient_mode {
        CoefficientMode::Frozen => Statistic::Fixed(&prepared),
        CoefficientMode::Readapt => Statistic::Adaptive { constraint, rounding },
    };
    let engine = Engine {
        layout: &layout,
        statistic,
        sign: config.alternative.sign(),
        seed: config.seed,
    };
    let thr = threshold(engine.sign * engine.observed()[0]);
    Ok(engine.rejects_sequential(thr, config, alpha))
}
