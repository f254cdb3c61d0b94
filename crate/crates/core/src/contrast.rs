//! Adaptive contrast coefficients under an ordinal constraint and the
//! contrast t-statistic.
//!
//! Coefficients follow the observed means through their running maximum
//! (running minimum when improvement means lower responses):
//!
//! ```text
//! c_1 = ((k - 1) Y_1 - sum_{i>=2} M_i) / k
//! c_i = M_i - M_{i-1} + c_{i-1}
//! ```
//!
//! where `M_i` is the running extreme of `Y_1..Y_i`. With an umbrella
//! constraint the top dose uses its own mean in place of `M_k`, so its
//! coefficient is free to fall below its neighbour.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::study_data::{StudySummaries, MIN_ARMS};

/// Coefficients with `max |c_i|` below this are treated as all zero.
pub const DEGENERACY_TOLERANCE: f64 = 1e-8;

/// Grain applied to observed means before coefficients are derived.
pub const DEFAULT_ROUNDING_GRAIN: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Larger responses indicate improvement.
    Increasing,
    /// Smaller responses indicate improvement.
    Decreasing,
}

impl Direction {
    /// +1 for increasing, -1 for decreasing.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "increasing" | "inc" | "up" => Ok(Direction::Increasing),
            "decreasing" | "dec" | "down" => Ok(Direction::Decreasing),
            other => Err(Error::InvalidConfig(format!("unknown direction '{other}'"))),
        }
    }
}

/// Ordinal constraint on the contrast coefficients. With `umbrella` the
/// highest dose is left out of the ordering chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub direction: Direction,
    pub umbrella: bool,
}

impl ConstraintSpec {
    pub fn new(direction: Direction, umbrella: bool) -> Self {
        Self {
            direction,
            umbrella,
        }
    }

    pub fn increasing() -> Self {
        Self::new(Direction::Increasing, false)
    }

    pub fn decreasing() -> Self {
        Self::new(Direction::Decreasing, false)
    }

    pub fn with_umbrella(mut self, umbrella: bool) -> Self {
        self.umbrella = umbrella;
        self
    }
}

/// Rounding applied to means before coefficient derivation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    Off,
    Grain(f64),
}

impl Default for Rounding {
    fn default() -> Self {
        Rounding::Grain(DEFAULT_ROUNDING_GRAIN)
    }
}

impl Rounding {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::Off => x,
            Rounding::Grain(g) => (x / g).round() * g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastVector {
    pub coefficients: Vec<f64>,
    pub constraint: ConstraintSpec,
    pub degenerate: bool,
}

impl ContrastVector {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastTestResult {
    pub t_value: f64,
    pub contrast: ContrastVector,
    pub pooled_variance: f64,
    /// `sum(c_i * Y_i)`
    pub numerator: f64,
    /// `sum(c_i^2 / n_i)`
    pub variance_term: f64,
}

/// Running maximum (increasing) or minimum (decreasing) of `means`.
pub fn running_extremes(means: &[f64], direction: Direction) -> Result<Vec<f64>> {
    let (&first, rest) = means.split_first().ok_or(Error::TooFewArms {
        found: 0,
        required: 1,
    })?;
    let mut out = Vec::with_capacity(means.len());
    out.push(first);
    let mut current = first;
    for &m in rest {
        current = match direction {
            Direction::Increasing => current.max(m),
            Direction::Decreasing => current.min(m),
        };
        out.push(current);
    }
    Ok(out)
}

/// Writes the adaptive coefficients for `means` into `out` without
/// allocating. Returns whether the contrast is degenerate, in which case
/// `out` is all zeros. Inputs are assumed finite with at least two arms.
pub(crate) fn coefficients_into(
    means: &[f64],
    constraint: ConstraintSpec,
    rounding: Rounding,
    out: &mut [f64],
) -> bool {
    let k = means.len();
    let mut current = rounding.apply(means[0]);
    out[0] = current;
    for i in 1..k {
        let y = rounding.apply(means[i]);
        current = match constraint.direction {
            Direction::Increasing => current.max(y),
            Direction::Decreasing => current.min(y),
        };
        out[i] = if constraint.umbrella && i == k - 1 { y } else { current };
    }

    let tail: f64 = out[1..].iter().sum();
    let mut prev = out[0];
    out[0] = ((k - 1) as f64 * out[0] - tail) / k as f64;
    for i in 1..k {
        let e = out[i];
        out[i] = e - prev + out[i - 1];
        prev = e;
    }

    let degenerate = out.iter().all(|v| v.abs() < DEGENERACY_TOLERANCE);
    if degenerate {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    degenerate
}

/// Adaptive contrast coefficients for the observed arm means (placebo
/// first, ascending dose).
pub fn compute_coefficients(
    means: &[f64],
    constraint: ConstraintSpec,
    rounding: Rounding,
) -> Result<ContrastVector> {
    let k = means.len();
    if k < MIN_ARMS {
        return Err(Error::TooFewArms {
            found: k,
            required: MIN_ARMS,
        });
    }
    if let Some(i) = means.iter().position(|m| !m.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("mean of arm {}", i + 1),
        });
    }

    let mut c = vec![0.0; k];
    let degenerate = coefficients_into(means, constraint, rounding, &mut c);
    Ok(ContrastVector {
        coefficients: c,
        constraint,
        degenerate,
    })
}

/// `T = sum(c_i Y_i) / sqrt(sum(c_i^2 / n_i) * S^2)`; zero for a
/// degenerate contrast.
pub fn contrast_statistic(
    contrast: &ContrastVector,
    summaries: &StudySummaries,
) -> Result<ContrastTestResult> {
    if contrast.len() != summaries.len() {
        return Err(Error::LengthMismatch {
            what: "contrast",
            expected: summaries.len(),
            found: contrast.len(),
        });
    }
    let (numerator, variance_term) = contrast
        .coefficients
        .iter()
        .zip(summaries.arms())
        .fold((0.0, 0.0), |(num, var), (&c, arm)| {
            (num + c * arm.mean, var + c * c / arm.n as f64)
        });
    let pooled_variance = summaries.pooled_variance();
    let t_value = if contrast.degenerate {
        0.0
    } else if pooled_variance <= 0.0 {
        return Err(Error::ZeroVariance);
    } else {
        numerator / (variance_term * pooled_variance).sqrt()
    };
    Ok(ContrastTestResult {
        t_value,
        contrast: contrast.clone(),
        pooled_variance,
        numerator,
        variance_term,
    })
}

/// Upper quantiles of a t distribution, reported alongside summary-only
/// analyses where no permutation p-value is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TQuantile {
    pub upper_tail: f64,
    pub quantile: f64,
}

pub const REFERENCE_UPPER_TAILS: [f64; 3] = [0.025, 0.0025, 0.0005];

pub fn t_reference_quantiles(degrees_of_freedom: usize) -> Result<Vec<TQuantile>> {
    let dist = StudentsT::new(0.0, 1.0, degrees_of_freedom as f64)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(REFERENCE_UPPER_TAILS
        .iter()
        .map(|&upper_tail| TQuantile {
            upper_tail,
            quantile: dist.inverse_cdf(1.0 - upper_tail),
        })
        .collect())
}
