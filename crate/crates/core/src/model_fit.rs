//! Candidate dose-response models fitted to arm means by normal maximum
//! likelihood, AIC-based selection and minimal-effective-dose search.
//!
//! Every model is anchored at the placebo mean `e0`. Emax and logistic
//! models additionally take a fixed maximal effect, the extreme observed
//! arm mean minus `e0`. The residual SD is profiled out:
//! `sigma^2 = RSS / k` on the `k` dose levels.

use std::f64::consts::PI;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::Direction;
use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// Floor applied to the MLE residual SD of (near-)interpolating fits.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Number of points on the dose grid used for fitted curves.
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Emax,
    LinearLog,
    Linear,
    Exponential,
    Quadratic,
    Logistic,
}

impl ModelKind {
    /// Fixed preference order, also used to break AIC ties.
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Emax,
        ModelKind::LinearLog,
        ModelKind::Linear,
        ModelKind::Exponential,
        ModelKind::Quadratic,
        ModelKind::Logistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Emax => "Emax",
            ModelKind::LinearLog => "LinearLog",
            ModelKind::Linear => "Linear",
            ModelKind::Exponential => "Exponential",
            ModelKind::Quadratic => "Quadratic",
            ModelKind::Logistic => "Logistic",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Emax => &["ed50"],
            ModelKind::LinearLog | ModelKind::Linear => &["theta"],
            ModelKind::Exponential | ModelKind::Quadratic | ModelKind::Logistic => {
                &["theta1", "theta2"]
            }
        }
    }

    /// Estimated parameters, residual SD included.
    pub fn n_params(self) -> usize {
        self.param_names().len() + 1
    }

    fn order(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap_or(usize::MAX)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "emax" => Ok(ModelKind::Emax),
            "linearlog" | "loglinear" | "linlog" => Ok(ModelKind::LinearLog),
            "linear" => Ok(ModelKind::Linear),
            "exponential" | "exp" => Ok(ModelKind::Exponential),
            "quadratic" => Ok(ModelKind::Quadratic),
            "logistic" => Ok(ModelKind::Logistic),
            _ => Err(Error::InvalidConfig(format!("unknown model '{s}'"))),
        }
    }
}

/// How the fixed maximal effect of the Emax and Logistic models is taken
/// from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmaxAnchoring {
    /// Extreme arm mean minus the placebo mean.
    #[default]
    Difference,
    /// The extreme arm mean itself.
    ExtremeMean,
}

impl std::str::FromStr for EmaxAnchoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "difference" | "diff" => Ok(Self::Difference),
            "extreme-mean" | "extreme" | "raw" => Ok(Self::ExtremeMean),
            other => Err(Error::InvalidConfig(format!("unknown Emax anchoring '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelAnchors {
    /// Placebo arm mean.
    pub e0: f64,
    /// Maximal effect used by Emax and Logistic, see [`EmaxAnchoring`].
    pub emax_effect: f64,
}

impl ModelAnchors {
    /// Anchors under the default [`EmaxAnchoring::Difference`] convention.
    pub fn from_data(doses: &[f64], means: &[f64], direction: Direction) -> Result<Self> {
        Self::with_anchoring(doses, means, direction, EmaxAnchoring::Difference)
    }

    pub fn with_anchoring(
        doses: &[f64],
        means: &[f64],
        direction: Direction,
        anchoring: EmaxAnchoring,
    ) -> Result<Self> {
        check_lengths(doses, means)?;
        let e0 = doses
            .iter()
            .position(|&d| d == 0.0)
            .map(|i| means[i])
            .ok_or(Error::MissingPlacebo)?;
        let extreme = match direction {
            Direction::Increasing => means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Direction::Decreasing => means.iter().copied().fold(f64::INFINITY, f64::min),
        };
        let emax_effect = match anchoring {
            EmaxAnchoring::Difference => extreme - e0,
            EmaxAnchoring::ExtremeMean => extreme,
        };
        Ok(Self { e0, emax_effect })
    }
}

fn check_lengths(doses: &[f64], means: &[f64]) -> Result<()> {
    if doses.len() != means.len() {
        return Err(Error::LengthMismatch {
            what: "means",
            expected: doses.len(),
            found: means.len(),
        });
    }
    Ok(())
}

fn domain_error(kind: ModelKind, message: impl Into<String>) -> Error {
    Error::InvalidParameter {
        model: kind.name(),
        message: message.into(),
    }
}

/// Model mean at `dose`. Logs are natural.
pub fn predict(kind: ModelKind, anchors: &ModelAnchors, params: &[f64], dose: f64) -> Result<f64> {
    let expected = kind.param_names().len();
    if params.len() != expected {
        return Err(domain_error(
            kind,
            format!("expected {expected} parameter(s), got {}", params.len()),
        ));
    }
    if !(dose >= 0.0) {
        return Err(domain_error(kind, format!("dose {dose} must be non-negative")));
    }
    match kind {
        ModelKind::Emax if params[0] <= 0.0 => {
            return Err(domain_error(kind, "ED50 must be positive"));
        }
        ModelKind::Exponential if params[1] == 0.0 => {
            return Err(domain_error(kind, "theta2 must be non-zero"));
        }
        ModelKind::Logistic if params[1] <= 0.0 => {
            return Err(domain_error(kind, "theta2 must be positive"));
        }
        _ => {}
    }
    Ok(mean_unchecked(kind, anchors, params, dose))
}

fn mean_unchecked(kind: ModelKind, a: &ModelAnchors, p: &[f64], d: f64) -> f64 {
    match kind {
        ModelKind::Emax => a.e0 + a.emax_effect * d / (p[0] + d),
        ModelKind::LinearLog => a.e0 + p[0] * (d + 1.0).ln(),
        ModelKind::Linear => a.e0 + p[0] * d,
        ModelKind::Exponential => a.e0 + p[0] * (d / p[1]).exp(),
        ModelKind::Quadratic => a.e0 + p[0] * d + p[1] * d * d,
        ModelKind::Logistic => a.e0 + a.emax_effect / (1.0 + ((p[0] - d) / p[1]).exp()),
    }
}

/// Coordinates seen by the optimiser: positive parameters are searched on
/// the log scale.
fn to_natural(kind: ModelKind, internal: &[f64]) -> Vec<f64> {
    match kind {
        ModelKind::Emax => vec![internal[0].exp()],
        ModelKind::Logistic => vec![internal[0], internal[1].exp()],
        _ => internal.to_vec(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOptions {
    /// Per-arm weights (typically arm sizes). `None` fits unweighted means.
    pub weights: Option<Vec<f64>>,
    pub optimizer: Option<NelderMeadOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub anchors: ModelAnchors,
    pub params: IndexMap<String, f64>,
    pub sigma: f64,
    pub rss: f64,
    pub n_points: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub converged: bool,
    /// False when the residual SD hit [`SIGMA_FLOOR`].
    pub aic_reliable: bool,
}

impl FitResult {
    pub fn param_values(&self) -> Vec<f64> {
        self.params.values().copied().collect()
    }

    pub fn predict(&self, dose: f64) -> Result<f64> {
        predict(self.kind, &self.anchors, &self.param_values(), dose)
    }

    /// `(dose, mean)` on an evenly spaced grid over `[0, max_dose]`.
    pub fn curve(&self, max_dose: f64, points: usize) -> Result<Vec<(f64, f64)>> {
        let steps = points.max(2) - 1;
        (0..=steps)
            .map(|i| {
                let d = max_dose * i as f64 / steps as f64;
                self.predict(d).map(|m| (d, m))
            })
            .collect()
    }
}

/// `-2 logL + 2p` for a normal likelihood with `sigma^2 = max(RSS/k, floor^2)`.
/// Returns `(sigma, logL, aic, reliable)`.
pub fn likelihood_summary(rss: f64, n_points: usize, n_params: usize, log_weight_sum: f64) -> (f64, f64, f64, bool) {
    let k = n_points as f64;
    let mle = (rss / k).sqrt();
    let (sigma, reliable) = if mle < SIGMA_FLOOR {
        (SIGMA_FLOOR, false)
    } else {
        (mle, true)
    };
    let s2 = sigma * sigma;
    let log_likelihood = -0.5 * k * (2.0 * PI * s2).ln() - rss / (2.0 * s2) + 0.5 * log_weight_sum;
    let aic = -2.0 * log_likelihood + 2.0 * n_params as f64;
    (sigma, log_likelihood, aic, reliable)
}

struct Objective<'a> {
    kind: ModelKind,
    anchors: &'a ModelAnchors,
    doses: &'a [f64],
    means: &'a [f64],
    weights: Option<&'a [f64]>,
}

impl Objective<'_> {
    fn rss(&self, natural: &[f64]) -> f64 {
        self.doses
            .iter()
            .zip(self.means)
            .enumerate()
            .map(|(i, (&d, &y))| {
                let r = y - mean_unchecked(self.kind, self.anchors, natural, d);
                self.weights.map_or(1.0, |w| w[i]) * r * r
            })
            .sum()
    }

    fn internal_rss(&self, internal: &[f64]) -> f64 {
        let natural = to_natural(self.kind, internal);
        if self.kind == ModelKind::Exponential && natural[1] == 0.0 {
            return f64::INFINITY;
        }
        self.rss(&natural)
    }
}

/// Eight starting values per free parameter (in optimiser coordinates),
/// combined as a full grid, plus the per-coordinate initial step sizes.
fn starting_grid(kind: ModelKind, doses: &[f64], means: &[f64], anchors: &ModelAnchors) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d_max = doses.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (i_far, _) = doses
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
    let rise = means[i_far] - anchors.e0;
    let span = means
        .iter()
        .map(|m| (m - anchors.e0).abs())
        .fold(0.0, f64::max)
        .max(1e-8);

    let slope = |x: f64| if x > 0.0 { rise / x } else { rise };
    let linear_starts = |s: f64| vec![1.0, s, 0.5 * s, 2.0 * s, -s, 0.0, 10.0 * s, 0.1 * s];
    let log_range = |lo: f64, hi: f64| -> Vec<f64> {
        (0..7)
            .map(|i| lo.ln() + (hi / lo).ln() * i as f64 / 6.0)
            .chain(std::iter::once(0.0))
            .collect()
    };

    let axes: Vec<Vec<f64>> = match kind {
        ModelKind::Emax => vec![log_range(d_max * 1e-3, d_max * 10.0)],
        ModelKind::LinearLog => vec![linear_starts(slope((d_max + 1.0).ln()))],
        ModelKind::Linear => vec![linear_starts(slope(d_max))],
        ModelKind::Quadratic => {
            let s = slope(d_max);
            vec![linear_starts(s), linear_starts(s / d_max)]
        }
        ModelKind::Exponential => vec![
            vec![1.0, span, -span, 0.1 * span, -0.1 * span, 0.01 * span, 10.0 * span, -10.0 * span],
            vec![1.0, -1.0, d_max / 4.0, -d_max / 4.0, d_max, -d_max, 4.0 * d_max, -4.0 * d_max],
        ],
        ModelKind::Logistic => vec![
            vec![1.0, 0.0, 0.1 * d_max, 0.25 * d_max, 0.5 * d_max, 0.75 * d_max, d_max, 1.5 * d_max],
            log_range(d_max * 1e-2, d_max * 2.0),
        ],
    };

    let steps: Vec<f64> = match kind {
        ModelKind::Emax => vec![0.5],
        ModelKind::LinearLog | ModelKind::Linear => vec![0.1 * slope(1.0).abs().max(1e-3)],
        ModelKind::Quadratic => {
            let s = slope(d_max).abs().max(1e-3);
            vec![0.1 * s, 0.1 * s / d_max]
        }
        ModelKind::Exponential => vec![0.1 * span, 0.1 * d_max],
        ModelKind::Logistic => vec![0.1 * d_max, 0.5],
    };

    let mut grid: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    (grid, steps)
}

/// Fits one model to `(dose, mean)` points.
pub fn fit_model(
    kind: ModelKind,
    doses: &[f64],
    means: &[f64],
    anchors: &ModelAnchors,
    options: &FitOptions,
) -> Result<FitResult> {
    check_lengths(doses, means)?;
    if doses.len() < kind.n_params() {
        return Err(Error::TooFewPoints {
            model: kind.name(),
            required: kind.n_params(),
            found: doses.len(),
        });
    }
    if !doses.contains(&0.0) {
        return Err(Error::MissingPlacebo);
    }
    if let Some(d) = doses.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(Error::NegativeDose { dose: *d });
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite {
            what: "arm mean".into(),
        });
    }

    let normalized_weights: Option<Vec<f64>> = match &options.weights {
        Some(w) => {
            if w.len() != doses.len() {
                return Err(Error::LengthMismatch {
                    what: "weights",
                    expected: doses.len(),
                    found: w.len(),
                });
            }
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidConfig("weights must be positive".into()));
            }
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            Some(w.iter().map(|x| x / mean).collect())
        }
        None => None,
    };

    let objective = Objective {
        kind,
        anchors,
        doses,
        means,
        weights: normalized_weights.as_deref(),
    };
    let nm = options.optimizer.unwrap_or_default();
    let (starts, steps) = starting_grid(kind, doses, means, anchors);

    let runs: Vec<_> = starts
        .iter()
        .filter(|s| objective.internal_rss(s).is_finite())
        .map(|s| nelder_mead(|x| objective.internal_rss(x), s, &steps, nm))
        .collect();
    let best = runs
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| domain_error(kind, "no feasible starting value"))?;
    let rss = best.value;
    // The optimum counts as converged if any start reached it with a
    // collapsed simplex.
    let converged = runs
        .iter()
        .any(|r| r.converged && (r.value - rss).abs() <= 1e-10 * (1.0 + rss.abs()));
    let natural = to_natural(kind, &best.x);

    let log_weight_sum = normalized_weights
        .as_ref()
        .map_or(0.0, |w| w.iter().map(|x| x.ln()).sum());
    let (sigma, log_likelihood, aic, aic_reliable) =
        likelihood_summary(rss, doses.len(), kind.n_params(), log_weight_sum);

    Ok(FitResult {
        kind,
        anchors: *anchors,
        params: kind
            .param_names()
            .iter()
            .map(|s| s.to_string())
            .zip(natural)
            .collect(),
        sigma,
        rss,
        n_points: doses.len(),
        log_likelihood,
        aic,
        converged: converged && rss.is_finite(),
        aic_reliable,
    })
}

/// Fits every candidate model with enough points, in parallel. Models with
/// too few dose levels are skipped.
pub fn fit_all(
    doses: &[f64],
    means: &[f64],
    anchors: &ModelAnchors,
    options: &FitOptions,
) -> Result<Vec<FitResult>> {
    ModelKind::ALL
        .par_iter()
        .filter(|k| doses.len() >= k.n_params())
        .map(|&k| fit_model(k, doses, means, anchors, options))
        .collect()
}

/// Minimum-AIC converged fit; ties go to fewer parameters, then to the
/// fixed model order.
pub fn select_best(fits: &[FitResult]) -> Result<&FitResult> {
    fits.iter()
        .filter(|f| f.converged && f.aic.is_finite())
        .min_by(|a, b| {
            a.aic
                .total_cmp(&b.aic)
                .then(a.kind.n_params().cmp(&b.kind.n_params()))
                .then(a.kind.order().cmp(&b.kind.order()))
        })
        .ok_or(Error::NoConvergedFits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseCriterion {
    /// Predicted difference from placebo reaches `|delta|` in the
    /// improvement direction.
    DiffFromPlacebo,
    /// Predicted response itself reaches `delta`.
    ChangeFromBaseline,
}

const DOSE_GRID_STEPS: usize = 10_000;

/// Smallest dose in `[0, max_dose]` meeting `criterion`, or `None`.
///
/// The dose range is scanned on a grid of `max_dose * 1e-4` and the first
/// crossing is refined by bisection, so non-monotone curves are handled.
pub fn recommend_dose(
    fit: &FitResult,
    criterion: DoseCriterion,
    delta: f64,
    max_dose: f64,
    direction: Direction,
) -> Option<f64> {
    let sign = direction.sign();
    let placebo = fit.predict(0.0).ok()?;
    let meets = |d: f64| -> bool {
        let Ok(y) = fit.predict(d) else { return false };
        match criterion {
            DoseCriterion::DiffFromPlacebo => sign * (y - placebo) >= delta.abs(),
            DoseCriterion::ChangeFromBaseline => sign * y >= sign * delta,
        }
    };
    if !(max_dose > 0.0) {
        return meets(0.0).then_some(0.0);
    }
    let grid = |i: usize| max_dose * i as f64 / DOSE_GRID_STEPS as f64;
    let first = (0..=DOSE_GRID_STEPS).find(|&i| meets(grid(i)))?;
    if first == 0 {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (grid(first - 1), grid(first));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if meets(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}
