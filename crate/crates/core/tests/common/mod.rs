//! Independent reference computations and property checks shared by the
//! property and acceptance suites. Nothing here calls into the library's
//! arithmetic; results are compared against it.

#![allow(dead_code)]

use doseadapt::{compute_coefficients, contrast_statistic, ArmSummary, ConstraintSpec, Direction, Rounding, StudySummaries};

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

/// Coefficients as the centred effective chain: c = E - mean(E), where E
/// holds the running extreme of the rounded means, with the top dose taken
/// verbatim under the umbrella variant.
pub fn oracle_coefficients(means: &[f64], increasing: bool, umbrella: bool, grain: Option<f64>) -> Vec<f64> {
    let y: Vec<f64> = means
        .iter()
        .map(|&m| grain.map_or(m, |g| (m / g).round() * g))
        .collect();
    let k = y.len();
    let mut e = Vec::with_capacity(k);
    for i in 0..k {
        let prefix = &y[..=i];
        let ext = if increasing {
            prefix.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            prefix.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        e.push(if umbrella && i == k - 1 { y[i] } else { ext });
    }
    let mean = e.iter().sum::<f64>() / k as f64;
    let c: Vec<f64> = e.iter().map(|v| v - mean).collect();
    if c.iter().all(|v| v.abs() < 1e-8) {
        vec![0.0; k]
    } else {
        c
    }
}

pub fn oracle_t(c: &[f64], means: &[f64], sizes: &[usize], sds: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut var = 0.0;
    let mut ss = 0.0;
    let mut n_total = 0usize;
    for i in 0..c.len() {
        num += c[i] * means[i];
        var += c[i] * c[i] / sizes[i] as f64;
        ss += (sizes[i] - 1) as f64 * sds[i] * sds[i];
        n_total += sizes[i];
    }
    let s2 = ss / (n_total - c.len()) as f64;
    if c.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    num / (var * s2).sqrt()
}

/// `(means, sample sds)` of raw arm data.
pub fn arm_stats(arms: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    arms.iter()
        .map(|a| {
            let n = a.len() as f64;
            let m = a.iter().sum::<f64>() / n;
            let v = a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            (m, v.sqrt())
        })
        .unzip()
}

/// Every distinct assignment of the pooled observations to arms of the
/// given sizes, as label vectors.
pub fn assignments(sizes: &[usize]) -> Vec<Vec<usize>> {
    fn rec(remaining: &mut Vec<usize>, current: &mut Vec<usize>, total: usize, out: &mut Vec<Vec<usize>>) {
        if current.len() == total {
            out.push(current.clone());
            return;
        }
        for arm in 0..remaining.len() {
            if remaining[arm] > 0 {
                remaining[arm] -= 1;
                current.push(arm);
                rec(remaining, current, total, out);
                current.pop();
                remaining[arm] += 1;
            }
        }
    }
    let mut out = Vec::new();
    let total = sizes.iter().sum();
    rec(&mut sizes.to_vec(), &mut Vec::new(), total, &mut out);
    out
}

pub fn regroup(pooled: &[f64], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut arms = vec![Vec::new(); k];
    for (&v, &l) in pooled.iter().zip(labels) {
        arms[l].push(v);
    }
    arms
}

pub fn summaries(doses: &[f64], sizes: &[usize], means: &[f64], sds: &[f64]) -> StudySummaries {
    StudySummaries::from_arms(
        (0..doses.len())
            .map(|i| ArmSummary {
                dose: doses[i],
                n: sizes[i],
                mean: means[i],
                sd: sds[i],
            })
            .collect(),
    )
    .unwrap()
}

fn spec(increasing: bool, umbrella: bool) -> ConstraintSpec {
    let d = if increasing { Direction::Increasing } else { Direction::Decreasing };
    ConstraintSpec::new(d, umbrella)
}

fn coefficients(means: &[f64], increasing: bool, umbrella: bool, rounding: Rounding) -> Vec<f64> {
    compute_coefficients(means, spec(increasing, umbrella), rounding)
        .unwrap()
        .coefficients
}

fn scale(values: &[f64]) -> f64 {
    values.iter().fold(1.0, |a, v| a.max(v.abs()))
}

pub fn check_sum_to_zero(means: &[f64], increasing: bool, umbrella: bool) -> Result<(), String> {
    let c = coefficients(means, increasing, umbrella, Rounding::default());
    let sum: f64 = c.iter().sum();
    if sum.abs() <= 1e-12 * scale(means) * means.len() as f64 {
        Ok(())
    } else {
        Err(format!("sum {sum} for {means:?}"))
    }
}

pub fn check_ordinal_chain(means: &[f64], increasing: bool, umbrella: bool) -> Result<(), String> {
    let c = coefficients(means, increasing, umbrella, Rounding::default());
    let chain = if umbrella { c.len() - 1 } else { c.len() };
    for i in 1..chain {
        let ok = if increasing { c[i] >= c[i - 1] } else { c[i] <= c[i - 1] };
        if !ok {
            return Err(format!("chain broken at {i}: {c:?}"));
        }
    }
    Ok(())
}

pub fn check_translation(means: &[f64], shift: f64, increasing: bool, umbrella: bool) -> Result<(), String> {
    let base = coefficients(means, increasing, umbrella, Rounding::Off);
    let moved: Vec<f64> = means.iter().map(|m| m + shift).collect();
    let shifted = coefficients(&moved, increasing, umbrella, Rounding::Off);
    let tol = 1e-12 * (scale(means) + shift.abs()) * means.len() as f64;
    if base.iter().all(|v| v.abs() < 1e-6) {
        return Ok(());
    }
    for (a, b) in base.iter().zip(&shifted) {
        if (a - b).abs() > tol {
            return Err(format!("{base:?} vs {shifted:?}"));
        }
    }
    Ok(())
}

pub fn check_scale(means: &[f64], factor: f64, increasing: bool, umbrella: bool) -> Result<(), String> {
    let base = coefficients(means, increasing, umbrella, Rounding::Off);
    if base.iter().all(|v| v.abs() < 1e-6) {
        return Ok(());
    }
    let scaled_means: Vec<f64> = means.iter().map(|m| m * factor).collect();
    let scaled = coefficients(&scaled_means, increasing, umbrella, Rounding::Off);
    let tol = 1e-12 * scale(means) * factor * means.len() as f64;
    for (a, b) in base.iter().zip(&scaled) {
        if (a * factor - b).abs() > tol {
            return Err(format!("{base:?} x {factor} vs {scaled:?}"));
        }
    }
    Ok(())
}

pub fn check_mirror(means: &[f64], umbrella: bool) -> Result<(), String> {
    let up = coefficients(means, true, umbrella, Rounding::default());
    let neg: Vec<f64> = means.iter().map(|m| -m).collect();
    let down = coefficients(&neg, false, umbrella, Rounding::default());
    if up.iter().zip(&down).all(|(a, b)| *a == -*b) {
        Ok(())
    } else {
        Err(format!("{up:?} vs {down:?}"))
    }
}

/// `T` is unchanged when every response is mapped through `a + s * y`,
/// `s > 0`.
pub fn check_t_scale_invariance(
    means: &[f64],
    sds: &[f64],
    sizes: &[usize],
    shift: f64,
    factor: f64,
    increasing: bool,
) -> Result<(), String> {
    let doses: Vec<f64> = (0..means.len()).map(|i| i as f64).collect();
    let t = |m: &[f64], s: &[f64]| {
        let summ = summaries(&doses, sizes, m, s);
        let c = compute_coefficients(m, spec(increasing, false), Rounding::Off).unwrap();
        contrast_statistic(&c, &summ).unwrap()
    };
    let base = t(means, sds);
    if base.contrast.degenerate || base.contrast.coefficients.iter().all(|v| v.abs() < 1e-6) {
        return Ok(());
    }
    let m2: Vec<f64> = means.iter().map(|m| shift + factor * m).collect();
    let s2: Vec<f64> = sds.iter().map(|s| factor * s).collect();
    let moved = t(&m2, &s2);
    if (base.t_value - moved.t_value).abs() <= 1e-7 * base.t_value.abs().max(1.0) {
        Ok(())
    } else {
        Err(format!("{} vs {}", base.t_value, moved.t_value))
    }
}
