//! Nelder-Mead simplex minimisation.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop once every vertex lies within `x_tolerance * (1 + |x_best|)` of
    /// the best vertex in each coordinate.
    pub x_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            x_tolerance: 1e-10,
            max_iterations: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises `f` from `start` with an initial simplex offset by `steps`.
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F>(f: F, start: &[f64], steps: &[f64], options: NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), eval(start)));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += steps[i];
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let point = |centroid: &[f64], worst: &[f64], coef: f64| -> Vec<f64> {
        centroid
            .iter()
            .zip(worst)
            .map(|(c, w)| c + coef * (c - w))
            .collect()
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0].0;
        let spread = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(best).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0, f64::max);
        if spread < options.x_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            centroid.iter_mut().zip(v).for_each(|(c, x)| *c += x / n as f64);
        }
        let worst_value = simplex[n].1;
        let second_worst = simplex[n - 1].1;
        let best_value = simplex[0].1;

        let reflected = point(&centroid, &simplex[n].0, REFLECT);
        let fr = eval(&reflected);
        if fr < best_value {
            let expanded = point(&centroid, &simplex[n].0, EXPAND);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < second_worst {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (candidate, fc) = if fr < worst_value {
            let c = point(&centroid, &simplex[n].0, CONTRACT);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = point(&centroid, &simplex[n].0, -CONTRACT);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < worst_value.min(fr) {
            simplex[n] = (candidate, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            v.iter_mut()
                .zip(&anchor)
                .for_each(|(x, a)| *x = a + SHRINK * (*x - a));
            *fv = eval(v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        iterations,
        converged,
    }
}
