//! Python bindings: contrast test, permutation p-values, model fitting,
//! full analyses and power simulation.

use indexmap::IndexMap;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use doseadapt::model_fit::{EmaxAnchoring, ModelAnchors};
use doseadapt::permutation::CoefficientMode;
use doseadapt::simulation::{find_scenario, Scenario};
use doseadapt::study_data::{load_csv, load_summary_csv, ArmSummary, CsvSchema, StudyInput, StudySummaries};
use doseadapt::{
    AnalysisOptions, ConstraintSpec, Direction, DoseCriterion, FitOptions, PermutationConfig, Rounding,
    SimConfig, SubjectRecord,
};

fn err(e: doseadapt::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn constraint(direction: &str, umbrella: bool) -> PyResult<ConstraintSpec> {
    let direction: Direction = direction.parse().map_err(err)?;
    Ok(ConstraintSpec::new(direction, umbrella))
}

fn rounding(grain: Option<f64>) -> Rounding {
    grain.map_or(Rounding::Off, Rounding::Grain)
}

fn coefficient_mode(mode: &str) -> PyResult<CoefficientMode> {
    mode.parse().map_err(err)
}

#[pyclass(frozen, get_all, skip_from_py_object, module = "pydoseadapt")]
#[derive(Clone)]
struct ContrastResult {
    coefficients: Vec<f64>,
    degenerate: bool,
    t_value: f64,
    pooled_variance: f64,
    numerator: f64,
    variance_term: f64,
}

#[pymethods]
impl ContrastResult {
    fn __repr__(&self) -> String {
        format!("ContrastResult(coefficients={:?}, t_value={})", self.coefficients, self.t_value)
    }
}

#[pyclass(frozen, get_all, skip_from_py_object, module = "pydoseadapt")]
#[derive(Clone)]
struct PermutationResult {
    p_value: f64,
    observed_t: f64,
    exceed_count: usize,
    n_permutations: usize,
}

#[pymethods]
impl PermutationResult {
    fn __repr__(&self) -> String {
        format!(
            "PermutationResult(p_value={}, observed_t={}, n_permutations={})",
            self.p_value, self.observed_t, self.n_permutations
        )
    }
}

#[pyclass(frozen, module = "pydoseadapt")]
struct FitResult {
    inner: doseadapt::FitResult,
}

#[pymethods]
impl FitResult {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn params(&self) -> IndexMap<String, f64> {
        self.inner.params.clone()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn rss(&self) -> f64 {
        self.inner.rss
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood
    }

    #[getter]
    fn aic(&self) -> f64 {
        self.inner.aic
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn predict(&self, dose: f64) -> PyResult<f64> {
        self.inner.predict(dose).map_err(err)
    }

    /// Smallest dose up to `max_dose` meeting the criterion
    /// (`"diff_from_placebo"` or `"change_from_baseline"`).
    #[pyo3(signature = (criterion, delta, max_dose, direction = "increasing"))]
    fn recommend_dose(&self, criterion: &str, delta: f64, max_dose: f64, direction: &str) -> PyResult<Option<f64>> {
        let criterion = match criterion {
            "diff_from_placebo" => DoseCriterion::DiffFromPlacebo,
            "change_from_baseline" => DoseCriterion::ChangeFromBaseline,
            other => return Err(PyValueError::new_err(format!("unknown criterion '{other}'"))),
        };
        let direction: Direction = direction.parse().map_err(err)?;
        Ok(doseadapt::recommend_dose(&self.inner, criterion, delta, max_dose, direction))
    }

    fn __repr__(&self) -> String {
        format!("FitResult(kind={}, aic={})", self.inner.kind.name(), self.inner.aic)
    }
}

#[pyclass(frozen, get_all, skip_from_py_object, module = "pydoseadapt")]
#[derive(Clone)]
struct PowerResult {
    scenario: String,
    rejections: usize,
    n_sim: usize,
    power: f64,
    mc_se: f64,
}

#[pymethods]
impl PowerResult {
    fn __repr__(&self) -> String {
        format!("PowerResult(scenario={}, power={}, mc_se={})", self.scenario, self.power, self.mc_se)
    }
}

/// Adaptive contrast coefficients for arm means ordered by dose.
#[pyfunction]
#[pyo3(signature = (means, direction = "increasing", umbrella = false, rounding_grain = Some(1e-5)))]
fn compute_coefficients(means: Vec<f64>, direction: &str, umbrella: bool, rounding_grain: Option<f64>) -> PyResult<Vec<f64>> {
    doseadapt::compute_coefficients(&means, constraint(direction, umbrella)?, rounding(rounding_grain))
        .map(|c| c.coefficients)
        .map_err(err)
}

/// Contrast t-statistic from per-arm summaries.
#[pyfunction]
#[pyo3(signature = (doses, sizes, means, sds, direction = "increasing", umbrella = false,
    rounding_grain = Some(1e-5), pooled_variance = None))]
#[allow(clippy::too_many_arguments)]
fn contrast_test(
    doses: Vec<f64>,
    sizes: Vec<usize>,
    means: Vec<f64>,
    sds: Vec<f64>,
    direction: &str,
    umbrella: bool,
    rounding_grain: Option<f64>,
    pooled_variance: Option<f64>,
) -> PyResult<ContrastResult> {
    let summaries = summaries(doses, sizes, means, sds, pooled_variance)?;
    let contrast =
        doseadapt::compute_coefficients(&summaries.means(), constraint(direction, umbrella)?, rounding(rounding_grain))
            .map_err(err)?;
    let r = doseadapt::contrast_statistic(&contrast, &summaries).map_err(err)?;
    Ok(ContrastResult {
        coefficients: r.contrast.coefficients,
        degenerate: r.contrast.degenerate,
        t_value: r.t_value,
        pooled_variance: r.pooled_variance,
        numerator: r.numerator,
        variance_term: r.variance_term,
    })
}

fn summaries(
    doses: Vec<f64>,
    sizes: Vec<usize>,
    means: Vec<f64>,
    sds: Vec<f64>,
    pooled_variance: Option<f64>,
) -> PyResult<StudySummaries> {
    let k = doses.len();
    if sizes.len() != k || means.len() != k || sds.len() != k {
        return Err(PyValueError::new_err("doses, sizes, means and sds must have equal length"));
    }
    let arms = (0..k)
        .map(|i| ArmSummary {
            dose: doses[i],
            n: sizes[i],
            mean: means[i],
            sd: sds[i],
        })
        .collect();
    let s = StudySummaries::from_arms(arms).map_err(err)?;
    match pooled_variance {
        Some(v) => s.with_pooled_variance(v).map_err(err),
        None => Ok(s),
    }
}

fn records(doses: &[f64], responses: &[f64]) -> PyResult<Vec<SubjectRecord>> {
    if doses.len() != responses.len() {
        return Err(PyValueError::new_err("doses and responses must have equal length"));
    }
    let mut distinct: Vec<f64> = doses.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    Ok(doses
        .iter()
        .zip(responses)
        .map(|(&dose, &response)| SubjectRecord {
            arm: distinct.partition_point(|&d| d < dose) + 1,
            dose,
            response,
        })
        .collect())
}

/// Permutation p-value of the adaptive contrast test from subject data.
#[pyfunction]
#[pyo3(signature = (doses, responses, direction = "increasing", umbrella = false, n_permutations = 10_000,
    seed = 2021, rounding_grain = Some(1e-5), coefficients = "readapt"))]
#[allow(clippy::too_many_arguments)]
fn permutation_pvalue(
    py: Python<'_>,
    doses: Vec<f64>,
    responses: Vec<f64>,
    direction: &str,
    umbrella: bool,
    n_permutations: usize,
    seed: u64,
    rounding_grain: Option<f64>,
    coefficients: &str,
) -> PyResult<PermutationResult> {
    let recs = records(&doses, &responses)?;
    let spec = constraint(direction, umbrella)?;
    let config = PermutationConfig {
        n_permutations,
        seed,
        coefficient_mode: coefficient_mode(coefficients)?,
        ..Default::default()
    };
    let out = py
        .detach(|| doseadapt::permutation_pvalue(&recs, spec, rounding(rounding_grain), &config))
        .map_err(err)?;
    Ok(PermutationResult {
        p_value: out.p_value,
        observed_t: out.observed_t,
        exceed_count: out.exceed_count,
        n_permutations: out.n_permutations,
    })
}

/// Fits every candidate model to arm means; returns them in a fixed order.
#[pyfunction]
#[pyo3(signature = (doses, means, direction = "increasing", emax_anchoring = "difference", weights = None))]
fn fit_models(
    doses: Vec<f64>,
    means: Vec<f64>,
    direction: &str,
    emax_anchoring: &str,
    weights: Option<Vec<f64>>,
) -> PyResult<Vec<FitResult>> {
    let direction: Direction = direction.parse().map_err(err)?;
    let anchoring: EmaxAnchoring = emax_anchoring.parse().map_err(err)?;
    let anchors = ModelAnchors::with_anchoring(&doses, &means, direction, anchoring).map_err(err)?;
    let options = FitOptions {
        weights,
        optimizer: None,
    };
    let fits = doseadapt::fit_all(&doses, &means, &anchors, &options).map_err(err)?;
    Ok(fits.into_iter().map(|inner| FitResult { inner }).collect())
}

/// Name of the lowest-AIC converged model.
#[pyfunction]
fn select_best(fits: Vec<PyRef<'_, FitResult>>) -> PyResult<String> {
    let inner: Vec<doseadapt::FitResult> = fits.iter().map(|f| f.inner.clone()).collect();
    doseadapt::select_best(&inner)
        .map(|f| f.kind.name().to_string())
        .map_err(err)
}

/// Full analysis of a CSV file; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (path, summary = false, direction = "increasing", umbrella = false, n_permutations = 10_000,
    seed = 2021, alpha = 0.025, always_fit = false, placebo_delta = None, baseline_delta = None,
    emax_anchoring = "difference", pooled_variance = None))]
#[allow(clippy::too_many_arguments)]
fn analyze_csv(
    py: Python<'_>,
    path: &str,
    summary: bool,
    direction: &str,
    umbrella: bool,
    n_permutations: usize,
    seed: u64,
    alpha: f64,
    always_fit: bool,
    placebo_delta: Option<f64>,
    baseline_delta: Option<f64>,
    emax_anchoring: &str,
    pooled_variance: Option<f64>,
) -> PyResult<String> {
    let input = if summary {
        let mut s = load_summary_csv(path).map_err(err)?;
        if let Some(v) = pooled_variance {
            s = s.with_pooled_variance(v).map_err(err)?;
        }
        StudyInput::Summaries(s)
    } else {
        StudyInput::Subjects(load_csv(path, &CsvSchema::default()).map_err(err)?)
    };
    let options = AnalysisOptions {
        constraint: constraint(direction, umbrella)?,
        permutation: PermutationConfig {
            n_permutations,
            seed,
            ..Default::default()
        },
        alpha,
        always_fit,
        placebo_delta,
        baseline_delta,
        emax_anchoring: emax_anchoring.parse().map_err(err)?,
        ..Default::default()
    };
    let report = py.detach(|| doseadapt::analyze(&input, &options)).map_err(err)?;
    report.to_json().map_err(err)
}

/// `(name, true_means)` for each built-in scenario.
#[pyfunction]
fn builtin_scenarios() -> Vec<(String, Vec<f64>)> {
    doseadapt::builtin_scenarios()
        .into_iter()
        .map(|s| (s.name, s.true_means))
        .collect()
}

/// Rejection rate of the adaptive test for a built-in scenario name or a
/// list of true means on the default dose grid.
#[pyfunction]
#[pyo3(signature = (scenario, n_per_arm = 100, n_sim = 2_000, n_perm = 5_000, seed = 2021, alpha = 0.025,
    umbrella = true, coefficients = "readapt"))]
#[allow(clippy::too_many_arguments)]
fn simulate_power(
    py: Python<'_>,
    scenario: &Bound<'_, PyAny>,
    n_per_arm: usize,
    n_sim: usize,
    n_perm: usize,
    seed: u64,
    alpha: f64,
    umbrella: bool,
    coefficients: &str,
) -> PyResult<PowerResult> {
    let scenario = if let Ok(name) = scenario.extract::<String>() {
        find_scenario(&name).map_err(err)?
    } else {
        Scenario::new("custom", scenario.extract::<Vec<f64>>()?)
    };
    let config = SimConfig {
        n_per_arm,
        n_sim,
        n_perm,
        alpha,
        seed,
        constraint: ConstraintSpec::increasing().with_umbrella(umbrella),
        coefficient_mode: coefficient_mode(coefficients)?,
        ..Default::default()
    };
    let r = py
        .detach(|| doseadapt::simulate_power(&scenario, &config))
        .map_err(err)?;
    Ok(PowerResult {
        scenario: r.scenario,
        rejections: r.rejections,
        n_sim: r.n_sim,
        power: r.power,
        mc_se: r.mc_se,
    })
}

#[pymodule]
fn pydoseadapt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<ContrastResult>()?;
    m.add_class::<PermutationResult>()?;
    m.add_class::<FitResult>()?;
    m.add_class::<PowerResult>()?;
    m.add_function(wrap_pyfunction!(compute_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(contrast_test, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(fit_models, m)?)?;
    m.add_function(wrap_pyfunction!(select_best, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_csv, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_power, m)?)?;
    Ok(())
}
