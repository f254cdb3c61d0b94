use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use doseadapt::model_fit::EmaxAnchoring;
use doseadapt::permutation::{Alternative, CoefficientMode, PermutationConfig};
use doseadapt::simulation::{
    builtin_scenarios, find_scenario, power_table, read_power_csv, read_scenarios_csv, write_power_csv,
    ConstraintVariant, Scenario, SimConfig, DESK_N_PERM, DESK_N_SIM,
};
use doseadapt::study_data::{load_csv, load_summary_csv, CsvSchema, StudyInput};
use doseadapt::{
    analyze, curve_table, power_matrix, AnalysisOptions, AnalysisReport, ConstraintSpec, Direction, Error,
    Rounding,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NO_FIT: u8 = 3;

#[derive(Parser)]
#[command(name = "doseadapt", version, about = "Adaptive contrast test for dose-response studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test for a dose-response trend, then fit models and recommend doses.
    Analyze(AnalyzeArgs),
    /// Estimate power by simulation and write a CSV report.
    Power(PowerArgs),
    /// Emit CSV data for plotting from an analysis report or power CSV.
    PlotData(PlotDataArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Increasing,
    Decreasing,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    Difference,
    #[value(alias = "raw")]
    ExtremeMean,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoefficientArg {
    Readapt,
    Frozen,
}

impl From<CoefficientArg> for CoefficientMode {
    fn from(c: CoefficientArg) -> Self {
        match c {
            CoefficientArg::Readapt => CoefficientMode::Readapt,
            CoefficientArg::Frozen => CoefficientMode::Frozen,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Subject-level CSV (`dose,response`, optionally `arm`), or with
    /// `--summary` a CSV of `dose,n,mean,sd`.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "increasing")]
    direction: DirectionArg,
    /// Exempt the top dose from the ordering chain.
    #[arg(long)]
    umbrella: bool,
    #[arg(long, default_value_t = 10_000)]
    permutations: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    #[arg(long, default_value_t = 0.025)]
    alpha: f64,
    /// Round means to 1e-5 before deriving coefficients (default).
    #[arg(long, overrides_with = "no_round")]
    round: bool,
    #[arg(long)]
    no_round: bool,
    /// Treat the input as per-arm summaries; no permutation p-value.
    #[arg(long)]
    summary: bool,
    /// Use this pooled variance instead of pooling the summary SDs.
    #[arg(long, requires = "summary")]
    pooled_variance: Option<f64>,
    /// Fit models even without a significant trend.
    #[arg(long)]
    always_fit: bool,
    /// Recommend the smallest dose whose predicted difference from placebo
    /// reaches this value.
    #[arg(long, allow_negative_numbers = true)]
    placebo_delta: Option<f64>,
    /// Recommend the smallest dose whose predicted response reaches this
    /// value.
    #[arg(long, allow_negative_numbers = true)]
    baseline_delta: Option<f64>,
    /// Maximal effect fixed in the Emax and Logistic models.
    #[arg(long, value_enum, default_value = "difference")]
    emax_anchor: AnchorArg,
    /// Weight arm means by arm size when fitting.
    #[arg(long)]
    weighted: bool,
    /// Coefficients under permutation: re-derived each time, or the
    /// observed ones held fixed.
    #[arg(long, value_enum, default_value = "readapt")]
    coefficients: CoefficientArg,
    /// Report (count + 1) / (B + 1).
    #[arg(long)]
    add_one: bool,
    #[arg(long)]
    arm_column: Option<String>,
    #[arg(long)]
    dose_column: Option<String>,
    #[arg(long)]
    response_column: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    Umbrella,
    FullChain,
    Both,
}

#[derive(Args)]
struct PowerArgs {
    /// Built-in scenario name, `all`, or a CSV of `scenario,dose,mean[,sd]`.
    #[arg(long, default_value = "all")]
    scenario: String,
    /// Subjects per arm, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 75, 100])]
    n: Vec<usize>,
    #[arg(long, default_value_t = DESK_N_SIM)]
    nsim: usize,
    #[arg(long, default_value_t = DESK_N_PERM)]
    nperm: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    #[arg(long, default_value_t = 0.025)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "umbrella")]
    constraint: ConstraintArg,
    #[arg(long, value_enum, default_value = "readapt")]
    coefficients: CoefficientArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotWhat {
    Curves,
    Power,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Analysis report JSON (curves) or power CSV (power).
    input: PathBuf,
    #[arg(long, value_enum)]
    what: PlotWhat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run_analyze(args: &AnalyzeArgs) -> Result<AnalysisReport, Error> {
    let input = if args.summary {
        let mut summaries = load_summary_csv(&args.input)?;
        if let Some(s2) = args.pooled_variance {
            summaries = summaries.with_pooled_variance(s2)?;
        }
        StudyInput::Summaries(summaries)
    } else {
        let schema = CsvSchema {
            arm: args.arm_column.clone(),
            dose: args.dose_column.clone(),
            response: args.response_column.clone(),
        };
        StudyInput::Subjects(load_csv(&args.input, &schema)?)
    };
    let direction = match args.direction {
        DirectionArg::Increasing => Direction::Increasing,
        DirectionArg::Decreasing => Direction::Decreasing,
    };
    let options = AnalysisOptions {
        constraint: ConstraintSpec::new(direction, args.umbrella),
        rounding: if args.no_round { Rounding::Off } else { Rounding::default() },
        permutation: PermutationConfig {
            n_permutations: args.permutations,
            seed: args.seed,
            alternative: Alternative::Upper,
            add_one_correction: args.add_one,
            coefficient_mode: args.coefficients.into(),
        },
        alpha: args.alpha,
        always_fit: args.always_fit,
        placebo_delta: args.placebo_delta,
        baseline_delta: args.baseline_delta,
        emax_anchoring: match args.emax_anchor {
            AnchorArg::Difference => EmaxAnchoring::Difference,
            AnchorArg::ExtremeMean => EmaxAnchoring::ExtremeMean,
        },
        weighted: args.weighted,
    };
    analyze(&input, &options)
}

fn load_scenarios(spec: &str) -> Result<Vec<Scenario>, Error> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(builtin_scenarios());
    }
    let path = Path::new(spec);
    if path.is_file() {
        return read_scenarios_csv(File::open(path)?);
    }
    Ok(vec![find_scenario(spec)?])
}

fn run_power(args: &PowerArgs) -> Result<(), Error> {
    let scenarios = load_scenarios(&args.scenario)?;
    let variants = match args.constraint {
        ConstraintArg::Umbrella => vec![ConstraintVariant::Umbrella],
        ConstraintArg::FullChain => vec![ConstraintVariant::FullChain],
        ConstraintArg::Both => vec![ConstraintVariant::Umbrella, ConstraintVariant::FullChain],
    };
    let base = SimConfig {
        n_sim: args.nsim,
        n_perm: args.nperm,
        alpha: args.alpha,
        seed: args.seed,
        coefficient_mode: args.coefficients.into(),
        ..Default::default()
    };
    let rows = power_table(&scenarios, &args.n, &variants, &base)?;
    write_power_csv(&rows, output(args.out.as_deref())?)
}

fn run_plot_data(args: &PlotDataArgs) -> Result<(), Error> {
    let out = output(args.out.as_deref())?;
    match args.what {
        PlotWhat::Curves => {
            let report = AnalysisReport::from_json(&std::fs::read_to_string(&args.input)?)?;
            curve_table(&report)?.write_csv(out)
        }
        PlotWhat::Power => {
            let rows = read_power_csv(File::open(&args.input)?)?;
            power_matrix(&rows).write_csv(out)
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var("DOSEADAPT_THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: could not size thread pool: {e}");
            }
        }
        _ => eprintln!("warning: ignoring DOSEADAPT_THREADS={value}"),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        Error::NoConvergedFits => EXIT_NO_FIT,
        _ => EXIT_INPUT,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match &cli.command {
        Command::Analyze(args) => run_analyze(args).and_then(|report| {
            let json = report.to_json()?;
            output(args.out.as_deref())?.write_all(json.as_bytes())?;
            if report.all_fits_failed() {
                return Err(Error::NoConvergedFits);
            }
            Ok(())
        }),
        Command::Power(args) => run_power(args),
        Command::PlotData(args) => run_plot_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
