//! `linkedcox`: fit Cox models to linked trial data, run simulation studies
//! and render their tables.
//!
//! Exit codes: 0 success, 1 usage, 2 parse or schema error, 3 singular
//! design or information, 4 no convergence, 5 degenerate scenario, 6 any
//! other estimation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use linkedcox::dataset::{load_csv, save_csv, ChangePointSpec, CsvSchema, DesignSpec};
use linkedcox::estimators::{EstimatorRegistry, EstimatorSpec, Method};
use linkedcox::linkage::{WeightOptions, DEFAULT_POSITIVITY_FLOOR};
use linkedcox::montecarlo::{self, emit_table, SimReport, TableFormat, TargetOptions};
use linkedcox::simgen::{self, Analysis, GapRemedy, Mechanism, Scenario, ScenarioConfig};
use linkedcox::Error;

#[derive(Parser, Debug)]
#[command(name = "linkedcox", version, about = "IPLW Cox regression for incompletely linked follow-up data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one estimator to a subject CSV and print the report as JSON.
    Fit(FitArgs),
    /// Run a simulation study, write the report JSON and print its table.
    Simulate(SimulateArgs),
    /// Render one or more simulation reports as a table.
    Report(ReportArgs),
    /// Write one simulated dataset as a subject CSV.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Comma-separated change times, e.g. `6.5,7.5`.
    #[arg(long, value_delimiter = ',')]
    change_points: Vec<f64>,
    /// Covariate column that interacts with the change points.
    #[arg(long, default_value = "z1_1")]
    treatment_col: String,
    /// Covariate columns entering the Cox model (default: all).
    #[arg(long, value_delimiter = ',')]
    cox_covariates: Vec<String>,
    /// Covariate columns entering the linkage model (default: all).
    #[arg(long, value_delimiter = ',')]
    linkage_covariates: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_POSITIVITY_FLOOR)]
    positivity_floor: f64,
    /// Clamp fitted linkage probabilities at the positivity floor.
    #[arg(long)]
    truncate_weights: bool,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, value_enum)]
    mechanism: MechanismArg,
    /// Default: misspecified for `motivating`, correct otherwise.
    #[arg(long, value_enum)]
    analysis: Option<AnalysisArg>,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long)]
    seed: u64,
    /// Gap scenario only; default `on`.
    #[arg(long, value_enum)]
    remedy: Option<RemedyArg>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated methods (default: all five).
    #[arg(long, value_delimiter = ',', value_enum)]
    methods: Vec<MethodArg>,
    /// Worker threads (default: available parallelism).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Recompute the misspecification target even if cached.
    #[arg(long)]
    refresh_target: bool,
    /// Target cache directory (overrides LINKEDCOX_CACHE_DIR).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Replication index of the dataset.
    #[arg(long, default_value_t = 0)]
    rep: u64,
    #[arg(long)]
    out: PathBuf,
    /// Include latent `t_fail,c_latent` columns.
    #[arg(long)]
    latent: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Oracle,
    Cc,
    Ccplus,
    Nlac,
    Iplw,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Oracle => Method::Oracle,
            MethodArg::Cc => Method::Cc,
            MethodArg::Ccplus => Method::CcPlus,
            MethodArg::Nlac => Method::Nlac,
            MethodArg::Iplw => Method::Iplw,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioArg {
    TdChangepoint,
    Motivating,
    Gap,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::TdChangepoint => Scenario::TdChangePoint,
            ScenarioArg::Motivating => Scenario::MotivatingSquared,
            ScenarioArg::Gap => Scenario::GapScenario,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MechanismArg {
    Lcar,
    Clar,
    LnarT,
    LnarC2,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Lcar => Mechanism::Lcar,
            MechanismArg::Clar => Mechanism::Clar,
            MechanismArg::LnarT => Mechanism::LnarT,
            MechanismArg::LnarC2 => Mechanism::LnarC2,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnalysisArg {
    Correct,
    Misspecified,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RemedyArg {
    On,
    Off,
    Naive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            kind: "Usage",
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Parse { .. } => (2, "ParseError"),
            Error::Json(_) => (2, "SchemaError"),
            Error::Io(_) => (2, "IoError"),
            Error::SingularDesign => (3, "SingularDesign"),
            Error::SeparationDetected { .. } => (3, "SeparationDetected"),
            Error::SingularHessian => (3, "SingularHessian"),
            Error::SingularLinkageInfo => (3, "SingularLinkageInfo"),
            Error::NoConvergence { .. } => (4, "NoConvergence"),
            Error::DegenerateScenario { .. } => (5, "DegenerateScenario"),
            Error::EmptyRiskSet { .. } => (6, "EmptyRiskSet"),
            Error::NotPositiveSemidefinite { .. } => (6, "NotPositiveSemidefinite"),
            Error::InvalidInput(_) => (6, "InvalidInput"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let payload = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
            println!("{payload}");
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return Err(Failure {
            code: 2,
            kind: "IoError",
            message: format!("{} is not a readable file", path.display()),
        });
    }
    Ok(())
}

fn column_indices(names: &[String], schema: &CsvSchema, flag: &str) -> CliResult<Option<Vec<usize>>> {
    if names.is_empty() {
        return Ok(None);
    }
    let known = schema.covariate_names();
    names
        .iter()
        .map(|n| {
            known
                .iter()
                .position(|k| k == n.trim())
                .ok_or_else(|| Failure::usage(format!("{flag}: unknown covariate column `{n}` (have {})", known.join(", "))))
        })
        .collect::<CliResult<Vec<_>>>()
        .map(Some)
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    require_file(&args.data)?;
    if !(args.positivity_floor >= 0.0 && args.positivity_floor < 1.0) {
        return Err(Failure::usage("--positivity-floor must lie in [0, 1)"));
    }
    let schema = CsvSchema::infer(&args.data)?;
    let cox_covariates = column_indices(&args.cox_covariates, &schema, "--cox-covariates")?;
    let linkage_covariates = column_indices(&args.linkage_covariates, &schema, "--linkage-covariates")?;
    let change_points = if args.change_points.is_empty() {
        ChangePointSpec::none()
    } else {
        let idx = column_indices(std::slice::from_ref(&args.treatment_col), &schema, "--treatment-col")?
            .and_then(|v| v.first().copied())
            .unwrap_or(0);
        ChangePointSpec::new(args.change_points.clone(), idx).map_err(|e| Failure::usage(e.to_string()))?
    };
    let subjects = load_csv(&args.data, &schema)?;
    let spec = EstimatorSpec {
        design: DesignSpec {
            covariates: cox_covariates,
            change_points,
        },
        linkage_covariates,
        weights: WeightOptions {
            positivity_floor: args.positivity_floor,
            truncate: args.truncate_weights,
        },
        ..Default::default()
    };
    let registry = EstimatorRegistry::default();
    let method = Method::from(args.method);
    let estimator = registry.get(method.name())?;
    let mut report = estimator.fit(&subjects, &spec)?;
    report.parameters = spec.design.parameter_names(&schema.covariate_names());
    for d in &report.diagnostics {
        eprintln!("diagnostic: {d}");
    }
    println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    Ok(())
}

fn scenario_config(args: &ScenarioArgs) -> CliResult<ScenarioConfig> {
    let scenario = Scenario::from(args.scenario);
    let analysis = match args.analysis {
        Some(AnalysisArg::Correct) => Analysis::Correct,
        Some(AnalysisArg::Misspecified) => Analysis::Misspecified,
        None if scenario == Scenario::MotivatingSquared => Analysis::Misspecified,
        None => Analysis::Correct,
    };
    let mut config = ScenarioConfig::new(scenario, args.mechanism.into(), analysis, args.n as usize, args.seed);
    if let Some(r) = args.remedy {
        if scenario != Scenario::GapScenario {
            return Err(Failure::usage("--remedy applies to --scenario gap only"));
        }
        config.remedy = Some(match r {
            RemedyArg::On => GapRemedy::On,
            RemedyArg::Off => GapRemedy::Off,
            RemedyArg::Naive => GapRemedy::Naive,
        });
    }
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(config)
}

fn check_output_dir(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Failure::usage(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let config = scenario_config(&args.scenario)?;
    check_output_dir(&args.out)?;
    let methods: Vec<Method> = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        let mut m: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
        m.dedup();
        m
    };
    let mut target_opts = TargetOptions {
        refresh: args.refresh_target,
        threads: args.threads.map(|t| t as usize),
        ..Default::default()
    };
    if let Some(dir) = args.cache_dir {
        target_opts.cache_dir = Some(dir);
    }
    eprintln!(
        "config: {}",
        serde_json::json!({ "scenario": config, "reps": args.reps, "methods": methods })
    );
    info!("running {} replications", args.reps);
    let report = montecarlo::run_study(&config, &methods, args.reps as usize, &target_opts)?;
    for s in &report.results {
        if s.n_failed > 0 {
            warn!("{}: {} failed replication(s) excluded", s.method.label(), s.n_failed);
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
    print!("{}", emit_table(std::slice::from_ref(&report), TableFormat::Markdown)?);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let mut reports = Vec::with_capacity(args.input.len());
    for path in &args.input {
        require_file(path)?;
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        let report: SimReport = serde_json::from_str(&text).map_err(|e| Failure {
            code: 2,
            kind: "SchemaError",
            message: format!("{}: not a simulation report: {e}", path.display()),
        })?;
        reports.push(report);
    }
    let format = match args.format {
        FormatArg::Markdown => TableFormat::Markdown,
        FormatArg::Csv => TableFormat::Csv,
    };
    let table = emit_table(&reports, format).map_err(|e| Failure {
        code: 2,
        kind: "SchemaError",
        message: e.to_string(),
    })?;
    print!("{table}");
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    let config = scenario_config(&args.scenario)?;
    check_output_dir(&args.out)?;
    let mut records = simgen::simulate(&config, args.rep)?;
    if !args.latent {
        simgen::strip_latent(&mut records);
    }
    let schema = CsvSchema {
        p: records.first().map_or(0, |r| r.z1.len()),
        gap: config.scenario == Scenario::GapScenario,
        c2: true,
        latent: args.latent,
    };
    save_csv(&args.out, &records, &schema)?;
    eprintln!("wrote {} subjects to {}", records.len(), args.out.display());
    Ok(())
}
