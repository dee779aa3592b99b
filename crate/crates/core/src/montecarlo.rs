//! Replication runner, aggregation and table output.
//!
//! Replications are independent: replication `r` draws from streams keyed by
//! `(seed, r)`. Results are collected in replication order and reduced
//! serially, so the report does not depend on the worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SubjectRecord;
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorSpec, Method};
use crate::simgen::{self, Analysis, ScenarioConfig};

/// Seed of the large-sample oracle run that defines the target under
/// misspecification.
pub const TARGET_SEED: u64 = 0x5EED_0000_0000_0001;
pub const TARGET_N: usize = 10_000;
pub const TARGET_REPS: usize = 1_000;
/// Largest failed fraction tolerated in the target run.
pub const TARGET_MAX_FAILED: f64 = 0.01;
/// Largest failed fraction tolerated per method in a study.
pub const MAX_FAILED: f64 = 0.05;
/// Coverage below this is flagged in tables.
pub const FLAG_BELOW: f64 = 0.90;
pub const CACHE_ENV: &str = "LINKEDCOX_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    TrueBeta,
    OracleLargeN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub beta_star: Vec<f64>,
    pub mc_se: Vec<f64>,
    pub provenance: Provenance,
    /// Size of the oracle run; zero for the true coefficients.
    pub n: usize,
    pub reps: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetOptions {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub refresh: bool,
    pub threads: Option<usize>,
}

impl Default for TargetOptions {
    fn default() -> Self {
        TargetOptions {
            n: TARGET_N,
            reps: TARGET_REPS,
            seed: TARGET_SEED,
            cache_dir: std::env::var_os(CACHE_ENV).map(PathBuf::from),
            refresh: false,
            threads: None,
        }
    }
}

/// 64-bit FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

fn cache_path(dir: &Path, config: &ScenarioConfig, opts: &TargetOptions) -> Result<PathBuf> {
    let key = serde_json::json!({
        "scenario": config.scenario,
        "analysis": config.analysis,
        "beta_true": config.beta_true,
        "tau1": config.tau1,
        "tau2": config.tau2,
        "remedy": config.remedy,
        "n": opts.n,
        "reps": opts.reps,
        "seed": opts.seed,
    });
    let hash = fnv1a(serde_json::to_string(&key)?.as_bytes());
    Ok(dir.join(format!(
        "target-{}-{}-n{}-r{}-{hash:016x}.json",
        config.scenario, config.analysis, opts.n, opts.reps
    )))
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// The coefficients the fitted model converges to. Correct analyses target
/// the true coefficients; misspecified ones use the mean oracle estimate
/// over a large-sample run, cached on disk when a cache directory is set.
pub fn estimate_target(config: &ScenarioConfig, opts: &TargetOptions) -> Result<TargetEstimate> {
    config.validate()?;
    if config.analysis == Analysis::Correct {
        return Ok(TargetEstimate {
            mc_se: vec![0.0; config.beta_true.len()],
            beta_star: config.correct_target(),
            provenance: Provenance::TrueBeta,
            n: 0,
            reps: 0,
            n_failed: 0,
        });
    }
    let path = opts.cache_dir.as_deref().map(|d| cache_path(d, config, opts)).transpose()?;
    if let (Some(p), false) = (&path, opts.refresh) {
        if let Ok(text) = std::fs::read_to_string(p) {
            match serde_json::from_str::<TargetEstimate>(&text) {
                Ok(t) => {
                    info!("target loaded from {}", p.display());
                    return Ok(t);
                }
                Err(e) => warn!("ignoring unreadable target cache {}: {e}", p.display()),
            }
        }
    }

    let mut large = config.clone();
    large.n = opts.n;
    large.seed = opts.seed;
    let spec = EstimatorSpec::with_design(large.design());
    info!("estimating target: oracle, n = {}, {} replications", opts.n, opts.reps);
    let fits: Vec<Result<Vec<f64>>> = with_pool(opts.threads, || {
        (0..opts.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let records = oracle_records(&large, rep)?;
                estimators::fit(Method::Oracle, &records, &spec).map(|r| r.cox.beta_hat)
            })
            .collect()
    })?;
    let betas: Vec<Vec<f64>> = fits.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let n_failed = opts.reps - betas.len();
    if n_failed as f64 > TARGET_MAX_FAILED * opts.reps as f64 || betas.is_empty() {
        return Err(Error::DegenerateScenario {
            method: "oracle (target)".into(),
            failed: n_failed,
            reps: opts.reps,
        });
    }
    let p = betas[0].len();
    let k = betas.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| betas.iter().map(|b| b[j]).sum::<f64>() / k).collect();
    let mc_se = (0..p)
        .map(|j| {
            let var = betas.iter().map(|b| (b[j] - mean[j]).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            (var / k).sqrt()
        })
        .collect();
    let target = TargetEstimate {
        beta_star: mean,
        mc_se,
        provenance: Provenance::OracleLargeN,
        n: opts.n,
        reps: opts.reps,
        n_failed,
    };
    if let Some(p) = path {
        std::fs::create_dir_all(p.parent().unwrap_or(Path::new(".")))?;
        std::fs::write(&p, serde_json::to_string_pretty(&target)?)?;
        info!("target cached at {}", p.display());
    }
    Ok(target)
}

/// Fully linked records for the oracle fit; linkage is irrelevant here.
fn oracle_records(config: &ScenarioConfig, rep: u64) -> Result<Vec<SubjectRecord>> {
    let mut latents = simgen::generate_latent(config, rep)?;
    if let Some(mode) = config.remedy {
        simgen::remedy_transform(&mut latents, mode);
    }
    Ok(latents.into_iter().map(|l| l.record).collect())
}

/// Aggregates for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_beta: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Missing with fewer than two successful replications.
    pub empirical_sd: Vec<Option<f64>>,
    pub coverage: Vec<f64>,
    pub hits: Vec<usize>,
    pub n_success: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: ScenarioConfig,
    pub methods: Vec<Method>,
    pub parameters: Vec<String>,
    pub n_reps: usize,
    pub target: TargetEstimate,
    pub results: Vec<MethodSummary>,
}

impl SimReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.results.iter().find(|s| s.method == method)
    }
}

#[derive(Debug, Clone)]
struct FitOutcome {
    beta: Vec<f64>,
    se: Vec<f64>,
    hits: Vec<bool>,
}

/// Runs `n_reps` replications of every method against `target`.
pub fn run_replications(
    config: &ScenarioConfig,
    methods: &[Method],
    n_reps: usize,
    target: &TargetEstimate,
    threads: Option<usize>,
) -> Result<SimReport> {
    config.validate()?;
    if n_reps == 0 {
        return Err(Error::InvalidInput("at least one replication is required".into()));
    }
    let spec = EstimatorSpec::with_design(config.design());
    let per_rep: Vec<Vec<std::result::Result<FitOutcome, String>>> = with_pool(threads, || {
        (0..n_reps as u64)
            .into_par_iter()
            .map(|rep| {
                let records = match simgen::simulate(config, rep) {
                    Ok(r) => r,
                    Err(e) => return methods.iter().map(|_| Err(e.to_string())).collect(),
                };
                methods
                    .iter()
                    .map(|&m| {
                        estimators::fit(m, &records, &spec)
                            .map(|r| FitOutcome {
                                hits: (0..r.se.len()).map(|j| r.covers(j, target.beta_star[j])).collect(),
                                beta: r.cox.beta_hat,
                                se: r.se,
                            })
                            .map_err(|e| format!("replication {rep}, {m}: {e}"))
                    })
                    .collect()
            })
            .collect()
    })?;

    let p = target.beta_star.len();
    let mut results = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let mut ok = Vec::new();
        for outcome in per_rep.iter().map(|r| &r[mi]) {
            match outcome {
                Ok(o) => ok.push(o),
                Err(msg) => warn!("excluded failed fit: {msg}"),
            }
        }
        let n_failed = n_reps - ok.len();
        if n_failed as f64 > MAX_FAILED * n_reps as f64 || ok.is_empty() {
            return Err(Error::DegenerateScenario {
                method: method.label().to_string(),
                failed: n_failed,
                reps: n_reps,
            });
        }
        results.push(summarize(method, &ok, p, target, n_failed));
    }
    Ok(SimReport {
        config: config.clone(),
        methods: methods.to_vec(),
        parameters: config.parameter_names(),
        n_reps,
        target: target.clone(),
        results,
    })
}

fn summarize(method: Method, ok: &[&FitOutcome], p: usize, target: &TargetEstimate, n_failed: usize) -> MethodSummary {
    let k = ok.len() as f64;
    let mean = |f: &dyn Fn(&FitOutcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / k;
    let mean_beta: Vec<f64> = (0..p).map(|j| mean(&|o| o.beta[j])).collect();
    let hits: Vec<usize> = (0..p).map(|j| ok.iter().filter(|o| o.hits[j]).count()).collect();
    MethodSummary {
        method,
        bias: (0..p).map(|j| mean_beta[j] - target.beta_star[j]).collect(),
        mean_se: (0..p).map(|j| mean(&|o| o.se[j])).collect(),
        empirical_sd: (0..p)
            .map(|j| {
                (ok.len() >= 2).then(|| {
                    let ss: f64 = ok.iter().map(|o| (o.beta[j] - mean_beta[j]).powi(2)).sum();
                    (ss / (k - 1.0)).sqrt()
                })
            })
            .collect(),
        coverage: hits.iter().map(|&h| h as f64 / k).collect(),
        hits,
        mean_beta,
        n_success: ok.len(),
        n_failed,
    }
}

/// Target estimate then replications.
pub fn run_study(
    config: &ScenarioConfig,
    methods: &[Method],
    n_reps: usize,
    target_opts: &TargetOptions,
) -> Result<SimReport> {
    let target = estimate_target(config, target_opts)?;
    run_replications(config, methods, n_reps, &target, target_opts.threads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            _ => Err(Error::InvalidInput(format!("unknown table format `{s}`"))),
        }
    }
}

fn coverage_cell(c: f64) -> String {
    if c < FLAG_BELOW {
        format!("{c:.2}\u{2020}")
    } else {
        format!("{c:.2}")
    }
}

/// One table for several reports sharing a parameter layout, one row per
/// (mechanism, method).
pub fn emit_table(reports: &[SimReport], format: TableFormat) -> Result<String> {
    let parameters = reports.first().map(|r| r.parameters.clone()).unwrap_or_default();
    if reports.iter().any(|r| r.parameters.len() != parameters.len()) {
        return Err(Error::InvalidInput("reports have different parameter counts".into()));
    }
    match format {
        TableFormat::Markdown => Ok(markdown(reports, &parameters)),
        TableFormat::Csv => csv_table(reports, parameters.len()),
    }
}

fn markdown(reports: &[SimReport], parameters: &[String]) -> String {
    let mut out = String::new();
    let mut header = vec!["Mechanism".to_string(), "Method".to_string()];
    header.extend(parameters.iter().map(|p| format!("Bias (Mean SE) {p}")));
    header.extend(parameters.iter().map(|p| format!("Coverage {p}")));
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for report in reports {
        for (i, s) in report.results.iter().enumerate() {
            let mech = if i == 0 { report.config.mechanism.label() } else { "" };
            let mut cells = vec![mech.to_string(), s.method.label().to_string()];
            cells.extend(s.bias.iter().zip(&s.mean_se).map(|(b, se)| format!("{b:.2} ({se:.3})")));
            cells.extend(s.coverage.iter().map(|&c| coverage_cell(c)));
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
    }
    if reports.iter().any(|r| r.results.iter().any(|s| s.coverage.iter().any(|&c| c < FLAG_BELOW))) {
        let _ = writeln!(out, "\n\u{2020} coverage below {FLAG_BELOW:.2}");
    }
    out
}

const CSV_FIXED: [&str; 8] = ["scenario", "analysis", "mechanism", "n", "method", "n_reps", "n_success", "n_failed"];

fn csv_header(p: usize) -> Vec<String> {
    let mut h: Vec<String> = CSV_FIXED.iter().map(|s| s.to_string()).collect();
    for j in 1..=p {
        for col in ["bias", "mean_se", "empirical_sd", "coverage", "flag"] {
            h.push(format!("{col}_{j}"));
        }
    }
    h
}

fn csv_table(reports: &[SimReport], p: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    w.write_record(csv_header(p)).map_err(map_err)?;
    for report in reports {
        let c = &report.config;
        for s in &report.results {
            let mut row = vec![
                c.scenario.name().to_string(),
                c.analysis.name().to_string(),
                c.mechanism.name().to_string(),
                c.n.to_string(),
                s.method.name().to_string(),
                report.n_reps.to_string(),
                s.n_success.to_string(),
                s.n_failed.to_string(),
            ];
            for j in 0..p {
                row.push(s.bias[j].to_string());
                row.push(s.mean_se[j].to_string());
                row.push(s.empirical_sd[j].map(|v| v.to_string()).unwrap_or_default());
                row.push(s.coverage[j].to_string());
                row.push(u8::from(s.coverage[j] < FLAG_BELOW).to_string());
            }
            w.write_record(row).map_err(map_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// One parsed row of a CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub scenario: String,
    pub analysis: String,
    pub mechanism: String,
    pub n: usize,
    pub method: String,
    pub n_reps: usize,
    pub n_success: usize,
    pub n_failed: usize,
    pub bias: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub empirical_sd: Vec<Option<f64>>,
    pub coverage: Vec<f64>,
    pub flagged: Vec<bool>,
}

/// Reads back a table written by [`emit_table`] in CSV format.
pub fn parse_csv_table(text: &str) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(1, None, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let extra = header.len().checked_sub(CSV_FIXED.len()).filter(|k| k % 5 == 0);
    let p = match extra {
        Some(k) if header == csv_header(k / 5) => k / 5,
        _ => return Err(Error::parse(1, None, "unexpected table header")),
    };
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, None, e.to_string()))?;
        let get = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            get(k).parse().map_err(|_| Error::parse(line, Some(&header[k]), format!("not a number: `{}`", get(k))))
        };
        let int = |k: usize| -> Result<usize> {
            get(k).parse().map_err(|_| Error::parse(line, Some(&header[k]), format!("not an integer: `{}`", get(k))))
        };
        let mut row = TableRow {
            scenario: get(0).into(),
            analysis: get(1).into(),
            mechanism: get(2).into(),
            n: int(3)?,
            method: get(4).into(),
            n_reps: int(5)?,
            n_success: int(6)?,
            n_failed: int(7)?,
            bias: Vec::new(),
            mean_se: Vec::new(),
            empirical_sd: Vec::new(),
            coverage: Vec::new(),
            flagged: Vec::new(),
        };
        for j in 0..p {
            let base = CSV_FIXED.len() + 5 * j;
            row.bias.push(num(base)?);
            row.mean_se.push(num(base + 1)?);
            row.empirical_sd.push(if get(base + 2).is_empty() { None } else { Some(num(base + 2)?) });
            row.coverage.push(num(base + 3)?);
            row.flagged.push(int(base + 4)? == 1);
        }
        rows.push(row);
    }
    Ok(rows)
}
