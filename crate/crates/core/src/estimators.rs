//! End-to-end estimation pipelines.
//!
//! Each pipeline is an [`Estimator`] registered by name in an
//! [`EstimatorRegistry`], so callers pick methods at runtime from strings.
//! Comparators report the robust sandwich; IPLW reports the sandwich that
//! accounts for the estimated linkage model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coxfit::{newton_solve, CoxFit, NewtonOptions};
use crate::dataset::{split_episodes_with, CsvSchema, DesignSpec, LinkageClass, SubjectRecord};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::linkage::{compute_weights, fit_linkage_with, WeightOptions};
use crate::variance::{cov_iplw, cov_model, cov_robust, InfluenceSet};

/// Normal quantile for two-sided 95% intervals.
pub const CI_MULTIPLIER: f64 = 1.960;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Oracle,
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "CCPlus")]
    CcPlus,
    #[serde(rename = "NLAC")]
    Nlac,
    #[serde(rename = "IPLW")]
    Iplw,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Oracle, Method::Cc, Method::CcPlus, Method::Nlac, Method::Iplw];

    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Cc => "cc",
            Method::CcPlus => "ccplus",
            Method::Nlac => "nlac",
            Method::Iplw => "iplw",
        }
    }

    /// Table label.
    pub fn label(self) -> &'static str {
        match self {
            Method::Oracle => "Oracle",
            Method::Cc => "CC",
            Method::CcPlus => "CC+",
            Method::Nlac => "NLAC",
            Method::Iplw => "IPLW",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower || m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}`")))
    }
}

/// Model and solver settings shared by every pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub design: DesignSpec,
    /// Indices into `z1` for the linkage model; `None` uses every column.
    pub linkage_covariates: Option<Vec<usize>>,
    pub weights: WeightOptions,
    pub newton: NewtonOptions,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            design: DesignSpec::baseline_only(),
            linkage_covariates: None,
            weights: WeightOptions::default(),
            newton: NewtonOptions::default(),
        }
    }
}

impl EstimatorSpec {
    pub fn with_design(design: DesignSpec) -> Self {
        EstimatorSpec {
            design,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: Method,
    pub parameters: Vec<String>,
    pub cox: CoxFit,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub hr: Vec<f64>,
    pub hr_lo: Vec<f64>,
    pub hr_hi: Vec<f64>,
    pub n_used: usize,
    /// Linkage-model coefficients, IPLW only.
    pub gamma_hat: Option<Vec<f64>>,
    pub diagnostics: Vec<String>,
}

impl FitReport {
    pub fn beta(&self) -> &[f64] {
        &self.cox.beta_hat
    }

    /// Whether the interval for parameter `j` contains `value`.
    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.ci_lo[j] <= value && value <= self.ci_hi[j]
    }
}

pub trait Estimator: Send + Sync {
    fn method(&self) -> Method;

    fn fit(&self, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport>;
}

/// Fits an unweighted Cox model on `subjects` and reports the robust SE.
fn fit_unweighted(method: Method, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport> {
    let weights = vec![1.0; subjects.len()];
    let (cox, influence) = fit_weighted(subjects, &weights, spec)?;
    let cov = cov_robust(&influence);
    finish(method, subjects, spec, cox, cov, None, Vec::new())
}

fn fit_weighted(subjects: &[SubjectRecord], weights: &[f64], spec: &EstimatorSpec) -> Result<(CoxFit, InfluenceSet)> {
    let set = split_episodes_with(subjects, &spec.design, weights)?;
    let mut cox = newton_solve(&set, &spec.newton)?;
    if !cox.converged {
        return Err(Error::NoConvergence {
            solver: "Cox Newton-Raphson",
            iterations: cox.iterations,
            score_norm: cox.score_norm,
        });
    }
    let influence = InfluenceSet::new(&set, &cox)?;
    cox.cov_model = Some(cov_model(&cox)?);
    cox.cov_robust = Some(cov_robust(&influence));
    Ok((cox, influence))
}

fn finish(
    method: Method,
    used: &[SubjectRecord],
    spec: &EstimatorSpec,
    mut cox: CoxFit,
    cov: Matrix,
    gamma_hat: Option<Vec<f64>>,
    diagnostics: Vec<String>,
) -> Result<FitReport> {
    let se: Vec<f64> = (0..cox.p()).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    if method == Method::Iplw {
        cox.cov_iplw = Some(cov);
    }
    let beta = &cox.beta_hat;
    let ci_lo: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b - CI_MULTIPLIER * s).collect();
    let ci_hi: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b + CI_MULTIPLIER * s).collect();
    let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
    let z1_len = used.first().map_or(0, |s| s.z1.len());
    Ok(FitReport {
        method,
        parameters: spec.design.parameter_names(&CsvSchema::new(z1_len).covariate_names()),
        hr: exp(beta),
        hr_lo: exp(&ci_lo),
        hr_hi: exp(&ci_hi),
        se,
        ci_lo,
        ci_hi,
        n_used: used.iter().filter(|s| s.has_outcome()).count(),
        cox,
        gamma_hat,
        diagnostics,
    })
}

fn require_nonempty(subjects: &[SubjectRecord], what: &str) -> Result<()> {
    if subjects.is_empty() {
        return Err(Error::InvalidInput(format!("no {what} subjects")));
    }
    Ok(())
}

/// Every subject with its outcome recomputed from latent times.
pub struct Oracle;

impl Estimator for Oracle {
    fn method(&self) -> Method {
        Method::Oracle
    }

    fn fit(&self, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport> {
        require_nonempty(subjects, "")?;
        let view: Vec<SubjectRecord> = subjects.iter().map(SubjectRecord::oracle_view).collect::<Result<_>>()?;
        fit_unweighted(self.method(), &view, spec)
    }
}

/// Linked subjects only.
pub struct CompleteCase;

impl Estimator for CompleteCase {
    fn method(&self) -> Method {
        Method::Cc
    }

    fn fit(&self, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport> {
        let view: Vec<SubjectRecord> = subjects.iter().filter(|s| s.l).cloned().collect();
        require_nonempty(&view, "linked")?;
        fit_unweighted(self.method(), &view, spec)
    }
}

/// Linked subjects plus unlinked subjects with an in-trial event.
pub struct CompleteCasePlus;

impl Estimator for CompleteCasePlus {
    fn method(&self) -> Method {
        Method::CcPlus
    }

    fn fit(&self, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport> {
        let view: Vec<SubjectRecord> = subjects.iter().filter(|s| s.l || s.q).cloned().collect();
        require_nonempty(&view, "linked or in-trial event")?;
        fit_unweighted(self.method(), &view, spec)
    }
}

/// Unlinked in-trial-censored subjects treated as censored at `c1`.
pub struct NotLinkedAsCensored;

impl Estimator for NotLinkedAsCensored {
    fn method(&self) -> Method {
        Method::Nlac
    }

    fn fit(&self, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport> {
        require_nonempty(subjects, "")?;
        let view: Vec<SubjectRecord> = subjects.iter().map(SubjectRecord::nlac_view).collect();
        fit_unweighted(self.method(), &view, spec)
    }
}

/// Inverse-probability-of-linkage weighting with a logistic linkage model.
pub struct Iplw;

impl Estimator for Iplw {
    fn method(&self) -> Method {
        Method::Iplw
    }

    fn fit(&self, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport> {
        require_nonempty(subjects, "")?;
        let needs_linkage_model = subjects.iter().any(|s| s.class() == LinkageClass::Class3);
        if !needs_linkage_model {
            // Every in-trial-censored subject is linked: all weights are one.
            let weights = vec![1.0; subjects.len()];
            let (cox, influence) = fit_weighted(subjects, &weights, spec)?;
            let cov = cov_iplw(&influence)?;
            let note = "linkage model skipped: every in-trial-censored subject is linked; weights are all 1".to_string();
            return finish(self.method(), subjects, spec, cox, cov, None, vec![note]);
        }

        let z1_len = subjects[0].z1.len();
        let covariates = spec.linkage_covariates.clone().unwrap_or_else(|| (0..z1_len).collect());
        let linkage = fit_linkage_with(subjects, &covariates)?;
        let weights = compute_weights(subjects, &linkage, spec.weights)?;
        let (cox, influence) = fit_weighted(subjects, &weights.w, spec)?;
        let influence = influence.with_linkage(subjects, &linkage)?;
        let cov = cov_iplw(&influence)?;

        let mut diagnostics = weights.warnings;
        let min_pi = subjects
            .iter()
            .zip(&linkage.pi_hat)
            .filter(|(s, _)| !s.q)
            .map(|(_, &p)| p)
            .fold(f64::INFINITY, f64::min);
        let positive = weights.w.iter().copied().filter(|&w| w > 0.0);
        let (w_min, w_max) = positive.fold((f64::INFINITY, 0.0_f64), |(lo, hi), w| (lo.min(w), hi.max(w)));
        diagnostics.push(format!("min fitted linkage probability among in-trial-censored: {min_pi:.6}"));
        diagnostics.push(format!("positive weight range: [{w_min:.6}, {w_max:.6}]"));
        let used: Vec<SubjectRecord> = subjects.iter().filter(|s| s.l || s.q).cloned().collect();
        finish(self.method(), &used, spec, cox, cov, Some(linkage.gamma_hat), diagnostics)
    }
}

/// Estimators looked up by name.
pub struct EstimatorRegistry {
    entries: BTreeMap<String, Box<dyn Estimator>>,
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        let mut reg = EstimatorRegistry::empty();
        reg.register(Box::new(Oracle));
        reg.register(Box::new(CompleteCase));
        reg.register(Box::new(CompleteCasePlus));
        reg.register(Box::new(NotLinkedAsCensored));
        reg.register(Box::new(Iplw));
        reg
    }
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        EstimatorRegistry { entries: BTreeMap::new() }
    }

    /// Registers under the method's command-line name, replacing any
    /// previous entry.
    pub fn register(&mut self, estimator: Box<dyn Estimator>) {
        self.entries.insert(estimator.method().name().to_string(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Estimator> {
        let method: Method = name.parse()?;
        self.entries
            .get(method.name())
            .map(Box::as_ref)
            .ok_or_else(|| Error::InvalidInput(format!("estimator `{name}` is not registered")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Runs `method` from the default registry.
pub fn fit(method: Method, subjects: &[SubjectRecord], spec: &EstimatorSpec) -> Result<FitReport> {
    match method {
        Method::Oracle => Oracle.fit(subjects, spec),
        Method::Cc => CompleteCase.fit(subjects, spec),
        Method::CcPlus => CompleteCasePlus.fit(subjects, spec),
        Method::Nlac => NotLinkedAsCensored.fit(subjects, spec),
        Method::Iplw => Iplw.fit(subjects, spec),
    }
}
