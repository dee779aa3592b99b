//! Logistic model for the linkage probability among subjects censored in the
//! trial, and the inverse-probability-of-linkage weights built from it.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::SubjectRecord;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub const SCORE_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 100;
pub const SEPARATION_BOUND: f64 = 30.0;
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 0.01;
/// Information-to-Gram eigenvalue ratio treated as separation.
const SEPARATION_INFO_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageFit {
    /// Intercept first, then one coefficient per entry of `covariates`.
    pub gamma_hat: Vec<f64>,
    /// Average negative Hessian over all `n` subjects.
    #[serde(with = "linalg::serde_matrix")]
    pub info: Matrix,
    /// Fitted linkage probability for every subject, in input order.
    pub pi_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Indices into `z1` used as linkage predictors.
    pub covariates: Vec<usize>,
    pub n: usize,
    pub score_norm: f64,
}

impl LinkageFit {
    /// Design row `(1, z1[covariates])`.
    pub fn design_row(&self, subject: &SubjectRecord) -> Vector {
        design_row(subject, &self.covariates)
    }
}

fn design_row(s: &SubjectRecord, covariates: &[usize]) -> Vector {
    let mut v = Vector::zeros(covariates.len() + 1);
    v[0] = 1.0;
    for (k, &c) in covariates.iter().enumerate() {
        v[k + 1] = s.z1[c];
    }
    v
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood term, stable for large |eta|.
fn log_lik_term(l: bool, eta: f64) -> f64 {
    // log(1 + e^eta)
    let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
    if l {
        eta - softplus
    } else {
        -softplus
    }
}

/// Fits the linkage model on every baseline covariate.
pub fn fit_linkage(subjects: &[SubjectRecord]) -> Result<LinkageFit> {
    let p = subjects.first().map_or(0, |s| s.z1.len());
    fit_linkage_with(subjects, &(0..p).collect::<Vec<_>>())
}

/// Newton-Raphson with step-halving on the `q = 0` subsample, started at
/// zero.
pub fn fit_linkage_with(subjects: &[SubjectRecord], covariates: &[usize]) -> Result<LinkageFit> {
    let n = subjects.len();
    if let Some(&bad) = covariates.iter().find(|&&c| subjects.iter().any(|s| c >= s.z1.len())) {
        return Err(Error::InvalidInput(format!("linkage covariate index {bad} out of range")));
    }
    let rows: Vec<(Vector, bool)> = subjects
        .iter()
        .filter(|s| !s.q)
        .map(|s| (design_row(s, covariates), s.l))
        .collect();
    let linked = rows.iter().filter(|(_, l)| *l).count();
    if linked == 0 || linked == rows.len() {
        return Err(Error::InvalidInput(format!(
            "linkage model needs both linked and unlinked subjects among {} in-trial-censored subjects ({linked} linked)",
            rows.len()
        )));
    }
    let d = covariates.len() + 1;

    let gram = rows.iter().fold(Matrix::zeros(d, d), |acc, (x, _)| acc + x * x.transpose());
    let (lo, hi) = linalg::eigen_range(&gram);
    if !(lo > 1e-10 * hi) {
        return Err(Error::SingularDesign);
    }

    let loglik = |gamma: &Vector| -> f64 { rows.iter().map(|(x, l)| log_lik_term(*l, x.dot(gamma))).sum() };
    let score_info = |gamma: &Vector| -> (Vector, Matrix) {
        let mut g = Vector::zeros(d);
        let mut h = Matrix::zeros(d, d);
        for (x, l) in &rows {
            let pi = logistic(x.dot(gamma));
            g.axpy(f64::from(u8::from(*l)) - pi, x, 1.0);
            h.ger(pi * (1.0 - pi), x, x, 1.0);
        }
        (g, h)
    };

    let mut gamma = Vector::zeros(d);
    let mut ll = loglik(&gamma);
    let mut iterations = 0;
    let (mut score, mut hess) = score_info(&gamma);
    let mut converged = linalg::sup_norm(&score) <= SCORE_TOL;
    while !converged && iterations < MAX_ITER {
        iterations += 1;
        let chol = hess.clone().cholesky().ok_or(Error::SingularDesign)?;
        let step = chol.solve(&score);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &gamma + &step * scale;
            let trial_ll = loglik(&trial);
            if trial_ll >= ll || (trial_ll - ll).abs() <= 1e-12 * ll.abs() {
                accepted = Some((trial, trial_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll)) = accepted else { break };
        if let Some((index, value)) = next
            .iter()
            .enumerate()
            .map(|(i, v)| (i, *v))
            .find(|(_, v)| v.abs() > SEPARATION_BOUND)
        {
            return Err(Error::SeparationDetected { index, value });
        }
        gamma = next;
        ll = next_ll;
        (score, hess) = score_info(&gamma);
        converged = linalg::sup_norm(&score) <= SCORE_TOL;
    }
    let score_norm = linalg::sup_norm(&score);
    // Under separation the score can vanish numerically before any
    // coefficient crosses the bound; the information collapses instead.
    if converged && linalg::eigen_range(&hess).0 <= SEPARATION_INFO_RATIO * lo {
        let (index, value) = gamma
            .iter()
            .enumerate()
            .map(|(i, v)| (i, *v))
            .fold((0, 0.0_f64), |best, cur| if cur.1.abs() > best.1.abs() { cur } else { best });
        return Err(Error::SeparationDetected { index, value });
    }
    if !converged {
        return Err(Error::NoConvergence {
            solver: "linkage logistic regression",
            iterations,
            score_norm,
        });
    }

    let pi_hat = subjects
        .iter()
        .map(|s| logistic(design_row(s, covariates).dot(&gamma)))
        .collect();
    Ok(LinkageFit {
        gamma_hat: gamma.iter().cloned().collect(),
        info: linalg::symmetrize(&(hess / n as f64)),
        pi_hat,
        iterations,
        converged,
        covariates: covariates.to_vec(),
        n,
        score_norm,
    })
}

/// Per-subject analysis weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    /// Positivity diagnostics; empty when every probability is above the
    /// floor.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    pub positivity_floor: f64,
    /// Clamp fitted probabilities at the floor before inverting.
    pub truncate: bool,
}

impl Default for WeightOptions {
    fn default() -> Self {
        WeightOptions {
            positivity_floor: DEFAULT_POSITIVITY_FLOOR,
            truncate: false,
        }
    }
}

/// `w = 1` for in-trial events, `1/pi` for linked in-trial-censored subjects
/// and `0` for the unlinked in-trial-censored.
pub fn weight_for(subject: &SubjectRecord, pi: f64) -> f64 {
    match (subject.q, subject.l) {
        (true, _) => 1.0,
        (false, true) => 1.0 / pi,
        (false, false) => 0.0,
    }
}

pub fn compute_weights(subjects: &[SubjectRecord], fit: &LinkageFit, opts: WeightOptions) -> Result<WeightVector> {
    if !fit.converged {
        return Err(Error::NoConvergence {
            solver: "linkage logistic regression",
            iterations: fit.iterations,
            score_norm: fit.score_norm,
        });
    }
    if fit.pi_hat.len() != subjects.len() {
        return Err(Error::InvalidInput("linkage fit does not match subject list".into()));
    }
    let mut warnings = Vec::new();
    let relevant = subjects.iter().zip(&fit.pi_hat).filter(|(s, _)| !s.q).map(|(_, &p)| p);
    let (below, min_pi) = relevant.fold((0usize, f64::INFINITY), |(c, m), p| {
        (c + usize::from(p < opts.positivity_floor), m.min(p))
    });
    if below > 0 {
        let msg = format!(
            "positivity: {below} in-trial-censored subject(s) have fitted linkage probability below {} (min {min_pi:.4}){}",
            opts.positivity_floor,
            if opts.truncate { "; probabilities truncated at the floor" } else { "; weights left untruncated" }
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let w = subjects
        .iter()
        .zip(&fit.pi_hat)
        .map(|(s, &p)| {
            let p = if opts.truncate { p.max(opts.positivity_floor) } else { p };
            weight_for(s, p)
        })
        .collect();
    Ok(WeightVector { w, warnings })
}
