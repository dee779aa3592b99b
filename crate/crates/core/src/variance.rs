//! Covariance estimators for Cox fits: inverse information, the robust
//! sandwich built from per-subject score residuals, and the IPLW sandwich
//! that also accounts for the estimated linkage model.
//!
//! Every sandwich goes through [`sandwich`], so the IPLW estimator with unit
//! weights and no linkage correction is bit-identical to the robust one.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::coxfit::{CoxFit, CoxProblem};
use crate::dataset::{EpisodeSet, SubjectRecord};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::linkage::LinkageFit;

const SINGULAR_REL_TOL: f64 = 1e-10;
/// Relative eigenvalue slack before a meat matrix is declared indefinite.
pub const PSD_SLACK: f64 = 1e-8;

/// Per-subject score residuals and the pieces of the sandwich built from
/// them. Row `i` of `u` belongs to `subject_ids[i]` of the episode set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSet {
    #[serde(with = "linalg::serde_matrix")]
    pub u: Matrix,
    pub subject_ids: Vec<u64>,
    pub weights: Vec<f64>,
    /// `(1/n) sum w_i^2 U_i U_i'`.
    #[serde(with = "linalg::serde_matrix")]
    pub meat: Matrix,
    /// Plug-in `Q_e`, `(d+1) x p`; absent when linkage was not estimated.
    #[serde(with = "linalg::serde_matrix::option")]
    pub qe_hat: Option<Matrix>,
    /// `Q_e' Sigma_gamma^{-1} Q_e`, subtracted from `meat`.
    #[serde(with = "linalg::serde_matrix::option")]
    pub correction: Option<Matrix>,
    #[serde(with = "linalg::serde_matrix")]
    pub sigma_u: Matrix,
    #[serde(with = "linalg::serde_matrix")]
    pub sigma0_inv: Matrix,
    pub n: usize,
}

/// Score residuals `U_i(beta)` per included subject, one row each.
pub fn influence_residuals(set: &EpisodeSet, beta: &[f64]) -> Result<Matrix> {
    let problem = CoxProblem::new(set)?;
    if problem.times.is_empty() {
        return Err(Error::EmptyRiskSet { time: None });
    }
    let p = set.p;
    let rows = &set.rows;
    let (etas, shift) = problem.etas(beta);

    // Per event time (descending): risk-set mean and a_k = d_k / S0_k with
    // S0 on the shifted scale.
    let m = problem.times.len();
    let mut xbar = vec![Vector::zeros(p); m];
    let mut a = vec![0.0; m];
    problem.sweep(&etas, shift, false, |st| {
        let d_w: f64 = st.events.iter().map(|&e| rows[e].weight).sum();
        xbar[st.k] = st.s1 / st.s0;
        a[st.k] = d_w / st.s0;
    })?;

    // Ascending prefix sums so that the compensator over (start, stop] is a
    // difference of two lookups.
    let asc_times: Vec<f64> = problem.times.iter().rev().copied().collect();
    let mut cum_a = vec![0.0; m + 1];
    let mut cum_b = vec![Vector::zeros(p); m + 1];
    for j in 0..m {
        let k = m - 1 - j;
        cum_a[j + 1] = cum_a[j] + a[k];
        cum_b[j + 1] = &cum_b[j] + &xbar[k] * a[k];
    }
    let upto = |t: f64| asc_times.partition_point(|&s| s <= t);

    let mut u = Matrix::zeros(set.n_subjects(), p);
    for (i, row) in rows.iter().enumerate() {
        let x = Vector::from_row_slice(problem.row_x(i));
        let (lo, hi) = (upto(row.start), upto(row.stop));
        let risk = (etas[i] - shift).exp();
        let mut r = (&x * (cum_a[hi] - cum_a[lo]) - (&cum_b[hi] - &cum_b[lo])) * (-risk);
        if row.event && row.weight > 0.0 {
            let k = m - hi;
            r += &x - &xbar[k];
        }
        let mut target = u.row_mut(row.subject);
        target += r.transpose();
    }
    Ok(u)
}

/// `(1/n) A^{-1}`.
pub fn cov_model(fit: &CoxFit) -> Result<Matrix> {
    let a_inv = information_inverse(fit)?;
    Ok(a_inv / fit.n as f64)
}

fn information_inverse(fit: &CoxFit) -> Result<Matrix> {
    let scale = fit.hessian.trace().abs();
    linalg::spd_inverse(&fit.hessian, scale, SINGULAR_REL_TOL).ok_or(Error::SingularHessian)
}

/// `(1/n) A^{-1} M A^{-1}`.
pub fn sandwich(a_inv: &Matrix, meat: &Matrix, n: usize) -> Matrix {
    linalg::symmetrize(&(a_inv * meat * a_inv)) / n as f64
}

/// `(1/n) sum_i c_i U_i U_i'`.
fn outer_sum(u: &Matrix, coef: impl Fn(usize) -> f64, n: usize) -> Matrix {
    let p = u.ncols();
    let mut m = Matrix::zeros(p, p);
    for i in 0..u.nrows() {
        let row = u.row(i).transpose();
        m.ger(coef(i), &row, &row, 1.0);
    }
    m / n as f64
}

impl InfluenceSet {
    /// Residuals and meat for `fit` on `set`, without any linkage correction.
    pub fn new(set: &EpisodeSet, fit: &CoxFit) -> Result<Self> {
        let u = influence_residuals(set, &fit.beta_hat)?;
        let weights = set.subject_weights.clone();
        let meat = outer_sum(&u, |i| weights[i] * weights[i], set.n);
        let sigma0_inv = information_inverse(fit)?;
        Ok(InfluenceSet {
            u,
            subject_ids: set.subject_ids.clone(),
            weights,
            sigma_u: meat.clone(),
            meat,
            qe_hat: None,
            correction: None,
            sigma0_inv,
            n: set.n,
        })
    }

    /// Adds the estimated-linkage correction. `subjects` is the list the
    /// linkage model was fitted on.
    pub fn with_linkage(mut self, subjects: &[SubjectRecord], linkage: &LinkageFit) -> Result<Self> {
        if linkage.pi_hat.len() != subjects.len() {
            return Err(Error::InvalidInput("linkage fit does not match subject list".into()));
        }
        let position: HashMap<u64, usize> = subjects.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let d = linkage.gamma_hat.len();
        let p = self.u.ncols();
        let mut qe = Matrix::zeros(d, p);
        for (slot, id) in self.subject_ids.iter().enumerate() {
            let &i = position
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("subject {id} missing from linkage data")))?;
            let s = &subjects[i];
            if s.q {
                continue;
            }
            let c = self.weights[slot] * (1.0 - linkage.pi_hat[i]);
            let xt = linkage.design_row(s);
            qe.ger(c, &xt, &self.u.row(slot).transpose(), 1.0);
        }
        qe /= self.n as f64;
        let info_scale = linkage.info.trace().abs();
        let info_inv = linalg::spd_inverse(&linkage.info, info_scale, SINGULAR_REL_TOL).ok_or(Error::SingularLinkageInfo)?;
        let correction = linalg::symmetrize(&(qe.transpose() * info_inv * &qe));
        self.sigma_u = &self.meat - &correction;
        self.qe_hat = Some(qe);
        self.correction = Some(correction);
        Ok(self)
    }

    /// Fails when `sigma_u` has an eigenvalue below `-PSD_SLACK` times its
    /// largest.
    pub fn check_psd(&self) -> Result<()> {
        let (lo, hi) = linalg::eigen_range(&self.sigma_u);
        if lo < -PSD_SLACK * hi.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveSemidefinite {
                what: "IPLW score covariance",
                min_eigenvalue: lo,
                max_eigenvalue: hi,
            });
        }
        Ok(())
    }

    /// `(1/n) sum w_i U_i`; equals the score at `beta_hat`.
    pub fn weighted_mean(&self) -> Vector {
        let mut m = Vector::zeros(self.u.ncols());
        for (i, w) in self.weights.iter().enumerate() {
            m.axpy(*w, &self.u.row(i).transpose(), 1.0);
        }
        m / self.n as f64
    }
}

/// Robust sandwich from the uncorrected meat.
pub fn cov_robust(influence: &InfluenceSet) -> Matrix {
    sandwich(&influence.sigma0_inv, &influence.meat, influence.n)
}

/// IPLW sandwich from `sigma_u`, after the positive semi-definiteness check.
pub fn cov_iplw(influence: &InfluenceSet) -> Result<Matrix> {
    influence.check_psd()?;
    Ok(sandwich(&influence.sigma0_inv, &influence.sigma_u, influence.n))
}
