//! Weighted Cox partial likelihood over counting-process episodes.
//!
//! All sums carry the `1/n` normalisation with `n` = [`EpisodeSet::n`]. Tied
//! event times share one risk set (Breslow). Risk sets are swept once per
//! evaluation in decreasing time order, adding rows as their `stop` is
//! reached and dropping them once `start` is no longer below the current
//! time.

use serde::{Deserialize, Serialize};

use crate::dataset::EpisodeSet;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Relative eigenvalue threshold below which the information is singular.
const SINGULAR_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RiskSums {
    pub s0: f64,
    pub s1: Vector,
    pub s2: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta_hat: Vec<f64>,
    pub loglik: f64,
    pub score_norm: f64,
    /// `A_n(beta_hat)`, the negative Hessian of the normalised log partial
    /// likelihood.
    #[serde(with = "linalg::serde_matrix")]
    pub hessian: Matrix,
    pub iterations: usize,
    pub converged: bool,
    #[serde(with = "linalg::serde_matrix::option")]
    pub cov_model: Option<Matrix>,
    #[serde(with = "linalg::serde_matrix::option")]
    pub cov_robust: Option<Matrix>,
    #[serde(with = "linalg::serde_matrix::option")]
    pub cov_iplw: Option<Matrix>,
    pub n: usize,
}

impl CoxFit {
    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn beta(&self) -> Vector {
        Vector::from_column_slice(&self.beta_hat)
    }
}

/// Direct evaluation of the weighted risk-set sums at time `t`.
pub fn risk_sums(set: &EpisodeSet, beta: &[f64], t: f64) -> Result<RiskSums> {
    check_beta(set, beta)?;
    let p = set.p;
    let b = Vector::from_column_slice(beta);
    let mut out = RiskSums {
        s0: 0.0,
        s1: Vector::zeros(p),
        s2: Matrix::zeros(p, p),
    };
    let mut weighted_event = false;
    for row in &set.rows {
        if row.event && row.stop == t && row.weight > 0.0 {
            weighted_event = true;
        }
        if row.start < t && t <= row.stop {
            let x = Vector::from_column_slice(&row.x);
            let r = row.weight * x.dot(&b).exp();
            out.s0 += r;
            out.s1.axpy(r, &x, 1.0);
            out.s2.ger(r, &x, &x, 1.0);
        }
    }
    if weighted_event && out.s0 <= 0.0 {
        return Err(Error::EmptyRiskSet { time: Some(t) });
    }
    let n = set.n as f64;
    out.s0 /= n;
    out.s1 /= n;
    out.s2 /= n;
    Ok(out)
}

fn check_beta(set: &EpisodeSet, beta: &[f64]) -> Result<()> {
    if beta.len() != set.p {
        return Err(Error::InvalidInput(format!(
            "beta has length {}, design has {} columns",
            beta.len(),
            set.p
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidInput("beta must be finite".into()));
    }
    Ok(())
}

/// Sorted views of an episode set, reusable across evaluations.
pub struct CoxProblem<'a> {
    pub(crate) set: &'a EpisodeSet,
    p: usize,
    x: Vec<f64>,
    by_stop_desc: Vec<usize>,
    by_start_desc: Vec<usize>,
    /// Distinct weighted event times, descending.
    pub(crate) times: Vec<f64>,
    /// Event rows grouped by time; group `k` is `event_rows[offsets[k]..offsets[k + 1]]`.
    pub(crate) event_rows: Vec<usize>,
    pub(crate) offsets: Vec<usize>,
}

/// State of the risk set at one distinct event time, as seen by a sweep
/// visitor. Sums use shifted exponentials `exp(eta - shift)` and are not
/// divided by `n`.
pub(crate) struct TimeState<'s> {
    pub k: usize,
    pub s0: f64,
    pub s1: &'s Vector,
    pub s2: Option<&'s Matrix>,
    pub events: &'s [usize],
}

/// Log-likelihood, score and information at one `beta`.
#[derive(Debug, Clone)]
pub struct CoxEval {
    pub loglik: f64,
    pub score: Vector,
    pub hessian: Matrix,
    /// Weighted average of `trace(S2/S0)`; the scale for singularity checks.
    pub info_scale: f64,
}

impl<'a> CoxProblem<'a> {
    pub fn new(set: &'a EpisodeSet) -> Result<Self> {
        let p = set.p;
        if p == 0 {
            return Err(Error::InvalidInput("design has no covariates".into()));
        }
        let mut x = Vec::with_capacity(set.rows.len() * p);
        for row in &set.rows {
            if row.x.len() != p {
                return Err(Error::InvalidInput("episode covariate length mismatch".into()));
            }
            if !(row.start < row.stop) {
                return Err(Error::InvalidInput(format!(
                    "episode ({}, {}] of subject {} is empty",
                    row.start, row.stop, row.subject_id
                )));
            }
            x.extend_from_slice(&row.x);
        }
        let mut by_stop_desc: Vec<usize> = (0..set.rows.len()).collect();
        by_stop_desc.sort_by(|&a, &b| set.rows[b].stop.total_cmp(&set.rows[a].stop));
        let mut by_start_desc: Vec<usize> = (0..set.rows.len()).filter(|&i| set.rows[i].start > 0.0).collect();
        by_start_desc.sort_by(|&a, &b| set.rows[b].start.total_cmp(&set.rows[a].start));

        let mut event_rows: Vec<usize> = by_stop_desc
            .iter()
            .copied()
            .filter(|&i| set.rows[i].event && set.rows[i].weight > 0.0)
            .collect();
        event_rows.sort_by(|&a, &b| set.rows[b].stop.total_cmp(&set.rows[a].stop).then(a.cmp(&b)));
        let mut times = Vec::new();
        let mut offsets = Vec::new();
        for (pos, &i) in event_rows.iter().enumerate() {
            let t = set.rows[i].stop;
            if times.last() != Some(&t) {
                times.push(t);
                offsets.push(pos);
            }
        }
        offsets.push(event_rows.len());
        Ok(CoxProblem {
            set,
            p,
            x,
            by_stop_desc,
            by_start_desc,
            times,
            event_rows,
            offsets,
        })
    }

    pub(crate) fn row_x(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub(crate) fn etas(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let etas: Vec<f64> = (0..self.set.rows.len())
            .map(|i| self.row_x(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect();
        let shift = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (etas, if shift.is_finite() { shift } else { 0.0 })
    }

    /// Visits every distinct event time in decreasing order with the current
    /// risk-set sums.
    pub(crate) fn sweep<F>(&self, etas: &[f64], shift: f64, second_order: bool, mut visit: F) -> Result<()>
    where
        F: FnMut(&TimeState<'_>),
    {
        let p = self.p;
        let rows = &self.set.rows;
        let mut s0 = 0.0;
        let mut s1 = Vector::zeros(p);
        let mut s2 = Matrix::zeros(if second_order { p } else { 0 }, if second_order { p } else { 0 });
        let (mut ia, mut ir) = (0, 0);
        let accumulate = |i: usize, sign: f64, s0: &mut f64, s1: &mut Vector, s2: &mut Matrix| {
            let r = sign * rows[i].weight * (etas[i] - shift).exp();
            let x = self.row_x(i);
            *s0 += r;
            for a in 0..p {
                s1[a] += r * x[a];
            }
            if second_order {
                for a in 0..p {
                    let rxa = r * x[a];
                    for b in 0..=a {
                        s2[(a, b)] += rxa * x[b];
                    }
                }
            }
        };
        for (k, &t) in self.times.iter().enumerate() {
            while ia < self.by_stop_desc.len() && rows[self.by_stop_desc[ia]].stop >= t {
                accumulate(self.by_stop_desc[ia], 1.0, &mut s0, &mut s1, &mut s2);
                ia += 1;
            }
            while ir < self.by_start_desc.len() && rows[self.by_start_desc[ir]].start >= t {
                accumulate(self.by_start_desc[ir], -1.0, &mut s0, &mut s1, &mut s2);
                ir += 1;
            }
            if !(s0 > 0.0) || !s0.is_finite() {
                return Err(Error::EmptyRiskSet { time: Some(t) });
            }
            if second_order {
                for a in 0..p {
                    for b in 0..a {
                        s2[(b, a)] = s2[(a, b)];
                    }
                }
            }
            visit(&TimeState {
                k,
                s0,
                s1: &s1,
                s2: second_order.then_some(&s2),
                events: &self.event_rows[self.offsets[k]..self.offsets[k + 1]],
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, beta: &[f64]) -> Result<CoxEval> {
        check_beta(self.set, beta)?;
        if self.times.is_empty() {
            return Err(Error::EmptyRiskSet { time: None });
        }
        let p = self.p;
        let rows = &self.set.rows;
        let (etas, shift) = self.etas(beta);
        let mut loglik = 0.0;
        let mut score = Vector::zeros(p);
        let mut hessian = Matrix::zeros(p, p);
        let mut info_scale = 0.0;
        self.sweep(&etas, shift, true, |st| {
            let mut d_w = 0.0;
            for &e in st.events {
                let w = rows[e].weight;
                d_w += w;
                loglik += w * etas[e];
                for (a, xa) in self.row_x(e).iter().enumerate() {
                    score[a] += w * xa;
                }
            }
            loglik -= d_w * (st.s0.ln() + shift);
            let xbar = st.s1 / st.s0;
            score.axpy(-d_w, &xbar, 1.0);
            let s2 = st.s2.expect("second-order sweep");
            hessian += (s2 / st.s0 - &xbar * xbar.transpose()) * d_w;
            info_scale += d_w * s2.trace() / st.s0;
        })?;
        let n = self.set.n as f64;
        if !loglik.is_finite() {
            return Err(Error::InvalidInput("log partial likelihood is not finite".into()));
        }
        Ok(CoxEval {
            loglik: loglik / n,
            score: score / n,
            hessian: linalg::symmetrize(&(hessian / n)),
            info_scale: info_scale / n,
        })
    }
}

pub fn score(set: &EpisodeSet, beta: &[f64]) -> Result<Vector> {
    Ok(CoxProblem::new(set)?.evaluate(beta)?.score)
}

pub fn hessian(set: &EpisodeSet, beta: &[f64]) -> Result<Matrix> {
    Ok(CoxProblem::new(set)?.evaluate(beta)?.hessian)
}

pub fn log_partial_likelihood(set: &EpisodeSet, beta: &[f64]) -> Result<f64> {
    Ok(CoxProblem::new(set)?.evaluate(beta)?.loglik)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub init: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            init: None,
            tol: 1e-9,
            max_iter: 50,
            max_halvings: 20,
        }
    }
}

fn is_singular(eval: &CoxEval) -> bool {
    let (lo, _) = linalg::eigen_range(&eval.hessian);
    !(lo > SINGULAR_REL_TOL * eval.info_scale.max(f64::MIN_POSITIVE))
}

/// Newton-Raphson on the weighted score with step-halving whenever the log
/// partial likelihood would decrease.
///
/// Returns the best iterate with `converged = false` if the score is still
/// above `tol` after `max_iter` steps or no step-halved move improves the
/// likelihood.
pub fn newton_solve(set: &EpisodeSet, opts: &NewtonOptions) -> Result<CoxFit> {
    let problem = CoxProblem::new(set)?;
    let mut beta: Vec<f64> = opts.init.clone().unwrap_or_else(|| vec![0.0; set.p]);
    let mut eval = problem.evaluate(&beta)?;
    let mut iterations = 0;
    let mut converged = linalg::sup_norm(&eval.score) <= opts.tol;
    while !converged && iterations < opts.max_iter {
        if is_singular(&eval) {
            return Err(Error::SingularHessian);
        }
        let chol = eval.hessian.clone().cholesky().ok_or(Error::SingularHessian)?;
        let step = chol.solve(&eval.score);
        iterations += 1;

        let current_norm = linalg::sup_norm(&eval.score);
        let roundoff = 16.0 * f64::EPSILON * (1.0 + eval.loglik.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            if let Ok(next) = problem.evaluate(&trial) {
                let gain = next.loglik - eval.loglik;
                if gain >= 0.0 || (gain >= -roundoff && linalg::sup_norm(&next.score) < current_norm) {
                    accepted = Some((trial, next));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((next_beta, next_eval)) = accepted else { break };
        beta = next_beta;
        eval = next_eval;
        converged = linalg::sup_norm(&eval.score) <= opts.tol;
    }
    if converged && is_singular(&eval) {
        return Err(Error::SingularHessian);
    }
    Ok(CoxFit {
        beta_hat: beta,
        loglik: eval.loglik,
        score_norm: linalg::sup_norm(&eval.score),
        hessian: eval.hessian,
        iterations,
        converged,
        cov_model: None,
        cov_robust: None,
        cov_iplw: None,
        n: set.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EpisodeRow;

    /// Time-independent data, one row per subject.
    pub(crate) fn simple_set(data: &[(f64, bool, f64, f64)]) -> EpisodeSet {
        EpisodeSet {
            rows: data
                .iter()
                .enumerate()
                .map(|(i, &(t, e, x, w))| EpisodeRow {
                    subject_id: i as u64,
                    subject: i,
                    start: 0.0,
                    stop: t,
                    event: e,
                    x: vec![x],
                    weight: w,
                })
                .collect(),
            n: data.len(),
            p: 1,
            subject_ids: (0..data.len() as u64).collect(),
            subject_weights: data.iter().map(|d| d.3).collect(),
        }
    }

    #[test]
    fn risk_sums_single_subject() {
        let set = simple_set(&[(5.0, true, 0.0, 1.0)]);
        let rs = risk_sums(&set, &[0.0], 2.0).unwrap();
        assert_eq!(rs.s0, 1.0);
        assert_eq!(rs.s1[0], 0.0);
        assert_eq!(rs.s2[(0, 0)], 0.0);
    }

    #[test]
    fn risk_sums_two_subjects() {
        let set = simple_set(&[(5.0, true, 0.0, 1.0), (6.0, false, 1.0, 1.0)]);
        let rs = risk_sums(&set, &[2f64.ln()], 1.0).unwrap();
        assert!((rs.s0 - 3.0 / 2.0).abs() < 1e-15);
        assert!((rs.s1[0] - 2.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn identical_covariates_have_zero_score() {
        let set = simple_set(&[(1.0, true, 2.0, 1.0), (2.0, true, 2.0, 2.0), (3.0, false, 2.0, 1.0), (4.0, true, 2.0, 1.0)]);
        for b in [-1.0, 0.0, 0.7] {
            assert!(score(&set, &[b]).unwrap()[0].abs() < 1e-14);
        }
    }

    #[test]
    fn constant_covariate_information_is_zero_and_newton_fails() {
        let set = simple_set(&[(1.0, true, 3.0, 1.0), (2.0, true, 3.0, 1.0), (3.0, true, 3.0, 1.0)]);
        assert!(hessian(&set, &[0.2]).unwrap()[(0, 0)].abs() < 1e-12);
        assert!(matches!(newton_solve(&set, &NewtonOptions::default()), Err(Error::SingularHessian)));
    }

    #[test]
    fn loglik_closed_form_all_at_risk() {
        // every subject at risk at every event time: events at the end, ties allowed
        let n = 7;
        let d = 3;
        let data: Vec<_> = (0..n).map(|i| (10.0, i < d, i as f64 * 0.3, 1.0)).collect();
        let set = simple_set(&data);
        let ll = log_partial_likelihood(&set, &[0.0]).unwrap();
        let expected = -(d as f64 / n as f64) * (n as f64).ln();
        assert!((ll - expected).abs() < 1e-14, "{ll} vs {expected}");
    }

    #[test]
    fn no_events_is_empty_risk_set() {
        let set = simple_set(&[(1.0, false, 0.0, 1.0), (2.0, false, 1.0, 1.0)]);
        assert!(matches!(score(&set, &[0.0]), Err(Error::EmptyRiskSet { time: None })));
    }

    #[test]
    fn zero_weight_event_is_ignored() {
        let a = simple_set(&[(1.0, true, 0.0, 1.0), (2.0, true, 1.0, 1.0), (3.0, false, 0.5, 1.0)]);
        let mut b = simple_set(&[(0.5, true, 4.0, 0.0), (1.0, true, 0.0, 1.0), (2.0, true, 1.0, 1.0), (3.0, false, 0.5, 1.0)]);
        b.n = 3;
        let sa = score(&a, &[0.3]).unwrap();
        let sb = score(&b, &[0.3]).unwrap();
        assert!((sa[0] - sb[0]).abs() < 1e-15);
    }
}
