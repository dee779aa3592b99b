//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use linkedcox::dataset::{EpisodeRow, EpisodeSet, SubjectRecord};
use linkedcox::simgen::rng::{StreamRng, Tag};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Single-row-per-subject episode set.
pub fn simple_set(times: &[f64], events: &[bool], xs: &[Vec<f64>], weights: &[f64]) -> EpisodeSet {
    let n = times.len();
    EpisodeSet {
        rows: (0..n)
            .map(|i| EpisodeRow {
                subject_id: i as u64,
                subject: i,
                start: 0.0,
                stop: times[i],
                event: events[i],
                x: xs[i].clone(),
                weight: weights[i],
            })
            .collect(),
        n,
        p: xs[0].len(),
        subject_ids: (0..n as u64).collect(),
        subject_weights: weights.to_vec(),
    }
}

/// Random instance: `n` subjects, `p` covariates, optional ties (times on a
/// coarse grid) and optional non-unit weights.
pub fn random_instance(seed: u64, n: usize, p: usize, ties: bool, weighted: bool) -> EpisodeSet {
    let mut rng = StreamRng::new(seed, 0, 0, Tag::Covariates);
    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut xs = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: f64 = rng.random::<f64>() * 10.0 + 0.01;
        times.push(if ties { (t * 0.5).ceil() } else { t });
        // at least one event, ensured by subject 0
        events.push(i == 0 || rng.random::<f64>() < 0.7);
        xs.push(x);
        weights.push(if weighted { 1.0 + rng.random::<f64>() * 2.0 } else { 1.0 });
    }
    simple_set(&times, &events, &xs, &weights)
}

/// Weighted Breslow log partial likelihood by a double loop over rows.
pub fn loglik_double_loop(set: &EpisodeSet, beta: &[f64]) -> f64 {
    let eta = |r: &EpisodeRow| r.x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut ll = 0.0;
    for ev in set.rows.iter().filter(|r| r.event) {
        let t = ev.stop;
        let denom: f64 = set
            .rows
            .iter()
            .filter(|r| r.start < t && t <= r.stop)
            .map(|r| r.weight * eta(r).exp())
            .sum();
        ll += ev.weight * (eta(ev) - denom.ln());
    }
    ll / set.n as f64
}

/// Score by a double loop: `(1/n) sum_events w_i (x_i - S1/S0)`.
pub fn score_double_loop(set: &EpisodeSet, beta: &[f64]) -> Vec<f64> {
    let p = set.p;
    let eta = |r: &EpisodeRow| r.x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut u = vec![0.0; p];
    for ev in set.rows.iter().filter(|r| r.event) {
        let t = ev.stop;
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        for r in set.rows.iter().filter(|r| r.start < t && t <= r.stop) {
            let w = r.weight * eta(r).exp();
            s0 += w;
            for k in 0..p {
                s1[k] += w * r.x[k];
            }
        }
        for k in 0..p {
            u[k] += ev.weight * (ev.x[k] - s1[k] / s0);
        }
    }
    u.iter().map(|v| v / set.n as f64).collect()
}

/// Information by a double loop.
pub fn information_double_loop(set: &EpisodeSet, beta: &[f64]) -> Vec<Vec<f64>> {
    let p = set.p;
    let eta = |r: &EpisodeRow| r.x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut a = vec![vec![0.0; p]; p];
    for ev in set.rows.iter().filter(|r| r.event) {
        let t = ev.stop;
        let at_risk: Vec<&EpisodeRow> = set.rows.iter().filter(|r| r.start < t && t <= r.stop).collect();
        let s0: f64 = at_risk.iter().map(|r| r.weight * eta(r).exp()).sum();
        let xbar: Vec<f64> = (0..p)
            .map(|k| at_risk.iter().map(|r| r.weight * eta(r).exp() * r.x[k]).sum::<f64>() / s0)
            .collect();
        for j in 0..p {
            for k in 0..p {
                let s2: f64 = at_risk
                    .iter()
                    .map(|r| r.weight * eta(r).exp() * (r.x[j] - xbar[j]) * (r.x[k] - xbar[k]))
                    .sum();
                a[j][k] += ev.weight * s2 / s0;
            }
        }
    }
    a.iter().map(|row| row.iter().map(|v| v / set.n as f64).collect()).collect()
}

/// Maximiser of a unimodal function on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    (lo + hi) / 2.0
}

/// Plain unweighted Cox fit by Newton iterations on the double-loop score
/// and information.
pub fn reference_cox(set: &EpisodeSet) -> Vec<f64> {
    let p = set.p;
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let u = score_double_loop(set, &beta);
        let a = information_double_loop(set, &beta);
        let m = nalgebra::DMatrix::from_fn(p, p, |i, j| a[i][j]);
        let step = m.lu().solve(&nalgebra::DVector::from_vec(u.clone())).expect("invertible");
        for k in 0..p {
            beta[k] += step[k];
        }
        if step.amax() < 1e-13 {
            break;
        }
    }
    beta
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-8)
}

/// Subject with a complete outcome.
pub fn observed_subject(id: u64, z1: Vec<f64>, t_obs: f64, delta: bool) -> SubjectRecord {
    SubjectRecord {
        id,
        z1,
        t_fail: None,
        c1: t_obs.min(1.0),
        c2: Some(t_obs.max(1.0)),
        q: delta && t_obs <= 1.0,
        l: true,
        delta: Some(delta),
        t_obs: Some(t_obs),
        gap: None,
        gap_len: None,
        c_latent: None,
    }
}

/// One stratum/time cell of the survival-function check.
#[derive(Debug)]
pub struct SurvivalCell {
    pub label: String,
    pub observed: f64,
    pub expected: f64,
    pub se: f64,
}

impl SurvivalCell {
    pub fn within(&self, k: f64) -> bool {
        (self.observed - self.expected).abs() <= k * self.se
    }
}

/// Empirical survival of the change-point generator's latent failure times
/// against the exact piecewise-exponential survival, per
/// `(X1, X2 above/below its mean)` stratum, at the midpoint of the trial,
/// its end, and halfway to the follow-up horizon.
pub fn changepoint_survival_cells(n: usize, seed: u64) -> Vec<SurvivalCell> {
    use linkedcox::simgen::{generate_latent, Analysis, Mechanism, Scenario, ScenarioConfig};
    let config = ScenarioConfig::new(Scenario::TdChangePoint, Mechanism::Lcar, Analysis::Correct, n, seed);
    let latents = generate_latent(&config, 0).unwrap();
    let b = &config.beta_true;
    let (tau1, tau2) = (config.tau1, config.tau2);
    let cumulative = |x: &[f64], t: f64| {
        let r0 = 0.06 * (b[0] * x[0] + b[1] * x[1]).exp();
        let r1 = r0 * (b[2] * x[0]).exp();
        r0 * t.min(tau1) + r1 * (t - tau1).max(0.0)
    };
    let mut cells = Vec::new();
    for x1 in [0.0, 1.0] {
        for high in [false, true] {
            let members: Vec<_> = latents.iter().filter(|l| l.x[0] == x1 && (l.x[1] >= 1.0) == high).collect();
            for t in [tau1 / 2.0, tau1, (tau1 + tau2) / 2.0] {
                let probs: Vec<f64> = members.iter().map(|l| (-cumulative(&l.x, t)).exp()).collect();
                let m = members.len() as f64;
                cells.push(SurvivalCell {
                    label: format!("X1={x1} X2{} t={t}", if high { ">=1" } else { "<1" }),
                    observed: members.iter().filter(|l| l.t > t).count() as f64 / m,
                    expected: probs.iter().sum::<f64>() / m,
                    se: probs.iter().map(|p| p * (1.0 - p)).sum::<f64>().sqrt() / m,
                });
            }
        }
    }
    cells
}

/// Relative finite-difference agreement of score and information on a
/// random instance; returns the worst relative errors `(score, hessian)`.
pub fn finite_difference_errors(set: &EpisodeSet, beta: &[f64]) -> (f64, f64) {
    use linkedcox::coxfit::{hessian, log_partial_likelihood, score};
    let p = beta.len();
    let h = 1e-5;
    let shifted = |k: usize, d: f64| {
        let mut b = beta.to_vec();
        b[k] += d;
        b
    };
    let u = score(set, beta).unwrap();
    let a = hessian(set, beta).unwrap();
    let scale_u = u.amax().max(1e-3);
    let scale_a = a.amax().max(1e-3);
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..p {
        let fd = (log_partial_likelihood(set, &shifted(k, h)).unwrap()
            - log_partial_likelihood(set, &shifted(k, -h)).unwrap())
            / (2.0 * h);
        worst.0 = worst.0.max((u[k] - fd).abs() / scale_u);
        let su = score(set, &shifted(k, h)).unwrap();
        let sd = score(set, &shifted(k, -h)).unwrap();
        for j in 0..p {
            let fd = -(su[j] - sd[j]) / (2.0 * h);
            worst.1 = worst.1.max((a[(j, k)] - fd).abs() / scale_a);
        }
    }
    worst
}
