use rand_distr::{Distribution, Exp1, StandardNormal};

use super::rng::{StreamRng, Tag};
use super::{Analysis, LatentDraw, Scenario, ScenarioConfig, ScenarioGenerator};
use crate::dataset::{ChangePointSpec, DesignSpec};

struct Streams {
    cov: StreamRng,
    fail: StreamRng,
    c1: StreamRng,
    c2: StreamRng,
    gap: StreamRng,
}

impl Streams {
    fn new(config: &ScenarioConfig, rep: u64, index: u64) -> Self {
        let s = |tag| StreamRng::new(config.seed, rep, index, tag);
        Streams {
            cov: s(Tag::Covariates),
            fail: s(Tag::Failure),
            c1: s(Tag::TrialCensoring),
            c2: s(Tag::FollowUpCensoring),
            gap: s(Tag::Gap),
        }
    }
}

fn exp1(rng: &mut StreamRng) -> f64 {
    Exp1.sample(rng)
}

fn normal(rng: &mut StreamRng, mean: f64, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// Exact draw from a hazard equal to `r0` before `tau` and `r1` after.
pub(crate) fn piecewise_exponential(e: f64, r0: f64, r1: f64, tau: f64) -> f64 {
    if e < r0 * tau {
        e / r0
    } else {
        tau + (e - r0 * tau) / r1
    }
}

fn names(labels: &[&str]) -> Vec<String> {
    labels.iter().map(|s| s.to_string()).collect()
}

/// Treatment effect that changes at the end of the trial.
pub struct TdChangePoint;

impl ScenarioGenerator for TdChangePoint {
    fn scenario(&self) -> Scenario {
        Scenario::TdChangePoint
    }

    fn default_beta(&self) -> Vec<f64> {
        vec![-(4f64.ln()), 1.5f64.ln(), 0.5]
    }

    fn horizons(&self) -> (f64, f64) {
        (5.0, 16.0)
    }

    fn draw(&self, config: &ScenarioConfig, rep: u64, index: u64) -> LatentDraw {
        let mut s = Streams::new(config, rep, index);
        let b = &config.beta_true;
        let x1 = if s.cov.bernoulli(0.5) { 1.0 } else { 0.0 };
        let x2 = normal(&mut s.cov, 1.0, 1.0);
        let r0 = 0.06 * (b[0] * x1 + b[1] * x2).exp();
        let r1 = r0 * (b[2] * x1).exp();
        let t = piecewise_exponential(exp1(&mut s.fail), r0, r1, config.tau1);
        let c1 = (exp1(&mut s.c1) / (0.01 * x1 + 0.03)).min(config.tau1);
        let c2 = (c1 + exp1(&mut s.c2) / (0.05 * x1 + 0.03)).min(config.tau2);
        LatentDraw {
            x: vec![x1, x2],
            t,
            c1,
            c2,
            gap: None,
            gap_len: None,
            follow_start: c1,
        }
    }

    fn analysis_covariates(&self, x: &[f64], _analysis: Analysis) -> Vec<f64> {
        x.to_vec()
    }

    fn design(&self, config: &ScenarioConfig) -> DesignSpec {
        match config.analysis {
            Analysis::Correct => DesignSpec::with_change_points(ChangePointSpec {
                change_times: vec![config.tau1],
                interacting_covariate_index: 0,
            }),
            Analysis::Misspecified => DesignSpec::baseline_only(),
        }
    }

    fn parameter_names(&self, analysis: Analysis) -> Vec<String> {
        match analysis {
            Analysis::Correct => names(&["X1", "X2", "X1:t>tau1"]),
            Analysis::Misspecified => names(&["X1", "X2"]),
        }
    }
}

/// Hazard in the square of a covariate; the misspecified fit uses it
/// linearly.
pub struct MotivatingSquared;

impl ScenarioGenerator for MotivatingSquared {
    fn scenario(&self) -> Scenario {
        Scenario::MotivatingSquared
    }

    fn default_beta(&self) -> Vec<f64> {
        vec![-(2f64.ln()), 2f64.ln(), 0.2]
    }

    fn horizons(&self) -> (f64, f64) {
        (3.0, 16.0)
    }

    fn draw(&self, config: &ScenarioConfig, rep: u64, index: u64) -> LatentDraw {
        let mut s = Streams::new(config, rep, index);
        let b = &config.beta_true;
        let x1 = if s.cov.bernoulli(0.5) { 1.0 } else { 0.0 };
        let x2 = normal(&mut s.cov, -1.0, 1.0);
        let x3 = normal(&mut s.cov, x2, 2.0);
        let rate = 0.05 * (b[0] * x1 + b[1] * x2 + b[2] * x3 * x3).exp();
        let t = exp1(&mut s.fail) / rate;
        let c1 = (exp1(&mut s.c1) / (0.1 * x1 + 0.05)).min(config.tau1);
        let c2 = (c1 + exp1(&mut s.c2) / (0.8 * x1 + 0.03)).min(config.tau2);
        LatentDraw {
            x: vec![x1, x2, x3],
            t,
            c1,
            c2,
            gap: None,
            gap_len: None,
            follow_start: c1,
        }
    }

    fn analysis_covariates(&self, x: &[f64], analysis: Analysis) -> Vec<f64> {
        match analysis {
            Analysis::Correct => vec![x[0], x[1], x[2] * x[2]],
            Analysis::Misspecified => x.to_vec(),
        }
    }

    fn design(&self, _config: &ScenarioConfig) -> DesignSpec {
        DesignSpec::baseline_only()
    }

    fn parameter_names(&self, analysis: Analysis) -> Vec<String> {
        match analysis {
            Analysis::Correct => names(&["X1", "X2", "X3^2"]),
            Analysis::Misspecified => names(&["X1", "X2", "X3"]),
        }
    }
}

/// Random gap between trial exit and the start of observational follow-up.
pub struct GapScenario;

impl ScenarioGenerator for GapScenario {
    fn scenario(&self) -> Scenario {
        Scenario::GapScenario
    }

    fn default_beta(&self) -> Vec<f64> {
        vec![-(2f64.ln()), 2f64.ln(), 0.2]
    }

    fn horizons(&self) -> (f64, f64) {
        (3.5, 16.0)
    }

    fn draw(&self, config: &ScenarioConfig, rep: u64, index: u64) -> LatentDraw {
        let mut s = Streams::new(config, rep, index);
        let b = &config.beta_true;
        let x1 = if s.cov.bernoulli(0.5) { 1.0 } else { 0.0 };
        let x2 = normal(&mut s.cov, -1.0, 1.0);
        let x3 = normal(&mut s.cov, 1.0, 2.0);
        let rate = 0.15 * (b[0] * x1 + b[1] * x2 + b[2] * x3).exp();
        let t = exp1(&mut s.fail) / rate;
        let c1 = config.tau1 * s.c1.uniform();
        let gap = s.gap.bernoulli(0.5);
        let gap_len = 1.0 + s.gap.uniform();
        let follow_start = c1 + if gap { gap_len } else { 0.0 };
        let c2 = (follow_start + exp1(&mut s.c2) / (0.8 * x1 + 0.03)).min(config.tau2);
        LatentDraw {
            x: vec![x1, x2, x3],
            t,
            c1,
            c2: c2.max(c1),
            gap: Some(gap),
            gap_len: Some(if gap { gap_len } else { 0.0 }),
            follow_start,
        }
    }

    fn analysis_covariates(&self, x: &[f64], _analysis: Analysis) -> Vec<f64> {
        x.to_vec()
    }

    fn design(&self, _config: &ScenarioConfig) -> DesignSpec {
        DesignSpec::baseline_only()
    }

    fn parameter_names(&self, _analysis: Analysis) -> Vec<String> {
        names(&["X1", "X2", "X3"])
    }

    fn lcar_rate(&self) -> f64 {
        0.4
    }
}
