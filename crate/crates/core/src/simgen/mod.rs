//! Seeded data generators for the simulation scenarios.
//!
//! Generation runs in three stages: a [`ScenarioGenerator`] draws latent
//! covariates, failure and censoring times; [`gen_linkage`] assigns the
//! linkage indicator under one of four mechanisms; [`mask`] hides the
//! outcome of unlinked in-trial-censored subjects. Every random draw comes
//! from a [`rng::StreamRng`] keyed by seed, replication, subject and
//! variable, so a dataset is a pure function of its configuration.

pub mod rng;
mod scenarios;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{DesignSpec, SubjectRecord};
use crate::error::{Error, Result};

use self::rng::{StreamRng, Tag};
pub use self::scenarios::{GapScenario, MotivatingSquared, TdChangePoint};

macro_rules! cli_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $ty::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name().eq_ignore_ascii_case(s))
                    .ok_or_else(|| Error::InvalidInput(format!(
                        "unknown {} `{s}` (expected one of: {})",
                        stringify!($ty).to_ascii_lowercase(),
                        $ty::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
                    )))
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    TdChangePoint,
    MotivatingSquared,
    GapScenario,
}

cli_enum!(Scenario { TdChangePoint => "td-changepoint", MotivatingSquared => "motivating", GapScenario => "gap" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "LCAR")]
    Lcar,
    #[serde(rename = "CLAR")]
    Clar,
    #[serde(rename = "LNAR_T")]
    LnarT,
    #[serde(rename = "LNAR_C2")]
    LnarC2,
}

cli_enum!(Mechanism { Lcar => "lcar", Clar => "clar", LnarT => "lnar-t", LnarC2 => "lnar-c2" });

impl Mechanism {
    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Lcar => "LCAR",
            Mechanism::Clar => "CLAR",
            Mechanism::LnarT => "LNAR(T)",
            Mechanism::LnarC2 => "LNAR(C2)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Analysis {
    Correct,
    Misspecified,
}

cli_enum!(Analysis { Correct => "correct", Misspecified => "misspecified" });

/// How the gap between trial exit and follow-up start is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GapRemedy {
    /// Gapped subjects are censored at `c1`.
    On,
    /// Follow-up is treated as continuous: overall censoring is `c2`.
    Off,
    /// Only subjects known to have failed inside the gap are censored at
    /// `c1`; the rest keep their follow-up outcome. Biased by construction.
    Naive,
}

cli_enum!(GapRemedy { On => "on", Off => "off", Naive => "naive" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub beta_true: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub mechanism: Mechanism,
    pub analysis: Analysis,
    pub seed: u64,
    /// Gap scenario only.
    pub remedy: Option<GapRemedy>,
}

impl ScenarioConfig {
    /// Configuration with the scenario's default coefficients and horizons.
    pub fn new(scenario: Scenario, mechanism: Mechanism, analysis: Analysis, n: usize, seed: u64) -> Self {
        let generator = generator(scenario);
        let (tau1, tau2) = generator.horizons();
        ScenarioConfig {
            scenario,
            n,
            beta_true: generator.default_beta(),
            tau1,
            tau2,
            mechanism,
            analysis,
            seed,
            remedy: (scenario == Scenario::GapScenario).then_some(GapRemedy::On),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        if !(self.tau1 > 0.0 && self.tau1 < self.tau2 && self.tau2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "need 0 < tau1 < tau2, got tau1 = {}, tau2 = {}",
                self.tau1, self.tau2
            )));
        }
        if self.beta_true.len() != 3 || self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("beta_true must have three finite entries".into()));
        }
        if self.scenario == Scenario::GapScenario && self.analysis == Analysis::Misspecified {
            return Err(Error::InvalidInput("the gap scenario has no misspecified analysis".into()));
        }
        if self.scenario != Scenario::GapScenario && self.remedy.is_some() {
            return Err(Error::InvalidInput("--remedy applies to the gap scenario only".into()));
        }
        Ok(())
    }

    /// The Cox design every estimator fits for this configuration.
    pub fn design(&self) -> DesignSpec {
        generator(self.scenario).design(self)
    }

    /// Labels of the fitted parameters.
    pub fn parameter_names(&self) -> Vec<String> {
        generator(self.scenario).parameter_names(self.analysis)
    }

    /// Population parameter the fitted model targets when correctly
    /// specified.
    pub fn correct_target(&self) -> Vec<f64> {
        self.beta_true.clone()
    }
}

/// Latent subject: the fully observed record plus the quantities that are
/// never available to the analyst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    /// Outcome computed from the latent times; `l = 1` until linkage is
    /// assigned.
    pub record: SubjectRecord,
    /// Raw generated covariates, before any analysis transform.
    pub x: Vec<f64>,
    pub t: f64,
    /// Follow-up censoring time, capped at `tau2`.
    pub c2: f64,
    /// Start of observational follow-up (`c1` without a gap).
    pub follow_start: f64,
    /// Failure strictly inside the gap.
    pub interval_censored: bool,
}

impl LatentRecord {
    /// Sets the overall censoring time and recomputes the outcome.
    pub fn censor_at(&mut self, c: f64) {
        let r = &mut self.record;
        r.c_latent = Some(c);
        r.t_obs = Some(self.t.min(c));
        r.delta = Some(self.t <= c);
        r.q = self.t <= r.c1;
    }

    /// `(q, delta, t_obs)` recomputed from latent times agree with the
    /// stored record.
    pub fn is_consistent(&self) -> bool {
        let r = &self.record;
        let Some(c) = r.c_latent else { return false };
        r.q == (self.t <= r.c1)
            && r.t_fail == Some(self.t)
            && (!r.l && !r.q || (r.delta == Some(self.t <= c) && r.t_obs == Some(self.t.min(c))))
    }
}

/// One draw of the latent variables for a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    pub x: Vec<f64>,
    pub t: f64,
    pub c1: f64,
    pub c2: f64,
    pub gap: Option<bool>,
    pub gap_len: Option<f64>,
    pub follow_start: f64,
}

pub trait ScenarioGenerator: Send + Sync {
    fn scenario(&self) -> Scenario;

    fn default_beta(&self) -> Vec<f64>;

    /// `(tau1, tau2)`.
    fn horizons(&self) -> (f64, f64);

    /// Latent draw for subject `index` of replication `rep`.
    fn draw(&self, config: &ScenarioConfig, rep: u64, index: u64) -> LatentDraw;

    /// Baseline covariates the analyst sees.
    fn analysis_covariates(&self, x: &[f64], analysis: Analysis) -> Vec<f64>;

    fn design(&self, config: &ScenarioConfig) -> DesignSpec;

    fn parameter_names(&self, analysis: Analysis) -> Vec<String>;

    /// `P(L = 1)` under LCAR.
    fn lcar_rate(&self) -> f64 {
        0.5
    }
}

/// Generators looked up by scenario name.
pub struct ScenarioRegistry {
    entries: BTreeMap<&'static str, Box<dyn ScenarioGenerator>>,
}

impl Default for ScenarioRegistry {
    fn default() -> Self {
        let mut reg = ScenarioRegistry { entries: BTreeMap::new() };
        reg.register(Box::new(TdChangePoint));
        reg.register(Box::new(MotivatingSquared));
        reg.register(Box::new(GapScenario));
        reg
    }
}

impl ScenarioRegistry {
    pub fn register(&mut self, generator: Box<dyn ScenarioGenerator>) {
        self.entries.insert(generator.scenario().name(), generator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ScenarioGenerator> {
        let scenario: Scenario = name.parse()?;
        self.entries
            .get(scenario.name())
            .map(Box::as_ref)
            .ok_or_else(|| Error::InvalidInput(format!("scenario `{name}` is not registered")))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

fn generator(scenario: Scenario) -> &'static dyn ScenarioGenerator {
    match scenario {
        Scenario::TdChangePoint => &TdChangePoint,
        Scenario::MotivatingSquared => &MotivatingSquared,
        Scenario::GapScenario => &GapScenario,
    }
}

/// Latent records for replication `rep`, censored at `c2` (no gap handling).
pub fn generate_latent(config: &ScenarioConfig, rep: u64) -> Result<Vec<LatentRecord>> {
    config.validate()?;
    let generator = generator(config.scenario);
    let records = (0..config.n as u64)
        .map(|i| {
            let d = generator.draw(config, rep, i);
            let in_gap = d.gap == Some(true) && d.c1 < d.t && d.t < d.follow_start;
            let mut latent = LatentRecord {
                record: SubjectRecord {
                    id: i + 1,
                    z1: generator.analysis_covariates(&d.x, config.analysis),
                    t_fail: Some(d.t),
                    c1: d.c1,
                    c2: Some(d.c2),
                    q: false,
                    l: true,
                    delta: None,
                    t_obs: None,
                    gap: d.gap,
                    gap_len: d.gap_len,
                    c_latent: None,
                },
                x: d.x,
                t: d.t,
                c2: d.c2,
                follow_start: d.follow_start,
                interval_censored: in_gap,
            };
            latent.censor_at(d.c2);
            latent
        })
        .collect();
    Ok(records)
}

pub fn gen_td_changepoint(config: &ScenarioConfig, rep: u64) -> Result<Vec<LatentRecord>> {
    expect_scenario(config, Scenario::TdChangePoint)?;
    generate_latent(config, rep)
}

pub fn gen_motivating(config: &ScenarioConfig, rep: u64) -> Result<Vec<LatentRecord>> {
    expect_scenario(config, Scenario::MotivatingSquared)?;
    generate_latent(config, rep)
}

/// Gap-scenario latent records with the configured remedy applied.
pub fn gen_gap_scenario(config: &ScenarioConfig, rep: u64) -> Result<Vec<LatentRecord>> {
    expect_scenario(config, Scenario::GapScenario)?;
    let mut latents = generate_latent(config, rep)?;
    remedy_transform(&mut latents, config.remedy.unwrap_or(GapRemedy::On));
    Ok(latents)
}

fn expect_scenario(config: &ScenarioConfig, scenario: Scenario) -> Result<()> {
    if config.scenario != scenario {
        return Err(Error::InvalidInput(format!(
            "expected scenario {scenario}, got {}",
            config.scenario
        )));
    }
    Ok(())
}

/// Overall censoring for gapped subjects. `On` censors every gapped subject
/// at `c1`; `Naive` censors only those who failed in the gap; `Off` keeps
/// `c2`.
pub fn remedy_transform(latents: &mut [LatentRecord], mode: GapRemedy) {
    for l in latents.iter_mut() {
        let gapped = l.record.gap == Some(true);
        let c = match mode {
            GapRemedy::On if gapped => l.record.c1,
            GapRemedy::Naive if l.interval_censored => l.record.c1,
            _ => l.c2,
        };
        l.censor_at(c);
    }
}

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Linkage probability for one latent subject.
pub fn linkage_probability(latent: &LatentRecord, mechanism: Mechanism, lcar_rate: f64) -> f64 {
    let r = &latent.record;
    if mechanism == Mechanism::Lcar {
        return lcar_rate;
    }
    if r.q {
        return 0.5;
    }
    let (x1, x2) = (latent.x[0], latent.x[1]);
    let t_obs = r.t_obs.expect("latent outcome");
    let delta = f64::from(u8::from(r.delta.expect("latent outcome")));
    let base = -0.25 + 0.5 * x1 + 0.5 * x2;
    let eta = match mechanism {
        Mechanism::Lcar | Mechanism::Clar => base,
        Mechanism::LnarT => base - 0.01 * t_obs - 0.01 * delta,
        Mechanism::LnarC2 => base - 0.1 * latent.c2 - 0.1 * delta,
    };
    logistic(eta)
}

/// Draws `l` for every record.
pub fn gen_linkage(latents: &mut [LatentRecord], config: &ScenarioConfig, rep: u64) {
    let lcar_rate = generator(config.scenario).lcar_rate();
    for (i, latent) in latents.iter_mut().enumerate() {
        let p = linkage_probability(latent, config.mechanism, lcar_rate);
        let mut rng = StreamRng::new(config.seed, rep, i as u64, Tag::Linkage);
        latent.record.l = rng.bernoulli(p);
    }
}

/// Observed records: follow-up outcome and `c2` hidden for the unlinked, and
/// the outcome hidden entirely for unlinked in-trial-censored subjects.
/// Latent fields are kept so the oracle view stays available.
pub fn mask(latents: &[LatentRecord]) -> Vec<SubjectRecord> {
    latents
        .iter()
        .map(|l| {
            let mut r = l.record.clone();
            if !r.l {
                r.c2 = None;
                if !r.q {
                    r.t_obs = None;
                    r.delta = None;
                }
            }
            r
        })
        .collect()
}

/// Generated, linked and masked dataset for replication `rep`.
pub fn simulate(config: &ScenarioConfig, rep: u64) -> Result<Vec<SubjectRecord>> {
    let mut latents = generate_latent(config, rep)?;
    if config.scenario == Scenario::GapScenario {
        remedy_transform(&mut latents, config.remedy.unwrap_or(GapRemedy::On));
    }
    gen_linkage(&mut latents, config, rep);
    Ok(mask(&latents))
}

/// Drops the latent columns so only analyst-visible data remains.
pub fn strip_latent(records: &mut [SubjectRecord]) {
    for r in records {
        r.t_fail = None;
        r.c_latent = None;
    }
}
