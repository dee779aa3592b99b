//! Subject records, linkage classes and counting-process episodes.
//!
//! A [`SubjectRecord`] is one trial participant as seen by the analyst: the
//! in-trial censoring time `c1`, the in-trial event indicator `q`, the linkage
//! indicator `l` and, when observable, the overall follow-up outcome
//! `(t_obs, delta)`. Simulated records additionally carry the latent failure
//! time and overall censoring time so the oracle analysis can be run.

mod csv;
mod episodes;

pub use self::csv::{load_csv, save_csv, CsvSchema};
pub use self::episodes::{split_episodes, split_episodes_with, DesignSpec, EpisodeRow, EpisodeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: u64,
    /// Baseline covariates; includes the treatment indicator.
    pub z1: Vec<f64>,
    /// Latent failure time. Simulation only.
    pub t_fail: Option<f64>,
    pub c1: f64,
    /// Observational follow-up censoring time; missing when unlinked.
    pub c2: Option<f64>,
    pub q: bool,
    pub l: bool,
    pub delta: Option<bool>,
    pub t_obs: Option<f64>,
    pub gap: Option<bool>,
    pub gap_len: Option<f64>,
    /// Latent overall censoring time `C`. Simulation only.
    pub c_latent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkageClass {
    /// Linked (`l = 1`).
    Class1,
    /// Unlinked with an in-trial event (`l = 0, q = 1`).
    Class2,
    /// Unlinked and censored in the trial; outcome missing.
    Class3,
}

pub fn classify(subject: &SubjectRecord) -> LinkageClass {
    match (subject.l, subject.q) {
        (true, _) => LinkageClass::Class1,
        (false, true) => LinkageClass::Class2,
        (false, false) => LinkageClass::Class3,
    }
}

/// Counts of the three linkage classes, in class order.
pub fn class_counts(subjects: &[SubjectRecord]) -> [usize; 3] {
    let mut counts = [0; 3];
    for s in subjects {
        let idx = match classify(s) {
            LinkageClass::Class1 => 0,
            LinkageClass::Class2 => 1,
            LinkageClass::Class3 => 2,
        };
        counts[idx] += 1;
    }
    counts
}

impl SubjectRecord {
    pub fn class(&self) -> LinkageClass {
        classify(self)
    }

    pub fn has_outcome(&self) -> bool {
        self.t_obs.is_some() && self.delta.is_some()
    }

    /// Checks the record-level invariants. `horizons` is `(tau1, tau2)` when
    /// known.
    pub fn validate(&self, horizons: Option<(f64, f64)>) -> std::result::Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be a positive finite number, got {v}"))
            }
        };
        positive("c1", self.c1)?;
        if let Some(t) = self.t_obs {
            positive("t_obs", t)?;
        }
        if let Some(t) = self.t_fail {
            positive("t_fail", t)?;
        }
        if let Some(c2) = self.c2 {
            positive("c2", c2)?;
            if c2 < self.c1 {
                return Err(format!("c2 ({c2}) is smaller than c1 ({})", self.c1));
            }
        }
        if let Some(u) = self.gap_len {
            if !(u.is_finite() && u >= 0.0) {
                return Err(format!("gap_len must be nonnegative, got {u}"));
            }
        }
        if self.z1.iter().any(|v| !v.is_finite()) {
            return Err("covariates must be finite".into());
        }
        if self.t_obs.is_some() != self.delta.is_some() {
            return Err("t_obs and delta must be both present or both missing".into());
        }
        if self.q {
            match (self.t_obs, self.delta) {
                (Some(t), Some(true)) if t <= self.c1 => {}
                _ => return Err("q = 1 requires delta = 1 and t_obs <= c1".into()),
            }
        }
        if self.l && !self.has_outcome() {
            return Err("linked record (l = 1) is missing t_obs/delta".into());
        }
        if !self.l && !self.q && self.has_outcome() {
            return Err("class-3 record (l = 0, q = 0) must have empty t_obs and delta".into());
        }
        if let Some((tau1, tau2)) = horizons {
            if self.c1 > tau1 {
                return Err(format!("c1 ({}) exceeds tau1 ({tau1})", self.c1));
            }
            if let Some(c2) = self.c2 {
                if c2 > tau2 {
                    return Err(format!("c2 ({c2}) exceeds tau2 ({tau2})"));
                }
            }
        }
        Ok(())
    }

    /// The fully linked view: outcome recomputed from the latent failure and
    /// censoring times when they are available.
    pub fn oracle_view(&self) -> Result<SubjectRecord> {
        let mut out = self.clone();
        match (self.t_fail, self.c_latent) {
            (Some(t), Some(c)) => {
                out.t_obs = Some(t.min(c));
                out.delta = Some(t <= c);
            }
            _ if self.has_outcome() => {}
            _ => {
                return Err(Error::InvalidInput(format!(
                    "subject {} has neither an observed outcome nor latent times",
                    self.id
                )))
            }
        }
        Ok(out)
    }

    /// Outcome with unlinked in-trial-censored subjects censored at `c1`.
    pub fn nlac_view(&self) -> SubjectRecord {
        let mut out = self.clone();
        if self.class() == LinkageClass::Class3 {
            out.t_obs = Some(self.c1);
            out.delta = Some(false);
        }
        out
    }
}

/// Checks every record and that subject ids are unique.
pub fn validate_all(subjects: &[SubjectRecord]) -> Result<()> {
    let mut ids = std::collections::HashSet::with_capacity(subjects.len());
    for (i, s) in subjects.iter().enumerate() {
        s.validate(None)
            .map_err(|m| Error::InvalidInput(format!("subject {} (position {i}): {m}", s.id)))?;
        if !ids.insert(s.id) {
            return Err(Error::InvalidInput(format!("duplicate subject id {}", s.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointSpec {
    pub change_times: Vec<f64>,
    /// Index into `z1` of the covariate that interacts with the change points.
    pub interacting_covariate_index: usize,
}

impl ChangePointSpec {
    pub fn new(change_times: Vec<f64>, interacting_covariate_index: usize) -> Result<Self> {
        if change_times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidInput("change times must be positive and finite".into()));
        }
        if change_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("change times must be strictly increasing".into()));
        }
        Ok(ChangePointSpec {
            change_times,
            interacting_covariate_index,
        })
    }

    /// No change points: all covariates are time-independent.
    pub fn none() -> Self {
        ChangePointSpec {
            change_times: Vec::new(),
            interacting_covariate_index: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.change_times.is_empty()
    }

    pub fn check_horizon(&self, tau2: f64) -> Result<()> {
        if self.change_times.iter().any(|&t| t >= tau2) {
            return Err(Error::InvalidInput(format!("change times must lie in (0, {tau2})")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(l: bool, q: bool) -> SubjectRecord {
        let observed = l || q;
        SubjectRecord {
            id: 1,
            z1: vec![1.0, 0.5],
            t_fail: None,
            c1: 4.0,
            c2: if l { Some(9.0) } else { None },
            q,
            l,
            delta: observed.then_some(q),
            t_obs: observed.then_some(if q { 2.0 } else { 9.0 }),
            gap: None,
            gap_len: None,
            c_latent: None,
        }
    }

    #[test]
    fn classify_follows_definition() {
        assert_eq!(classify(&record(true, false)), LinkageClass::Class1);
        assert_eq!(classify(&record(true, true)), LinkageClass::Class1);
        assert_eq!(classify(&record(false, true)), LinkageClass::Class2);
        assert_eq!(classify(&record(false, false)), LinkageClass::Class3);
    }

    #[test]
    fn class_counts_partition() {
        let subjects = vec![
            record(true, false),
            record(false, true),
            record(false, false),
            record(false, false),
        ];
        let counts = class_counts(&subjects);
        assert_eq!(counts, [1, 1, 2]);
        assert_eq!(counts.iter().sum::<usize>(), subjects.len());
    }

    #[test]
    fn validation_rejects_class3_with_outcome() {
        let mut r = record(false, false);
        assert!(r.validate(None).is_ok());
        r.t_obs = Some(3.0);
        r.delta = Some(false);
        assert!(r.validate(None).is_err());
    }

    #[test]
    fn validation_rejects_q1_without_event() {
        let mut r = record(false, true);
        r.delta = Some(false);
        assert!(r.validate(None).is_err());
        let mut r = record(false, true);
        r.t_obs = Some(5.0);
        assert!(r.validate(None).is_err(), "event after c1");
    }

    #[test]
    fn validation_checks_horizons() {
        let r = record(true, false);
        assert!(r.validate(Some((5.0, 16.0))).is_ok());
        assert!(r.validate(Some((3.0, 16.0))).is_err());
        assert!(r.validate(Some((5.0, 8.0))).is_err());
    }

    #[test]
    fn nlac_view_censors_class3_at_c1() {
        let r = record(false, false).nlac_view();
        assert_eq!(r.t_obs, Some(4.0));
        assert_eq!(r.delta, Some(false));
        let linked = record(true, false);
        assert_eq!(linked.nlac_view(), linked);
    }

    #[test]
    fn oracle_view_uses_latent_times() {
        let mut r = record(false, false);
        assert!(r.oracle_view().is_err());
        r.t_fail = Some(7.0);
        r.c_latent = Some(6.0);
        let o = r.oracle_view().unwrap();
        assert_eq!(o.t_obs, Some(6.0));
        assert_eq!(o.delta, Some(false));
    }

    #[test]
    fn change_points_must_increase() {
        assert!(ChangePointSpec::new(vec![6.5, 7.5], 0).is_ok());
        assert!(ChangePointSpec::new(vec![7.5, 6.5], 0).is_err());
        assert!(ChangePointSpec::new(vec![0.0], 0).is_err());
        let cp = ChangePointSpec::new(vec![5.0], 0).unwrap();
        assert!(cp.check_horizon(16.0).is_ok());
        assert!(cp.check_horizon(5.0).is_err());
    }
}
