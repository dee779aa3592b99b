use serde::{Deserialize, Serialize};

use super::{ChangePointSpec, LinkageClass, SubjectRecord};
use crate::error::{Error, Result};

/// Which baseline columns enter the Cox model, and which step covariates are
/// appended for the change points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// Indices into `z1`; `None` keeps every column.
    pub covariates: Option<Vec<usize>>,
    pub change_points: ChangePointSpec,
}

impl DesignSpec {
    pub fn baseline_only() -> Self {
        DesignSpec {
            covariates: None,
            change_points: ChangePointSpec::none(),
        }
    }

    pub fn with_change_points(change_points: ChangePointSpec) -> Self {
        DesignSpec {
            covariates: None,
            change_points,
        }
    }

    fn columns(&self, z1_len: usize) -> Vec<usize> {
        match &self.covariates {
            Some(cols) => cols.clone(),
            None => (0..z1_len).collect(),
        }
    }

    /// Number of Cox parameters for records with `z1_len` baseline covariates.
    pub fn dimension(&self, z1_len: usize) -> usize {
        self.columns(z1_len).len() + self.change_points.change_times.len()
    }

    pub fn check(&self, z1_len: usize) -> Result<()> {
        if let Some(bad) = self.columns(z1_len).into_iter().find(|&c| c >= z1_len) {
            return Err(Error::InvalidInput(format!(
                "covariate index {bad} out of range for {z1_len} baseline covariates"
            )));
        }
        if !self.change_points.is_empty() && self.change_points.interacting_covariate_index >= z1_len {
            return Err(Error::InvalidInput(format!(
                "change-point covariate index {} out of range",
                self.change_points.interacting_covariate_index
            )));
        }
        if self.dimension(z1_len) == 0 {
            return Err(Error::InvalidInput("design has no covariates".into()));
        }
        Ok(())
    }

    /// Parameter labels given labels for the baseline columns.
    pub fn parameter_names(&self, z1_names: &[String]) -> Vec<String> {
        let mut names: Vec<String> = self
            .columns(z1_names.len())
            .into_iter()
            .map(|c| z1_names[c].clone())
            .collect();
        let base = z1_names
            .get(self.change_points.interacting_covariate_index)
            .cloned()
            .unwrap_or_default();
        for t in &self.change_points.change_times {
            names.push(format!("{base}:t>{t}"));
        }
        names
    }

    /// Covariate vector on an episode starting at `start`.
    fn covariates_at(&self, columns: &[usize], z1: &[f64], start: f64) -> Vec<f64> {
        let cp = &self.change_points;
        let mut x: Vec<f64> = columns.iter().map(|&c| z1[c]).collect();
        x.extend(cp.change_times.iter().map(|&c| {
            if start >= c {
                z1[cp.interacting_covariate_index]
            } else {
                0.0
            }
        }));
        x
    }
}

/// One counting-process row: the subject is at risk on `(start, stop]` with
/// covariates `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub subject_id: u64,
    /// Position of the subject within [`EpisodeSet::subject_ids`].
    pub subject: usize,
    pub start: f64,
    pub stop: f64,
    pub event: bool,
    pub x: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSet {
    pub rows: Vec<EpisodeRow>,
    /// Normalising sample size `n` in the `1/n` sums. Counts excluded
    /// (zero-weight) subjects too.
    pub n: usize,
    pub p: usize,
    pub subject_ids: Vec<u64>,
    pub subject_weights: Vec<f64>,
}

impl EpisodeSet {
    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn weighted_events(&self) -> f64 {
        self.rows.iter().filter(|r| r.event).map(|r| r.weight).sum()
    }

    /// Multiplies every weight by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        for r in &mut self.rows {
            r.weight *= factor;
        }
        for w in &mut self.subject_weights {
            *w *= factor;
        }
    }
}

/// Splits subjects into episodes using every baseline covariate.
pub fn split_episodes(
    subjects: &[SubjectRecord],
    spec: &ChangePointSpec,
    weights: &[f64],
) -> Result<EpisodeSet> {
    split_episodes_with(subjects, &DesignSpec::with_change_points(spec.clone()), weights)
}

/// Subjects with zero weight, and class-3 subjects without an outcome, are
/// dropped. Every other subject contributes one row per change time strictly
/// below its observed time plus a terminal row carrying the event bit.
pub fn split_episodes_with(
    subjects: &[SubjectRecord],
    design: &DesignSpec,
    weights: &[f64],
) -> Result<EpisodeSet> {
    if weights.len() != subjects.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} subjects",
            weights.len(),
            subjects.len()
        )));
    }
    let z1_len = subjects.first().map_or(0, |s| s.z1.len());
    if subjects.iter().any(|s| s.z1.len() != z1_len) {
        return Err(Error::InvalidInput("subjects have differing covariate counts".into()));
    }
    if !subjects.is_empty() {
        design.check(z1_len)?;
    }
    let columns = design.columns(z1_len);
    let p = design.dimension(z1_len);

    let mut set = EpisodeSet {
        rows: Vec::with_capacity(subjects.len() * (1 + design.change_points.change_times.len())),
        n: subjects.len(),
        p,
        subject_ids: Vec::new(),
        subject_weights: Vec::new(),
    };
    for (s, &w) in subjects.iter().zip(weights) {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidInput(format!("subject {}: invalid weight {w}", s.id)));
        }
        if w == 0.0 || (s.class() == LinkageClass::Class3 && !s.has_outcome()) {
            continue;
        }
        let (t_obs, delta) = match (s.t_obs, s.delta) {
            (Some(t), Some(d)) if t > 0.0 && t.is_finite() => (t, d),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "subject {} is included but has no valid t_obs/delta",
                    s.id
                )))
            }
        };
        let slot = set.subject_ids.len();
        set.subject_ids.push(s.id);
        set.subject_weights.push(w);

        let mut start = 0.0;
        for &c in design.change_points.change_times.iter().filter(|&&c| c < t_obs) {
            set.rows.push(EpisodeRow {
                subject_id: s.id,
                subject: slot,
                start,
                stop: c,
                event: false,
                x: design.covariates_at(&columns, &s.z1, start),
                weight: w,
            });
            start = c;
        }
        set.rows.push(EpisodeRow {
            subject_id: s.id,
            subject: slot,
            start,
            stop: t_obs,
            event: delta,
            x: design.covariates_at(&columns, &s.z1, start),
            weight: w,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: u64, t_obs: f64, delta: bool, a: f64) -> SubjectRecord {
        SubjectRecord {
            id,
            z1: vec![a, 0.3],
            t_fail: None,
            c1: t_obs.min(4.0),
            c2: Some(t_obs.max(4.0)),
            q: delta && t_obs <= 4.0,
            l: true,
            delta: Some(delta),
            t_obs: Some(t_obs),
            gap: None,
            gap_len: None,
            c_latent: None,
        }
    }

    #[test]
    fn event_after_change_point_splits_in_two() {
        let cp = ChangePointSpec::new(vec![5.0], 0).unwrap();
        let set = split_episodes(&[subject(1, 8.0, true, 1.0)], &cp, &[1.0]).unwrap();
        assert_eq!(set.rows.len(), 2);
        let (a, b) = (&set.rows[0], &set.rows[1]);
        assert_eq!((a.start, a.stop, a.event), (0.0, 5.0, false));
        assert_eq!(a.x, vec![1.0, 0.3, 0.0]);
        assert_eq!((b.start, b.stop, b.event), (5.0, 8.0, true));
        assert_eq!(b.x, vec![1.0, 0.3, 1.0]);
    }

    #[test]
    fn censored_before_change_point_is_one_row() {
        let cp = ChangePointSpec::new(vec![5.0], 0).unwrap();
        let set = split_episodes(&[subject(1, 3.0, false, 1.0)], &cp, &[1.0]).unwrap();
        assert_eq!(set.rows.len(), 1);
        let r = &set.rows[0];
        assert_eq!((r.start, r.stop, r.event), (0.0, 3.0, false));
        assert_eq!(r.x[2], 0.0);
    }

    #[test]
    fn event_exactly_at_change_time_stays_pre_change() {
        let cp = ChangePointSpec::new(vec![5.0], 0).unwrap();
        let set = split_episodes(&[subject(1, 5.0, true, 1.0)], &cp, &[1.0]).unwrap();
        assert_eq!(set.rows.len(), 1);
        assert_eq!(set.rows[0].x[2], 0.0);
    }

    #[test]
    fn two_change_points() {
        let cp = ChangePointSpec::new(vec![6.5, 7.5], 0).unwrap();
        let set = split_episodes(&[subject(1, 10.0, false, 1.0)], &cp, &[1.0]).unwrap();
        let xs: Vec<_> = set.rows.iter().map(|r| (r.start, r.stop, r.x[2], r.x[3])).collect();
        assert_eq!(
            xs,
            vec![(0.0, 6.5, 0.0, 0.0), (6.5, 7.5, 1.0, 0.0), (7.5, 10.0, 1.0, 1.0)]
        );
    }

    #[test]
    fn zero_weight_and_class3_are_dropped() {
        let mut c3 = subject(3, 9.0, false, 0.0);
        c3.l = false;
        c3.q = false;
        c3.t_obs = None;
        c3.delta = None;
        let subjects = vec![subject(1, 2.0, true, 1.0), subject(2, 6.0, false, 0.0), c3];
        let set = split_episodes(&subjects, &ChangePointSpec::none(), &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(set.subject_ids, vec![1]);
        assert_eq!(set.n, 3);
    }

    #[test]
    fn missing_outcome_on_included_subject_is_an_error() {
        let mut s = subject(1, 2.0, true, 1.0);
        s.q = false;
        s.t_obs = None;
        s.delta = None;
        let err = split_episodes(&[s], &ChangePointSpec::none(), &[1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn covariate_subset_and_names() {
        let design = DesignSpec {
            covariates: Some(vec![1]),
            change_points: ChangePointSpec::new(vec![5.0], 0).unwrap(),
        };
        let set = split_episodes_with(&[subject(1, 8.0, true, 1.0)], &design, &[2.0]).unwrap();
        assert_eq!(set.p, 2);
        assert_eq!(set.rows[1].x, vec![0.3, 1.0]);
        assert_eq!(set.rows[1].weight, 2.0);
        let names = design.parameter_names(&["trt".to_string(), "age".to_string()]);
        assert_eq!(names, vec!["age".to_string(), "trt:t>5".to_string()]);
        let bad = DesignSpec {
            covariates: Some(vec![4]),
            change_points: ChangePointSpec::none(),
        };
        assert!(split_episodes_with(&[subject(1, 8.0, true, 1.0)], &bad, &[1.0]).is_err());
    }
}
