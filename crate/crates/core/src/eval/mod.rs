//! Leave-one-set-out evaluation: offline window accuracy, pseudo-online
//! trial replay with TWP/EDR, the full method matrix and the statistics.

mod matrix;
mod report;
mod stats;

pub use matrix::{run_matrix, run_matrix_with, train_folds, FoldProbabilities, FoldRun, MatrixConfig, MatrixResult};
pub use report::{
    config_fingerprint, dataset_digest, read_results_csv, write_outcomes_csv, write_results_csv,
    write_json, OutcomeRow, ResultRow,
};
pub use stats::{
    bonferroni, compare_conditions, friedman_test, wilcoxon_signed_rank, PairwiseResult,
    StatTestResult, StatsReport, TestKind, EXACT_WILCOXON_MAX_N,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Subject;
use crate::detector::Detector;
use crate::ensemble::{classify, Label};
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::pipeline::derive_seed;

/// Start of the target period, seconds from onset (inclusive).
pub const TARGET_START_S: f64 = -0.75;
/// End of the target period (inclusive).
pub const TARGET_END_S: f64 = 0.15;
/// End of the deadtime; a detection exactly here counts as early.
pub const DEADTIME_END_S: f64 = -4.0;
/// Pseudo-online windows per trial over the canonical epoch.
pub const PSEUDO_ONLINE_WINDOWS: usize = 85;
/// Labelled windows per trial for training and offline testing.
pub const WINDOWS_PER_TRIAL: usize = 12;

/// Slack for comparing grid times computed from sample offsets.
const TIME_EPS: f64 = 1e-9;

/// One leave-one-set-out split; `fold_id` is the held-out set id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvFold {
    pub subject_id: String,
    pub fold_id: u32,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

/// Three folds, each holding out one set and splitting it val/test by a
/// seeded shuffle (validation gets the smaller half).
pub fn make_folds(subject: &Subject, seed: u64) -> Result<Vec<CvFold>> {
    if subject.sets.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "subject {} has {} measurement sets, expected 3",
            subject.id,
            subject.sets.len()
        )));
    }
    if let Some(s) = subject.sets.iter().find(|s| s.trials.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "subject {} set {} has {} trials; a held-out set needs at least 2",
            subject.id,
            s.id,
            s.trials.len()
        )));
    }
    let subject_key = subject_seed_part(&subject.id);
    subject
        .sets
        .iter()
        .map(|held| {
            let train = subject
                .sets
                .iter()
                .filter(|s| s.id != held.id)
                .flat_map(|s| s.trials.iter().map(|t| t.trial_id))
                .collect();
            let mut ids: Vec<u32> = held.trials.iter().map(|t| t.trial_id).collect();
            ids.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[subject_key, held.id as u64]));
            ids.shuffle(&mut rng);
            let test = ids.split_off(ids.len() / 2);
            Ok(CvFold {
                subject_id: subject.id.clone(),
                fold_id: held.id,
                train,
                val: ids,
                test,
            })
        })
        .collect()
}

pub(crate) fn subject_seed_part(id: &str) -> u64 {
    derive_seed(0, &id.bytes().map(u64::from).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Correct,
    Early,
    NoDetection,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Correct => "correct",
            OutcomeKind::Early => "early",
            OutcomeKind::NoDetection => "no_detection",
        }
    }
}

/// Scored trial. `detection_time` keeps the raw event time even when it
/// falls outside every scored region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub kind: OutcomeKind,
    pub detection_time: Option<f64>,
}

impl TrialOutcome {
    pub fn from_detection(time: Option<f64>) -> Self {
        let kind = match time {
            Some(t) if t >= TARGET_START_S - TIME_EPS && t <= TARGET_END_S + TIME_EPS => OutcomeKind::Correct,
            Some(t) if t >= DEADTIME_END_S - TIME_EPS && t < TARGET_START_S - TIME_EPS => OutcomeKind::Early,
            _ => OutcomeKind::NoDetection,
        };
        TrialOutcome {
            kind,
            detection_time: time,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub correct: usize,
    pub early: usize,
    pub no_detection: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, kind: OutcomeKind) {
        match kind {
            OutcomeKind::Correct => self.correct += 1,
            OutcomeKind::Early => self.early += 1,
            OutcomeKind::NoDetection => self.no_detection += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.correct + self.early + self.no_detection
    }

    fn rate(&self, k: usize) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            k as f64 / self.total() as f64
        }
    }

    pub fn twp(&self) -> f64 {
        self.rate(self.correct)
    }

    pub fn edr(&self) -> f64 {
        self.rate(self.early)
    }

    pub fn ndr(&self) -> f64 {
        self.rate(self.no_detection)
    }
}

impl FromIterator<OutcomeKind> for OutcomeCounts {
    fn from_iter<I: IntoIterator<Item = OutcomeKind>>(iter: I) -> Self {
        let mut c = OutcomeCounts::default();
        for k in iter {
            c.add(k);
        }
        c
    }
}

/// Pseudo-online result of one method on one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub subject_id: String,
    pub fold_id: u32,
    pub method: String,
    pub n_windows: usize,
    pub counts: OutcomeCounts,
    pub outcomes: Vec<(u32, TrialOutcome)>,
}

impl MetricsReport {
    pub fn twp(&self) -> f64 {
        self.counts.twp()
    }

    pub fn edr(&self) -> f64 {
        self.counts.edr()
    }

    pub fn ndr(&self) -> f64 {
        self.counts.ndr()
    }
}

/// A single model or a product-rule ensemble, members in S, M, E order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Method {
    members: Vec<ModelKind>,
}

pub const ALL_METHODS: [&str; 8] = ["D", "S", "M", "E", "SM", "SE", "ME", "SME"];

impl Method {
    pub fn members(&self) -> &[ModelKind] {
        &self.members
    }

    pub fn name(&self) -> String {
        self.members.iter().map(|k| k.code()).collect()
    }

    pub fn all() -> Vec<Method> {
        ALL_METHODS.iter().map(|m| m.parse().expect("valid method")).collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_uppercase();
        if !ALL_METHODS.contains(&s.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown method {s:?}; expected one of {}",
                ALL_METHODS.join(", ")
            )));
        }
        let members = s
            .chars()
            .map(|c| match c {
                'S' => ModelKind::Svm,
                'M' => ModelKind::Mlp,
                'E' => ModelKind::Eegnet,
                _ => ModelKind::Dummy,
            })
            .collect();
        Ok(Method { members })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Method plus postprocessing length, written like "SE2".
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition {
    pub method: Method,
    pub n_windows: usize,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.method, self.n_windows)
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| Error::InvalidArgument(format!("condition {s:?} lacks a window count")))?;
        let n_windows: usize = s[split..]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad window count in {s:?}")))?;
        if n_windows == 0 {
            return Err(Error::InvalidArgument(format!("condition {s:?} needs n_windows >= 1")));
        }
        Ok(Condition {
            method: s[..split].parse()?,
            n_windows,
        })
    }
}

/// Per-window labels of a method from member probabilities.
pub fn method_labels(member_probs: &[&[f64]]) -> Result<Vec<Label>> {
    let n = member_probs.first().map_or(0, |p| p.len());
    if member_probs.iter().any(|p| p.len() != n) {
        return Err(Error::ShapeMismatch("member probability rows differ in length".into()));
    }
    let mut buf = Vec::with_capacity(member_probs.len());
    (0..n)
        .map(|i| {
            buf.clear();
            buf.extend(member_probs.iter().map(|p| p[i]));
            classify(&buf)
        })
        .collect()
}

/// First detection over a time-ordered label sequence, scored.
pub fn score_trial(labels: &[Label], end_times: &[f64], n_windows: usize) -> Result<TrialOutcome> {
    if labels.len() != end_times.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} windows",
            labels.len(),
            end_times.len()
        )));
    }
    let ev = Detector::first_detection(n_windows, labels.iter().copied().zip(end_times.iter().copied()))?;
    Ok(TrialOutcome::from_detection(ev.map(|e| e.time)))
}
