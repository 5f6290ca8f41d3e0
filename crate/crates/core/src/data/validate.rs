use std::collections::HashSet;

use serde::Serialize;

use super::{time_to_samples, Dataset, EPOCH_END_S, EPOCH_START_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    NonFinite,
    InsufficientEpochSpan,
    OnsetOutOfRange,
    SampleRateMismatch,
    ChannelCountMismatch,
    DuplicateTrial,
    SetOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub subject_id: String,
    pub set_id: u32,
    pub trial_id: u32,
    pub kind: ViolationKind,
}

/// Per-trial findings; empty iff every dataset invariant holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, trial_id: u32, kind: ViolationKind) -> bool {
        self.violations
            .iter()
            .any(|v| v.trial_id == trial_id && v.kind == kind)
    }
}

pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    let n_channels = d.channel_set.count();
    for subject in &d.subjects {
        let mut seen_sets = HashSet::new();
        let mut seen_trials = HashSet::new();
        for set in &subject.sets {
            let set_dup = !seen_sets.insert(set.id);
            for t in &set.trials {
                let mut push = |kind| {
                    violations.push(Violation {
                        subject_id: subject.id.clone(),
                        set_id: set.id,
                        trial_id: t.trial_id,
                        kind,
                    })
                };
                if set_dup {
                    push(ViolationKind::SetOverlap);
                }
                if !seen_trials.insert((set.id, t.trial_id)) {
                    push(ViolationKind::DuplicateTrial);
                }
                if t.fs != d.fs {
                    push(ViolationKind::SampleRateMismatch);
                }
                if t.n_channels() != n_channels {
                    push(ViolationKind::ChannelCountMismatch);
                }
                if t.samples().iter().any(|v| !v.is_finite()) {
                    push(ViolationKind::NonFinite);
                }
                if t.onset_index >= t.n_samples() {
                    push(ViolationKind::OnsetOutOfRange);
                    continue;
                }
                let first = t.onset_index as i64 + time_to_samples(EPOCH_START_S, t.fs);
                let end = t.onset_index as i64 + time_to_samples(EPOCH_END_S, t.fs);
                if first < 0 || end > t.n_samples() as i64 {
                    push(ViolationKind::InsufficientEpochSpan);
                }
            }
        }
    }
    ValidationReport { violations }
}
