//! Dataset model: subjects, measurement sets and onset-aligned trials.
//!
//! Trials hold raw multichannel EEG in microvolts, channel-major. All
//! downstream time coordinates are seconds relative to the movement onset
//! (onset = 0).

mod io;
mod synth;
mod validate;

pub use io::{load_dataset, write_dataset, Manifest, ManifestSet, ManifestSubject, ManifestTrial};
pub use synth::{generate_synthetic, SynthConfig};
pub use validate::{validate_dataset, ValidationReport, Violation, ViolationKind};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 16 fronto-centro-parietal channels used by every pipeline, in order.
pub const CANONICAL_CHANNELS: [&str; 16] = [
    "FZ", "CZ", "CPZ", "PZ", "P1", "CP1", "C1", "FC1", "F1", "F3", "FC3", "C3", "CP3", "CP5", "C5",
    "FC5",
];

/// Epoch span required around each onset, seconds.
pub const EPOCH_START_S: f64 = -5.0;
pub const EPOCH_END_S: f64 = 0.2;

/// Rounds `t * fs` half away from zero; every sample boundary in the crate goes through here.
pub fn time_to_samples(t: f64, fs: f64) -> i64 {
    (t * fs).round() as i64
}

/// Ordered, duplicate-free list of channel labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSet {
    names: Vec<String>,
}

impl ChannelSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref().trim().to_uppercase();
            if !seen.insert(n.clone()) {
                return Err(Error::DuplicateChannel(n));
            }
            out.push(n);
        }
        if out.is_empty() {
            return Err(Error::Empty("channel set".into()));
        }
        Ok(ChannelSet { names: out })
    }

    pub fn canonical() -> Self {
        ChannelSet {
            names: CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let name = name.to_uppercase();
        self.names.iter().position(|n| *n == name)
    }
}

/// One recorded movement trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject_id: String,
    pub set_id: u32,
    pub trial_id: u32,
    pub fs: f64,
    pub onset_index: usize,
    /// Sample file name relative to the dataset root.
    pub file: String,
    n_channels: usize,
    n_samples: usize,
    samples: Vec<f32>,
}

impl Trial {
    pub fn new(
        subject_id: impl Into<String>,
        set_id: u32,
        trial_id: u32,
        fs: f64,
        onset_index: usize,
        n_channels: usize,
        samples: Vec<f32>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if n_channels == 0 || samples.len() % n_channels != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not divide into {} channels",
                samples.len(),
                n_channels
            )));
        }
        let n_samples = samples.len() / n_channels;
        let file = format!("{subject_id}_set{set_id}_trial{trial_id:03}.f32");
        Ok(Trial {
            subject_id,
            set_id,
            trial_id,
            fs,
            onset_index,
            file,
            n_channels,
            n_samples,
            samples,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c * self.n_samples..(c + 1) * self.n_samples]
    }

    /// Raw channel-major sample buffer.
    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    /// Human-readable identity used in reports.
    pub fn label(&self) -> String {
        format!("{}/set{}/trial{}", self.subject_id, self.set_id, self.trial_id)
    }

    /// Trial restricted to the given channel indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Trial {
        let mut samples = Vec::with_capacity(indices.len() * self.n_samples);
        for &c in indices {
            samples.extend_from_slice(self.channel(c));
        }
        Trial {
            n_channels: indices.len(),
            samples,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub id: u32,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub sets: Vec<MeasurementSet>,
}

impl Subject {
    pub fn n_trials(&self) -> usize {
        self.sets.iter().map(|s| s.trials.len()).sum()
    }

    pub fn trials(&self) -> impl Iterator<Item = &Trial> {
        self.sets.iter().flat_map(|s| s.trials.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fs: f64,
    pub channel_set: ChannelSet,
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn n_trials(&self) -> usize {
        self.subjects.iter().map(Subject::n_trials).sum()
    }

    pub fn trials(&self) -> impl Iterator<Item = &Trial> {
        self.subjects.iter().flat_map(Subject::trials)
    }

    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// Restricts every trial to `wanted`, reordering channels to its order.
    pub fn select_channels(&self, wanted: &ChannelSet) -> Result<Dataset> {
        let indices = wanted
            .names()
            .iter()
            .map(|n| {
                self.channel_set
                    .index_of(n)
                    .ok_or_else(|| Error::UnknownChannel(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let subjects = self
            .subjects
            .iter()
            .map(|s| Subject {
                id: s.id.clone(),
                sets: s
                    .sets
                    .iter()
                    .map(|set| MeasurementSet {
                        id: set.id,
                        trials: set.trials.iter().map(|t| t.select(&indices)).collect(),
                    })
                    .collect(),
            })
            .collect();
        Ok(Dataset {
            fs: self.fs,
            channel_set: wanted.clone(),
            subjects,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_set_is_sixteen_unique() {
        let cs = ChannelSet::canonical();
        assert_eq!(cs.count(), 16);
        assert_eq!(cs.names()[0], "FZ");
        assert_eq!(cs.names()[15], "FC5");
        assert!(ChannelSet::new(cs.names()).is_ok());
    }

    #[test]
    fn duplicate_labels_rejected() {
        assert!(matches!(
            ChannelSet::new(&["CZ", "C3", "cz"]),
            Err(Error::DuplicateChannel(_))
        ));
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(time_to_samples(0.001, 500.0), 1); // 0.5 samples
        assert_eq!(time_to_samples(-0.001, 500.0), -1);
        assert_eq!(time_to_samples(-5.0, 500.0), -2500);
    }

    #[test]
    fn select_reorders_channels() {
        let t = Trial::new("s", 1, 0, 100.0, 0, 3, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let s = t.select(&[2, 0]);
        assert_eq!(s.n_channels(), 2);
        assert_eq!(s.channel(0), &[3.0, 3.0]);
        assert_eq!(s.channel(1), &[1.0, 1.0]);
    }
}
