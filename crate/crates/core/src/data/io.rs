//! On-disk layout: `manifest.json` plus one little-endian float32 file per
//! trial, channel-major (`channel0[all samples], channel1[...], ...`).

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChannelSet, Dataset, MeasurementSet, Subject, Trial};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fs_hz: f64,
    pub channel_names: Vec<String>,
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub sets: Vec<ManifestSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSet {
    pub id: u32,
    pub trials: Vec<ManifestTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub id: u32,
    pub file: String,
    pub n_samples: usize,
    pub onset_index: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn read_trial(
    root: &Path,
    subject: &str,
    set_id: u32,
    mt: &ManifestTrial,
    fs: f64,
    n_channels: usize,
) -> Result<Trial> {
    let path = root.join(&mt.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let label = format!("{subject}/set{set_id}/trial{}", mt.id);
    let expected = n_channels * mt.n_samples;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::LengthMismatch {
            trial: label,
            expected,
            found: bytes.len() / 4,
        });
    }
    let samples: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(label));
    }
    if mt.onset_index >= mt.n_samples {
        return Err(Error::Manifest(format!(
            "{label}: onset_index {} outside {} samples",
            mt.onset_index, mt.n_samples
        )));
    }
    let mut trial = Trial::new(subject, set_id, mt.id, fs, mt.onset_index, n_channels, samples)?;
    trial.file = mt.file.clone();
    Ok(trial)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if !(manifest.fs_hz.is_finite() && manifest.fs_hz > 0.0) {
        return Err(Error::Manifest(format!("invalid fs_hz {}", manifest.fs_hz)));
    }
    let channel_set = ChannelSet::new(&manifest.channel_names)?;
    let n_channels = channel_set.count();

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for ms in &manifest.subjects {
        let mut sets = Vec::with_capacity(ms.sets.len());
        for mset in &ms.sets {
            let trials = mset
                .trials
                .par_iter()
                .map(|mt| read_trial(root, &ms.id, mset.id, mt, manifest.fs_hz, n_channels))
                .collect::<Result<Vec<_>>>()?;
            sets.push(MeasurementSet {
                id: mset.id,
                trials,
            });
        }
        subjects.push(Subject {
            id: ms.id.clone(),
            sets,
        });
    }
    Ok(Dataset {
        fs: manifest.fs_hz,
        channel_set,
        subjects,
    })
}

pub fn manifest_of(dataset: &Dataset) -> Manifest {
    Manifest {
        fs_hz: dataset.fs,
        channel_names: dataset.channel_set.names().to_vec(),
        subjects: dataset
            .subjects
            .iter()
            .map(|s| ManifestSubject {
                id: s.id.clone(),
                sets: s
                    .sets
                    .iter()
                    .map(|set| ManifestSet {
                        id: set.id,
                        trials: set
                            .trials
                            .iter()
                            .map(|t| ManifestTrial {
                                id: t.trial_id,
                                file: t.file.clone(),
                                n_samples: t.n_samples(),
                                onset_index: t.onset_index,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Writes `dataset` under `root` (created if missing).
pub fn write_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = manifest_of(dataset);
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    text.push('\n');
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    dataset
        .trials()
        .collect::<Vec<_>>()
        .par_iter()
        .try_for_each(|t| {
            let path = root.join(&t.file);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut bytes = Vec::with_capacity(t.samples().len() * 4);
            for v in t.samples() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        })
}
