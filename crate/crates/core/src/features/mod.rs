//! Window features: MRCP amplitude samples, multitaper band power, xDAWN
//! spatial filtering and feature standardisation.

mod multitaper;
mod xdawn;

pub use multitaper::{
    dpss, extract_psd_features, multitaper_psd, BandSet, LOG_FLOOR, N_TAPERS, PSD_SEGMENT_S,
    TIME_BANDWIDTH,
};
pub use xdawn::{apply_xdawn, fit_xdawn, SpatialFilter, DEFAULT_COMPONENTS};

use serde::{Deserialize, Serialize};

use crate::dsp::Window;
use crate::error::{Error, Result};

/// Number of amplitude samples taken per channel.
pub const TIME_POINTS: usize = 7;
/// Spacing of the amplitude samples, seconds.
pub const TIME_STEP_S: f64 = 0.05;

/// Sample indices (within a window of `len` samples) read by
/// [`extract_time_features`], oldest first.
pub fn time_feature_indices(len: usize, fs: f64) -> Result<Vec<usize>> {
    let step = TIME_STEP_S * fs;
    if (step - step.round()).abs() > 1e-9 || step.round() < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fs {fs} Hz does not put a whole number of samples in {TIME_STEP_S} s"
        )));
    }
    let step = step.round() as usize;
    let span = step * (TIME_POINTS - 1);
    if span >= len {
        return Err(Error::InvalidArgument(format!(
            "window of {len} samples shorter than the {span}-sample feature span"
        )));
    }
    Ok((0..TIME_POINTS).rev().map(|k| len - 1 - k * step).collect())
}

/// Seven samples per channel spaced 50 ms apart, ending at the last sample;
/// channel-major.
pub fn extract_time_features(window: &Window) -> Result<Vec<f64>> {
    let idx = time_feature_indices(window.len(), window.fs())?;
    let mut out = Vec::with_capacity(window.n_channels() * TIME_POINTS);
    for c in 0..window.n_channels() {
        let x = window.channel(c);
        out.extend(idx.iter().map(|&i| x[i]));
    }
    Ok(out)
}

/// Named contiguous block of a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Vec<Block>,
}

/// `[time | psd]` with a layout descriptor; `time_rows` is the number of
/// (virtual) channels that produced the time block.
pub fn assemble_features(
    time_block: &[f64],
    time_rows: usize,
    psd_block: &[f64],
    psd_rows: usize,
) -> Result<FeatureVector> {
    if time_block.is_empty() || psd_block.is_empty() {
        return Err(Error::Empty("feature block".into()));
    }
    if time_rows == 0
        || psd_rows == 0
        || time_block.len() != time_rows * TIME_POINTS
        || psd_block.len() % psd_rows != 0
    {
        return Err(Error::ShapeMismatch(format!(
            "time block {} for {time_rows} rows, psd block {} for {psd_rows} rows",
            time_block.len(),
            psd_block.len()
        )));
    }
    if time_block.iter().chain(psd_block).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature block".into()));
    }
    let mut values = Vec::with_capacity(time_block.len() + psd_block.len());
    values.extend_from_slice(time_block);
    values.extend_from_slice(psd_block);
    Ok(FeatureVector {
        values,
        layout: vec![
            Block {
                name: "time".into(),
                rows: time_rows,
                cols: TIME_POINTS,
            },
            Block {
                name: "psd".into(),
                rows: psd_rows,
                cols: psd_block.len() / psd_rows,
            },
        ],
    })
}

/// Per-feature standardisation fitted on training vectors only.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose training variance was zero (std forced to 1).
    pub constant_features: Vec<usize>,
}

impl Scaler {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Scaler> {
        if vectors.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "scaler needs at least 2 vectors, got {}",
                vectors.len()
            )));
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; d];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let mut constant_features = Vec::new();
        let std = var
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    constant_features.push(i);
                    1.0
                }
            })
            .collect();
        Ok(Scaler {
            mean,
            std,
            constant_features,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardises `v`; no clipping.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "scaler fitted on {} features, got {}",
                self.mean.len(),
                v.len()
            )));
        }
        Ok(v
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }
}
