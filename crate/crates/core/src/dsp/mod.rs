//! Causal band-pass filtering, epoching, sliding windows and per-window
//! channel standardisation.
//!
//! Every boundary is an integer sample offset relative to the onset sample;
//! seconds are only converted (half away from zero) at the API edge.

mod filter;

pub use filter::{design_bandpass, filter_forward, Biquad, FilterCoeffs, FilterSpec};

use crate::data::{time_to_samples, Trial};
use crate::error::{Error, Result};

/// Window length used throughout the pipeline, seconds.
pub const WINDOW_LENGTH_S: f64 = 1.0;
/// Stride of the pseudo-online (test) window grid.
pub const TEST_STRIDE_S: f64 = 0.05;
/// Stride of the training/validation window grid.
pub const TRAIN_STRIDE_S: f64 = 0.02;

/// Channels x time block cut from a trial around its onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    n_channels: usize,
    len: usize,
    fs: f64,
    /// Sample offset of the first column relative to onset.
    first_offset: i64,
    data: Vec<f64>,
}

impl Epoch {
    pub fn new(n_channels: usize, fs: f64, first_offset: i64, data: Vec<f64>) -> Result<Self> {
        if n_channels == 0 || data.is_empty() || data.len() % n_channels != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} channels",
                data.len(),
                n_channels
            )));
        }
        Ok(Epoch {
            n_channels,
            len: data.len() / n_channels,
            fs,
            first_offset,
            data,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn first_offset(&self) -> i64 {
        self.first_offset
    }

    pub fn t_start(&self) -> f64 {
        self.first_offset as f64 / self.fs
    }

    pub fn t_end(&self) -> f64 {
        (self.first_offset + self.len as i64) as f64 / self.fs
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Window covering sample offsets `[end_offset - len, end_offset)`.
    fn window_by_offset(&self, end_offset: i64, len: usize) -> Result<Window> {
        let start = end_offset - len as i64;
        let epoch_end = self.first_offset + self.len as i64;
        if start < self.first_offset || end_offset > epoch_end {
            return Err(Error::InvalidArgument(format!(
                "window ending at {:.3} s falls outside epoch [{:.3}, {:.3}] s",
                end_offset as f64 / self.fs,
                self.t_start(),
                self.t_end()
            )));
        }
        let from = (start - self.first_offset) as usize;
        let mut data = Vec::with_capacity(self.n_channels * len);
        for c in 0..self.n_channels {
            data.extend_from_slice(&self.channel(c)[from..from + len]);
        }
        Ok(Window {
            n_channels: self.n_channels,
            len,
            fs: self.fs,
            end_offset,
            data,
        })
    }
}

/// Fixed-length multichannel slice keyed by its end time relative to onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    n_channels: usize,
    len: usize,
    fs: f64,
    end_offset: i64,
    data: Vec<f64>,
}

impl Window {
    pub fn from_data(n_channels: usize, fs: f64, end_offset: i64, data: Vec<f64>) -> Result<Self> {
        if n_channels == 0 || data.is_empty() || data.len() % n_channels != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} channels",
                data.len(),
                n_channels
            )));
        }
        Ok(Window {
            n_channels,
            len: data.len() / n_channels,
            fs,
            end_offset,
            data,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn end_offset(&self) -> i64 {
        self.end_offset
    }

    pub fn end_time(&self) -> f64 {
        self.end_offset as f64 / self.fs
    }

    pub fn start_time(&self) -> f64 {
        (self.end_offset - self.len as i64) as f64 / self.fs
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, a: f64) -> Window {
        Window {
            data: self.data.iter().map(|v| v * a).collect(),
            ..self.clone()
        }
    }
}

/// Cuts `[t_start, t_end)` around the onset sample.
pub fn epoch_trial(trial: &Trial, t_start: f64, t_end: f64) -> Result<Epoch> {
    let fs = trial.fs;
    let first = time_to_samples(t_start, fs);
    let last = time_to_samples(t_end, fs);
    if last <= first {
        return Err(Error::InvalidArgument(format!(
            "empty epoch [{t_start}, {t_end}) s"
        )));
    }
    let from = trial.onset_index as i64 + first;
    let to = trial.onset_index as i64 + last;
    if from < 0 || to > trial.n_samples() as i64 {
        return Err(Error::InsufficientEpochSpan(format!(
            "{} needs samples [{from}, {to}) but has {}",
            trial.label(),
            trial.n_samples()
        )));
    }
    let (from, to) = (from as usize, to as usize);
    let mut data = Vec::with_capacity(trial.n_channels() * (to - from));
    for c in 0..trial.n_channels() {
        data.extend(trial.channel(c)[from..to].iter().map(|&v| v as f64));
    }
    Epoch::new(trial.n_channels(), fs, first, data)
}

/// Windows of `length_s` every `stride_s`, ascending end time, the first
/// ending `length_s` after the epoch start.
pub fn slice_windows(epoch: &Epoch, length_s: f64, stride_s: f64) -> Result<Vec<Window>> {
    if !(stride_s > 0.0) {
        return Err(Error::InvalidArgument(format!("stride {stride_s} must be positive")));
    }
    let len = time_to_samples(length_s, epoch.fs);
    let stride = time_to_samples(stride_s, epoch.fs);
    if len <= 0 || stride <= 0 {
        return Err(Error::InvalidArgument(format!(
            "length {length_s} s / stride {stride_s} s below one sample"
        )));
    }
    if len as usize > epoch.len {
        return Err(Error::InvalidArgument(format!(
            "epoch of {} samples shorter than window of {len}",
            epoch.len
        )));
    }
    let count = (epoch.len as i64 - len) / stride + 1;
    (0..count)
        .map(|k| epoch.window_by_offset(epoch.first_offset + len + k * stride, len as usize))
        .collect()
}

/// The `WINDOW_LENGTH_S` slice ending exactly at `end_time`.
pub fn window_at(epoch: &Epoch, end_time: f64) -> Result<Window> {
    let len = time_to_samples(WINDOW_LENGTH_S, epoch.fs) as usize;
    epoch.window_by_offset(time_to_samples(end_time, epoch.fs), len)
}

/// Per-channel standardised window plus the channels that had zero variance
/// (those are emitted as zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub window: Window,
    pub flat_channels: Vec<usize>,
}

/// `(x - mean) / std` per channel with the population standard deviation.
pub fn zscore_channels(window: &Window) -> Standardized {
    let len = window.len;
    let mut data = Vec::with_capacity(window.data.len());
    let mut flat_channels = Vec::new();
    for c in 0..window.n_channels {
        let x = window.channel(c);
        let mean = x.iter().sum::<f64>() / len as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let std = var.sqrt();
        if std <= f64::EPSILON * mean.abs().max(1.0) {
            flat_channels.push(c);
            data.extend(std::iter::repeat(0.0).take(len));
        } else {
            data.extend(x.iter().map(|v| (v - mean) / std));
        }
    }
    Standardized {
        window: Window { data, ..window.clone() },
        flat_channels,
    }
}
