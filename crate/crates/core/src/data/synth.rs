//! Synthetic MRCP/ERD trial generator for desk-scale verification.
//!
//! Each trial is spatially correlated 1/f background noise plus a
//! sensorimotor rhythm. A negative potential ramps in over
//! `mrcp_onset_lead` seconds before onset (slowly at first, steeply over the
//! last 0.4 s), peaks at onset and snaps back within 50 ms. Rhythm power
//! drops from the ramp start onwards. Everything before the ramp is
//! stationary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{ChannelSet, Dataset, MeasurementSet, Subject, Trial};
use crate::error::{Error, Result};

/// Fraction of background noise variance shared by all channels.
const SHARED_NOISE_FRACTION: f64 = 0.7;
/// Lowest frequency present in the 1/f background.
const NOISE_LOW_HZ: f64 = 0.3;
/// Below this frequency the background spectrum is flat.
const NOISE_KNEE_HZ: f64 = 5.0;
/// Time the potential takes to return to baseline after onset.
const REBOUND_S: f64 = 0.05;
/// Duration of the steep late segment of the ramp.
const LATE_SEGMENT_S: f64 = 0.4;
/// Share of the peak reached during the slow early segment.
const EARLY_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Trials per subject, spread over three measurement sets.
    pub n_trials: usize,
    pub fs: f64,
    /// Background noise RMS, µV.
    pub noise_amplitude: f64,
    /// Peak of the pre-movement potential at onset, µV (negative).
    pub mrcp_amplitude: f64,
    /// Ramp start before onset, seconds.
    pub mrcp_onset_lead: f64,
    pub erd_band: (f64, f64),
    /// Fraction of rhythm power kept during desynchronization.
    pub erd_attenuation: f64,
    /// Sensorimotor rhythm RMS at rest, µV.
    pub rhythm_amplitude: f64,
    pub pre_onset_s: f64,
    pub post_onset_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 1,
            n_trials: 100,
            fs: 500.0,
            noise_amplitude: 10.0,
            mrcp_amplitude: -8.0,
            mrcp_onset_lead: 1.5,
            erd_band: (8.0, 13.0),
            erd_attenuation: 0.3,
            rhythm_amplitude: 8.0,
            pre_onset_s: 5.5,
            post_onset_s: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth config: {m}")));
        if !(self.fs > 0.0) {
            return bad("fs must be positive");
        }
        if !(self.erd_attenuation > 0.0 && self.erd_attenuation <= 1.0) {
            return bad("erd_attenuation must lie in (0, 1]");
        }
        if !(self.mrcp_onset_lead > 0.0) {
            return bad("mrcp_onset_lead must be positive");
        }
        if self.n_trials < 3 || self.n_subjects == 0 {
            return bad("need at least one subject with 3 trials");
        }
        let (lo, hi) = self.erd_band;
        if !(lo > 0.0 && lo < hi && hi < self.fs / 2.0) {
            return bad("erd_band must satisfy 0 < low < high < fs/2");
        }
        if self.pre_onset_s < 5.0 || self.post_onset_s < 0.2 {
            return bad("trials must cover -5.0 s .. 0.2 s around onset");
        }
        if self.noise_amplitude < 0.0 || self.rhythm_amplitude < 0.0 {
            return bad("amplitudes must be non-negative");
        }
        Ok(())
    }
}

/// Relative strength of the movement potential per channel; left
/// sensorimotor cortex strongest (right-hand movement).
fn mrcp_weight(name: &str) -> f64 {
    match name {
        "C3" => 1.0,
        "C1" => 0.9,
        "FC3" | "CZ" => 0.8,
        "CP3" | "FC1" => 0.7,
        "CP1" | "C5" => 0.6,
        "CPZ" => 0.5,
        "FC5" | "CP5" => 0.4,
        "FZ" | "F1" | "F3" | "P1" => 0.3,
        "PZ" => 0.2,
        _ => 0.0,
    }
}

fn rhythm_weight(name: &str) -> f64 {
    match name {
        "C3" | "C5" | "CP3" => 1.0,
        "C1" | "FC3" | "CP5" | "FC5" => 0.8,
        "CZ" | "CP1" | "FC1" => 0.6,
        "CPZ" | "P1" | "F3" => 0.4,
        _ => 0.25,
    }
}

/// Potential shape at time `t` relative to onset: a slow early slope, a
/// steep late slope peaking at onset, then a fast return.
fn mrcp_shape(t: f64, lead: f64) -> f64 {
    let knee = -lead.min(LATE_SEGMENT_S);
    let early = if knee > -lead { EARLY_FRACTION } else { 0.0 };
    if t < -lead {
        0.0
    } else if t < knee {
        early * (t + lead) / (knee + lead)
    } else if t <= 0.0 {
        early + (1.0 - early) * (t - knee) / -knee
    } else if t < REBOUND_S {
        1.0 - t / REBOUND_S
    } else {
        0.0
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Shapes white noise in the frequency domain with `gain(f)` and rescales
/// the result to the requested RMS.
fn shaped_noise(
    planner: &mut FftPlanner<f64>,
    rng: &mut ChaCha8Rng,
    n: usize,
    fs: f64,
    rms: f64,
    gain: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = gaussian(rng, n)
        .into_iter()
        .map(|v| Complex::new(v, 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k } else { n - k };
        *z *= gain(kk as f64 * fs / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let cur = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if cur == 0.0 {
        return out;
    }
    out.into_iter().map(|v| v * rms / cur).collect()
}

fn generate_trial(
    cfg: &SynthConfig,
    channels: &ChannelSet,
    subject: &str,
    subject_index: usize,
    set_id: u32,
    trial_id: u32,
    planner: &mut FftPlanner<f64>,
) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((subject_index as u64) << 32) | trial_id as u64);

    let fs = cfg.fs;
    let onset_index = (cfg.pre_onset_s * fs).round() as usize;
    let n = onset_index + (cfg.post_onset_s * fs).round() as usize;
    let pink = |f: f64| if f < NOISE_LOW_HZ { 0.0 } else { 1.0 / f.max(NOISE_KNEE_HZ).sqrt() };
    let (blo, bhi) = cfg.erd_band;
    let band = |f: f64| if f >= blo && f <= bhi { 1.0 } else { 0.0 };

    let shared = shaped_noise(planner, &mut rng, n, fs, cfg.noise_amplitude, pink);
    let rhythm_shared = shaped_noise(planner, &mut rng, n, fs, cfg.rhythm_amplitude, band);
    let shared_w = SHARED_NOISE_FRACTION.sqrt();
    let own_w = (1.0 - SHARED_NOISE_FRACTION).sqrt();
    let erd_gain = cfg.erd_attenuation.sqrt();

    let mut samples = Vec::with_capacity(channels.count() * n);
    for name in channels.names() {
        let own = shaped_noise(planner, &mut rng, n, fs, cfg.noise_amplitude, pink);
        let rhythm_own = shaped_noise(planner, &mut rng, n, fs, cfg.rhythm_amplitude, band);
        let mw = mrcp_weight(name);
        let rw = rhythm_weight(name);
        for i in 0..n {
            let t = (i as f64 - onset_index as f64) / fs;
            let rhythm = rw * (0.5 * rhythm_shared[i] + 0.75f64.sqrt() * rhythm_own[i]);
            let gain = if t >= -cfg.mrcp_onset_lead { erd_gain } else { 1.0 };
            let v = shared_w * shared[i]
                + own_w * own[i]
                + gain * rhythm
                + mw * cfg.mrcp_amplitude * mrcp_shape(t, cfg.mrcp_onset_lead);
            samples.push(v as f32);
        }
    }
    Trial::new(subject, set_id, trial_id, fs, onset_index, channels.count(), samples)
}

/// Deterministic synthetic dataset on the canonical 16 channels.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let channels = ChannelSet::canonical();
    let mut planner = FftPlanner::new();
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for si in 0..cfg.n_subjects {
        let subject_id = format!("S{:02}", si + 1);
        let mut sets = Vec::with_capacity(3);
        let mut next_id = 0u32;
        for set_index in 0..3 {
            let size = cfg.n_trials / 3 + usize::from(set_index < cfg.n_trials % 3);
            let set_id = set_index as u32 + 1;
            let trials = (0..size)
                .map(|_| {
                    let id = next_id;
                    next_id += 1;
                    generate_trial(cfg, &channels, &subject_id, si, set_id, id, &mut planner)
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(MeasurementSet { id: set_id, trials });
        }
        subjects.push(Subject {
            id: subject_id,
            sets,
        });
    }
    Ok(Dataset {
        fs: cfg.fs,
        channel_set: channels,
        subjects,
    })
}
