//! Butterworth band-pass design (bilinear transform with pre-warping) realised
//! as cascaded second-order sections, plus causal forward filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Epoch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Prototype order per band edge; the band-pass has `order` sections.
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs_hz: f64,
}

impl FilterSpec {
    /// 0.3-5 Hz band used for the MRCP time-domain features.
    pub fn mrcp(fs_hz: f64) -> Self {
        FilterSpec {
            order: 2,
            low_hz: 0.3,
            high_hz: 5.0,
            fs_hz,
        }
    }

    /// 0.3-40 Hz band fed to the convolutional network.
    pub fn broadband(fs_hz: f64) -> Self {
        FilterSpec {
            order: 2,
            low_hz: 0.3,
            high_hz: 40.0,
            fs_hz,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidFilter("order must be at least 1".into()));
        }
        if !(self.fs_hz > 0.0
            && self.low_hz > 0.0
            && self.low_hz < self.high_hz
            && self.high_hz < self.fs_hz / 2.0)
        {
            return Err(Error::InvalidFilter(format!(
                "need 0 < low ({}) < high ({}) < fs/2 ({})",
                self.low_hz,
                self.high_hz,
                self.fs_hz / 2.0
            )));
        }
        Ok(())
    }
}

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z2;
        let den = self.a[0] + self.a[1] * z_inv + self.a[2] * z2;
        num / den
    }

    /// Largest pole magnitude of the section.
    pub fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.abs().sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoeffs {
    pub spec: FilterSpec,
    pub sections: Vec<Biquad>,
}

impl FilterCoeffs {
    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / self.spec.fs_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm()
    }

    /// Filters one channel in place, zero initial state (transposed direct form II).
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * y + z2;
                z2 = s.b[2] * input - s.a[2] * y;
                *v = y;
            }
        }
    }
}

pub fn design_bandpass(spec: &FilterSpec) -> Result<FilterCoeffs> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.fs_hz;
    let k = 2.0 * fs;
    // pre-warped analog band edges
    let w1 = k * (PI * spec.low_hz / fs).tan();
    let w2 = k * (PI * spec.high_hz / fs).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let mut poles: Vec<Complex64> = Vec::with_capacity(2 * n);
    for i in 0..n {
        let theta = PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let root = (half * half - w0_sq).sqrt();
        for s in [half + root, half - root] {
            poles.push((k + s) / (k - s));
        }
    }

    // pair conjugates, then leftover real poles two at a time
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= 1e-12)
        .map(|p| p.re)
        .collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);
    if real.len() % 2 != 0 {
        return Err(Error::InvalidFilter("unpaired real pole".into()));
    }
    let mut sections = Vec::with_capacity(n);
    for p in complex {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    for pair in real.chunks(2) {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    if sections.len() != n {
        return Err(Error::InvalidFilter(format!(
            "expected {n} sections, built {}",
            sections.len()
        )));
    }

    // unit gain at the digital image of the analog centre frequency
    let center_hz = fs / PI * (w0_sq.sqrt() / k).atan();
    let mut coeffs = FilterCoeffs {
        spec: *spec,
        sections,
    };
    let g = coeffs.magnitude(center_hz);
    let per_section = g.powf(-1.0 / n as f64);
    for s in &mut coeffs.sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }

    if let Some(bad) = coeffs.sections.iter().find(|s| s.pole_radius() >= 1.0) {
        return Err(Error::InvalidFilter(format!(
            "unstable section, pole radius {}",
            bad.pole_radius()
        )));
    }
    Ok(coeffs)
}

/// Causal forward filtering of every channel, zero initial state.
pub fn filter_forward(coeffs: &FilterCoeffs, epoch: &Epoch) -> Epoch {
    let mut out = epoch.clone();
    let len = out.len();
    for c in 0..out.n_channels() {
        coeffs.filter_in_place(&mut out.data_mut()[c * len..(c + 1) * len]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Steady-state gain measured by driving the filter with a long sinusoid.
    fn simulated_gain(c: &FilterCoeffs, f: f64) -> f64 {
        let fs = c.spec.fs_hz;
        let n = (fs * 60.0) as usize;
        let mut x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
        c.filter_in_place(&mut x);
        let tail = &x[n / 2..];
        let rms = (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt();
        rms * 2f64.sqrt()
    }

    #[test]
    fn mrcp_band_meets_bounds() {
        let c = design_bandpass(&FilterSpec::mrcp(500.0)).unwrap();
        assert_eq!(c.sections.len(), 2);
        let center = (0.3f64 * 5.0).sqrt();
        assert!(c.magnitude(center) >= 0.9);
        assert!(simulated_gain(&c, center) >= 0.9);
        assert!(c.magnitude(0.0) < 1e-12);
        assert!(c.magnitude(250.0) < 1e-12);
    }

    #[test]
    fn broadband_meets_bounds() {
        let c = design_bandpass(&FilterSpec::broadband(500.0)).unwrap();
        assert!(c.magnitude(3.46) >= 0.9);
        assert!(c.magnitude(100.0) <= 0.2);
        assert!(simulated_gain(&c, 3.46) >= 0.9);
        assert!(simulated_gain(&c, 100.0) <= 0.2);
    }

    #[test]
    fn closed_form_response_matches_simulation() {
        let c = design_bandpass(&FilterSpec::broadband(500.0)).unwrap();
        for f in [1.0, 3.46, 10.0, 40.0, 80.0] {
            assert!((c.magnitude(f) - simulated_gain(&c, f)).abs() < 1e-3, "f = {f}");
        }
    }

    #[test]
    fn edge_at_minus_three_db() {
        // Butterworth edges sit at 1/sqrt(2) after pre-warping
        let c = design_bandpass(&FilterSpec::broadband(500.0)).unwrap();
        for f in [0.3, 40.0] {
            assert!((c.magnitude(f) - 0.5f64.sqrt()).abs() < 1e-6, "f = {f}");
        }
    }

    #[test]
    fn odd_orders_are_stable() {
        for order in 1..=5 {
            let c = design_bandpass(&FilterSpec {
                order,
                low_hz: 0.3,
                high_hz: 5.0,
                fs_hz: 500.0,
            })
            .unwrap();
            assert_eq!(c.sections.len(), order);
            assert!(c.sections.iter().all(|s| s.pole_radius() < 1.0));
            assert!((c.magnitude((1.5f64).sqrt()) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn nyquist_violations_rejected() {
        for (lo, hi) in [(0.0, 5.0), (5.0, 5.0), (6.0, 5.0), (1.0, 250.0), (1.0, 300.0)] {
            let spec = FilterSpec {
                order: 2,
                low_hz: lo,
                high_hz: hi,
                fs_hz: 500.0,
            };
            assert!(matches!(design_bandpass(&spec), Err(Error::InvalidFilter(_))));
        }
    }

    #[test]
    fn causal_and_zero_in_zero_out() {
        let c = design_bandpass(&FilterSpec::mrcp(500.0)).unwrap();
        let mut x = vec![0.0; 400];
        for (i, v) in x.iter_mut().enumerate().skip(250) {
            *v = (i as f64 * 0.37).sin();
        }
        c.filter_in_place(&mut x);
        assert!(x[..250].iter().all(|&v| v == 0.0));
        assert!(x[250] != 0.0);
    }

    fn epoch_of(values: Vec<f64>, n_channels: usize) -> Epoch {
        Epoch::new(n_channels, 500.0, -2500, values).unwrap()
    }

    #[test]
    fn zero_epoch_stays_zero() {
        let c = design_bandpass(&FilterSpec::mrcp(500.0)).unwrap();
        let out = filter_forward(&c, &epoch_of(vec![0.0; 2 * 2600], 2));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_offset_decays() {
        let c = design_bandpass(&FilterSpec::mrcp(500.0)).unwrap();
        let out = filter_forward(&c, &epoch_of(vec![10.0; 2600], 1));
        let last = *out.channel(0).last().unwrap();
        assert!(last.abs() < 0.5, "last = {last}");
    }

    #[test]
    fn filtering_is_linear() {
        let c = design_bandpass(&FilterSpec::broadband(500.0)).unwrap();
        let x: Vec<f64> = (0..2600).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
        let a = -3.7;
        let fx = filter_forward(&c, &epoch_of(x.clone(), 1));
        let fax = filter_forward(&c, &epoch_of(x.iter().map(|v| a * v).collect(), 1));
        for (u, v) in fx.data().iter().zip(fax.data()) {
            assert!((a * u - v).abs() <= 1e-9 * v.abs().max(1e-6));
        }
    }
}
