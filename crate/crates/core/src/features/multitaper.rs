//! Multitaper PSD with discrete prolate spheroidal (Slepian) tapers and
//! band-power features.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::dsp::Window;
use crate::error::{Error, Result};

/// Time-bandwidth product of the tapers.
pub const TIME_BANDWIDTH: f64 = 2.0;
pub const N_TAPERS: usize = 3;
/// Segment taken from the end of each raw window, seconds.
pub const PSD_SEGMENT_S: f64 = 0.5;
/// Floor added before the log transform.
pub const LOG_FLOOR: f64 = 1e-12;

/// Unit-energy DPSS tapers, most concentrated first.
///
/// Computed as the top eigenvectors of the symmetric tridiagonal matrix that
/// commutes with the time-frequency concentration operator.
pub fn dpss(n: usize, nw: f64, k: usize) -> Result<Arc<Vec<Vec<f64>>>> {
    type Cache = Mutex<HashMap<(usize, u64, usize), Arc<Vec<Vec<f64>>>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();

    if n < 2 || k == 0 || k > n || !(nw > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dpss needs n >= 2, 0 < k <= n, nw > 0 (n={n}, k={k}, nw={nw})"
        )));
    }
    let key = (n, nw.to_bits(), k);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return Ok(t.clone());
    }

    let w = nw / n as f64;
    let cos_term = (2.0 * std::f64::consts::PI * w).cos();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let c = (n as f64 - 1.0 - 2.0 * i as f64) / 2.0;
        m[(i, i)] = c * c * cos_term;
        if i + 1 < n {
            let off = (i + 1) as f64 * (n - i - 1) as f64 / 2.0;
            m[(i, i + 1)] = off;
            m[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let tapers: Vec<Vec<f64>> = order[..k]
        .iter()
        .enumerate()
        .map(|(idx, &col)| {
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            // symmetric tapers start with a positive mean, antisymmetric ones
            // with a positive first lobe
            let s: f64 = if idx % 2 == 0 {
                v.iter().sum()
            } else {
                v.iter()
                    .enumerate()
                    .map(|(i, x)| (n as f64 - 1.0 - 2.0 * i as f64) * x)
                    .sum()
            };
            if s < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let tapers = Arc::new(tapers);
    cache.lock().unwrap().insert(key, tapers.clone());
    Ok(tapers)
}

/// One-sided multitaper PSD of a demeaned segment (units²/Hz) and the bin
/// frequencies. Bins are spaced `fs / x.len()` apart.
pub fn multitaper_psd(x: &[f64], fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let tapers = dpss(n, TIME_BANDWIDTH, N_TAPERS.min(n))?;
    let mean = x.iter().sum::<f64>() / n as f64;
    let n_bins = n / 2 + 1;
    let mut psd = vec![0.0; n_bins];

    thread_local! {
        static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for taper in tapers.iter() {
        for ((b, &v), &h) in buf.iter_mut().zip(x).zip(taper) {
            *b = Complex64::new((v - mean) * h, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in psd.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
    }
    let scale = 1.0 / (tapers.len() as f64 * fs);
    for (i, p) in psd.iter_mut().enumerate() {
        let edge = i == 0 || (n % 2 == 0 && i == n / 2);
        *p *= if edge { scale } else { 2.0 * scale };
    }
    let freqs = (0..n_bins).map(|i| i as f64 * fs / n as f64).collect();
    Ok((psd, freqs))
}

/// Five EEG frequency bands, `[low, high)` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    bands: [(f64, f64); 5],
}

impl BandSet {
    pub fn standard() -> Self {
        BandSet {
            bands: [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 100.0)],
        }
    }

    /// Checks that every band lies inside `[0, fs/2)`.
    pub fn validate_for(&self, fs: f64) -> Result<()> {
        for &(lo, hi) in &self.bands {
            if !(lo >= 0.0 && lo < hi && hi <= fs / 2.0) {
                return Err(Error::InvalidArgument(format!(
                    "band [{lo}, {hi}) Hz outside [0, {})",
                    fs / 2.0
                )));
            }
        }
        Ok(())
    }

    pub fn bands(&self) -> &[(f64, f64); 5] {
        &self.bands
    }
}

/// Log10 mean PSD per band over the final `PSD_SEGMENT_S` of every channel;
/// channel-major (5 values per channel).
pub fn extract_psd_features(window: &Window, bands: &BandSet) -> Result<Vec<f64>> {
    let fs = window.fs();
    bands.validate_for(fs)?;
    let seg = (PSD_SEGMENT_S * fs).round() as usize;
    if seg < 2 || seg > window.len() {
        return Err(Error::InvalidArgument(format!(
            "PSD segment of {seg} samples does not fit a {}-sample window",
            window.len()
        )));
    }
    let mut out = Vec::with_capacity(window.n_channels() * 5);
    for c in 0..window.n_channels() {
        let x = window.channel(c);
        let (psd, freqs) = multitaper_psd(&x[x.len() - seg..], fs)?;
        for &(lo, hi) in bands.bands() {
            let (sum, count) = psd
                .iter()
                .zip(&freqs)
                .filter(|(_, &f)| f >= lo && f < hi)
                .fold((0.0, 0usize), |(s, n), (p, _)| (s + p, n + 1));
            if count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "band [{lo}, {hi}) Hz contains no frequency bin at resolution {} Hz",
                    fs / seg as f64
                )));
            }
            out.push((sum / count as f64 + LOG_FLOOR).log10());
        }
    }
    Ok(out)
}
