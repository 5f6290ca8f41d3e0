//! xDAWN spatial filtering: generalized eigenvectors of the evoked-response
//! covariance against the covariance of all training windows.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dsp::Window;
use crate::error::{Error, Result};

/// Default number of retained components.
pub const DEFAULT_COMPONENTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFilter {
    /// Row-major `k x n_channels`.
    weights: Vec<f64>,
    k: usize,
    n_channels: usize,
    /// Generalized eigenvalue (Rayleigh score) of each row, descending.
    scores: Vec<f64>,
    /// Set when the total covariance needed ridge regularisation.
    pub regularized: bool,
}

impl SpatialFilter {
    pub fn from_weights(weights: Vec<f64>, k: usize, n_channels: usize) -> Result<Self> {
        if weights.len() != k * n_channels || k == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {k} x {n_channels}",
                weights.len()
            )));
        }
        Ok(SpatialFilter {
            weights,
            k,
            n_channels,
            scores: vec![f64::NAN; k],
            regularized: false,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_channels..(i + 1) * self.n_channels]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Channel covariance of a window (per-channel mean removed), accumulated
/// into `acc` with weight `w`.
fn accumulate_cov(acc: &mut DMatrix<f64>, x: &Window, w: f64) {
    let c = x.n_channels();
    let len = x.len() as f64;
    let centered: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            let ch = x.channel(i);
            let m = ch.iter().sum::<f64>() / len;
            ch.iter().map(|v| v - m).collect()
        })
        .collect();
    for i in 0..c {
        for j in i..c {
            let s: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let v = w * s / len;
            acc[(i, j)] += v;
            if i != j {
                acc[(j, i)] += v;
            }
        }
    }
}

/// Fits `k` spatial filters maximising `w' S_evoked w / w' S_all w`.
///
/// `S_evoked` is the covariance of the averaged positive-class window,
/// `S_all` the mean covariance over all training windows. Rows satisfy
/// `w_i' S_all w_j = delta_ij`.
pub fn fit_xdawn(windows: &[Window], labels: &[bool], k: usize) -> Result<SpatialFilter> {
    if windows.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} windows vs {} labels",
            windows.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos < 2 {
        return Err(Error::DegenerateClasses(format!(
            "xDAWN needs at least 2 positive windows, got {n_pos}"
        )));
    }
    let c = windows[0].n_channels();
    let len = windows[0].len();
    if windows.iter().any(|w| w.n_channels() != c || w.len() != len) {
        return Err(Error::ShapeMismatch("windows differ in shape".into()));
    }
    if k == 0 || k > c {
        return Err(Error::InvalidArgument(format!("k = {k} for {c} channels")));
    }

    let mut evoked = vec![0.0; c * len];
    for (w, _) in windows.iter().zip(labels).filter(|(_, &l)| l) {
        for (e, v) in evoked.iter_mut().zip(w.data()) {
            *e += v / n_pos as f64;
        }
    }
    let evoked = Window::from_data(c, windows[0].fs(), 0, evoked)?;
    let mut s_evoked = DMatrix::zeros(c, c);
    accumulate_cov(&mut s_evoked, &evoked, 1.0);

    let mut s_all = DMatrix::zeros(c, c);
    let w = 1.0 / windows.len() as f64;
    for x in windows {
        accumulate_cov(&mut s_all, x, w);
    }

    let trace = s_all.trace();
    let min_eig = SymmetricEigen::new(s_all.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut regularized = false;
    if !(min_eig > 1e-10 * trace.abs().max(f64::MIN_POSITIVE)) {
        let lambda = 1e-6 * trace.abs().max(1.0) / c as f64;
        for i in 0..c {
            s_all[(i, i)] += lambda;
        }
        regularized = true;
    }
    let chol = s_all
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("total covariance not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
    let m = &l_inv * &s_evoked * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let back = l_inv.transpose();
    let mut weights = Vec::with_capacity(k * c);
    let mut scores = Vec::with_capacity(k);
    for &col in &order[..k] {
        let v = &back * eig.eigenvectors.column(col);
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        weights.extend(v.iter().map(|x| x * sign));
        scores.push(eig.eigenvalues[col]);
    }
    Ok(SpatialFilter {
        weights,
        k,
        n_channels: c,
        scores,
        regularized,
    })
}

/// Projects a window onto the `k` virtual channels.
pub fn apply_xdawn(sf: &SpatialFilter, window: &Window) -> Result<Window> {
    if window.n_channels() != sf.n_channels {
        return Err(Error::ShapeMismatch(format!(
            "filter expects {} channels, window has {}",
            sf.n_channels,
            window.n_channels()
        )));
    }
    let len = window.len();
    let mut out = vec![0.0; sf.k * len];
    for r in 0..sf.k {
        let dst = &mut out[r * len..(r + 1) * len];
        for (ch, &w) in sf.row(r).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (d, x) in dst.iter_mut().zip(window.channel(ch)) {
                *d += w * x;
            }
        }
    }
    Window::from_data(sf.k, window.fs(), window.end_offset(), out)
}
