//! Linear SVM: hinge loss with L2 regularisation solved by dual coordinate
//! descent, C chosen by stratified k-fold grid search, and a logistic
//! calibration of the margin.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const C_GRID: [f64; 8] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread of a sweep falls below this.
    pub tolerance: f64,
    pub calibration: Calibration,
}

/// Which margins the probability sigmoid is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Margins of the final model on its own training data.
    #[default]
    Training,
    /// Out-of-fold margins from the grid-search split at the chosen C.
    CrossValidated,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            grid: C_GRID.to_vec(),
            folds: 5,
            seed: 0,
            max_epochs: 10_000,
            tolerance: 1e-6,
            calibration: Calibration::Training,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Calibration `p = 1 / (1 + exp(a * margin + b))`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Mean cross-validated accuracy per grid entry.
    pub cv_accuracy: Vec<f64>,
    pub fold_fits: usize,
}

impl SvmModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn probability_of_margin(&self, m: f64) -> f64 {
        let z = self.a * m + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "svm expects {} features, got {}",
                self.weights.len(),
                x.len()
            )));
        }
        Ok(self.probability_of_margin(self.margin(x)))
    }
}

/// Linear decision function from one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epochs: usize,
    /// Primal objective after every sweep.
    pub primal_trace: Vec<f64>,
}

impl LinearFit {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// `0.5 |w|^2 + 0.5 b^2 + C sum hinge`, the bias treated as an extra weight on
/// a constant feature.
pub fn primal_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, c: f64) -> f64 {
    let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let s = if yi { 1.0 } else { -1.0 };
            let m = b + w.iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
            (1.0 - s * m).max(0.0)
        })
        .sum();
    reg + c * loss
}

fn check_inputs(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vectors, {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|v| v.len() != d) {
        return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svm features".into()));
    }
    Ok(d)
}

/// Exact minimiser over `theta` in `[0, 1]` of the primal objective along
/// `(w0, b0) + theta (dw, db)`. The objective is a convex piecewise quadratic
/// in `theta`, so a sweep over sorted hinge breakpoints finds it.
fn primal_line_search(x: &[Vec<f64>], sign: &[f64], w0: &[f64], b0: f64, dw: &[f64], db: f64, c: f64) -> f64 {
    let a = dw.iter().map(|v| v * v).sum::<f64>() + db * db;
    if a == 0.0 {
        return 0.0;
    }
    let lin = w0.iter().zip(dw).map(|(u, v)| u * v).sum::<f64>() + b0 * db;
    let mut s = 0.0;
    let mut events = Vec::new();
    for (xi, &yi) in x.iter().zip(sign) {
        let m0 = b0 + w0.iter().zip(xi).map(|(u, v)| u * v).sum::<f64>();
        let dm = db + dw.iter().zip(xi).map(|(u, v)| u * v).sum::<f64>();
        let (ci, ei) = (1.0 - yi * m0, yi * dm);
        if ei == 0.0 {
            continue;
        }
        let active = ci > 0.0 || (ci == 0.0 && ei < 0.0);
        if active {
            s += ei;
        }
        let t = ci / ei;
        if t > 0.0 && t < 1.0 {
            events.push((t, ei, active));
        }
    }
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut lo = 0.0;
    for (t, ei, was_active) in events {
        let stationary = (c * s - lin) / a;
        if stationary <= t {
            return stationary.max(lo);
        }
        if was_active {
            s -= ei;
        } else {
            s += ei;
        }
        lo = t;
    }
    ((c * s - lin) / a).clamp(lo, 1.0)
}

/// Dual coordinate descent for the L1-loss (hinge) linear SVM.
///
/// After every sweep the returned primal iterate moves towards the weights
/// implied by the current dual variables with an exact line search, so the
/// primal objective never increases from one sweep to the next; at the dual
/// optimum both coincide.
pub fn fit_linear_svm(x: &[Vec<f64>], y: &[bool], c: f64, cfg: &SvmConfig) -> Result<LinearFit> {
    let d = check_inputs(x, y)?;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let n = x.len();
    let sign: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let qii: Vec<f64> = x.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>() + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut wp, mut bp) = (vec![0.0; d], 0.0);
    let mut objective = primal_objective(x, y, &wp, bp, c);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let xi = &x[i];
            let m = b + w.iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
            let g = sign[i] * m - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * sign[i];
                if delta != 0.0 {
                    w.iter_mut().zip(xi).for_each(|(a, v)| *a += delta * v);
                    b += delta;
                }
            }
        }
        let dw: Vec<f64> = w.iter().zip(&wp).map(|(u, v)| u - v).collect();
        let db = b - bp;
        let theta = primal_line_search(x, &sign, &wp, bp, &dw, db, c);
        let cand_w: Vec<f64> = wp.iter().zip(&dw).map(|(u, v)| u + theta * v).collect();
        let cand_b = bp + theta * db;
        let cand = primal_objective(x, y, &cand_w, cand_b, c);
        if cand <= objective {
            wp = cand_w;
            bp = cand_b;
            objective = cand;
        }
        trace.push(objective);
        if pg_max - pg_min < cfg.tolerance {
            break;
        }
    }
    Ok(LinearFit {
        weights: wp,
        bias: bp,
        epochs,
        primal_trace: trace,
    })
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            fold[i] = j % k;
        }
    }
    fold
}

/// Fits `p = 1 / (1 + exp(a f + b))` to smoothed targets by Newton's method
/// with backtracking; `b` stays 0 when the classes are balanced.
pub fn fit_platt(margins: &[f64], y: &[bool]) -> (f64, f64) {
    let n_pos = y.iter().filter(|&&l| l).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = y.iter().map(|&l| if l { hi } else { lo }).collect();
    let fit_b = n_pos != n_neg;

    let nll = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = a * f + b;
                // -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, if fit_b { ((n_neg + 1.0) / (n_pos + 1.0)).ln() } else { 0.0 });
    let mut f = nll(a, b);
    for _ in 0..100 {
        let (mut g1, mut g2, mut h11, mut h22, mut h21) = (0.0, 0.0, 1e-12, 1e-12, 0.0);
        for (&m, &ti) in margins.iter().zip(&t) {
            let z = a * m + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += m * m * d2;
            h22 += d2;
            h21 += m * d2;
            let d1 = ti - p;
            g1 += m * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-10 && (!fit_b || g2.abs() < 1e-10) {
            break;
        }
        let (da, db) = if fit_b {
            let det = h11 * h22 - h21 * h21;
            (-(h22 * g1 - h21 * g2) / det, -(-h21 * g1 + h11 * g2) / det)
        } else {
            (-g1 / h11, 0.0)
        };
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < f + 1e-4 * step * gd {
                a = na;
                b = nb;
                f = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    (a, b)
}

/// Grid search over C with stratified cross-validation, refit on all data,
/// then sigmoid calibration on the margins selected by `cfg.calibration`.
pub fn train_svm(x: &[Vec<f64>], y: &[bool], cfg: &SvmConfig) -> Result<SvmModel> {
    check_inputs(x, y)?;
    let n_pos = y.iter().filter(|&&l| l).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateClasses(format!("{n_pos} positive, {n_neg} negative samples")));
    }
    if cfg.folds < 2 || n_pos < cfg.folds || n_neg < cfg.folds {
        return Err(Error::DegenerateClasses(format!(
            "{}-fold search needs at least {} samples per class ({n_pos} positive, {n_neg} negative)",
            cfg.folds, cfg.folds
        )));
    }
    if cfg.grid.is_empty() {
        return Err(Error::Empty("C grid".into()));
    }
    let fold = stratified_folds(y, cfg.folds, cfg.seed);
    let mut cv_accuracy = Vec::with_capacity(cfg.grid.len());
    let mut oof_margins = Vec::with_capacity(cfg.grid.len());
    let mut fold_fits = 0;
    for &c in &cfg.grid {
        let mut correct = 0.0;
        let mut oof = vec![0.0; x.len()];
        for k in 0..cfg.folds {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..x.len() {
                if fold[i] == k {
                    vx.push(x[i].clone());
                    vy.push(y[i]);
                } else {
                    tx.push(x[i].clone());
                    ty.push(y[i]);
                }
            }
            let fit = fit_linear_svm(&tx, &ty, c, cfg)?;
            fold_fits += 1;
            let hits = vx.iter().zip(&vy).filter(|(v, &l)| (fit.margin(v) > 0.0) == l).count();
            correct += hits as f64 / vx.len() as f64;
            for i in (0..x.len()).filter(|&i| fold[i] == k) {
                oof[i] = fit.margin(&x[i]);
            }
        }
        cv_accuracy.push(correct / cfg.folds as f64);
        oof_margins.push(oof);
    }
    // argmax with ties resolved towards the smaller C
    let mut best = 0;
    for i in 1..cfg.grid.len() {
        let better = cv_accuracy[i] > cv_accuracy[best]
            || (cv_accuracy[i] == cv_accuracy[best] && cfg.grid[i] < cfg.grid[best]);
        if better {
            best = i;
        }
    }
    let c = cfg.grid[best];
    let fit = fit_linear_svm(x, y, c, cfg)?;
    let (a, b) = match cfg.calibration {
        Calibration::Training => {
            let margins: Vec<f64> = x.iter().map(|v| fit.margin(v)).collect();
            fit_platt(&margins, y)
        }
        Calibration::CrossValidated => fit_platt(&oof_margins[best], y),
    };
    Ok(SvmModel {
        weights: fit.weights,
        bias: fit.bias,
        a,
        b,
        c,
        cv_accuracy,
        fold_fits,
    })
}
