use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Mode, Param, Scalar, Sequential, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub restore_best: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            batch_size: 16,
            patience: 70,
            restore_best: true,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("max_epochs and batch_size must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("invalid optimiser settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_early: bool,
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    }

    pub fn step(&mut self, params: &mut [Param<'_, T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1.powi(self.step));
        let c2 = T::c(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::c(self.lr), T::c(self.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Mean binary cross-entropy on logits and its gradient w.r.t. each logit.
pub fn bce_with_logits<T: Scalar>(logits: &[T], targets: &[T]) -> (f64, Vec<T>) {
    let n = logits.len() as f64;
    let inv = T::c(1.0 / n);
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            let zf = z.to_f64().unwrap();
            let yf = y.to_f64().unwrap();
            loss += zf.max(0.0) - zf * yf + (-zf.abs()).exp().ln_1p();
            (sigmoid(z) - y) * inv
        })
        .collect();
    (loss / n, grad)
}

/// Tracks the best validation loss; strict improvement resets the wait.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping {
    patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

fn gather<T: Scalar>(x: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let il = x.item_len();
    let mut data = Vec::with_capacity(idx.len() * il);
    for &i in idx {
        data.extend_from_slice(x.item(i));
    }
    Tensor::from_vec([idx.len(), x.shape[1], x.shape[2], x.shape[3]], data)
}

pub(crate) fn eval_loss<T: Scalar>(net: &mut Sequential<T>, x: &Tensor<T>, y: &[T]) -> f64 {
    let p = net.predict_proba(x);
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.to_f64().unwrap().clamp(1e-7, 1.0 - 1e-7);
            let t = t.to_f64().unwrap();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Minibatch Adam on binary cross-entropy with early stopping on the
/// validation loss. On return the network holds the best epoch's weights when
/// `restore_best` is set.
pub fn fit<T: Scalar>(
    net: &mut Sequential<T>,
    x: &Tensor<T>,
    y: &[T],
    x_val: &Tensor<T>,
    y_val: &[T],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if x.batch() != y.len() || x_val.batch() != y_val.len() {
        return Err(Error::ShapeMismatch("inputs and labels differ in length".into()));
    }
    if x.batch() == 0 || x_val.batch() == 0 {
        return Err(Error::Empty("training or validation set".into()));
    }
    if x.shape[1..] != x_val.shape[1..] {
        return Err(Error::ShapeMismatch("training and validation item shapes differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::from_config(cfg);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_state = net.export_state();
    let mut order: Vec<usize> = (0..x.batch()).collect();
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        stopped_early: false,
    };

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = gather(x, idx);
            let yb: Vec<T> = idx.iter().map(|&i| y[i]).collect();
            let logits = net.forward(&xb, Mode::Train);
            let (loss, g) = bce_with_logits(&logits.data, &yb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("training loss {loss}"),
                });
            }
            epoch_loss += loss * idx.len() as f64;
            net.backward(&Tensor::from_vec(logits.shape, g));
            let mut params = net.params();
            if params.iter().any(|p| p.grad.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut params);
            net.constrain();
        }
        let val = eval_loss(net, x_val, y_val);
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                detail: format!("validation loss {val}"),
            });
        }
        report.train_loss.push(epoch_loss / x.batch() as f64);
        report.val_loss.push(val);
        report.epochs_run = epoch + 1;
        let (improved, stop) = stopper.update(epoch, val);
        if improved && cfg.restore_best {
            best_state = net.export_state();
        }
        if stop {
            report.stopped_early = true;
            break;
        }
    }
    report.best_epoch = stopper.best_epoch;
    report.best_val_loss = stopper.best;
    if cfg.restore_best {
        net.import_state(&best_state).map_err(Error::ModelFormat)?;
    }
    Ok(report)
}
