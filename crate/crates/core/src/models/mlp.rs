//! Feed-forward network on flat feature vectors; also backs the untrained
//! dummy baseline.

use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;

use super::nn::{fit, Affine, BatchNorm, Dense, Dropout, Layer, LeakyRelu, Sequential, TrainConfig, TrainReport};
use super::{to_tensor, Classifier, InputDescriptor, ModelKind};
use crate::error::{Error, Result};

pub const MLP_HIDDEN: [usize; 3] = [32, 20, 12];
pub const MLP_LEAKY_SLOPE: f64 = 0.5;
pub const MLP_DROPOUT: f64 = 0.5;

/// Trainable per-feature affine input layer, then
/// `[dense -> batch norm -> leaky ReLU -> dropout]` per hidden size, then a
/// single-logit dense output.
pub fn build_mlp_net(n_features: usize, seed: u64) -> Sequential<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut layers: Vec<Box<dyn Layer<f32>>> = vec![Box::new(Affine::new(n_features))];
    let mut width = n_features;
    for &h in &MLP_HIDDEN {
        layers.push(Box::new(Dense::new(width, h, &mut rng)));
        layers.push(Box::new(BatchNorm::new(h)));
        layers.push(Box::new(LeakyRelu::new(MLP_LEAKY_SLOPE)));
        layers.push(Box::new(Dropout::new(MLP_DROPOUT, rng.gen())));
        width = h;
    }
    layers.push(Box::new(Dense::new(width, 1, &mut rng)));
    Sequential::new(layers)
}

pub struct MlpModel {
    pub kind: ModelKind,
    pub n_features: usize,
    pub seed: u64,
    pub report: Option<TrainReport>,
    pub(crate) net: Mutex<Sequential<f32>>,
}

impl std::fmt::Debug for MlpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MlpModel")
            .field("kind", &self.kind)
            .field("n_features", &self.n_features)
            .field("seed", &self.seed)
            .finish()
    }
}

impl MlpModel {
    pub fn from_net(kind: ModelKind, n_features: usize, seed: u64, net: Sequential<f32>) -> Self {
        MlpModel {
            kind,
            n_features,
            seed,
            report: None,
            net: Mutex::new(net),
        }
    }

    pub fn n_params(&self) -> usize {
        self.net.lock().unwrap().n_params()
    }

    pub fn export_state(&self) -> Vec<(String, Vec<f32>)> {
        self.net.lock().unwrap().export_state()
    }

    /// Runs `f` with exclusive access to the network.
    pub fn with_net<R>(&self, f: impl FnOnce(&mut Sequential<f32>) -> R) -> R {
        f(&mut self.net.lock().unwrap())
    }
}

impl Classifier for MlpModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn input(&self) -> InputDescriptor {
        InputDescriptor::Features { len: self.n_features }
    }

    fn predict_proba_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let x = to_tensor(inputs, [self.n_features, 1, 1])?;
        let p = self.net.lock().unwrap().predict_proba(&x);
        Ok(p.into_iter().map(|v| v as f64).collect())
    }
}

fn labels_f32(y: &[bool]) -> Vec<f32> {
    y.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect()
}

/// Builds a network from `cfg.seed` and trains it with early stopping on the
/// validation set.
pub fn train_mlp(
    x: &[Vec<f64>],
    y: &[bool],
    x_val: &[Vec<f64>],
    y_val: &[bool],
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    let d = x.first().map(|v| v.len()).ok_or_else(|| Error::Empty("training set".into()))?;
    let xt = to_tensor(x, [d, 1, 1])?;
    let xv = to_tensor(x_val, [d, 1, 1])?;
    let mut net = build_mlp_net(d, cfg.seed);
    let report = fit(&mut net, &xt, &labels_f32(y), &xv, &labels_f32(y_val), cfg)?;
    let mut model = MlpModel::from_net(ModelKind::Mlp, d, cfg.seed, net);
    model.report = Some(report);
    Ok(model)
}

/// Randomly initialised, never trained network with the MLP architecture.
pub fn make_dummy(n_features: usize, seed: u64) -> MlpModel {
    MlpModel::from_net(ModelKind::Dummy, n_features, seed, build_mlp_net(n_features, seed))
}

pub(crate) fn binary_labels_f32(y: &[bool]) -> Vec<f32> {
    labels_f32(y)
}
