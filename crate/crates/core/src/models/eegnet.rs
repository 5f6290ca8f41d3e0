//! Compact convolutional network on raw multichannel windows.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::binary_labels_f32;
use super::nn::{
    fit, Affine, AvgPoolW, BatchNorm, Dense, Dropout, Elu, Layer, SeparableConv, Sequential,
    SpatioTemporalConv, TrainConfig, TrainReport,
};
use super::{to_tensor, Classifier, InputDescriptor, ModelKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EegnetConfig {
    pub channels: usize,
    pub samples: usize,
    pub f1: usize,
    pub depth: usize,
    pub f2: usize,
    pub kernel: usize,
    pub separable_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout: f64,
    pub spatial_max_norm: f64,
    pub dense_max_norm: f64,
}

impl Default for EegnetConfig {
    fn default() -> Self {
        EegnetConfig {
            channels: 16,
            samples: 500,
            f1: 8,
            depth: 2,
            f2: 16,
            kernel: 50,
            separable_kernel: 16,
            pool1: 4,
            pool2: 8,
            dropout: 0.5,
            spatial_max_norm: 1.0,
            dense_max_norm: 0.25,
        }
    }
}

impl EegnetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.channels,
            self.samples,
            self.f1,
            self.depth,
            self.f2,
            self.kernel,
            self.separable_kernel,
            self.pool1,
            self.pool2,
        ];
        if dims.contains(&0) || self.pooled_len() == 0 {
            return Err(Error::InvalidArgument(format!("invalid EEGNet dimensions {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn pooled_len(&self) -> usize {
        self.samples / self.pool1 / self.pool2
    }

    /// Dimensions stored alongside serialised weights.
    pub fn to_arch(&self) -> Vec<f32> {
        [
            self.channels,
            self.samples,
            self.f1,
            self.depth,
            self.f2,
            self.kernel,
            self.separable_kernel,
            self.pool1,
            self.pool2,
        ]
        .iter()
        .map(|&v| v as f32)
        .chain([self.dropout as f32, self.spatial_max_norm as f32, self.dense_max_norm as f32])
        .collect()
    }

    pub fn from_arch(a: &[f32]) -> Result<Self> {
        if a.len() != 12 {
            return Err(Error::ModelFormat(format!("EEGNet arch tensor has {} entries", a.len())));
        }
        let u = |i: usize| a[i] as usize;
        let cfg = EegnetConfig {
            channels: u(0),
            samples: u(1),
            f1: u(2),
            depth: u(3),
            f2: u(4),
            kernel: u(5),
            separable_kernel: u(6),
            pool1: u(7),
            pool2: u(8),
            dropout: a[9] as f64,
            spatial_max_norm: a[10] as f64,
            dense_max_norm: a[11] as f64,
        };
        cfg.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(cfg)
    }
}

/// Channel affine -> temporal + depthwise spatial conv -> BN -> ELU -> pool
/// -> dropout -> separable conv -> BN -> ELU -> pool -> dropout -> dense.
///
/// The classic layout has a batch norm between the temporal and the spatial
/// convolution; it is omitted because the batch norm after the (linear)
/// spatial stage re-standardises each map anyway.
pub fn build_eegnet_net(cfg: &EegnetConfig, seed: u64) -> Result<Sequential<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let maps = cfg.f1 * cfg.depth;
    let t1 = cfg.samples / cfg.pool1;
    let layers: Vec<Box<dyn Layer<f32>>> = vec![
        Box::new(Affine::new(cfg.channels)),
        Box::new(
            SpatioTemporalConv::new(cfg.channels, cfg.samples, cfg.f1, cfg.depth, cfg.kernel, &mut rng)
                .with_spatial_max_norm(cfg.spatial_max_norm),
        ),
        Box::new(BatchNorm::new(maps)),
        Box::new(Elu::new()),
        Box::new(AvgPoolW::new(cfg.pool1)),
        Box::new(Dropout::new(cfg.dropout, rng.gen())),
        Box::new(SeparableConv::new(maps, t1, cfg.separable_kernel, cfg.f2, &mut rng)),
        Box::new(BatchNorm::new(cfg.f2)),
        Box::new(Elu::new()),
        Box::new(AvgPoolW::new(cfg.pool2)),
        Box::new(Dropout::new(cfg.dropout, rng.gen())),
        Box::new(Dense::new(cfg.f2 * cfg.pooled_len(), 1, &mut rng).with_max_norm(cfg.dense_max_norm)),
    ];
    Ok(Sequential::new(layers))
}

pub struct EegnetModel {
    pub config: EegnetConfig,
    pub seed: u64,
    pub report: Option<TrainReport>,
    pub(crate) net: Mutex<Sequential<f32>>,
}

impl std::fmt::Debug for EegnetModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EegnetModel")
            .field("config", &self.config)
            .field("seed", &self.seed)
            .finish()
    }
}

impl EegnetModel {
    pub fn new(config: EegnetConfig, seed: u64) -> Result<Self> {
        let net = build_eegnet_net(&config, seed)?;
        Ok(EegnetModel {
            config,
            seed,
            report: None,
            net: Mutex::new(net),
        })
    }

    pub fn n_params(&self) -> usize {
        self.net.lock().unwrap().n_params()
    }

    pub fn export_state(&self) -> Vec<(String, Vec<f32>)> {
        self.net.lock().unwrap().export_state()
    }

    pub fn with_net<R>(&self, f: impl FnOnce(&mut Sequential<f32>) -> R) -> R {
        f(&mut self.net.lock().unwrap())
    }
}

impl Classifier for EegnetModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Eegnet
    }

    fn input(&self) -> InputDescriptor {
        InputDescriptor::Windows {
            channels: self.config.channels,
            samples: self.config.samples,
        }
    }

    fn predict_proba_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let x = to_tensor(inputs, [1, self.config.channels, self.config.samples])?;
        let p = self.net.lock().unwrap().predict_proba(&x);
        Ok(p.into_iter().map(|v| v as f64).collect())
    }
}

/// Inputs are channel-major flattened windows (`channels * samples`).
pub fn train_eegnet(
    x: &[Vec<f64>],
    y: &[bool],
    x_val: &[Vec<f64>],
    y_val: &[bool],
    arch: &EegnetConfig,
    cfg: &TrainConfig,
) -> Result<EegnetModel> {
    let shape = [1, arch.channels, arch.samples];
    let xt = to_tensor(x, shape)?;
    let xv = to_tensor(x_val, shape)?;
    let mut model = EegnetModel::new(arch.clone(), cfg.seed)?;
    let report = {
        let net = model.net.get_mut().unwrap();
        fit(net, &xt, &binary_labels_f32(y), &xv, &binary_labels_f32(y_val), cfg)?
    };
    model.report = Some(report);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let cfg = EegnetConfig::default();
        assert_eq!(cfg.pooled_len(), 15);
        let m = EegnetModel::new(cfg.clone(), 0).unwrap();
        // affine 32, temporal 8*50, spatial 16*16, bn 2*16, depthwise 16*16,
        // pointwise 16*16, bn 2*16, dense 240 + 1
        let expected = 32 + 400 + 256 + 32 + 256 + 256 + 32 + 241;
        assert_eq!(m.n_params(), expected);
        assert_eq!(EegnetModel::new(cfg.clone(), 7).unwrap().n_params(), expected);
        assert_eq!(EegnetConfig::from_arch(&cfg.to_arch()).unwrap(), cfg);
    }

    #[test]
    fn rejects_wrong_shape() {
        let m = EegnetModel::new(EegnetConfig::default(), 0).unwrap();
        assert!(matches!(m.predict_proba(&vec![0.0; 16 * 499]), Err(Error::ShapeMismatch(_))));
        let p = m.predict_proba(&vec![0.1; 16 * 500]).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn learns_a_planted_deflection() {
        let cfg = EegnetConfig {
            channels: 4,
            samples: 64,
            kernel: 8,
            separable_kernel: 4,
            pool1: 2,
            pool2: 4,
            ..EegnetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let make = |rng: &mut ChaCha8Rng, n: usize| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for i in 0..n {
                let pos = i % 2 == 0;
                let v: Vec<f64> = (0..4 * 64)
                    .map(|j| {
                        let (ch, t) = (j / 64, j % 64);
                        let ramp = if pos && ch == 1 { -(t as f64) / 32.0 } else { 0.0 };
                        ramp + rng.gen_range(-1.0..1.0)
                    })
                    .collect();
                x.push(v);
                y.push(pos);
            }
            (x, y)
        };
        let (x, y) = make(&mut rng, 160);
        let (xv, yv) = make(&mut rng, 40);
        let (xt, yt) = make(&mut rng, 100);
        let tc = TrainConfig {
            max_epochs: 40,
            patience: 20,
            ..TrainConfig::default()
        };
        let m = train_eegnet(&x, &y, &xv, &yv, &cfg, &tc).unwrap();
        let p = m.predict_proba_batch(&xt).unwrap();
        let acc = p.iter().zip(&yt).filter(|(p, &l)| (**p > 0.5) == l).count() as f64 / 100.0;
        assert!(acc >= 0.9, "held-out accuracy {acc}");
    }
}
